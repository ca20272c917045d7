/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace thalseg {

struct PlotSeries {
  std::string name;
  std::vector<double> values;
};

/// Grouped bar chart (e.g. per-structure Dice per method), written as a
/// self-contained SVG.
void svg_bar_chart(const std::filesystem::path& out, const std::string& title,
                   const std::vector<std::string>& categories,
                   const std::vector<PlotSeries>& series, const std::string& y_label,
                   double y_max = 1.0);

/// Line chart over a shared x axis (e.g. Dice vs SNR); x values may descend.
void svg_line_chart(const std::filesystem::path& out, const std::string& title,
                    const std::vector<double>& xs, const std::vector<PlotSeries>& series,
                    const std::string& x_label, const std::string& y_label);

}  // namespace thalseg
