/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#include "thalseg/plots.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "thalseg/common.hpp"

namespace thalseg {

namespace {

constexpr int kWidth = 900;
constexpr int kHeight = 480;
constexpr int kMarginL = 70, kMarginR = 30, kMarginT = 50, kMarginB = 90;

const char* kColors[] = {"#3366cc", "#cc3333", "#33a02c", "#ff7f00", "#6a3d9a", "#b15928"};

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&')
      out += "&amp;";
    else if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else
      out += c;
  }
  return out;
}

struct Svg {
  std::ostringstream os;
  Svg() {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
       << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  }
  void text(double x, double y, const std::string& s, int size = 13,
            const std::string& anchor = "middle", double rotate = 0.0) {
    os << "<text x=\"" << x << "\" y=\"" << y << "\" font-family=\"sans-serif\" font-size=\""
       << size << "\" text-anchor=\"" << anchor << "\"";
    if (rotate != 0.0) os << " transform=\"rotate(" << rotate << ' ' << x << ' ' << y << ")\"";
    os << ">" << esc(s) << "</text>\n";
  }
  void line(double x1, double y1, double x2, double y2, const std::string& color = "#444",
            double width = 1.0) {
    os << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2
       << "\" stroke=\"" << color << "\" stroke-width=\"" << width << "\"/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill) {
    os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << h
       << "\" fill=\"" << fill << "\"/>\n";
  }
  void save(const std::filesystem::path& path) {
    os << "</svg>\n";
    std::ofstream out(path);
    require(out.good(), ErrorKind::Io, cat(path.string(), ": cannot write plot"));
    out << os.str();
  }
};

void draw_y_axis(Svg& svg, double y_min, double y_max, const std::string& label) {
  const double plot_h = kHeight - kMarginT - kMarginB;
  svg.line(kMarginL, kMarginT, kMarginL, kMarginT + plot_h);
  for (int t = 0; t <= 5; ++t) {
    const double frac = static_cast<double>(t) / 5.0;
    const double y = kMarginT + plot_h * (1.0 - frac);
    const double val = y_min + (y_max - y_min) * frac;
    svg.line(kMarginL - 4, y, kMarginL, y);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2g", val);
    svg.text(kMarginL - 8, y + 4, buf, 11, "end");
    svg.line(kMarginL, y, kWidth - kMarginR, y, "#dddddd", 0.5);
  }
  svg.text(18, kMarginT + plot_h / 2, label, 13, "middle", -90);
}

void draw_legend(Svg& svg, const std::vector<PlotSeries>& series) {
  double x = kMarginL;
  for (size_t s = 0; s < series.size(); ++s) {
    svg.rect(x, 16, 12, 12, kColors[s % 6]);
    svg.text(x + 16, 26, series[s].name, 12, "start");
    x += 26 + 8.0 * static_cast<double>(series[s].name.size());
  }
}

}  // namespace

void svg_bar_chart(const std::filesystem::path& out, const std::string& title,
                   const std::vector<std::string>& categories,
                   const std::vector<PlotSeries>& series, const std::string& y_label,
                   double y_max) {
  require(!series.empty() && !categories.empty(), ErrorKind::InvalidArgument,
          "bar chart needs categories and at least one series");
  for (const auto& s : series)
    require(s.values.size() == categories.size(), ErrorKind::InvalidArgument,
            cat("series '", s.name, "' length does not match category count"));

  Svg svg;
  svg.text(kWidth / 2.0, 14, title, 15);
  draw_y_axis(svg, 0.0, y_max, y_label);
  draw_legend(svg, series);

  const double plot_w = kWidth - kMarginL - kMarginR;
  const double plot_h = kHeight - kMarginT - kMarginB;
  const double group_w = plot_w / static_cast<double>(categories.size());
  const double bar_w = group_w * 0.8 / static_cast<double>(series.size());
  for (size_t c = 0; c < categories.size(); ++c) {
    const double gx = kMarginL + group_w * static_cast<double>(c) + group_w * 0.1;
    for (size_t s = 0; s < series.size(); ++s) {
      const double v = std::clamp(series[s].values[c], 0.0, y_max);
      const double h = plot_h * v / y_max;
      svg.rect(gx + bar_w * static_cast<double>(s), kMarginT + plot_h - h, bar_w * 0.92, h,
               kColors[s % 6]);
    }
    svg.text(gx + group_w * 0.4, kMarginT + plot_h + 14, categories[c], 11, "end", -45);
  }
  svg.line(kMarginL, kMarginT + plot_h, kWidth - kMarginR, kMarginT + plot_h);
  svg.save(out);
}

void svg_line_chart(const std::filesystem::path& out, const std::string& title,
                    const std::vector<double>& xs, const std::vector<PlotSeries>& series,
                    const std::string& x_label, const std::string& y_label) {
  require(!series.empty() && xs.size() >= 2, ErrorKind::InvalidArgument,
          "line chart needs >= 2 x values and a series");
  double y_min = 1e300, y_max = -1e300;
  for (const auto& s : series) {
    require(s.values.size() == xs.size(), ErrorKind::InvalidArgument,
            cat("series '", s.name, "' length does not match x count"));
    for (double v : s.values) {
      y_min = std::min(y_min, v);
      y_max = std::max(y_max, v);
    }
  }
  if (y_max <= y_min) y_max = y_min + 1.0;
  y_min = std::min(0.0, y_min);
  y_max = std::max(1.0, y_max);

  const double x_lo = *std::min_element(xs.begin(), xs.end());
  const double x_hi = *std::max_element(xs.begin(), xs.end());
  const double plot_w = kWidth - kMarginL - kMarginR;
  const double plot_h = kHeight - kMarginT - kMarginB;

  Svg svg;
  svg.text(kWidth / 2.0, 14, title, 15);
  draw_y_axis(svg, y_min, y_max, y_label);
  draw_legend(svg, series);
  auto px = [&](double x) { return kMarginL + plot_w * (x - x_lo) / (x_hi - x_lo); };
  auto py = [&](double y) { return kMarginT + plot_h * (1.0 - (y - y_min) / (y_max - y_min)); };

  for (int t = 0; t <= 6; ++t) {
    const double x = x_lo + (x_hi - x_lo) * static_cast<double>(t) / 6.0;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", x);
    svg.text(px(x), kMarginT + plot_h + 18, buf, 11);
    svg.line(px(x), kMarginT + plot_h, px(x), kMarginT + plot_h + 4);
  }
  svg.text(kMarginL + plot_w / 2, kHeight - 20, x_label, 13);

  for (size_t s = 0; s < series.size(); ++s) {
    svg.os << "<polyline fill=\"none\" stroke=\"" << kColors[s % 6]
           << "\" stroke-width=\"1.8\" points=\"";
    for (size_t i = 0; i < xs.size(); ++i)
      svg.os << px(xs[i]) << ',' << py(series[s].values[i]) << ' ';
    svg.os << "\"/>\n";
    for (size_t i = 0; i < xs.size(); ++i)
      svg.os << "<circle cx=\"" << px(xs[i]) << "\" cy=\"" << py(series[s].values[i])
             << "\" r=\"2.5\" fill=\"" << kColors[s % 6] << "\"/>\n";
  }
  svg.line(kMarginL, kMarginT + plot_h, kWidth - kMarginR, kMarginT + plot_h);
  svg.save(out);
}

}  // namespace thalseg
