/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#pragma once

#include <string>
#include <vector>

#include "thalseg/core_types.hpp"

namespace thalseg {

/// Overlap coefficient 2|A n B| / (|A|+|B|) for one class. Both-empty is
/// defined as 1 (agreement on absence); callers can detect it via report().
double dice(const LabelMap& a, const LabelMap& b, int class_id);

/// Volume similarity 1 - ||A|-|B|| / (|A|+|B|); both-empty is 1.
double vsi(const LabelMap& a, const LabelMap& b, int class_id);

struct ClassMetrics {
  int class_id = 0;
  std::string name;
  double dice = 0.0;
  double vsi = 0.0;
  double volume_pred_mm3 = 0.0;
  double volume_ref_mm3 = 0.0;
  bool absent_in_both = false;  // empty/empty convention applied
  bool absent_in_ref = false;
};

/// Per-class Dice/VSI/volumes for one prediction/reference pair, plus the
/// whole-structure union entry and the aggregate means.
struct MetricsReport {
  std::string subject_id;
  std::string cohort;
  std::vector<ClassMetrics> per_class;  // every non-background class
  ClassMetrics whole;                   // union of all non-background classes
  double mean_dice_structures = 0.0;    // all non-background classes
  double mean_vsi_structures = 0.0;
  double mean_dice_nuclei = 0.0;        // excluding MTT (11-structure mean)
  double mean_vsi_nuclei = 0.0;

  std::string to_json() const;
  static MetricsReport from_json(const std::string& json_text);
};

MetricsReport report(const LabelMap& pred, const LabelMap& ref,
                     const std::string& subject_id = "", const std::string& cohort = "");

/// Renders a cohort of per-subject reports as a text table: one row per
/// structure with the median reference volume in parentheses, mean Dice and
/// VSI columns per group present in the reports.
std::string render_metrics_table(const std::vector<MetricsReport>& reports);

}  // namespace thalseg
