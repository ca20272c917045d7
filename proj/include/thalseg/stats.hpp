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

#include "thalseg/common.hpp"

namespace thalseg {

// ---------------------------------------------------------------------------
// Cohort table: one row per subject with group, covariates (age, gender, PI,
// ICV) and per-structure volumes. Loaded from TSV (columns named vol_*).
// ---------------------------------------------------------------------------
struct CohortTable {
  std::vector<std::string> subject_ids;
  std::vector<int> group;  // 0 = control, 1 = patient group
  std::vector<double> age, gender, pi, icv;
  std::vector<std::string> volume_columns;
  std::vector<std::vector<double>> volumes;  // [column][row]

  size_t n() const { return subject_ids.size(); }
  int column_index(const std::string& name) const;  // -1 if missing
  void validate() const;
  static CohortTable load(const std::filesystem::path& path);
};

struct AncovaEntry {
  std::string structure;
  double f_stat = 0.0;
  int df1 = 1;
  int df2 = 0;
  double p = 1.0;
  double adjusted_mean_control = 0.0;
  double adjusted_mean_group = 0.0;
};

/// Least-squares ANCOVA of volume ~ group + age + gender + PI + ICV; the F
/// statistic compares the full model to the one without the group column.
AncovaEntry ancova(const CohortTable& table, const std::string& volume_column);

struct AncovaRunResult {
  std::vector<AncovaEntry> entries;
  double alpha = 0.05;
  int comparisons = 11;
  double bonferroni_alpha = 0.05 / 11;

  std::string render() const;  // "(F [1, df] = x, p = y)" rows + threshold line
  std::string to_json() const;
};

AncovaRunResult ancova_all(const CohortTable& table, double alpha = 0.05, int comparisons = 11);

/// alpha / m.
double bonferroni(double alpha, int m);

/// Arithmetic mean of the two sides.
double bilateral_average(double left_vol, double right_vol);

struct PairedTestResult {
  double t_stat = 0.0;
  int df = 0;
  double p = 1.0;
  bool zero_variance = false;
};

/// Two-tailed paired t-test over per-subject metric pairs (n >= 3).
PairedTestResult paired_metric_test(const std::vector<double>& metric_a,
                                    const std::vector<double>& metric_b);

namespace detail {
/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation
/// (accuracy ~1e-14 over the usual statistics range).
double incomplete_beta(double a, double b, double x);
/// Upper tail of the F distribution.
double f_sf(double f, int df1, int df2);
/// Two-sided tail of Student's t.
double t_sf_two_sided(double t, int df);
}  // namespace detail

}  // namespace thalseg
