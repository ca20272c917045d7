/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "thalseg/core_types.hpp"
#include "thalseg/metrics.hpp"

namespace thalseg {

struct NoiseSpec {
  double sigma = 0.0;  // std of each Gaussian component
  uint64_t seed = 0;
};

/// Magnitude-image noise: out = sqrt((I + n_re)^2 + n_im^2) with n_re, n_im
/// iid N(0, sigma^2). sigma = 0 returns the input bitwise. Rejects volumes
/// with negative intensities.
Volume add_rician(const Volume& v, const NoiseSpec& spec);

struct SnrMeasurement {
  double thalamic_mean = 0.0;
  double background_noise_std = 0.0;
  double snr = 0.0;
  int64_t thalamus_voxels = 0;
  int64_t background_voxels = 0;
};

/// Mean signal over the thalamus ROI (labels > 0) divided by the raw standard
/// deviation inside the background box. Both ROIs need >= 100 voxels and must
/// not overlap.
SnrMeasurement measure_snr(const Volume& v, const LabelMap& thalamus_roi,
                           const BoundingBox& background_roi);

/// Default background ROI: a cube tucked into the (0,0,0) corner.
BoundingBox default_background_roi(const Shape3& extent, int64_t side = 8);

/// Solves for the sigma whose corrupted image measures the target SNR, by
/// bisection on the measured value (relative tolerance as given). The noise
/// seed is fixed during the search so the objective is deterministic.
double solve_sigma_for_snr(const Volume& v, const LabelMap& thalamus_roi,
                           const BoundingBox& background_roi, double target_snr, uint64_t seed,
                           double rel_tol = 0.02);

struct SweepPoint {
  double target_snr = 0.0;
  double achieved_snr = 0.0;
  double sigma = 0.0;
  bool skipped = false;       // target above the measurable baseline
  std::string note;
  MetricsReport metrics;
};

struct SweepReport {
  double baseline_snr = 0.0;
  std::vector<SweepPoint> points;
  std::string to_json() const;
  std::string to_tsv() const;
};

using Segmenter = std::function<LabelMap(const Volume&)>;

/// Evaluates a segmenter across descending SNR targets. Each point corrupts
/// the pristine input afresh (per-target seeds derived from spec.seed),
/// segments it, and scores against the reference.
SweepReport snr_sweep(const Segmenter& segment, const Volume& v, const LabelMap& ref,
                      const std::vector<double>& snr_targets, uint64_t seed,
                      const BoundingBox& background_roi);

/// Evenly spaced descending targets (first = from, last = to).
std::vector<double> sweep_targets(double from, double to, int points);

}  // namespace thalseg
