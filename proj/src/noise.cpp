/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#include "thalseg/noise.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace thalseg {

Volume add_rician(const Volume& v, const NoiseSpec& spec) {
  require(spec.sigma >= 0.0, ErrorKind::InvalidArgument, "sigma must be >= 0");
  for (double d : v.data())
    require(d >= 0.0, ErrorKind::Validation,
            "input has negative intensities; not a magnitude image");
  if (spec.sigma == 0.0) return v;

  Volume out = v;
  Rng rng(spec.seed);
  auto& data = out.mutable_data();
  for (double& d : data) {
    const double re = d + rng.normal(0.0, spec.sigma);
    const double im = rng.normal(0.0, spec.sigma);
    d = std::sqrt(re * re + im * im);
  }
  return out;
}

BoundingBox default_background_roi(const Shape3& extent, int64_t side) {
  BoundingBox b;
  for (int k = 0; k < 3; ++k) {
    b.lo[k] = 0;
    b.hi[k] = std::min<int64_t>(side, extent[k]) - 1;
  }
  return b;
}

SnrMeasurement measure_snr(const Volume& v, const LabelMap& thalamus_roi,
                           const BoundingBox& background_roi) {
  require_same_geometry(v.geo(), thalamus_roi.geo());
  const BoundingBox bg = background_roi.clipped(v.geo().shape);
  require(!bg.empty(), ErrorKind::InvalidArgument, "background ROI outside the volume");

  // reject overlap with the thalamus ROI
  for (int64_t k = bg.lo[2]; k <= bg.hi[2]; ++k)
    for (int64_t j = bg.lo[1]; j <= bg.hi[1]; ++j)
      for (int64_t i = bg.lo[0]; i <= bg.hi[0]; ++i)
        require(thalamus_roi.at(i, j, k) == 0, ErrorKind::Validation,
                "background ROI overlaps the thalamus ROI");

  SnrMeasurement m;
  double sum = 0.0;
  for (size_t i = 0; i < v.data().size(); ++i) {
    if (thalamus_roi.labels()[i] > 0) {
      sum += v.data()[i];
      ++m.thalamus_voxels;
    }
  }
  require(m.thalamus_voxels >= 100, ErrorKind::InvalidArgument,
          cat("thalamus ROI too small (", m.thalamus_voxels, " voxels, need >= 100)"));
  m.thalamic_mean = sum / static_cast<double>(m.thalamus_voxels);

  double bsum = 0.0, bsq = 0.0;
  for (int64_t k = bg.lo[2]; k <= bg.hi[2]; ++k)
    for (int64_t j = bg.lo[1]; j <= bg.hi[1]; ++j)
      for (int64_t i = bg.lo[0]; i <= bg.hi[0]; ++i) {
        const double x = v.at(i, j, k);
        bsum += x;
        bsq += x * x;
        ++m.background_voxels;
      }
  require(m.background_voxels >= 100, ErrorKind::InvalidArgument,
          cat("background ROI too small (", m.background_voxels, " voxels, need >= 100)"));
  const double n = static_cast<double>(m.background_voxels);
  const double mean = bsum / n;
  const double var = std::max(0.0, bsq / n - mean * mean);
  m.background_noise_std = std::sqrt(var);
  require(m.background_noise_std > 0.0, ErrorKind::Validation,
          "background ROI has zero noise std (degenerate)");
  m.snr = m.thalamic_mean / m.background_noise_std;
  return m;
}

double solve_sigma_for_snr(const Volume& v, const LabelMap& thalamus_roi,
                           const BoundingBox& background_roi, double target_snr, uint64_t seed,
                           double rel_tol) {
  require(target_snr > 0.0, ErrorKind::InvalidArgument, "target SNR must be > 0");
  auto measure = [&](double sigma) {
    return measure_snr(add_rician(v, NoiseSpec{sigma, seed}), thalamus_roi, background_roi).snr;
  };

  // bracket: expand sigma until the measured SNR falls below the target
  double lo = 0.0;
  double hi = 1.0;
  double snr_hi = measure(hi);
  int guard = 0;
  while (snr_hi > target_snr) {
    lo = hi;
    hi *= 2.0;
    snr_hi = measure(hi);
    require(++guard < 60, ErrorKind::Numeric, "sigma bracketing failed to converge");
  }
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double snr = measure(mid);
    if (std::abs(snr - target_snr) / target_snr <= rel_tol) return mid;
    if (snr > target_snr)
      lo = mid;
    else
      hi = mid;
  }
  fail(ErrorKind::Numeric, cat("bisection did not reach ", rel_tol * 100, "% of target SNR ",
                               target_snr));
}

std::vector<double> sweep_targets(double from, double to, int points) {
  require(points >= 2, ErrorKind::InvalidArgument, "need at least 2 sweep points");
  std::vector<double> t(static_cast<size_t>(points));
  for (int i = 0; i < points; ++i)
    t[static_cast<size_t>(i)] = from + (to - from) * static_cast<double>(i) / (points - 1);
  return t;
}

SweepReport snr_sweep(const Segmenter& segment, const Volume& v, const LabelMap& ref,
                      const std::vector<double>& snr_targets, uint64_t seed,
                      const BoundingBox& background_roi) {
  require(!snr_targets.empty(), ErrorKind::InvalidArgument, "no sweep targets");
  for (size_t i = 1; i < snr_targets.size(); ++i)
    require(snr_targets[i] <= snr_targets[i - 1], ErrorKind::InvalidArgument,
            "sweep targets must be sorted descending");

  SweepReport rep;
  rep.baseline_snr = measure_snr(v, ref, background_roi).snr;

  int idx = 0;
  for (double target : snr_targets) {
    SweepPoint pt;
    pt.target_snr = target;
    const uint64_t pt_seed = Rng::derive(seed, static_cast<uint64_t>(idx));
    ++idx;
    if (target > rep.baseline_snr * 1.02) {
      pt.skipped = true;
      pt.achieved_snr = rep.baseline_snr;
      pt.note = cat("target ", target, " above baseline ", rep.baseline_snr, "; skipped");
      rep.points.push_back(std::move(pt));
      continue;
    }
    Volume corrupted = v;
    if (target >= rep.baseline_snr * 0.98) {
      pt.sigma = 0.0;  // baseline point: sigma ~ 0 path
      pt.achieved_snr = rep.baseline_snr;
    } else {
      pt.sigma = solve_sigma_for_snr(v, ref, background_roi, target, pt_seed);
      corrupted = add_rician(v, NoiseSpec{pt.sigma, pt_seed});
      pt.achieved_snr = measure_snr(corrupted, ref, background_roi).snr;
    }
    const LabelMap seg = segment(corrupted);
    pt.metrics = report(seg, ref);
    rep.points.push_back(std::move(pt));
  }
  return rep;
}

std::string SweepReport::to_tsv() const {
  std::ostringstream os;
  os << "target_snr\tachieved_snr\tsigma\tskipped\tmean_dice\twhole_thalamus_dice\n";
  for (const auto& p : points) {
    os << p.target_snr << '\t' << p.achieved_snr << '\t' << p.sigma << '\t'
       << (p.skipped ? 1 : 0) << '\t' << p.metrics.mean_dice_structures << '\t'
       << p.metrics.whole.dice << '\n';
  }
  return os.str();
}

std::string SweepReport::to_json() const {
  nlohmann::json j;
  j["baseline_snr"] = baseline_snr;
  j["points"] = nlohmann::json::array();
  for (const auto& p : points) {
    nlohmann::json e;
    e["target_snr"] = p.target_snr;
    e["achieved_snr"] = p.achieved_snr;
    e["sigma"] = p.sigma;
    e["skipped"] = p.skipped;
    e["note"] = p.note;
    e["mean_dice"] = p.metrics.mean_dice_structures;
    e["whole_thalamus_dice"] = p.metrics.whole.dice;
    nlohmann::json per;
    for (const auto& m : p.metrics.per_class) per[m.name] = m.dice;
    e["dice_per_class"] = per;
    j["points"].push_back(e);
  }
  return j.dump(2);
}

}  // namespace thalseg
