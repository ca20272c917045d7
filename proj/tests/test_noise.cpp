/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#include <doctest.h>

#include <cmath>

#include "thalseg/noise.hpp"

using namespace thalseg;

namespace {

Geometry geo(Shape3 shape) {
  Geometry g;
  g.shape = shape;
  g.affine = Affine::Identity();
  return g;
}

Volume constant_volume(Shape3 shape, double value) {
  Geometry g = geo(shape);
  return Volume(g, std::vector<double>(static_cast<size_t>(g.voxels()), value));
}

}  // namespace

TEST_CASE("sigma = 0 reproduces the input bitwise") {
  Geometry g = geo({8, 8, 8});
  std::vector<double> data(512);
  Rng rng(5);
  for (auto& d : data) d = rng.uniform(0.0, 100.0);
  const Volume v(g, data);
  const Volume out = add_rician(v, NoiseSpec{0.0, 42});
  CHECK(out.data() == v.data());
}

TEST_CASE("I = 0 everywhere gives the Rayleigh mean sigma*sqrt(pi/2) within 2%") {
  const double sigma = 7.0;
  const Volume v = constant_volume({100, 100, 100}, 0.0);  // 1e6 voxels
  const Volume out = add_rician(v, NoiseSpec{sigma, 7});
  double mean = 0.0;
  for (double d : out.data()) {
    CHECK(d >= 0.0);
    mean += d;
  }
  mean /= static_cast<double>(out.data().size());
  const double expected = sigma * std::sqrt(M_PI / 2.0);
  CHECK(std::abs(mean - expected) / expected < 0.02);
}

TEST_CASE("high-SNR regime: std of (I' - I) within 5% of sigma") {
  const double sigma = 3.0;
  const Volume v = constant_volume({60, 60, 60}, 500.0);  // I >> sigma
  const Volume out = add_rician(v, NoiseSpec{sigma, 11});
  double sum = 0.0, sq = 0.0;
  for (size_t i = 0; i < out.data().size(); ++i) {
    const double d = out.data()[i] - 500.0;
    sum += d;
    sq += d * d;
  }
  const double n = static_cast<double>(out.data().size());
  const double var = sq / n - (sum / n) * (sum / n);
  CHECK(std::abs(std::sqrt(var) - sigma) / sigma < 0.05);
}

TEST_CASE("negative intensities are rejected; fixed seed is bit-reproducible") {
  Geometry g = geo({4, 4, 4});
  std::vector<double> data(64, 1.0);
  data[5] = -0.5;
  CHECK_THROWS_AS(add_rician(Volume(g, data), NoiseSpec{1.0, 1}), Error);

  const Volume v = constant_volume({16, 16, 16}, 10.0);
  const Volume a = add_rician(v, NoiseSpec{2.0, 77});
  const Volume b = add_rician(v, NoiseSpec{2.0, 77});
  const Volume c = add_rician(v, NoiseSpec{2.0, 78});
  CHECK(a.data() == b.data());
  CHECK(a.data() != c.data());
}

namespace {

/// staged volume: thalamus block with exact mean 235, background corner with
/// exact std 10 (alternating +/- 10 around a mean of 30)
struct StagedSnr {
  Volume volume = constant_volume({24, 24, 24}, 0.0);
  LabelMap roi{Geometry{}, {}, &Taxonomy::whole_thalamus()};

  StagedSnr() {
    Geometry g = geo({24, 24, 24});
    std::vector<double> data(static_cast<size_t>(g.voxels()), 30.0);
    std::vector<int32_t> labels(data.size(), 0);
    // background corner 8x8x8 alternating 20/40 -> std exactly 10
    for (int64_t k = 0; k < 8; ++k)
      for (int64_t j = 0; j < 8; ++j)
        for (int64_t i = 0; i < 8; ++i)
          data[g.index(i, j, k)] = ((i + j + k) % 2 == 0) ? 20.0 : 40.0;
    // thalamus block elsewhere, constant 235 (mean 235)
    for (int64_t k = 14; k < 22; ++k)
      for (int64_t j = 14; j < 22; ++j)
        for (int64_t i = 14; i < 22; ++i) {
          data[g.index(i, j, k)] = 235.0;
          labels[g.index(i, j, k)] = 1;
        }
    volume = Volume(g, std::move(data));
    roi = LabelMap(g, std::move(labels), &Taxonomy::whole_thalamus());
  }
};

}  // namespace

TEST_CASE("measure_snr: thalamic mean 235 over noise std 10 gives 23.5") {
  StagedSnr s;
  const SnrMeasurement m = measure_snr(s.volume, s.roi, default_background_roi({24, 24, 24}, 8));
  CHECK(m.thalamic_mean == doctest::Approx(235.0));
  CHECK(m.background_noise_std == doctest::Approx(10.0));
  CHECK(m.snr == doctest::Approx(23.5));
}

TEST_CASE("measure_snr guards: zero-noise background, overlap, small ROIs") {
  const Volume v = constant_volume({24, 24, 24}, 100.0);
  Geometry g = geo({24, 24, 24});
  std::vector<int32_t> labels(static_cast<size_t>(g.voxels()), 0);
  for (int64_t k = 14; k < 22; ++k)
    for (int64_t j = 14; j < 22; ++j)
      for (int64_t i = 14; i < 22; ++i) labels[g.index(i, j, k)] = 1;
  const LabelMap roi(g, labels, &Taxonomy::whole_thalamus());
  // constant background -> zero std -> rejection
  CHECK_THROWS_AS(measure_snr(v, roi, default_background_roi({24, 24, 24}, 8)), Error);
  // overlapping background ROI -> rejection
  StagedSnr s;
  BoundingBox overlap{{14, 14, 14}, {21, 21, 21}};
  CHECK_THROWS_AS(measure_snr(s.volume, s.roi, overlap), Error);
  // tiny thalamus ROI -> rejection
  std::vector<int32_t> small(static_cast<size_t>(g.voxels()), 0);
  small[g.index(20, 20, 20)] = 1;
  CHECK_THROWS_AS(
      measure_snr(s.volume, LabelMap(g, small, &Taxonomy::whole_thalamus()),
                  default_background_roi({24, 24, 24}, 8)),
      Error);
}

TEST_CASE("Monte Carlo: measured SNR tracks mean / (sigma * Rayleigh-std factor) within 5%") {
  // air background: after corruption its std is sigma * sqrt(2 - pi/2)
  Geometry g = geo({48, 48, 48});
  std::vector<double> data(static_cast<size_t>(g.voxels()), 0.0);
  std::vector<int32_t> labels(data.size(), 0);
  for (int64_t k = 16; k < 40; ++k)
    for (int64_t j = 16; j < 40; ++j)
      for (int64_t i = 16; i < 40; ++i) {
        data[g.index(i, j, k)] = 200.0;
        labels[g.index(i, j, k)] = 1;
      }
  const Volume clean(g, data);
  const LabelMap roi(g, labels, &Taxonomy::whole_thalamus());
  const double sigma = 9.0;
  const Volume noisy = add_rician(clean, NoiseSpec{sigma, 3});
  const SnrMeasurement m = measure_snr(noisy, roi, default_background_roi({48, 48, 48}, 12));
  const double rayleigh_std = sigma * std::sqrt(2.0 - M_PI / 2.0);
  // thalamic mean shifts slightly under Rician noise at SNR ~ 22; allow 5%
  CHECK(std::abs(m.snr - 200.0 / rayleigh_std) / (200.0 / rayleigh_std) < 0.05);
}

TEST_CASE("measured SNR decreases monotonically with sigma") {
  StagedSnr s;
  // use an air background so added noise dominates the measured std
  Geometry g = s.volume.geo();
  std::vector<double> data = s.volume.data();
  for (int64_t k = 0; k < 8; ++k)
    for (int64_t j = 0; j < 8; ++j)
      for (int64_t i = 0; i < 8; ++i) data[g.index(i, j, k)] = 0.0;
  const Volume v(g, data);
  double prev = 1e300;
  for (double sigma : {2.0, 4.0, 8.0, 16.0}) {
    const Volume noisy = add_rician(v, NoiseSpec{sigma, 5});
    const double snr = measure_snr(noisy, s.roi, default_background_roi(g.shape, 8)).snr;
    CHECK(snr < prev);
    prev = snr;
  }
}

TEST_CASE("solve_sigma_for_snr hits the target within tolerance") {
  Geometry g = geo({32, 32, 32});
  std::vector<double> data(static_cast<size_t>(g.voxels()), 0.0);
  std::vector<int32_t> labels(data.size(), 0);
  for (int64_t k = 12; k < 26; ++k)
    for (int64_t j = 12; j < 26; ++j)
      for (int64_t i = 12; i < 26; ++i) {
        data[g.index(i, j, k)] = 180.0;
        labels[g.index(i, j, k)] = 1;
      }
  const Volume v(g, data);
  const LabelMap roi(g, labels, &Taxonomy::whole_thalamus());
  const double target = 12.0;
  const double sigma = solve_sigma_for_snr(v, roi, default_background_roi(g.shape, 8), target, 9);
  const Volume noisy = add_rician(v, NoiseSpec{sigma, 9});
  const double achieved = measure_snr(noisy, roi, default_background_roi(g.shape, 8)).snr;
  CHECK(std::abs(achieved - target) / target <= 0.02);
}

TEST_CASE("snr_sweep emits one row per target and handles edge targets") {
  Geometry g = geo({32, 32, 32});
  std::vector<double> data(static_cast<size_t>(g.voxels()), 0.0);
  std::vector<int32_t> labels(data.size(), 0);
  for (int64_t k = 12; k < 26; ++k)
    for (int64_t j = 12; j < 26; ++j)
      for (int64_t i = 12; i < 26; ++i) {
        data[g.index(i, j, k)] = 180.0;
        labels[g.index(i, j, k)] = 1;
      }
  // baseline noise so the baseline SNR is measurable
  const Volume v = add_rician(Volume(g, data), NoiseSpec{5.0, 31});
  const LabelMap ref(g, labels, &Taxonomy::nuclei());

  // fake segmenter: threshold at half the thalamic plateau
  Segmenter seg = [&](const Volume& img) {
    std::vector<int32_t> out(img.data().size(), 0);
    for (size_t i = 0; i < out.size(); ++i) out[i] = img.data()[i] > 90.0 ? 1 : 0;
    return LabelMap(img.geo(), std::move(out), &Taxonomy::nuclei());
  };

  const auto targets = sweep_targets(23.5, 8.0, 10);
  REQUIRE(targets.size() == 10);
  CHECK(targets.front() == doctest::Approx(23.5));
  CHECK(targets.back() == doctest::Approx(8.0));

  const double baseline =
      measure_snr(v, LabelMap(g, labels, &Taxonomy::whole_thalamus()),
                  default_background_roi(g.shape, 8))
          .snr;
  // clamp the targets into the measurable range for this staged volume
  std::vector<double> usable;
  for (double t : targets) usable.push_back(std::min(t, baseline * 0.95));
  std::sort(usable.begin(), usable.end(), std::greater<double>());

  const SweepReport rep =
      snr_sweep(seg, v, ref, usable, 17, default_background_roi(g.shape, 8));
  CHECK(rep.points.size() == 10);
  for (const auto& p : rep.points) CHECK(!p.skipped);

  // a target above the baseline is skipped with a note
  const SweepReport rep2 = snr_sweep(seg, v, ref, {baseline * 2.0, usable[3]}, 18,
                                     default_background_roi(g.shape, 8));
  CHECK(rep2.points.size() == 2);
  CHECK(rep2.points[0].skipped);
  CHECK(!rep2.points[1].skipped);
  CHECK(rep2.points[0].note.find("skipped") != std::string::npos);

  // tsv/json render without blowing up
  CHECK(rep.to_tsv().find("target_snr") != std::string::npos);
  CHECK(rep.to_json().find("baseline_snr") != std::string::npos);
}

TEST_CASE("sweep never mutates the pristine input (fresh corruption per target)") {
  Geometry g = geo({32, 32, 32});
  std::vector<double> data(static_cast<size_t>(g.voxels()), 0.0);
  std::vector<int32_t> labels(data.size(), 0);
  for (int64_t k = 12; k < 26; ++k)
    for (int64_t j = 12; j < 26; ++j)
      for (int64_t i = 12; i < 26; ++i) {
        data[g.index(i, j, k)] = 180.0;
        labels[g.index(i, j, k)] = 1;
      }
  const Volume v = add_rician(Volume(g, data), NoiseSpec{5.0, 31});
  const std::vector<double> before = v.data();
  const LabelMap ref(g, labels, &Taxonomy::nuclei());
  Segmenter seg = [&](const Volume& img) {
    std::vector<int32_t> out(img.data().size(), 0);
    return LabelMap(img.geo(), std::move(out), &Taxonomy::nuclei());
  };
  (void)snr_sweep(seg, v, ref, {15.0, 12.0, 9.0}, 4, default_background_roi(g.shape, 8));
  CHECK(v.data() == before);
}
