/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#include <doctest.h>

#include <array>
#include <cmath>

#include "thalseg/core_types.hpp"

using namespace thalseg;

namespace {

Geometry simple_geometry(Shape3 shape, Spacing3 spacing = {1, 1, 1}) {
  Geometry g;
  g.shape = shape;
  g.spacing = spacing;
  g.orientation = kCanonicalOrientation;
  g.affine = Affine::Identity();
  for (int k = 0; k < 3; ++k) g.affine(k, k) = spacing[k];
  return g;
}

Volume counting_volume(Shape3 shape) {
  Geometry g = simple_geometry(shape);
  std::vector<double> data(static_cast<size_t>(g.voxels()));
  for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<double>(i);
  return Volume(g, std::move(data));
}

}  // namespace

TEST_CASE("orientation codes parse and validate") {
  CHECK(Orientation::parse("RAS").str() == "RAS");
  CHECK(Orientation::parse("asr").str() == "ASR");
  CHECK(Orientation::parse("LPI").valid());
  CHECK_THROWS_AS(Orientation::parse("RAR"), Error);   // duplicate world axis
  CHECK_THROWS_AS(Orientation::parse("XYZ"), Error);
  CHECK_THROWS_AS(Orientation::parse("RA"), Error);
  CHECK(Orientation::parse("RAS").lr_axis() == 0);
  CHECK(Orientation::parse("ASR").lr_axis() == 2);
  CHECK(Orientation::parse("ALS").lr_axis() == 1);
}

TEST_CASE("volume invariants are enforced") {
  Geometry g = simple_geometry({2, 2, 2});
  CHECK_NOTHROW(Volume(g, std::vector<double>(8, 1.0)));

  Geometry bad_spacing = g;
  bad_spacing.spacing[1] = 0.0;
  CHECK_THROWS_AS(Volume(bad_spacing, std::vector<double>(8, 1.0)), Error);

  Geometry singular = g;
  singular.affine(1, 1) = 0.0;
  CHECK_THROWS_AS(Volume(singular, std::vector<double>(8, 1.0)), Error);

  std::vector<double> with_nan(8, 1.0);
  with_nan[3] = std::nan("");
  CHECK_THROWS_AS(Volume(g, std::move(with_nan)), Error);
}

TEST_CASE("label maps validate taxonomy membership and geometry pairing") {
  Geometry g = simple_geometry({2, 2, 2});
  std::vector<int32_t> ok(8, 12);
  CHECK_NOTHROW(LabelMap(g, ok, &Taxonomy::nuclei()));
  std::vector<int32_t> bad(8, 13);
  CHECK_THROWS_AS(LabelMap(g, bad, &Taxonomy::nuclei()), Error);

  CHECK(Taxonomy::nuclei().num_classes() == 13);
  CHECK(Taxonomy::whole_thalamus().num_classes() == 2);
  CHECK(Taxonomy::nuclei().name(0) == "background");
  CHECK(Taxonomy::nuclei().id("Pul") == 1);
  CHECK(Taxonomy::nuclei().id("Hb") == 12);
  CHECK(Taxonomy::nuclei().id("MTT") == 11);
}

TEST_CASE("reorient: identity, round trips and the index-permutation oracle") {
  Volume v = counting_volume({2, 3, 4});

  // identity case
  Volume same = reorient(v, v.geo().orientation);
  CHECK(same.data() == v.data());

  // axial -> sagittal -> axial round trip is bitwise
  Volume sag = reorient(v, kOrientSagittal);
  Volume back = reorient(sag, kOrientAxial);
  CHECK(back.data() == v.data());
  CHECK(back.geo().matches(v.geo(), 1e-12));

  // enumerate all 24 voxels against an independent permutation oracle:
  // coronal (RSA) axes pull from axial (RAS) axes (x, z, y)
  Volume cor = reorient(v, kOrientCoronal);
  REQUIRE(cor.geo().shape == Shape3{2, 4, 3});
  for (int64_t k = 0; k < 3; ++k)
    for (int64_t j = 0; j < 4; ++j)
      for (int64_t i = 0; i < 2; ++i) CHECK(cor.at(i, j, k) == v.at(i, k, j));

  // invalid orientation code rejected with a diagnostic
  Orientation bad;
  bad.code = {'R', 'R', 'S'};
  CHECK_THROWS_AS(reorient(v, bad), Error);
}

TEST_CASE("reorient keeps world coordinates consistent") {
  Volume v = counting_volume({3, 4, 5});
  for (const auto& target : {kOrientCoronal, kOrientSagittal, Orientation::parse("LPI")}) {
    Volume r = reorient(v, target);
    // voxel (0,0,0) of the reoriented grid must land on the same world point
    // as the source voxel it came from; spot-check a few voxels via values
    for (int64_t k = 0; k < r.geo().shape[2]; k += 2)
      for (int64_t j = 0; j < r.geo().shape[1]; j += 2)
        for (int64_t i = 0; i < r.geo().shape[0]; i += 2) {
          const auto w = voxel_to_world(r.geo(), static_cast<double>(i), static_cast<double>(j),
                                        static_cast<double>(k));
          // find the source voxel holding the same value
          const auto val = static_cast<int64_t>(r.at(i, j, k));
          const int64_t si = val % 3;
          const int64_t sj = (val / 3) % 4;
          const int64_t sk = val / 12;
          const auto ws = voxel_to_world(v.geo(), static_cast<double>(si),
                                         static_cast<double>(sj), static_cast<double>(sk));
          CHECK((w - ws).norm() < 1e-9);
        }
  }
}

TEST_CASE("flip_lr is an involution and mirrors indices") {
  Volume v = counting_volume({5, 3, 2});
  Volume f = flip_lr(v);
  // single off-center voxel moves k -> N-1-k on the L-R axis (axis 0 in RAS)
  for (int64_t k = 0; k < 2; ++k)
    for (int64_t j = 0; j < 3; ++j)
      for (int64_t i = 0; i < 5; ++i) CHECK(f.at(i, j, k) == v.at(4 - i, j, k));

  Volume ff = flip_lr(f);
  CHECK(ff.data() == v.data());

  // centroid of a marked structure mirrors within a voxel
  Geometry g = simple_geometry({10, 4, 4});
  std::vector<int32_t> labels(static_cast<size_t>(g.voxels()), 0);
  LabelMap lm(g, labels, &Taxonomy::whole_thalamus());
  lm.at(2, 1, 1) = 1;
  lm.at(3, 1, 1) = 1;
  lm.at(2, 2, 1) = 1;
  const LabelMap flipped = flip_lr(lm);
  double cx = 0, fx = 0;
  int64_t n = 0;
  for (int64_t k = 0; k < 4; ++k)
    for (int64_t j = 0; j < 4; ++j)
      for (int64_t i = 0; i < 10; ++i) {
        if (lm.at(i, j, k)) {
          cx += static_cast<double>(i);
          ++n;
        }
        if (flipped.at(i, j, k)) fx += static_cast<double>(i);
      }
  cx /= static_cast<double>(n);
  fx /= static_cast<double>(n);
  CHECK(std::abs((9.0 - cx) - fx) < 1.0);
}

TEST_CASE("resample: identity, constants and the linear-interpolation oracle") {
  Volume v = counting_volume({6, 5, 4});

  // identical spacing: data equal within 1e-6
  Volume same = resample(v, v.geo().spacing);
  REQUIRE(same.geo().shape == v.geo().shape);
  for (size_t i = 0; i < same.data().size(); ++i)
    CHECK(same.data()[i] == doctest::Approx(v.data()[i]).epsilon(1e-6));

  // constant volume stays constant at any spacing
  Geometry g = simple_geometry({4, 4, 4}, {1.0, 2.0, 1.5});
  Volume constant(g, std::vector<double>(64, 3.25));
  Volume rc = resample(constant, {0.7, 0.5, 0.7});
  for (double d : rc.data()) CHECK(d == doctest::Approx(3.25).epsilon(1e-12));

  // 1D ramp 0..9 at 1 mm to 0.5 mm matches the closed-form interpolation
  Geometry ramp_geo = simple_geometry({10, 1, 1});
  std::vector<double> ramp(10);
  for (int i = 0; i < 10; ++i) ramp[static_cast<size_t>(i)] = i;
  Volume rv(ramp_geo, std::move(ramp));
  Volume fine = resample(rv, {0.5, 1.0, 1.0});
  REQUIRE(fine.geo().shape[0] == 20);
  for (int64_t i = 0; i < 20; ++i) {
    const double x = (static_cast<double>(i) + 0.5) * 0.5 - 0.5;  // source coordinate
    const double expected = std::clamp(x, 0.0, 9.0);
    CHECK(fine.at(i, 0, 0) == doctest::Approx(expected).epsilon(1e-6));
  }

  // output shape rounds half up
  Geometry odd = simple_geometry({5, 5, 5});
  Volume ov(odd, std::vector<double>(125, 1.0));
  CHECK(resample(ov, {2.0, 2.0, 2.0}).geo().shape == Shape3{3, 3, 3});  // 2.5 -> 3

  CHECK_THROWS_AS(resample(v, {0.0, 1.0, 1.0}), Error);
}

TEST_CASE("resample nearest only emits labels present in the input") {
  Geometry g = simple_geometry({7, 6, 5});
  std::vector<int32_t> labels(static_cast<size_t>(g.voxels()), 0);
  Rng rng(7);
  for (auto& l : labels)
    l = rng.uniform() < 0.3 ? static_cast<int32_t>(1 + rng.below(3)) * 4 : 0;  // {0,4,8,12}
  LabelMap lm(g, labels, &Taxonomy::nuclei());
  LabelMap rs = resample(lm, {0.6, 1.7, 0.9});
  for (int32_t l : rs.labels()) CHECK((l == 0 || l == 4 || l == 8 || l == 12));

  // degenerate single-voxel axis still resamples via clamping
  Geometry thin = simple_geometry({1, 4, 4});
  Volume tv(thin, std::vector<double>(16, 2.0));
  CHECK_NOTHROW(resample(tv, {0.5, 0.5, 0.5}));
}

TEST_CASE("bounding boxes clip, expand and report shapes") {
  BoundingBox b{{2, 3, 4}, {5, 6, 7}};
  CHECK(b.shape() == Shape3{4, 4, 4});
  CHECK(b.voxels() == 64);
  CHECK(b.expanded(2).lo == std::array<int64_t, 3>{0, 1, 2});
  CHECK(b.expanded(10).clipped({8, 8, 8}).hi == std::array<int64_t, 3>{7, 7, 7});
  CHECK(BoundingBox{}.empty());
  CHECK(b.contains(2, 3, 4));
  CHECK(!b.contains(1, 3, 4));
}

TEST_CASE("probability maps validate range") {
  ProbabilityMaps p;
  p.geo = simple_geometry({2, 2, 2});
  p.tax = &Taxonomy::whole_thalamus();
  p.values.assign(8, 0.5f);
  CHECK_NOTHROW(p.validate());
  p.values[3] = 1.5f;
  CHECK_THROWS_AS(p.validate(), Error);
}
