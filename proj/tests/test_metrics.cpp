/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#include <doctest.h>

#include <cmath>

#include "thalseg/metrics.hpp"

using namespace thalseg;

namespace {

Geometry geo(Shape3 shape, Spacing3 spacing = {1, 1, 1}) {
  Geometry g;
  g.shape = shape;
  g.spacing = spacing;
  g.affine = Affine::Identity();
  for (int k = 0; k < 3; ++k) g.affine(k, k) = spacing[k];
  return g;
}

LabelMap labels_of(const Geometry& g, std::vector<int32_t> v) {
  return LabelMap(g, std::move(v), &Taxonomy::nuclei());
}

// brute-force voxel-count oracle
void count_oracle(const LabelMap& a, const LabelMap& b, int cls, int64_t& na, int64_t& nb,
                  int64_t& inter) {
  na = nb = inter = 0;
  for (size_t i = 0; i < a.labels().size(); ++i) {
    const bool ia = a.labels()[i] == cls;
    const bool ib = b.labels()[i] == cls;
    na += ia;
    nb += ib;
    inter += ia && ib;
  }
}

}  // namespace

TEST_CASE("dice: identity, disjoint and counted cases") {
  Geometry g = geo({4, 4, 4});
  std::vector<int32_t> a(64, 0), b(64, 0);
  for (int i = 0; i < 6; ++i) a[static_cast<size_t>(i)] = 1;
  for (int i = 0; i < 6; ++i) b[static_cast<size_t>(i)] = 1;
  CHECK(dice(labels_of(g, a), labels_of(g, b), 1) == 1.0);

  std::vector<int32_t> c(64, 0);
  for (int i = 10; i < 16; ++i) c[static_cast<size_t>(i)] = 1;
  CHECK(dice(labels_of(g, a), labels_of(g, c), 1) == 0.0);

  // |A| = 4, |B| = 6, overlap 3 -> 2*3/10 = 0.6
  std::vector<int32_t> a2(64, 0), b2(64, 0);
  for (int i = 0; i < 4; ++i) a2[static_cast<size_t>(i)] = 2;
  for (int i = 1; i < 7; ++i) b2[static_cast<size_t>(i)] = 2;
  CHECK(dice(labels_of(g, a2), labels_of(g, b2), 2) == doctest::Approx(0.6).epsilon(1e-12));

  // geometry mismatch rejected
  Geometry g2 = geo({4, 4, 5});
  CHECK_THROWS_AS(dice(labels_of(g, a), labels_of(g2, std::vector<int32_t>(80, 0)), 1), Error);
}

TEST_CASE("vsi: volume identity, arithmetic and empty conventions") {
  Geometry g = geo({5, 5, 5});
  // equal volumes, partial overlap -> 1.0
  std::vector<int32_t> a(125, 0), b(125, 0);
  for (int i = 0; i < 10; ++i) a[static_cast<size_t>(i)] = 3;
  for (int i = 5; i < 15; ++i) b[static_cast<size_t>(i)] = 3;
  CHECK(vsi(labels_of(g, a), labels_of(g, b), 3) == 1.0);

  // |A| = 100, |B| = 50 -> 1 - 50/150 = 2/3
  std::vector<int32_t> a2(125, 0), b2(125, 0);
  for (int i = 0; i < 100; ++i) a2[static_cast<size_t>(i)] = 1;
  for (int i = 0; i < 50; ++i) b2[static_cast<size_t>(i)] = 1;
  CHECK(vsi(labels_of(g, a2), labels_of(g, b2), 1) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  // |A| = 0, |B| = k > 0 -> 0
  std::vector<int32_t> zero(125, 0);
  CHECK(vsi(labels_of(g, zero), labels_of(g, b2), 1) == 0.0);
  // both empty -> 1
  CHECK(vsi(labels_of(g, zero), labels_of(g, zero), 5) == 1.0);
  CHECK(dice(labels_of(g, zero), labels_of(g, zero), 5) == 1.0);
}

TEST_CASE("dice and vsi are symmetric; random pairs match the counting oracle") {
  Geometry g = geo({8, 8, 8});
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int32_t> a(512), b(512);
    for (auto& v : a) v = static_cast<int32_t>(rng.below(13));
    for (auto& v : b) v = static_cast<int32_t>(rng.below(13));
    const LabelMap la = labels_of(g, a), lb = labels_of(g, b);
    for (int cls = 1; cls < 13; ++cls) {
      int64_t na, nb, inter;
      count_oracle(la, lb, cls, na, nb, inter);
      const double expect_dice =
          (na + nb) == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
      const double expect_vsi =
          (na + nb) == 0 ? 1.0
                         : 1.0 - static_cast<double>(std::llabs(na - nb)) /
                                     static_cast<double>(na + nb);
      CHECK(std::abs(dice(la, lb, cls) - expect_dice) < 1e-12);
      CHECK(std::abs(vsi(la, lb, cls) - expect_vsi) < 1e-12);
      CHECK(dice(la, lb, cls) == dice(lb, la, cls));
      CHECK(vsi(la, lb, cls) == vsi(lb, la, cls));
      CHECK(vsi(la, la, cls) == 1.0);  // vsi = 1 whenever |A| == |B|
    }
  }
}

TEST_CASE("report covers all classes, volumes and aggregate means") {
  Geometry g = geo({6, 6, 6}, {0.7, 0.5, 0.7});
  std::vector<int32_t> ref(216, 0), pred(216, 0);
  // 10 voxels of Pul(1), 4 of Hb(12) in the reference
  for (int i = 0; i < 10; ++i) ref[static_cast<size_t>(i)] = 1;
  for (int i = 20; i < 24; ++i) ref[static_cast<size_t>(i)] = 12;
  // prediction overlaps 8 of Pul, misses Hb entirely, adds 2 CM(8)
  for (int i = 0; i < 8; ++i) pred[static_cast<size_t>(i)] = 1;
  pred[100] = 8;
  pred[101] = 8;

  const MetricsReport rep = report(labels_of(g, pred), labels_of(g, ref), "subj", "control");
  REQUIRE(rep.per_class.size() == 12);
  const double vox = 0.7 * 0.5 * 0.7;
  CHECK(rep.per_class[0].name == "Pul");
  CHECK(rep.per_class[0].volume_ref_mm3 == doctest::Approx(10 * vox));
  CHECK(rep.per_class[0].volume_pred_mm3 == doctest::Approx(8 * vox));
  CHECK(rep.per_class[0].dice == doctest::Approx(16.0 / 18.0));
  CHECK(rep.per_class[11].name == "Hb");
  CHECK(rep.per_class[11].dice == 0.0);
  CHECK(rep.per_class[11].absent_in_ref == false);
  CHECK(rep.per_class[1].absent_in_both == true);   // VLp nowhere
  CHECK(rep.per_class[1].dice == 1.0);

  // aggregates: mean over 12 structures; 11-structure mean excludes MTT
  double sum12 = 0.0, sum11 = 0.0;
  for (const auto& m : rep.per_class) {
    sum12 += m.dice;
    if (m.name != "MTT") sum11 += m.dice;
  }
  CHECK(rep.mean_dice_structures == doctest::Approx(sum12 / 12.0));
  CHECK(rep.mean_dice_nuclei == doctest::Approx(sum11 / 11.0));

  // whole-structure union entry
  CHECK(rep.whole.name == "thalamus");
  CHECK(rep.whole.volume_ref_mm3 == doctest::Approx(14 * vox));

  // identical maps give all ones
  const MetricsReport perfect = report(labels_of(g, ref), labels_of(g, ref));
  for (const auto& m : perfect.per_class) {
    CHECK(m.dice == 1.0);
    CHECK(m.vsi == 1.0);
  }
  CHECK(perfect.whole.dice == 1.0);

  // json round trip
  const MetricsReport back = MetricsReport::from_json(rep.to_json());
  CHECK(back.subject_id == "subj");
  CHECK(back.per_class.size() == 12);
  CHECK(back.mean_dice_structures == doctest::Approx(rep.mean_dice_structures));
}

TEST_CASE("report is invariant under a simultaneous spatial permutation") {
  Geometry g = geo({5, 5, 5});
  Rng rng(123);
  std::vector<int32_t> a(125), b(125);
  for (auto& v : a) v = static_cast<int32_t>(rng.below(13));
  for (auto& v : b) v = static_cast<int32_t>(rng.below(13));
  const MetricsReport r1 = report(labels_of(g, a), labels_of(g, b));

  std::vector<size_t> perm(125);
  for (size_t i = 0; i < 125; ++i) perm[i] = i;
  for (size_t i = 125; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  std::vector<int32_t> ap(125), bp(125);
  for (size_t i = 0; i < 125; ++i) {
    ap[i] = a[perm[i]];
    bp[i] = b[perm[i]];
  }
  const MetricsReport r2 = report(labels_of(g, ap), labels_of(g, bp));
  for (size_t c = 0; c < 12; ++c) {
    CHECK(r1.per_class[c].dice == doctest::Approx(r2.per_class[c].dice).epsilon(1e-15));
    CHECK(r1.per_class[c].vsi == doctest::Approx(r2.per_class[c].vsi).epsilon(1e-15));
  }
}

TEST_CASE("table renderer shows the median reference volume in parentheses") {
  // construct a reference whose whole-thalamus volume is at the 5515 mm^3 scale
  Geometry g = geo({40, 40, 20}, {0.7, 0.5, 0.7});  // voxel 0.245 mm^3
  const int64_t target_voxels = static_cast<int64_t>(std::llround(5515.0 / 0.245));
  std::vector<int32_t> ref(static_cast<size_t>(g.voxels()), 0);
  REQUIRE(static_cast<int64_t>(ref.size()) > target_voxels);
  for (int64_t i = 0; i < target_voxels; ++i) ref[static_cast<size_t>(i)] = 1;
  const MetricsReport rep = report(labels_of(g, ref), labels_of(g, ref), "s1", "control");
  const std::string table = render_metrics_table({rep});
  CHECK(table.find("Thalamus (5515)") != std::string::npos);
  CHECK(table.find("Pul") != std::string::npos);
  CHECK(table.find("Hb") != std::string::npos);
}
