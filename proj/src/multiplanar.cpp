/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#include "thalseg/multiplanar.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace thalseg {

void MultiPlanarModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["format_version"] = 1;
  j["fusion_tie_break"] = fusion.tie_break == FusionPolicy::TieBreak::MAX_SUMMED_PROBABILITY
                              ? "max_summed_probability"
                              : "fixed_class_order";
  j["fail_fast"] = fail_fast;
  if (stage1_fallback_box) {
    j["fallback_box"] = {{"lo", stage1_fallback_box->lo}, {"hi", stage1_fallback_box->hi}};
  }
  nlohmann::json planes = nlohmann::json::array();
  for (int p = 0; p < 3; ++p) {
    const auto& pipe = pipelines[static_cast<size_t>(p)];
    const std::string name = to_string(static_cast<Plane>(p));
    Checkpoint::from_model(pipe.stage1).save(dir / (name + "_stage1.tsnet"));
    Checkpoint::from_model(pipe.stage2).save(dir / (name + "_stage2.tsnet"));
    planes.push_back({{"plane", name},
                      {"threshold", pipe.threshold},
                      {"box_margin", pipe.box_margin}});
  }
  j["pipelines"] = planes;
  std::ofstream out(dir / "bundle.json");
  require(out.good(), ErrorKind::Io, cat((dir / "bundle.json").string(), ": cannot write"));
  out << j.dump(2) << "\n";
}

MultiPlanarModel MultiPlanarModel::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "bundle.json");
  require(in.good(), ErrorKind::Io,
          cat((dir / "bundle.json").string(), ": missing bundle manifest"));
  nlohmann::json j = nlohmann::json::parse(in);

  MultiPlanarModel m;
  const std::string tie = j.value("fusion_tie_break", "max_summed_probability");
  m.fusion.tie_break = tie == "fixed_class_order"
                           ? FusionPolicy::TieBreak::FIXED_CLASS_ORDER
                           : FusionPolicy::TieBreak::MAX_SUMMED_PROBABILITY;
  m.fail_fast = j.value("fail_fast", true);
  if (j.contains("fallback_box")) {
    BoundingBox b;
    b.lo = j["fallback_box"].at("lo").get<std::array<int64_t, 3>>();
    b.hi = j["fallback_box"].at("hi").get<std::array<int64_t, 3>>();
    m.stage1_fallback_box = b;
  }
  require(j.contains("pipelines") && j["pipelines"].size() == 3, ErrorKind::Format,
          "bundle must describe exactly the 3 orientations");
  for (const auto& pj : j["pipelines"]) {
    const Plane plane = plane_from_string(pj.at("plane").get<std::string>());
    auto& pipe = m.pipelines[static_cast<size_t>(plane)];
    pipe.plane = plane;
    pipe.threshold = pj.value("threshold", 0.7);
    pipe.box_margin = pj.value("box_margin", int64_t{5});
    const std::string name = to_string(plane);
    const Checkpoint c1 = Checkpoint::load(dir / (name + "_stage1.tsnet"));
    const Checkpoint c2 = Checkpoint::load(dir / (name + "_stage2.tsnet"));
    pipe.stage1 = UnetF(c1.spec, 0);
    c1.apply_to(pipe.stage1);
    pipe.stage2 = UnetF(c2.spec, 0);
    c2.apply_to(pipe.stage2);
    pipe.validate();
  }
  return m;
}

int majority_vote(const std::array<int, 3>& votes, const std::array<const float*, 3>& probs,
                  int num_classes, const FusionPolicy& policy) {
  // any class with >= 2 votes wins outright
  for (int k = 0; k < 3; ++k) {
    int count = 0;
    for (int l = 0; l < 3; ++l) count += votes[static_cast<size_t>(l)] == votes[static_cast<size_t>(k)];
    if (count >= 2) return votes[static_cast<size_t>(k)];
  }
  // 3-way tie
  if (policy.tie_break == FusionPolicy::TieBreak::FIXED_CLASS_ORDER)
    return *std::min_element(votes.begin(), votes.end());
  int best = votes[0];
  double best_sum = -1.0;
  for (int k = 0; k < 3; ++k) {
    const int cls = votes[static_cast<size_t>(k)];
    require(cls >= 0 && cls < num_classes, ErrorKind::InvalidArgument, "vote outside taxonomy");
    double sum = 0.0;
    for (int o = 0; o < 3; ++o)
      if (probs[static_cast<size_t>(o)]) sum += probs[static_cast<size_t>(o)][cls];
    if (sum > best_sum + 1e-12 || (std::abs(sum - best_sum) <= 1e-12 && cls < best)) {
      best_sum = sum;
      best = cls;
    }
  }
  return best;
}

MultiPlanarResult segment(const MultiPlanarModel& model, const Volume& v, bool bilateral) {
  MultiPlanarResult res;
  std::array<ClassProbs, 3> probs;
  std::array<LabelMap, 3> labels;
  int ok_count = 0;
  for (int p = 0; p < 3; ++p) {
    try {
      if (bilateral) {
        BilateralResult b = segment_bilateral_full(model.pipelines[static_cast<size_t>(p)], v,
                                                   model.stage1_fallback_box);
        labels[static_cast<size_t>(p)] = std::move(b.labels);
        probs[static_cast<size_t>(p)] = std::move(b.probs);
        res.overlap_voxels += b.merge.overlap_voxels;
        res.stage2_input_voxels[static_cast<size_t>(p)] =
            std::max(b.left.stage2_input_voxels, b.right.stage2_input_voxels);
      } else {
        SideResult s = segment_one_side(model.pipelines[static_cast<size_t>(p)], v,
                                        model.stage1_fallback_box);
        labels[static_cast<size_t>(p)] = std::move(s.labels);
        probs[static_cast<size_t>(p)] = std::move(s.probs);
        res.stage2_input_voxels[static_cast<size_t>(p)] = s.stage2_input_voxels;
      }
      ++ok_count;
    } catch (const Error& e) {
      if (model.fail_fast) throw;
      res.orientation_ok[static_cast<size_t>(p)] = false;
      res.warnings.push_back(cat("orientation ", to_string(static_cast<Plane>(p)),
                                 " failed: ", e.what()));
    }
  }
  require(ok_count >= 2, ErrorKind::Validation,
          "fewer than two orientations produced a segmentation");

  const Geometry& g = v.geo();
  const int nc = Taxonomy::nuclei().num_classes();
  std::vector<int32_t> fused(static_cast<size_t>(g.voxels()), 0);
  const size_t stride = static_cast<size_t>(g.voxels());
  std::vector<float> local(3 * static_cast<size_t>(nc));  // per-orientation class columns
  for (int64_t k = 0; k < g.shape[2]; ++k)
    for (int64_t j = 0; j < g.shape[1]; ++j)
      for (int64_t i = 0; i < g.shape[0]; ++i) {
        const size_t idx = g.index(i, j, k);
        std::array<int, 3> votes{};
        std::array<const float*, 3> pvec{{nullptr, nullptr, nullptr}};
        int filled = 0;
        for (int o = 0; o < 3; ++o) {
          if (!res.orientation_ok[static_cast<size_t>(o)]) continue;
          votes[static_cast<size_t>(filled)] = labels[static_cast<size_t>(o)].labels()[idx];
          float* dst = local.data() + filled * nc;
          for (int c = 0; c < nc; ++c)
            dst[c] = probs[static_cast<size_t>(o)].v[static_cast<size_t>(c) * stride + idx];
          pvec[static_cast<size_t>(filled)] = dst;
          ++filled;
        }
        if (filled == 3) {
          fused[idx] = majority_vote(votes, pvec, nc, model.fusion);
        } else {
          // two orientations: agreement wins, else the higher summed probability
          if (votes[0] == votes[1]) {
            fused[idx] = votes[0];
          } else {
            const double s0 = pvec[0][votes[0]] + pvec[1][votes[0]];
            const double s1 = pvec[0][votes[1]] + pvec[1][votes[1]];
            fused[idx] = s1 > s0 + 1e-12 ? votes[1]
                         : (std::abs(s1 - s0) <= 1e-12 ? std::min(votes[0], votes[1]) : votes[0]);
          }
        }
      }
  res.fused = LabelMap(g, std::move(fused), &Taxonomy::nuclei());
  for (int o = 0; o < 3; ++o) {
    if (!res.orientation_ok[static_cast<size_t>(o)]) continue;
    res.per_orientation[static_cast<size_t>(o)] = std::move(labels[static_cast<size_t>(o)]);
    res.per_orientation_probs[static_cast<size_t>(o)] =
        probs[static_cast<size_t>(o)].to_probability_maps();
  }
  return res;
}

}  // namespace thalseg
