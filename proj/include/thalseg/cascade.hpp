/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#pragma once

#include <optional>
#include <vector>

#include "thalseg/core_types.hpp"
#include "thalseg/network.hpp"

namespace thalseg {

/// Probability grid over all classes (background included as class 0).
struct ClassProbs {
  Geometry geo;
  const Taxonomy* tax = &Taxonomy::nuclei();
  std::vector<float> v;  // [class][k][j][i]

  int num_classes() const { return tax->num_classes(); }
  size_t stride() const { return static_cast<size_t>(geo.voxels()); }
  float at(int c, int64_t i, int64_t j, int64_t k) const {
    return v[static_cast<size_t>(c) * stride() + geo.index(i, j, k)];
  }
  float& at(int c, int64_t i, int64_t j, int64_t k) {
    return v[static_cast<size_t>(c) * stride() + geo.index(i, j, k)];
  }
  ProbabilityMaps to_probability_maps() const;  // drops the background map
};

ClassProbs reorient(const ClassProbs& p, const Orientation& target);
ClassProbs flip_lr(const ClassProbs& p);

/// One orientation's two-stage segmenter: a 2-class whole-thalamus network
/// guiding a 13-class nuclei network inside the detected box.
struct CascadePipeline {
  Plane plane = Plane::Axial;
  UnetF stage1;
  UnetF stage2;
  double threshold = 0.7;
  int64_t box_margin = 5;

  void validate() const;
};

/// Extracts the in-plane slice stack of a volume already reoriented so the
/// slicing axis is the third axis.
Tensor4f slices_of(const Volume& v);

/// Runs a network over a volume's slices (in the pipeline's plane) and
/// returns per-class probabilities in the volume's own orientation.
ClassProbs infer_volume(const UnetF& net, const Volume& v, Plane plane, const Taxonomy& tax);

struct Stage1Result {
  LabelMap mask;  // whole-thalamus taxonomy, post-threshold + largest component
  BoundingBox box;
  bool fallback = false;  // empty mask; template/whole-volume box used
};

/// Thresholds a thalamus probability grid, keeps the largest connected
/// component, and derives the margin-expanded bounding box. Exposed for
/// direct testing with constructed probability maps.
Stage1Result stage1_postprocess(const ClassProbs& probs, double threshold, int64_t margin,
                                const std::optional<BoundingBox>& fallback_box);

Stage1Result run_stage1(const CascadePipeline& p, const Volume& v,
                        const std::optional<BoundingBox>& fallback_box = std::nullopt);

/// Voxel class = argmax over classes with probability >= threshold; no class
/// above threshold means background. Exposed for direct testing.
LabelMap stage2_decide(const ClassProbs& probs, double threshold);

LabelMap run_stage2(const CascadePipeline& p, const Volume& cropped);

struct SideResult {
  LabelMap labels;   // full input geometry (background outside the box)
  ClassProbs probs;  // full geometry; background probability 1 outside the box
  BoundingBox box;
  bool fallback = false;
  int64_t stage2_input_voxels = 0;
};

/// Full one-hemisphere pass: stage 1 -> box -> crop -> stage 2 -> uncrop.
SideResult segment_one_side(const CascadePipeline& p, const Volume& v,
                            const std::optional<BoundingBox>& fallback_box = std::nullopt);

struct MergeStats {
  int64_t overlap_voxels = 0;
};

struct BilateralResult {
  LabelMap labels;
  ClassProbs probs;
  MergeStats merge;
  SideResult left, right;  // right already flipped back
};

/// Left pass directly, right pass by flip -> segment -> flip back; overlap
/// voxels resolved by the higher probability (tie: lower class id), which
/// keeps the operation symmetric under left-right flips.
BilateralResult segment_bilateral_full(const CascadePipeline& p, const Volume& v,
                                       const std::optional<BoundingBox>& fallback_box =
                                           std::nullopt);

LabelMap segment_bilateral(const CascadePipeline& p, const Volume& v,
                           const std::optional<BoundingBox>& fallback_box = std::nullopt,
                           MergeStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Precision-recall threshold selection.
// ---------------------------------------------------------------------------
struct PrPoint {
  double precision = 0.0;
  double recall = 0.0;
  double threshold = 0.0;
};

/// P/R at each candidate threshold over scored voxels vs binary truth.
std::vector<PrPoint> pr_curve(const std::vector<float>& scores,
                              const std::vector<uint8_t>& truth,
                              const std::vector<double>& thresholds);

/// Threshold maximizing min(precision, recall); ties resolve to the lower
/// threshold. Requires >= 3 points sorted by threshold.
double select_threshold(const std::vector<PrPoint>& points);

}  // namespace thalseg
