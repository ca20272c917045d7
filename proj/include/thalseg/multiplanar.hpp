/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#pragma once

#include <array>
#include <filesystem>
#include <optional>

#include "thalseg/cascade.hpp"

namespace thalseg {

struct FusionPolicy {
  enum class TieBreak { MAX_SUMMED_PROBABILITY, FIXED_CLASS_ORDER };
  TieBreak tie_break = TieBreak::MAX_SUMMED_PROBABILITY;
};

/// Three cascaded pipelines, one per viewing plane, fused by voxel-wise
/// majority vote. Pipelines sit in plane order axial, coronal, sagittal.
struct MultiPlanarModel {
  std::array<CascadePipeline, 3> pipelines;
  FusionPolicy fusion;
  std::optional<BoundingBox> stage1_fallback_box;
  bool fail_fast = true;  // false: fuse the surviving orientations on failure

  CascadePipeline& pipeline(Plane p) { return pipelines[static_cast<size_t>(p)]; }
  const CascadePipeline& pipeline(Plane p) const { return pipelines[static_cast<size_t>(p)]; }

  void save(const std::filesystem::path& bundle_dir) const;
  static MultiPlanarModel load(const std::filesystem::path& bundle_dir);
};

/// Majority vote over exactly 3 class votes; a 3-way tie resolves by the
/// policy (default: greatest probability summed across orientations, then the
/// lowest class id). probs[k] spans all classes of orientation k.
int majority_vote(const std::array<int, 3>& votes,
                  const std::array<const float*, 3>& probs, int num_classes,
                  const FusionPolicy& policy);

struct MultiPlanarResult {
  LabelMap fused;
  std::array<LabelMap, 3> per_orientation;
  std::array<ProbabilityMaps, 3> per_orientation_probs;
  std::array<bool, 3> orientation_ok{{true, true, true}};
  std::array<int64_t, 3> stage2_input_voxels{{0, 0, 0}};
  int64_t overlap_voxels = 0;
  std::vector<std::string> warnings;
};

/// Bilateral two-stage segmentation in each plane, outputs reformatted to the
/// input orientation and fused voxel-wise. bilateral = false runs only the
/// direct (left-hemisphere) pass.
MultiPlanarResult segment(const MultiPlanarModel& model, const Volume& v, bool bilateral = true);

}  // namespace thalseg
