/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "thalseg/core_types.hpp"

namespace thalseg {

/// Voxels above the given intensity percentile (default: 10th), used as the
/// foreground for bias fitting and alignment.
std::vector<uint8_t> foreground_mask(const Volume& v, double percentile = 10.0);

// ---------------------------------------------------------------------------
// Bias correction. The default corrector fits a degree-3 polynomial to the
// log-intensities over the foreground and divides the fitted multiplicative
// field out; an identity corrector is available, and callers may plug in an
// external implementation.
// ---------------------------------------------------------------------------
using BiasCorrector = std::function<Volume(const Volume&)>;

BiasCorrector polynomial_bias_corrector(int degree = 3);
BiasCorrector identity_bias_corrector();

Volume bias_correct(const Volume& v, const BiasCorrector& corrector = polynomial_bias_corrector(),
                    std::vector<std::string>* warnings = nullptr);

/// Zero-mean unit-std normalization over all voxels. Rejects constant input.
Volume normalize(const Volume& v);

// ---------------------------------------------------------------------------
// Template-driven cropping.
// ---------------------------------------------------------------------------
struct CropTemplate {
  Volume template_volume;
  BoundingBox box;  // in template voxel coordinates

  void save(const std::filesystem::path& nifti_path) const;  // + .box.json sidecar
  static CropTemplate load(const std::filesystem::path& nifti_path);
};

struct AlignmentResult {
  Affine voxel_map = Affine::Identity();  // template voxel -> subject voxel
  bool ok = true;
};

using AlignmentPlugin = std::function<AlignmentResult(const Volume& templ, const Volume& subject)>;

AlignmentPlugin identity_alignment();
AlignmentPlugin center_of_mass_alignment();
AlignmentPlugin affine_file_alignment(const std::filesystem::path& matrix_path);

struct CropResult {
  Volume cropped;
  BoundingBox box;       // in subject voxel coordinates
  bool fallback = false; // alignment failed; whole-volume box used
};

/// Warps the template box into subject space via the alignment plugin,
/// expands it by margin, clips to the volume, and crops.
CropResult crop_to_thalami(const Volume& v, const CropTemplate& tmpl,
                           const AlignmentPlugin& align = center_of_mass_alignment(),
                           int64_t margin = 5);

Volume crop(const Volume& v, const BoundingBox& box);
LabelMap crop(const LabelMap& m, const BoundingBox& box);

/// Places cropped labels back at their box inside a background-filled grid of
/// the full geometry.
LabelMap uncrop(const LabelMap& labels, const BoundingBox& box, const Geometry& full_geometry);

// ---------------------------------------------------------------------------
// Rotation augmentation: random in-plane rotations in the three orthogonal
// planes, stratified over (-max_angle, +max_angle), trilinear for images,
// nearest for labels.
// ---------------------------------------------------------------------------
struct AugmentationPolicy {
  double max_angle_deg = 7.0;
  int copies_per_plane = 6;
  int num_planes = 3;
  uint64_t rng_seed = 0;

  int total_copies() const { return copies_per_plane * num_planes; }
};

std::vector<std::pair<Volume, LabelMap>> augment(const Volume& v, const LabelMap& labels,
                                                 const AugmentationPolicy& policy);

/// Rotates in the plane spanned by two voxel axes about the grid center;
/// plane index 0 = (x,y), 1 = (x,z), 2 = (y,z).
Volume rotate_inplane(const Volume& v, int plane, double angle_deg);
LabelMap rotate_inplane(const LabelMap& m, int plane, double angle_deg);

}  // namespace thalseg
