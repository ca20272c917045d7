/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "thalseg/core_types.hpp"
#include "thalseg/preprocess.hpp"
#include "thalseg/volume_io.hpp"

namespace thalseg {

// ---------------------------------------------------------------------------
// Parametric bilateral thalamus phantom: two mirrored ellipsoids inside a
// head blob, each partitioned into the 12 structures by a weighted Voronoi
// diagram whose region sizes track typical adult volumes. Labels are exact by
// construction; images are per-class means plus smoothing and Rician noise.
// ---------------------------------------------------------------------------
struct PhantomSpec {
  Shape3 grid{{96, 72, 56}};
  Spacing3 spacing{{0.7, 0.5, 0.7}};

  std::array<double, 3> thalamus_axes_mm{{10.5, 12.0, 10.2}};  // semi-axes
  double thalamus_offset_mm = 14.0;  // lateral distance of each center from midline

  double site_jitter = 0.04;      // per-subject Voronoi site jitter (unit-ball units)
  double shape_jitter = 0.04;     // relative ellipsoid axis jitter
  double global_scale_std = 0.03; // per-subject head-size (ICV) linear scale std
  double fraction_blend = 0.0;    // 0 = typical adult fractions, 1 = uniform regions

  // intensity model (per-class means spread linearly over [low, high])
  double head_mean_wmn = 130.0, head_mean_csfn = 300.0;
  double nucleus_low_wmn = 180.0, nucleus_high_wmn = 700.0;
  double nucleus_low_csfn = 260.0, nucleus_high_csfn = 460.0;

  int smooth_passes = 1;
  double noise_sigma = 14.0;

  bool lesions = false;
  int lesion_count = 4;
  double lesion_radius_mm = 2.5;
  double lesion_intensity_factor = 0.55;

  std::map<std::string, double> atrophy;  // structure name -> volume fraction removed

  uint64_t partition_seed = 42;  // shared base site layout
  uint64_t seed = 0;

  /// Per-class intensity means (index = class id 1..12) for a contrast mode.
  std::vector<double> class_means(Contrast mode) const;
  void validate() const;
  std::string to_json() const;
  static PhantomSpec from_json(const std::string& text);
};

/// Typical adult structure volumes in mm^3 (descending, taxonomy order
/// Pul..Hb) used for Voronoi region sizing and table rendering.
const std::array<double, 12>& typical_structure_volumes_mm3();

struct PhantomSubject {
  std::string id;
  Volume wmn;
  Volume csfn;
  LabelMap labels;
  double age = 0.0;
  int gender = 0;  // 0/1 indicator
  int pi = 0;      // parallel imaging indicator
  double icv_mm3 = 0.0;
};

/// One (image, exact label map) pair in the requested contrast mode.
std::pair<Volume, LabelMap> generate(const PhantomSpec& spec, Contrast mode = Contrast::WMN);

/// Full subject: both contrast images sharing one label map, plus covariates.
PhantomSubject generate_subject(const PhantomSpec& spec, uint64_t subject_index,
                                const std::string& id);

/// Nominal (jitter-free) phantom plus the box covering both thalami; serves
/// as the crop template for this phantom family.
CropTemplate make_template(const PhantomSpec& spec, int64_t box_margin = 2);

struct CohortSpec {
  PhantomSpec base;
  int n = 10;
  Cohort cohort = Cohort::CONTROL;
  uint64_t seed = 0;
  // MS-like cohorts default to lesions plus 15% AV/Pul/MGN atrophy when the
  // spec carries no explicit atrophy map.
  std::map<std::string, double> atrophy_override;
};

std::vector<PhantomSubject> generate_cohort_members(const CohortSpec& spec);

struct WrittenCohort {
  std::filesystem::path wmn_manifest;
  std::filesystem::path csfn_manifest;
  std::filesystem::path cohort_table;
  std::filesystem::path template_path;
  std::vector<std::string> subject_ids;
};

/// Writes image/label NIfTI pairs, per-contrast manifests, the covariate +
/// per-structure volume table (TSV) and the crop template into out_dir.
WrittenCohort write_cohort(const CohortSpec& spec, const std::filesystem::path& out_dir);

/// Left/right per-class voxel volumes (mm^3) measured from a label map; side
/// resolved by world x sign (left < 0).
struct SideVolumes {
  std::vector<double> left_mm3;   // index = class id
  std::vector<double> right_mm3;
};
SideVolumes measure_side_volumes(const LabelMap& labels);

}  // namespace thalseg
