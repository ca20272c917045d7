/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "thalseg/common.hpp"

namespace thalseg {

using Affine = Eigen::Matrix4d;
using Shape3 = std::array<int64_t, 3>;
using Spacing3 = std::array<double, 3>;

enum class Contrast { WMN, CSFN, SYNTHETIC };

std::string to_string(Contrast c);
Contrast contrast_from_string(std::string_view s);

/// NIfTI-1 datatype codes supported by the I/O layer.
enum class VoxelType : int {
  U8 = 2,
  I16 = 4,
  I32 = 8,
  F32 = 16,
  F64 = 64,
};

// ---------------------------------------------------------------------------
// Orientation: a 3-letter anatomical axis code, one letter per voxel axis,
// naming the world direction that axis points toward (R/L, A/P, S/I under an
// x-right, y-anterior, z-superior world frame). The canonical orientation is
// RAS: axial slices are the (x, y) planes.
// ---------------------------------------------------------------------------
struct Orientation {
  std::array<char, 3> code{{'R', 'A', 'S'}};

  static Orientation parse(std::string_view s);
  /// Classifies each column of the affine's 3x3 block by its dominant world axis.
  static Orientation from_affine(const Affine& a);

  std::string str() const { return std::string(code.begin(), code.end()); }
  bool valid() const;
  /// Voxel axis whose letter is R or L.
  int lr_axis() const;
  /// World axis index (0=x,1=y,2=z) for voxel axis k.
  int world_axis(int k) const;
  /// +1 if voxel axis k points along the positive world axis, else -1.
  int world_sign(int k) const;

  bool operator==(const Orientation& o) const { return code == o.code; }
  bool operator!=(const Orientation& o) const { return !(*this == o); }
};

inline const Orientation kOrientAxial{{'R', 'A', 'S'}};     // slice axis = S/I
inline const Orientation kOrientCoronal{{'R', 'S', 'A'}};   // slice axis = A/P
inline const Orientation kOrientSagittal{{'A', 'S', 'R'}};  // slice axis = R/L
inline const Orientation kCanonicalOrientation = kOrientAxial;

enum class Plane { Axial, Coronal, Sagittal };
std::string to_string(Plane p);
Plane plane_from_string(std::string_view s);
Orientation plane_orientation(Plane p);

/// Shared geometric metadata of a grid: shape, spacing (mm), orientation code
/// and the 4x4 voxel-to-world affine.
struct Geometry {
  Shape3 shape{{0, 0, 0}};
  Spacing3 spacing{{1.0, 1.0, 1.0}};
  Orientation orientation;
  Affine affine = Affine::Identity();

  int64_t voxels() const { return shape[0] * shape[1] * shape[2]; }
  double voxel_volume_mm3() const { return spacing[0] * spacing[1] * spacing[2]; }
  size_t index(int64_t i, int64_t j, int64_t k) const {
    return static_cast<size_t>(i + shape[0] * (j + shape[1] * k));
  }
  bool matches(const Geometry& o, double tol = 1e-6) const;
  void validate() const;
};

/// Inclusive voxel-index box.
struct BoundingBox {
  std::array<int64_t, 3> lo{{0, 0, 0}};
  std::array<int64_t, 3> hi{{-1, -1, -1}};

  bool empty() const { return hi[0] < lo[0] || hi[1] < lo[1] || hi[2] < lo[2]; }
  Shape3 shape() const { return {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1}; }
  int64_t voxels() const {
    return empty() ? 0 : shape()[0] * shape()[1] * shape()[2];
  }
  BoundingBox expanded(int64_t margin) const;
  BoundingBox clipped(const Shape3& extent) const;
  bool contains(int64_t i, int64_t j, int64_t k) const {
    return i >= lo[0] && i <= hi[0] && j >= lo[1] && j <= hi[1] && k >= lo[2] && k <= hi[2];
  }
  bool operator==(const BoundingBox& o) const { return lo == o.lo && hi == o.hi; }
  static BoundingBox whole(const Shape3& extent) {
    return BoundingBox{{0, 0, 0}, {extent[0] - 1, extent[1] - 1, extent[2] - 1}};
  }
};

// ---------------------------------------------------------------------------
// Class taxonomy. Stage 1 segments {background, thalamus}; stage 2 segments
// background plus the 12 structures, ids fixed in descending typical size.
// ---------------------------------------------------------------------------
class Taxonomy {
 public:
  static const Taxonomy& whole_thalamus();  // 2 classes
  static const Taxonomy& nuclei();          // 13 classes

  int num_classes() const { return static_cast<int>(names_.size()); }
  const std::string& name(int id) const;
  int id(std::string_view name) const;  // -1 if unknown
  bool valid(int id) const { return id >= 0 && id < num_classes(); }

 private:
  explicit Taxonomy(std::vector<std::string> names) : names_(std::move(names)) {}
  std::vector<std::string> names_;
};

// ---------------------------------------------------------------------------
// Volume: immutable-after-construction 3D scalar grid. Data is stored as
// double so every supported on-disk datatype round-trips exactly; the source
// datatype is kept for write-back.
// ---------------------------------------------------------------------------
class Volume {
 public:
  Volume() = default;
  Volume(Geometry geo, std::vector<double> data, Contrast tag = Contrast::SYNTHETIC,
         VoxelType dtype = VoxelType::F32);

  const Geometry& geo() const { return geo_; }
  const std::vector<double>& data() const { return data_; }
  std::vector<double>& mutable_data() { return data_; }
  Contrast contrast() const { return contrast_; }
  VoxelType dtype() const { return dtype_; }
  void set_contrast(Contrast c) { contrast_ = c; }
  void set_dtype(VoxelType t) { dtype_ = t; }

  double at(int64_t i, int64_t j, int64_t k) const { return data_[geo_.index(i, j, k)]; }
  double& at(int64_t i, int64_t j, int64_t k) { return data_[geo_.index(i, j, k)]; }

  /// Enforces the construction invariants (positive spacing, invertible
  /// affine, finite data). Throws Error(Validation) on violation.
  void validate() const;

 private:
  Geometry geo_;
  std::vector<double> data_;
  Contrast contrast_ = Contrast::SYNTHETIC;
  VoxelType dtype_ = VoxelType::F32;
};

/// 3D integer grid over a taxonomy, geometry-paired with a Volume.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(Geometry geo, std::vector<int32_t> labels, const Taxonomy* tax,
           VoxelType dtype = VoxelType::I16);

  const Geometry& geo() const { return geo_; }
  const std::vector<int32_t>& labels() const { return labels_; }
  std::vector<int32_t>& mutable_labels() { return labels_; }
  const Taxonomy& taxonomy() const { return *tax_; }
  VoxelType dtype() const { return dtype_; }
  void set_dtype(VoxelType t) { dtype_ = t; }

  int32_t at(int64_t i, int64_t j, int64_t k) const { return labels_[geo_.index(i, j, k)]; }
  int32_t& at(int64_t i, int64_t j, int64_t k) { return labels_[geo_.index(i, j, k)]; }

  void validate() const;

 private:
  Geometry geo_;
  std::vector<int32_t> labels_;
  const Taxonomy* tax_ = &Taxonomy::nuclei();
  VoxelType dtype_ = VoxelType::I16;
};

/// Per-class probability grids, one map per non-background class of the
/// taxonomy (map m covers class id m+1). Values live in [0, 1].
struct ProbabilityMaps {
  Geometry geo;
  const Taxonomy* tax = &Taxonomy::nuclei();
  std::vector<float> values;  // [map][k][j][i]

  int num_maps() const { return tax->num_classes() - 1; }
  size_t map_stride() const { return static_cast<size_t>(geo.voxels()); }
  float at(int class_id, int64_t i, int64_t j, int64_t k) const {
    return values[(static_cast<size_t>(class_id) - 1) * map_stride() + geo.index(i, j, k)];
  }
  float& at(int class_id, int64_t i, int64_t j, int64_t k) {
    return values[(static_cast<size_t>(class_id) - 1) * map_stride() + geo.index(i, j, k)];
  }
  void validate() const;
};

void require_same_geometry(const Geometry& a, const Geometry& b, double tol = 1e-6);

// ---------------------------------------------------------------------------
// Grid operations. reorient/flip_lr are exact index bijections (no
// interpolation); resample interpolates (trilinear for intensities, nearest
// for labels).
// ---------------------------------------------------------------------------

Volume reorient(const Volume& v, const Orientation& target);
LabelMap reorient(const LabelMap& m, const Orientation& target);
ProbabilityMaps reorient(const ProbabilityMaps& p, const Orientation& target);

/// Mirrors the grid along the left-right axis: voxel content moves, the
/// affine and orientation stay. flip_lr(flip_lr(v)) == v exactly.
Volume flip_lr(const Volume& v);
LabelMap flip_lr(const LabelMap& m);
ProbabilityMaps flip_lr(const ProbabilityMaps& p);

enum class Interp { Trilinear, Nearest };

Volume resample(const Volume& v, const Spacing3& target, Interp mode = Interp::Trilinear);
LabelMap resample(const LabelMap& m, const Spacing3& target);  // always nearest

/// World coordinate of a voxel center.
Eigen::Vector3d voxel_to_world(const Geometry& g, double i, double j, double k);

}  // namespace thalseg
