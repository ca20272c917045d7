/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#include "thalseg/core_types.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace thalseg {

std::string to_string(Contrast c) {
  switch (c) {
    case Contrast::WMN: return "wmn";
    case Contrast::CSFN: return "csfn";
    case Contrast::SYNTHETIC: return "synthetic";
  }
  return "synthetic";
}

Contrast contrast_from_string(std::string_view s) {
  if (s == "wmn" || s == "WMN") return Contrast::WMN;
  if (s == "csfn" || s == "CSFN") return Contrast::CSFN;
  if (s == "synthetic" || s == "SYNTHETIC") return Contrast::SYNTHETIC;
  fail(ErrorKind::Validation, cat("unknown contrast tag '", s, "'"));
}

std::string to_string(Plane p) {
  switch (p) {
    case Plane::Axial: return "axial";
    case Plane::Coronal: return "coronal";
    case Plane::Sagittal: return "sagittal";
  }
  return "axial";
}

Plane plane_from_string(std::string_view s) {
  if (s == "axial") return Plane::Axial;
  if (s == "coronal") return Plane::Coronal;
  if (s == "sagittal") return Plane::Sagittal;
  fail(ErrorKind::InvalidArgument, cat("unknown plane '", s, "' (want axial|coronal|sagittal)"));
}

Orientation plane_orientation(Plane p) {
  switch (p) {
    case Plane::Axial: return kOrientAxial;
    case Plane::Coronal: return kOrientCoronal;
    case Plane::Sagittal: return kOrientSagittal;
  }
  return kOrientAxial;
}

namespace {

// World axis and sign for an orientation letter.
int letter_axis(char c) {
  switch (c) {
    case 'R': case 'L': return 0;
    case 'A': case 'P': return 1;
    case 'S': case 'I': return 2;
    default: return -1;
  }
}

int letter_sign(char c) { return (c == 'R' || c == 'A' || c == 'S') ? 1 : -1; }

char axis_letter(int axis, int sign) {
  static const char pos[3] = {'R', 'A', 'S'};
  static const char neg[3] = {'L', 'P', 'I'};
  return sign >= 0 ? pos[axis] : neg[axis];
}

}  // namespace

Orientation Orientation::parse(std::string_view s) {
  require(s.size() == 3, ErrorKind::InvalidArgument,
          cat("orientation code must have 3 letters, got '", s, "'"));
  Orientation o;
  for (int k = 0; k < 3; ++k) o.code[k] = static_cast<char>(std::toupper(s[k]));
  require(o.valid(), ErrorKind::InvalidArgument,
          cat("invalid orientation code '", s, "': must name each world axis exactly once"));
  return o;
}

bool Orientation::valid() const {
  bool seen[3] = {false, false, false};
  for (char c : code) {
    int a = letter_axis(c);
    if (a < 0 || seen[a]) return false;
    seen[a] = true;
  }
  return true;
}

int Orientation::lr_axis() const {
  for (int k = 0; k < 3; ++k)
    if (code[k] == 'R' || code[k] == 'L') return k;
  return -1;
}

int Orientation::world_axis(int k) const { return letter_axis(code[k]); }
int Orientation::world_sign(int k) const { return letter_sign(code[k]); }

Orientation Orientation::from_affine(const Affine& a) {
  Orientation o;
  bool used[3] = {false, false, false};
  for (int k = 0; k < 3; ++k) {
    int best = -1;
    double mag = -1.0;
    for (int w = 0; w < 3; ++w) {
      double m = std::abs(a(w, k));
      if (m > mag && !used[w]) {
        mag = m;
        best = w;
      }
    }
    require(best >= 0 && mag > 0.0, ErrorKind::Validation,
            "affine has a degenerate column; cannot derive orientation");
    used[best] = true;
    o.code[k] = axis_letter(best, a(best, k) >= 0 ? 1 : -1);
  }
  return o;
}

bool Geometry::matches(const Geometry& o, double tol) const {
  if (shape != o.shape) return false;
  for (int k = 0; k < 3; ++k)
    if (std::abs(spacing[k] - o.spacing[k]) > tol) return false;
  if (orientation != o.orientation) return false;
  return (affine - o.affine).cwiseAbs().maxCoeff() <= tol;
}

void Geometry::validate() const {
  require(shape[0] > 0 && shape[1] > 0 && shape[2] > 0, ErrorKind::Validation,
          cat("grid shape must be positive, got ", shape[0], "x", shape[1], "x", shape[2]));
  for (int k = 0; k < 3; ++k)
    require(spacing[k] > 0.0, ErrorKind::Validation,
            cat("spacing component ", k, " must be > 0, got ", spacing[k]));
  require(orientation.valid(), ErrorKind::Validation, "invalid orientation code");
  const double det = affine.block<3, 3>(0, 0).determinant();
  require(std::abs(det) > 1e-12, ErrorKind::Validation,
          cat("affine 3x3 block is singular (|det| = ", std::abs(det), ")"));
}

BoundingBox BoundingBox::expanded(int64_t margin) const {
  BoundingBox b = *this;
  for (int k = 0; k < 3; ++k) {
    b.lo[k] -= margin;
    b.hi[k] += margin;
  }
  return b;
}

BoundingBox BoundingBox::clipped(const Shape3& extent) const {
  BoundingBox b = *this;
  for (int k = 0; k < 3; ++k) {
    b.lo[k] = std::max<int64_t>(b.lo[k], 0);
    b.hi[k] = std::min<int64_t>(b.hi[k], extent[k] - 1);
  }
  return b;
}

const Taxonomy& Taxonomy::whole_thalamus() {
  static const Taxonomy t({"background", "thalamus"});
  return t;
}

const Taxonomy& Taxonomy::nuclei() {
  static const Taxonomy t({"background", "Pul", "VLp", "MD-Pf", "VPL", "VA", "AV", "VLa", "CM",
                           "LGN", "MGN", "MTT", "Hb"});
  return t;
}

const std::string& Taxonomy::name(int id) const {
  require(valid(id), ErrorKind::InvalidArgument, cat("class id ", id, " out of range"));
  return names_[static_cast<size_t>(id)];
}

int Taxonomy::id(std::string_view name) const {
  for (size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return static_cast<int>(i);
  return -1;
}

Volume::Volume(Geometry geo, std::vector<double> data, Contrast tag, VoxelType dtype)
    : geo_(std::move(geo)), data_(std::move(data)), contrast_(tag), dtype_(dtype) {
  validate();
}

void Volume::validate() const {
  geo_.validate();
  require(static_cast<int64_t>(data_.size()) == geo_.voxels(), ErrorKind::Validation,
          cat("data length ", data_.size(), " does not match grid of ", geo_.voxels(), " voxels"));
  for (double d : data_)
    require(std::isfinite(d), ErrorKind::Validation, "volume contains NaN/Inf");
}

LabelMap::LabelMap(Geometry geo, std::vector<int32_t> labels, const Taxonomy* tax, VoxelType dtype)
    : geo_(std::move(geo)), labels_(std::move(labels)), tax_(tax), dtype_(dtype) {
  validate();
}

void LabelMap::validate() const {
  geo_.validate();
  require(tax_ != nullptr, ErrorKind::Validation, "label map has no taxonomy");
  require(static_cast<int64_t>(labels_.size()) == geo_.voxels(), ErrorKind::Validation,
          cat("label length ", labels_.size(), " does not match grid of ", geo_.voxels(),
              " voxels"));
  const int nc = tax_->num_classes();
  for (int32_t v : labels_)
    require(v >= 0 && v < nc, ErrorKind::Validation,
            cat("label value ", v, " outside taxonomy of ", nc, " classes"));
}

void ProbabilityMaps::validate() const {
  geo.validate();
  require(values.size() == map_stride() * static_cast<size_t>(num_maps()), ErrorKind::Validation,
          "probability map buffer size mismatch");
  for (float f : values)
    require(f >= 0.0f && f <= 1.0f, ErrorKind::Validation,
            cat("probability ", f, " outside [0, 1]"));
}

void require_same_geometry(const Geometry& a, const Geometry& b, double tol) {
  require(a.matches(b, tol), ErrorKind::Validation,
          cat("geometry mismatch: ", a.shape[0], "x", a.shape[1], "x", a.shape[2], " vs ",
              b.shape[0], "x", b.shape[1], "x", b.shape[2]));
}

// ---------------------------------------------------------------------------
// reorient
// ---------------------------------------------------------------------------

namespace {

struct AxisMap {
  int src[3];    // source axis feeding target axis j
  bool flip[3];  // reverse that source axis
};

AxisMap axis_map(const Orientation& from, const Orientation& to) {
  AxisMap m{};
  for (int j = 0; j < 3; ++j) {
    const int w = letter_axis(to.code[j]);
    int found = -1;
    for (int k = 0; k < 3; ++k)
      if (letter_axis(from.code[k]) == w) found = k;
    require(found >= 0, ErrorKind::InvalidArgument, "orientation codes incompatible");
    m.src[j] = found;
    m.flip[j] = letter_sign(to.code[j]) != letter_sign(from.code[found]);
  }
  return m;
}

Geometry reoriented_geometry(const Geometry& g, const Orientation& target, const AxisMap& m) {
  Geometry out;
  out.orientation = target;
  Affine trans = Affine::Identity();
  trans.setZero();
  trans(3, 3) = 1.0;
  for (int j = 0; j < 3; ++j) {
    const int k = m.src[j];
    out.shape[j] = g.shape[k];
    out.spacing[j] = g.spacing[k];
    // old index k = +/- new index j (+ offset when flipped)
    trans(k, j) = m.flip[j] ? -1.0 : 1.0;
    if (m.flip[j]) trans(k, 3) += static_cast<double>(g.shape[k] - 1);
  }
  out.affine = g.affine * trans;
  return out;
}

template <class T>
std::vector<T> permute_data(const std::vector<T>& src, const Geometry& g, const Geometry& out,
                            const AxisMap& m) {
  std::vector<T> dst(src.size());
  const int64_t n0 = out.shape[0], n1 = out.shape[1], n2 = out.shape[2];
  int64_t old_idx[3];
  for (int64_t k = 0; k < n2; ++k) {
    for (int64_t j = 0; j < n1; ++j) {
      for (int64_t i = 0; i < n0; ++i) {
        const int64_t nidx[3] = {i, j, k};
        for (int a = 0; a < 3; ++a)
          old_idx[m.src[a]] = m.flip[a] ? (g.shape[m.src[a]] - 1 - nidx[a]) : nidx[a];
        dst[out.index(i, j, k)] = src[g.index(old_idx[0], old_idx[1], old_idx[2])];
      }
    }
  }
  return dst;
}

}  // namespace

Volume reorient(const Volume& v, const Orientation& target) {
  require(target.valid(), ErrorKind::InvalidArgument,
          cat("invalid orientation code '", target.str(), "'"));
  if (target == v.geo().orientation) return v;
  const AxisMap m = axis_map(v.geo().orientation, target);
  Geometry out = reoriented_geometry(v.geo(), target, m);
  return Volume(out, permute_data(v.data(), v.geo(), out, m), v.contrast(), v.dtype());
}

LabelMap reorient(const LabelMap& lm, const Orientation& target) {
  require(target.valid(), ErrorKind::InvalidArgument,
          cat("invalid orientation code '", target.str(), "'"));
  if (target == lm.geo().orientation) return lm;
  const AxisMap m = axis_map(lm.geo().orientation, target);
  Geometry out = reoriented_geometry(lm.geo(), target, m);
  return LabelMap(out, permute_data(lm.labels(), lm.geo(), out, m), &lm.taxonomy(), lm.dtype());
}

ProbabilityMaps reorient(const ProbabilityMaps& p, const Orientation& target) {
  require(target.valid(), ErrorKind::InvalidArgument,
          cat("invalid orientation code '", target.str(), "'"));
  if (target == p.geo.orientation) return p;
  const AxisMap m = axis_map(p.geo.orientation, target);
  ProbabilityMaps out;
  out.geo = reoriented_geometry(p.geo, target, m);
  out.tax = p.tax;
  out.values.resize(p.values.size());
  const size_t stride = p.map_stride();
  for (int c = 0; c < p.num_maps(); ++c) {
    std::vector<float> one(p.values.begin() + c * stride, p.values.begin() + (c + 1) * stride);
    std::vector<float> moved = permute_data(one, p.geo, out.geo, m);
    std::copy(moved.begin(), moved.end(), out.values.begin() + c * stride);
  }
  return out;
}

// ---------------------------------------------------------------------------
// flip_lr
// ---------------------------------------------------------------------------

namespace {

template <class T>
void reverse_axis(std::vector<T>& data, const Geometry& g, int axis) {
  const int64_t n0 = g.shape[0], n1 = g.shape[1], n2 = g.shape[2];
  for (int64_t k = 0; k < n2; ++k)
    for (int64_t j = 0; j < n1; ++j)
      for (int64_t i = 0; i < n0; ++i) {
        int64_t idx[3] = {i, j, k};
        if (idx[axis] * 2 >= g.shape[axis]) continue;  // swap each pair once
        int64_t mirror[3] = {i, j, k};
        mirror[axis] = g.shape[axis] - 1 - idx[axis];
        std::swap(data[g.index(idx[0], idx[1], idx[2])],
                  data[g.index(mirror[0], mirror[1], mirror[2])]);
      }
}

int checked_lr_axis(const Orientation& o) {
  require(o.valid(), ErrorKind::Validation, "orientation metadata missing or invalid");
  const int a = o.lr_axis();
  require(a >= 0, ErrorKind::Validation, "orientation does not identify a left-right axis");
  return a;
}

}  // namespace

Volume flip_lr(const Volume& v) {
  const int axis = checked_lr_axis(v.geo().orientation);
  Volume out = v;
  reverse_axis(out.mutable_data(), out.geo(), axis);
  return out;
}

LabelMap flip_lr(const LabelMap& m) {
  const int axis = checked_lr_axis(m.geo().orientation);
  LabelMap out = m;
  reverse_axis(out.mutable_labels(), out.geo(), axis);
  return out;
}

ProbabilityMaps flip_lr(const ProbabilityMaps& p) {
  const int axis = checked_lr_axis(p.geo.orientation);
  ProbabilityMaps out = p;
  const size_t stride = p.map_stride();
  for (int c = 0; c < p.num_maps(); ++c) {
    std::vector<float> one(out.values.begin() + c * stride, out.values.begin() + (c + 1) * stride);
    reverse_axis(one, out.geo, axis);
    std::copy(one.begin(), one.end(), out.values.begin() + c * stride);
  }
  return out;
}

// ---------------------------------------------------------------------------
// resample
// ---------------------------------------------------------------------------

namespace {

Geometry resampled_geometry(const Geometry& g, const Spacing3& target, Shape3& out_shape,
                            std::array<double, 3>& ratio) {
  for (int k = 0; k < 3; ++k) {
    require(target[k] > 0.0, ErrorKind::InvalidArgument,
            cat("target spacing component ", k, " must be > 0, got ", target[k]));
    ratio[k] = target[k] / g.spacing[k];
    // round-half-up output extent
    out_shape[k] = std::max<int64_t>(
        1, static_cast<int64_t>(std::floor(static_cast<double>(g.shape[k]) / ratio[k] + 0.5)));
  }
  Geometry out = g;
  out.shape = out_shape;
  out.spacing = target;
  Affine scale = Affine::Identity();
  for (int k = 0; k < 3; ++k) {
    scale(k, k) = ratio[k];
    scale(k, 3) = 0.5 * ratio[k] - 0.5;  // voxel-center mapping
  }
  out.affine = g.affine * scale;
  return out;
}

inline int64_t clamp_idx(int64_t v, int64_t n) { return std::max<int64_t>(0, std::min(v, n - 1)); }

}  // namespace

Volume resample(const Volume& v, const Spacing3& target, Interp mode) {
  Shape3 out_shape;
  std::array<double, 3> ratio;
  const Geometry out_geo = resampled_geometry(v.geo(), target, out_shape, ratio);
  std::vector<double> out(static_cast<size_t>(out_geo.voxels()));
  const Geometry& g = v.geo();
  for (int64_t k = 0; k < out_shape[2]; ++k) {
    const double zc = (static_cast<double>(k) + 0.5) * ratio[2] - 0.5;
    for (int64_t j = 0; j < out_shape[1]; ++j) {
      const double yc = (static_cast<double>(j) + 0.5) * ratio[1] - 0.5;
      for (int64_t i = 0; i < out_shape[0]; ++i) {
        const double xc = (static_cast<double>(i) + 0.5) * ratio[0] - 0.5;
        double val;
        if (mode == Interp::Nearest) {
          val = v.at(clamp_idx(static_cast<int64_t>(std::floor(xc + 0.5)), g.shape[0]),
                     clamp_idx(static_cast<int64_t>(std::floor(yc + 0.5)), g.shape[1]),
                     clamp_idx(static_cast<int64_t>(std::floor(zc + 0.5)), g.shape[2]));
        } else {
          const int64_t x0 = static_cast<int64_t>(std::floor(xc));
          const int64_t y0 = static_cast<int64_t>(std::floor(yc));
          const int64_t z0 = static_cast<int64_t>(std::floor(zc));
          const double fx = xc - static_cast<double>(x0);
          const double fy = yc - static_cast<double>(y0);
          const double fz = zc - static_cast<double>(z0);
          double acc = 0.0;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) * (dz ? fz : 1.0 - fz);
                if (w == 0.0) continue;
                acc += w * v.at(clamp_idx(x0 + dx, g.shape[0]), clamp_idx(y0 + dy, g.shape[1]),
                                clamp_idx(z0 + dz, g.shape[2]));
              }
          val = acc;
        }
        out[out_geo.index(i, j, k)] = val;
      }
    }
  }
  return Volume(out_geo, std::move(out), v.contrast(), v.dtype());
}

LabelMap resample(const LabelMap& m, const Spacing3& target) {
  Shape3 out_shape;
  std::array<double, 3> ratio;
  const Geometry out_geo = resampled_geometry(m.geo(), target, out_shape, ratio);
  std::vector<int32_t> out(static_cast<size_t>(out_geo.voxels()));
  const Geometry& g = m.geo();
  for (int64_t k = 0; k < out_shape[2]; ++k)
    for (int64_t j = 0; j < out_shape[1]; ++j)
      for (int64_t i = 0; i < out_shape[0]; ++i) {
        const double xc = (static_cast<double>(i) + 0.5) * ratio[0] - 0.5;
        const double yc = (static_cast<double>(j) + 0.5) * ratio[1] - 0.5;
        const double zc = (static_cast<double>(k) + 0.5) * ratio[2] - 0.5;
        out[out_geo.index(i, j, k)] =
            m.at(clamp_idx(static_cast<int64_t>(std::floor(xc + 0.5)), g.shape[0]),
                 clamp_idx(static_cast<int64_t>(std::floor(yc + 0.5)), g.shape[1]),
                 clamp_idx(static_cast<int64_t>(std::floor(zc + 0.5)), g.shape[2]));
      }
  return LabelMap(out_geo, std::move(out), &m.taxonomy(), m.dtype());
}

Eigen::Vector3d voxel_to_world(const Geometry& g, double i, double j, double k) {
  Eigen::Vector4d v(i, j, k, 1.0);
  return (g.affine * v).head<3>();
}

}  // namespace thalseg
