/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#include "thalseg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "thalseg/volume_io.hpp"

namespace thalseg {

std::vector<uint8_t> foreground_mask(const Volume& v, double percentile) {
  std::vector<double> sorted = v.data();
  std::sort(sorted.begin(), sorted.end());
  const size_t idx = static_cast<size_t>(
      std::min<double>(static_cast<double>(sorted.size() - 1),
                       percentile / 100.0 * static_cast<double>(sorted.size())));
  const double thr = sorted[idx];
  std::vector<uint8_t> mask(v.data().size());
  for (size_t i = 0; i < mask.size(); ++i) mask[i] = v.data()[i] > thr ? 1 : 0;
  return mask;
}

// ---------------------------------------------------------------------------
// Bias correction
// ---------------------------------------------------------------------------

namespace {

// monomial exponent table for a trivariate polynomial of the given degree
std::vector<std::array<int, 3>> monomials(int degree) {
  std::vector<std::array<int, 3>> terms;
  for (int a = 0; a <= degree; ++a)
    for (int b = 0; b + a <= degree; ++b)
      for (int c = 0; c + b + a <= degree; ++c) terms.push_back({a, b, c});
  return terms;
}

}  // namespace

BiasCorrector identity_bias_corrector() {
  return [](const Volume& v) { return v; };
}

BiasCorrector polynomial_bias_corrector(int degree) {
  require(degree >= 1 && degree <= 4, ErrorKind::InvalidArgument, "degree must be in [1, 4]");
  return [degree](const Volume& v) -> Volume {
    const auto mask = foreground_mask(v);
    std::vector<size_t> fg;
    for (size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) fg.push_back(i);
    if (fg.empty()) return v;
    for (size_t i : fg)
      require(v.data()[i] > 0.0, ErrorKind::Validation,
              "bias correction needs positive foreground intensities");

    // deterministic subsample keeps the solve cheap on large volumes
    const size_t max_fit = 60000;
    const size_t stride = std::max<size_t>(1, fg.size() / max_fit);

    const auto terms = monomials(degree);
    const int nt = static_cast<int>(terms.size());
    const Shape3 shape = v.geo().shape;
    auto coord = [&](size_t idx, int axis) {
      int64_t rem = static_cast<int64_t>(idx);
      const int64_t i = rem % shape[0];
      rem /= shape[0];
      const int64_t j = rem % shape[1];
      const int64_t k = rem / shape[1];
      const int64_t c[3] = {i, j, k};
      return shape[axis] > 1
                 ? 2.0 * static_cast<double>(c[axis]) / static_cast<double>(shape[axis] - 1) - 1.0
                 : 0.0;
    };
    auto design_row = [&](size_t idx, Eigen::VectorXd& row) {
      const double x = coord(idx, 0), y = coord(idx, 1), z = coord(idx, 2);
      for (int t = 0; t < nt; ++t)
        row[t] = std::pow(x, terms[static_cast<size_t>(t)][0]) *
                 std::pow(y, terms[static_cast<size_t>(t)][1]) *
                 std::pow(z, terms[static_cast<size_t>(t)][2]);
    };

    Eigen::MatrixXd ata = Eigen::MatrixXd::Zero(nt, nt);
    Eigen::VectorXd atb = Eigen::VectorXd::Zero(nt);
    Eigen::VectorXd row(nt);
    for (size_t s = 0; s < fg.size(); s += stride) {
      const size_t idx = fg[s];
      design_row(idx, row);
      const double target = std::log(v.data()[idx]);
      ata.noalias() += row * row.transpose();
      atb.noalias() += row * target;
    }
    const Eigen::VectorXd coef = ata.ldlt().solve(atb);

    // field normalized to unit geometric mean over the foreground
    double mean_p = 0.0;
    for (size_t s = 0; s < fg.size(); s += stride) {
      design_row(fg[s], row);
      mean_p += row.dot(coef);
    }
    mean_p /= static_cast<double>((fg.size() + stride - 1) / stride);

    Volume out = v;
    auto& data = out.mutable_data();
    for (size_t idx = 0; idx < data.size(); ++idx) {
      design_row(idx, row);
      const double field = std::exp(row.dot(coef) - mean_p);
      data[idx] = v.data()[idx] / field;
    }
    return out;
  };
}

Volume bias_correct(const Volume& v, const BiasCorrector& corrector,
                    std::vector<std::string>* warnings) {
  bool all_zero = true;
  for (double d : v.data())
    if (d != 0.0) {
      all_zero = false;
      break;
    }
  if (all_zero) {
    if (warnings) warnings->push_back("bias_correct: all-zero volume; returning input unchanged");
    return v;
  }
  return corrector(v);
}

Volume normalize(const Volume& v) {
  double sum = 0.0;
  for (double d : v.data()) sum += d;
  const double n = static_cast<double>(v.data().size());
  const double mean = sum / n;
  double sq = 0.0;
  for (double d : v.data()) sq += (d - mean) * (d - mean);
  const double std_dev = std::sqrt(sq / n);
  require(std_dev > 0.0, ErrorKind::Validation, "cannot normalize a constant volume (zero std)");
  Volume out = v;
  for (double& d : out.mutable_data()) d = (d - mean) / std_dev;
  out.set_dtype(VoxelType::F32);
  return out;
}

// ---------------------------------------------------------------------------
// Crop template and alignment plugins
// ---------------------------------------------------------------------------

void CropTemplate::save(const std::filesystem::path& nifti_path) const {
  require(!box.empty(), ErrorKind::Validation, "crop template box is empty");
  for (int k = 0; k < 3; ++k)
    require(box.lo[k] >= 0 && box.hi[k] < template_volume.geo().shape[k], ErrorKind::Validation,
            "crop template box lies outside the template volume");
  write_nifti(template_volume, nifti_path);
  nlohmann::json j;
  j["lo"] = box.lo;
  j["hi"] = box.hi;
  std::ofstream out(nifti_path.string() + ".box.json");
  require(out.good(), ErrorKind::Io, "cannot write box sidecar");
  out << j.dump(2) << "\n";
}

CropTemplate CropTemplate::load(const std::filesystem::path& nifti_path) {
  CropTemplate t;
  t.template_volume = read_volume(nifti_path);
  std::ifstream in(nifti_path.string() + ".box.json");
  require(in.good(), ErrorKind::Io,
          cat(nifti_path.string(), ".box.json: missing box sidecar"));
  nlohmann::json j = nlohmann::json::parse(in);
  t.box.lo = j.at("lo").get<std::array<int64_t, 3>>();
  t.box.hi = j.at("hi").get<std::array<int64_t, 3>>();
  require(!t.box.empty(), ErrorKind::Validation, "box sidecar holds an empty box");
  return t;
}

AlignmentPlugin identity_alignment() {
  return [](const Volume&, const Volume&) { return AlignmentResult{}; };
}

AlignmentPlugin center_of_mass_alignment() {
  return [](const Volume& templ, const Volume& subject) -> AlignmentResult {
    // binary foreground centroid; robust to normalized (negative) intensities
    auto com = [](const Volume& v, Eigen::Vector3d& out) {
      const auto mask = foreground_mask(v);
      double wsum = 0.0;
      Eigen::Vector3d acc = Eigen::Vector3d::Zero();
      const Shape3 s = v.geo().shape;
      size_t idx = 0;
      for (int64_t k = 0; k < s[2]; ++k)
        for (int64_t j = 0; j < s[1]; ++j)
          for (int64_t i = 0; i < s[0]; ++i, ++idx) {
            if (!mask[idx]) continue;
            acc += Eigen::Vector3d(static_cast<double>(i), static_cast<double>(j),
                                   static_cast<double>(k));
            wsum += 1.0;
          }
      if (wsum <= 0.0) return false;
      out = acc / wsum;
      return true;
    };
    Eigen::Vector3d ct, cs;
    AlignmentResult res;
    if (!com(templ, ct) || !com(subject, cs)) {
      res.ok = false;
      return res;
    }
    res.voxel_map = Affine::Identity();
    res.voxel_map.block<3, 1>(0, 3) = cs - ct;
    return res;
  };
}

AlignmentPlugin affine_file_alignment(const std::filesystem::path& matrix_path) {
  return [matrix_path](const Volume&, const Volume&) -> AlignmentResult {
    std::ifstream in(matrix_path);
    AlignmentResult res;
    if (!in.good()) {
      res.ok = false;
      return res;
    }
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c)
        if (!(in >> res.voxel_map(r, c))) {
          res.ok = false;
          return res;
        }
    return res;
  };
}

CropResult crop_to_thalami(const Volume& v, const CropTemplate& tmpl,
                           const AlignmentPlugin& align, int64_t margin) {
  AlignmentResult ar = align(tmpl.template_volume, v);
  const double det = ar.voxel_map.block<3, 3>(0, 0).determinant();
  if (std::abs(det) < 1e-12) ar.ok = false;

  CropResult res;
  if (!ar.ok) {
    res.fallback = true;
    res.box = BoundingBox::whole(v.geo().shape);
    res.cropped = v;
    return res;
  }

  // map the 8 corners of the template box and take the axis-aligned hull
  Eigen::Vector3d lo(1e300, 1e300, 1e300), hi(-1e300, -1e300, -1e300);
  for (int corner = 0; corner < 8; ++corner) {
    Eigen::Vector4d c(static_cast<double>(corner & 1 ? tmpl.box.hi[0] : tmpl.box.lo[0]),
                      static_cast<double>(corner & 2 ? tmpl.box.hi[1] : tmpl.box.lo[1]),
                      static_cast<double>(corner & 4 ? tmpl.box.hi[2] : tmpl.box.lo[2]), 1.0);
    const Eigen::Vector4d m = ar.voxel_map * c;
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], m[k]);
      hi[k] = std::max(hi[k], m[k]);
    }
  }
  BoundingBox box;
  for (int k = 0; k < 3; ++k) {
    box.lo[k] = static_cast<int64_t>(std::floor(lo[k]));
    box.hi[k] = static_cast<int64_t>(std::ceil(hi[k]));
  }
  box = box.expanded(margin).clipped(v.geo().shape);
  if (box.empty()) {
    res.fallback = true;
    res.box = BoundingBox::whole(v.geo().shape);
    res.cropped = v;
    return res;
  }
  res.box = box;
  res.cropped = crop(v, box);
  return res;
}

// ---------------------------------------------------------------------------
// crop / uncrop
// ---------------------------------------------------------------------------

namespace {

Geometry cropped_geometry(const Geometry& g, const BoundingBox& box) {
  Geometry out = g;
  out.shape = box.shape();
  Affine shift = Affine::Identity();
  for (int k = 0; k < 3; ++k) shift(k, 3) = static_cast<double>(box.lo[k]);
  out.affine = g.affine * shift;
  return out;
}

void check_box_within(const BoundingBox& box, const Shape3& extent) {
  require(!box.empty(), ErrorKind::InvalidArgument, "empty bounding box");
  for (int k = 0; k < 3; ++k)
    require(box.lo[k] >= 0 && box.hi[k] < extent[k], ErrorKind::InvalidArgument,
            cat("box exceeds volume extent on axis ", k));
}

}  // namespace

Volume crop(const Volume& v, const BoundingBox& box) {
  check_box_within(box, v.geo().shape);
  const Geometry out_geo = cropped_geometry(v.geo(), box);
  std::vector<double> data(static_cast<size_t>(out_geo.voxels()));
  for (int64_t k = box.lo[2]; k <= box.hi[2]; ++k)
    for (int64_t j = box.lo[1]; j <= box.hi[1]; ++j)
      for (int64_t i = box.lo[0]; i <= box.hi[0]; ++i)
        data[out_geo.index(i - box.lo[0], j - box.lo[1], k - box.lo[2])] = v.at(i, j, k);
  return Volume(out_geo, std::move(data), v.contrast(), v.dtype());
}

LabelMap crop(const LabelMap& m, const BoundingBox& box) {
  check_box_within(box, m.geo().shape);
  const Geometry out_geo = cropped_geometry(m.geo(), box);
  std::vector<int32_t> labels(static_cast<size_t>(out_geo.voxels()));
  for (int64_t k = box.lo[2]; k <= box.hi[2]; ++k)
    for (int64_t j = box.lo[1]; j <= box.hi[1]; ++j)
      for (int64_t i = box.lo[0]; i <= box.hi[0]; ++i)
        labels[out_geo.index(i - box.lo[0], j - box.lo[1], k - box.lo[2])] = m.at(i, j, k);
  return LabelMap(out_geo, std::move(labels), &m.taxonomy(), m.dtype());
}

LabelMap uncrop(const LabelMap& labels, const BoundingBox& box, const Geometry& full_geometry) {
  check_box_within(box, full_geometry.shape);
  require(labels.geo().shape == box.shape(), ErrorKind::InvalidArgument,
          "cropped labels do not match the box shape");
  std::vector<int32_t> out(static_cast<size_t>(full_geometry.voxels()), 0);
  for (int64_t k = box.lo[2]; k <= box.hi[2]; ++k)
    for (int64_t j = box.lo[1]; j <= box.hi[1]; ++j)
      for (int64_t i = box.lo[0]; i <= box.hi[0]; ++i)
        out[full_geometry.index(i, j, k)] =
            labels.at(i - box.lo[0], j - box.lo[1], k - box.lo[2]);
  return LabelMap(full_geometry, std::move(out), &labels.taxonomy(), labels.dtype());
}

// ---------------------------------------------------------------------------
// Rotation augmentation
// ---------------------------------------------------------------------------

namespace {

constexpr int kPlaneAxes[3][2] = {{0, 1}, {0, 2}, {1, 2}};

inline int64_t clampi(int64_t v, int64_t n) { return std::max<int64_t>(0, std::min(v, n - 1)); }

template <class Getter>
double rotate_sample_linear(const Getter& get, const Shape3& s, int a, int b, int other,
                            double sa, double sb, int64_t oc) {
  const int64_t a0 = static_cast<int64_t>(std::floor(sa));
  const int64_t b0 = static_cast<int64_t>(std::floor(sb));
  const double fa = sa - static_cast<double>(a0);
  const double fb = sb - static_cast<double>(b0);
  double acc = 0.0;
  for (int da = 0; da < 2; ++da)
    for (int db = 0; db < 2; ++db) {
      const double w = (da ? fa : 1.0 - fa) * (db ? fb : 1.0 - fb);
      if (w == 0.0) continue;
      int64_t idx[3];
      idx[a] = clampi(a0 + da, s[a]);
      idx[b] = clampi(b0 + db, s[b]);
      idx[other] = oc;
      acc += w * get(idx[0], idx[1], idx[2]);
    }
  return acc;
}

struct PlaneRotation {
  int a, b, other;
  double ca, cb, cos_t, sin_t;
  void source(int64_t ia, int64_t ib, double& sa, double& sb) const {
    const double xa = static_cast<double>(ia) - ca;
    const double xb = static_cast<double>(ib) - cb;
    sa = ca + cos_t * xa + sin_t * xb;
    sb = cb - sin_t * xa + cos_t * xb;
  }
};

PlaneRotation make_rotation(const Shape3& shape, int plane, double angle_deg) {
  require(plane >= 0 && plane < 3, ErrorKind::InvalidArgument, "plane must be 0, 1 or 2");
  PlaneRotation r;
  r.a = kPlaneAxes[plane][0];
  r.b = kPlaneAxes[plane][1];
  r.other = 3 - r.a - r.b;
  r.ca = 0.5 * static_cast<double>(shape[r.a] - 1);
  r.cb = 0.5 * static_cast<double>(shape[r.b] - 1);
  const double rad = angle_deg * M_PI / 180.0;
  r.cos_t = std::cos(rad);
  r.sin_t = std::sin(rad);
  return r;
}

}  // namespace

Volume rotate_inplane(const Volume& v, int plane, double angle_deg) {
  const Shape3 s = v.geo().shape;
  const PlaneRotation r = make_rotation(s, plane, angle_deg);
  Volume out = v;
  auto& data = out.mutable_data();
  auto get = [&](int64_t i, int64_t j, int64_t k) { return v.at(i, j, k); };
  int64_t idx[3];
  for (int64_t k = 0; k < s[2]; ++k)
    for (int64_t j = 0; j < s[1]; ++j)
      for (int64_t i = 0; i < s[0]; ++i) {
        idx[0] = i;
        idx[1] = j;
        idx[2] = k;
        double sa, sb;
        r.source(idx[r.a], idx[r.b], sa, sb);
        data[v.geo().index(i, j, k)] =
            rotate_sample_linear(get, s, r.a, r.b, r.other, sa, sb, idx[r.other]);
      }
  return out;
}

LabelMap rotate_inplane(const LabelMap& m, int plane, double angle_deg) {
  const Shape3 s = m.geo().shape;
  const PlaneRotation r = make_rotation(s, plane, angle_deg);
  LabelMap out = m;
  auto& labels = out.mutable_labels();
  int64_t idx[3];
  for (int64_t k = 0; k < s[2]; ++k)
    for (int64_t j = 0; j < s[1]; ++j)
      for (int64_t i = 0; i < s[0]; ++i) {
        idx[0] = i;
        idx[1] = j;
        idx[2] = k;
        double sa, sb;
        r.source(idx[r.a], idx[r.b], sa, sb);
        int64_t src[3];
        src[r.a] = clampi(static_cast<int64_t>(std::floor(sa + 0.5)), s[r.a]);
        src[r.b] = clampi(static_cast<int64_t>(std::floor(sb + 0.5)), s[r.b]);
        src[r.other] = idx[r.other];
        labels[m.geo().index(i, j, k)] = m.at(src[0], src[1], src[2]);
      }
  return out;
}

std::vector<std::pair<Volume, LabelMap>> augment(const Volume& v, const LabelMap& labels,
                                                 const AugmentationPolicy& policy) {
  require_same_geometry(v.geo(), labels.geo());
  require(policy.max_angle_deg >= 0.0, ErrorKind::InvalidArgument, "max_angle_deg must be >= 0");
  require(policy.copies_per_plane >= 0 && policy.num_planes >= 1 && policy.num_planes <= 3,
          ErrorKind::InvalidArgument, "bad augmentation policy");

  std::vector<std::pair<Volume, LabelMap>> out;
  out.emplace_back(v, labels);
  if (policy.max_angle_deg == 0.0 || policy.copies_per_plane == 0) return out;

  for (int plane = 0; plane < policy.num_planes; ++plane) {
    for (int copy = 0; copy < policy.copies_per_plane; ++copy) {
      // stratified sampling without replacement: one draw per stratum
      Rng rng(Rng::derive(policy.rng_seed,
                          static_cast<uint64_t>(plane) * 1000 + static_cast<uint64_t>(copy)));
      const double width = 2.0 * policy.max_angle_deg / policy.copies_per_plane;
      double angle;
      do {
        angle = -policy.max_angle_deg + width * (static_cast<double>(copy) + rng.uniform());
      } while (angle == 0.0);
      out.emplace_back(rotate_inplane(v, plane, angle), rotate_inplane(labels, plane, angle));
    }
  }
  return out;
}

}  // namespace thalseg
