/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#include "thalseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "thalseg/noise.hpp"
#include "thalseg/stats.hpp"

namespace thalseg {

const std::array<double, 12>& typical_structure_volumes_mm3() {
  // taxonomy order Pul, VLp, MD-Pf, VPL, VA, AV, VLa, CM, LGN, MGN, MTT, Hb
  static const std::array<double, 12> v = {1286, 882, 686, 346, 301, 146,
                                           121,  119, 115, 76,  49,  29};
  return v;
}

std::vector<double> PhantomSpec::class_means(Contrast mode) const {
  const double lo = mode == Contrast::CSFN ? nucleus_low_csfn : nucleus_low_wmn;
  const double hi = mode == Contrast::CSFN ? nucleus_high_csfn : nucleus_high_wmn;
  std::vector<double> means(13, 0.0);
  for (int c = 1; c <= 12; ++c)
    means[static_cast<size_t>(c)] = lo + (hi - lo) * static_cast<double>(c - 1) / 11.0;
  return means;
}

void PhantomSpec::validate() const {
  require(grid[0] >= 16 && grid[1] >= 16 && grid[2] >= 16, ErrorKind::Validation,
          "phantom grid too small");
  for (double s : spacing)
    require(s > 0.0, ErrorKind::Validation, "spacing must be positive");
  for (double a : thalamus_axes_mm)
    require(a > 0.0, ErrorKind::Validation, "thalamus semi-axes must be positive");
  require(nucleus_high_wmn > nucleus_low_wmn && nucleus_high_csfn > nucleus_low_csfn,
          ErrorKind::Validation, "intensity ranges must be increasing");
  require(nucleus_high_wmn - nucleus_low_wmn > nucleus_high_csfn - nucleus_low_csfn,
          ErrorKind::Validation,
          "WMN-mode inter-class separation must exceed the CSFN-mode separation");
  require(noise_sigma >= 0.0, ErrorKind::Validation, "noise sigma must be >= 0");
  for (const auto& [name, ratio] : atrophy) {
    require(Taxonomy::nuclei().id(name) > 0, ErrorKind::Validation,
            cat("unknown structure in atrophy map: ", name));
    require(ratio >= 0.0 && ratio < 1.0, ErrorKind::Validation, "atrophy ratio must be in [0,1)");
  }
  // ellipsoids must fit the grid
  const double ext_x = static_cast<double>(grid[0] - 1) * spacing[0] * 0.5;
  require(thalamus_offset_mm + thalamus_axes_mm[0] * 1.3 < ext_x, ErrorKind::Validation,
          "thalamus ellipsoid exceeds the grid in x");
  for (int k = 1; k < 3; ++k) {
    const double ext = static_cast<double>(grid[k] - 1) * spacing[k] * 0.5;
    require(thalamus_axes_mm[static_cast<size_t>(k)] * 1.3 < ext, ErrorKind::Validation,
            cat("thalamus ellipsoid exceeds the grid on axis ", k));
  }
}

std::string PhantomSpec::to_json() const {
  nlohmann::json j;
  j["grid"] = grid;
  j["spacing"] = spacing;
  j["thalamus_axes_mm"] = thalamus_axes_mm;
  j["thalamus_offset_mm"] = thalamus_offset_mm;
  j["site_jitter"] = site_jitter;
  j["shape_jitter"] = shape_jitter;
  j["global_scale_std"] = global_scale_std;
  j["fraction_blend"] = fraction_blend;
  j["head_mean_wmn"] = head_mean_wmn;
  j["head_mean_csfn"] = head_mean_csfn;
  j["nucleus_low_wmn"] = nucleus_low_wmn;
  j["nucleus_high_wmn"] = nucleus_high_wmn;
  j["nucleus_low_csfn"] = nucleus_low_csfn;
  j["nucleus_high_csfn"] = nucleus_high_csfn;
  j["smooth_passes"] = smooth_passes;
  j["noise_sigma"] = noise_sigma;
  j["lesions"] = lesions;
  j["lesion_count"] = lesion_count;
  j["lesion_radius_mm"] = lesion_radius_mm;
  j["lesion_intensity_factor"] = lesion_intensity_factor;
  j["atrophy"] = atrophy;
  j["partition_seed"] = partition_seed;
  j["seed"] = seed;
  return j.dump(2);
}

PhantomSpec PhantomSpec::from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  PhantomSpec s;
  if (j.contains("grid")) s.grid = j["grid"].get<Shape3>();
  if (j.contains("spacing")) s.spacing = j["spacing"].get<Spacing3>();
  if (j.contains("thalamus_axes_mm"))
    s.thalamus_axes_mm = j["thalamus_axes_mm"].get<std::array<double, 3>>();
  s.thalamus_offset_mm = j.value("thalamus_offset_mm", s.thalamus_offset_mm);
  s.site_jitter = j.value("site_jitter", s.site_jitter);
  s.shape_jitter = j.value("shape_jitter", s.shape_jitter);
  s.global_scale_std = j.value("global_scale_std", s.global_scale_std);
  s.fraction_blend = j.value("fraction_blend", s.fraction_blend);
  s.head_mean_wmn = j.value("head_mean_wmn", s.head_mean_wmn);
  s.head_mean_csfn = j.value("head_mean_csfn", s.head_mean_csfn);
  s.nucleus_low_wmn = j.value("nucleus_low_wmn", s.nucleus_low_wmn);
  s.nucleus_high_wmn = j.value("nucleus_high_wmn", s.nucleus_high_wmn);
  s.nucleus_low_csfn = j.value("nucleus_low_csfn", s.nucleus_low_csfn);
  s.nucleus_high_csfn = j.value("nucleus_high_csfn", s.nucleus_high_csfn);
  s.smooth_passes = j.value("smooth_passes", s.smooth_passes);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.lesions = j.value("lesions", s.lesions);
  s.lesion_count = j.value("lesion_count", s.lesion_count);
  s.lesion_radius_mm = j.value("lesion_radius_mm", s.lesion_radius_mm);
  s.lesion_intensity_factor = j.value("lesion_intensity_factor", s.lesion_intensity_factor);
  if (j.contains("atrophy")) s.atrophy = j["atrophy"].get<std::map<std::string, double>>();
  s.partition_seed = j.value("partition_seed", s.partition_seed);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

namespace {

Geometry phantom_geometry(const PhantomSpec& spec) {
  Geometry g;
  g.shape = spec.grid;
  g.spacing = spec.spacing;
  g.orientation = kCanonicalOrientation;
  g.affine = Affine::Identity();
  for (int k = 0; k < 3; ++k) {
    g.affine(k, k) = spec.spacing[k];
    g.affine(k, 3) = -0.5 * spec.spacing[k] * static_cast<double>(spec.grid[k] - 1);
  }
  return g;
}

std::vector<Eigen::Vector3d> base_sites(uint64_t partition_seed) {
  Rng rng(Rng::derive(partition_seed, 0x51735));
  std::vector<Eigen::Vector3d> sites;
  while (sites.size() < 12) {
    Eigen::Vector3d u(rng.uniform(-0.75, 0.75), rng.uniform(-0.75, 0.75),
                      rng.uniform(-0.75, 0.75));
    if (u.norm() > 0.78) continue;
    bool far = true;  // keep the layout spread out
    for (const auto& s : sites)
      if ((s - u).norm() < 0.34) far = false;
    if (far) sites.push_back(u);
  }
  return sites;
}

struct SubjectGeometry {
  Eigen::Vector3d head_axes;
  Eigen::Vector3d centers[2];   // left, right (world mm)
  Eigen::Vector3d thal_axes[2]; // semi-axes (world mm)
  std::vector<Eigen::Vector3d> sites[2];
  double scale = 1.0;
};

SubjectGeometry subject_geometry(const PhantomSpec& spec, Rng& rng) {
  SubjectGeometry sg;
  sg.scale = std::max(0.7, 1.0 + spec.global_scale_std * rng.normal());
  const Geometry g = phantom_geometry(spec);
  for (int k = 0; k < 3; ++k)
    sg.head_axes[k] = 0.44 * static_cast<double>(spec.grid[k] - 1) * spec.spacing[k] * sg.scale;

  const auto base = base_sites(spec.partition_seed);
  for (int side = 0; side < 2; ++side) {
    const double sign = side == 0 ? -1.0 : 1.0;  // left = negative world x
    sg.centers[side] =
        Eigen::Vector3d(sign * spec.thalamus_offset_mm * sg.scale, 0.0, 0.0);
    for (int k = 0; k < 3; ++k)
      sg.thal_axes[side][k] = spec.thalamus_axes_mm[static_cast<size_t>(k)] * sg.scale *
                              (1.0 + spec.shape_jitter * rng.normal());
    for (const auto& b : base) {
      Eigen::Vector3d s = b;
      if (side == 1) s[0] = -s[0];  // mirrored layout
      for (int k = 0; k < 3; ++k) s[k] += spec.site_jitter * rng.normal();
      sg.sites[side].push_back(s);
    }
  }
  (void)g;
  return sg;
}

/// Partition one thalamus by a power diagram, iterating weights so region
/// sizes approach the target fractions.
void partition_side(const PhantomSpec& spec, const Geometry& g, const SubjectGeometry& sg,
                    int side, std::vector<int32_t>& labels) {
  // target fractions
  const auto& typical = typical_structure_volumes_mm3();
  double total = std::accumulate(typical.begin(), typical.end(), 0.0);
  std::array<double, 12> frac;
  for (int c = 0; c < 12; ++c)
    frac[static_cast<size_t>(c)] = (1.0 - spec.fraction_blend) * typical[static_cast<size_t>(c)] /
                                       total +
                                   spec.fraction_blend / 12.0;

  // collect thalamus voxels in unit-ball coordinates
  std::vector<size_t> voxels;
  std::vector<Eigen::Vector3d> coords;
  for (int64_t k = 0; k < g.shape[2]; ++k)
    for (int64_t j = 0; j < g.shape[1]; ++j)
      for (int64_t i = 0; i < g.shape[0]; ++i) {
        const Eigen::Vector3d w = voxel_to_world(g, static_cast<double>(i), static_cast<double>(j),
                                                 static_cast<double>(k));
        Eigen::Vector3d u = (w - sg.centers[side]).cwiseQuotient(sg.thal_axes[side]);
        if (u.squaredNorm() <= 1.0) {
          voxels.push_back(g.index(i, j, k));
          coords.push_back(u);
        }
      }
  require(!voxels.empty(), ErrorKind::Validation, "thalamus ellipsoid contains no voxels");

  std::array<double, 12> w{};
  std::vector<int> assign(voxels.size());
  const auto& sites = sg.sites[side];
  for (int iter = 0; iter < 14; ++iter) {
    std::array<int64_t, 12> counts{};
    for (size_t v = 0; v < voxels.size(); ++v) {
      int best = 0;
      double bd = 1e300;
      for (int c = 0; c < 12; ++c) {
        const double d =
            (coords[v] - sites[static_cast<size_t>(c)]).squaredNorm() - w[static_cast<size_t>(c)];
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      assign[v] = best;
      ++counts[static_cast<size_t>(best)];
    }
    if (iter == 13) break;
    for (int c = 0; c < 12; ++c) {
      const double target = frac[static_cast<size_t>(c)] * static_cast<double>(voxels.size());
      const double actual = std::max<double>(0.5, static_cast<double>(counts[static_cast<size_t>(c)]));
      w[static_cast<size_t>(c)] += 0.12 * std::log(target / actual);
    }
  }
  for (size_t v = 0; v < voxels.size(); ++v)
    labels[voxels[v]] = assign[v] + 1;  // class ids 1..12
}

void apply_atrophy(const PhantomSpec& spec, const Geometry& g, std::vector<int32_t>& labels,
                   Rng& rng) {
  if (spec.atrophy.empty()) return;
  (void)rng;
  for (const auto& [name, ratio] : spec.atrophy) {
    const int cls = Taxonomy::nuclei().id(name);
    for (int side = 0; side < 2; ++side) {
      // gather this side's voxels of the class
      std::vector<size_t> idx;
      Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
      for (int64_t k = 0; k < g.shape[2]; ++k)
        for (int64_t j = 0; j < g.shape[1]; ++j)
          for (int64_t i = 0; i < g.shape[0]; ++i) {
            if (labels[g.index(i, j, k)] != cls) continue;
            const Eigen::Vector3d w = voxel_to_world(g, static_cast<double>(i),
                                                     static_cast<double>(j),
                                                     static_cast<double>(k));
            if ((side == 0) != (w[0] < 0.0)) continue;
            idx.push_back(g.index(i, j, k));
            centroid += w;
          }
      if (idx.empty()) continue;
      centroid /= static_cast<double>(idx.size());
      const int64_t remove = std::llround(ratio * static_cast<double>(idx.size()));
      if (remove <= 0) continue;
      // shed the voxels farthest from the centroid (radial shrink)
      std::vector<std::pair<double, size_t>> by_dist;
      for (size_t id2 : idx) {
        const int64_t i = static_cast<int64_t>(id2) % g.shape[0];
        const int64_t j = (static_cast<int64_t>(id2) / g.shape[0]) % g.shape[1];
        const int64_t k = static_cast<int64_t>(id2) / (g.shape[0] * g.shape[1]);
        const Eigen::Vector3d w = voxel_to_world(g, static_cast<double>(i),
                                                 static_cast<double>(j), static_cast<double>(k));
        by_dist.push_back({(w - centroid).squaredNorm(), id2});
      }
      std::sort(by_dist.begin(), by_dist.end(),
                [](const auto& a, const auto& b) { return a.first > b.first; });
      for (int64_t r = 0; r < remove && r < static_cast<int64_t>(by_dist.size()) - 1; ++r)
        labels[by_dist[static_cast<size_t>(r)].second] = 0;
    }
  }
}

void smooth_volume(std::vector<double>& data, const Geometry& g, int passes) {
  if (passes <= 0) return;
  std::vector<double> tmp(data.size());
  for (int pass = 0; pass < passes; ++pass) {
    for (int axis = 0; axis < 3; ++axis) {
      const int64_t stride = axis == 0 ? 1 : axis == 1 ? g.shape[0] : g.shape[0] * g.shape[1];
      const int64_t n = g.shape[axis];
      for (int64_t k = 0; k < g.shape[2]; ++k)
        for (int64_t j = 0; j < g.shape[1]; ++j)
          for (int64_t i = 0; i < g.shape[0]; ++i) {
            const int64_t idx3[3] = {i, j, k};
            const size_t idx = g.index(i, j, k);
            const int64_t a = idx3[axis];
            const double prev = a > 0 ? data[idx - static_cast<size_t>(stride)] : data[idx];
            const double next = a < n - 1 ? data[idx + static_cast<size_t>(stride)] : data[idx];
            tmp[idx] = 0.25 * prev + 0.5 * data[idx] + 0.25 * next;
          }
      data.swap(tmp);
    }
  }
}

Volume render_image(const PhantomSpec& spec, const Geometry& g, const SubjectGeometry& sg,
                    const std::vector<int32_t>& labels, Contrast mode, uint64_t noise_seed,
                    Rng& lesion_rng) {
  const std::vector<double> means = spec.class_means(mode);
  const double head_mean = mode == Contrast::CSFN ? spec.head_mean_csfn : spec.head_mean_wmn;
  std::vector<double> data(static_cast<size_t>(g.voxels()), 0.0);
  size_t idx = 0;
  for (int64_t k = 0; k < g.shape[2]; ++k)
    for (int64_t j = 0; j < g.shape[1]; ++j)
      for (int64_t i = 0; i < g.shape[0]; ++i, ++idx) {
        const int32_t l = labels[idx];
        if (l > 0) {
          data[idx] = means[static_cast<size_t>(l)];
          continue;
        }
        const Eigen::Vector3d w = voxel_to_world(g, static_cast<double>(i), static_cast<double>(j),
                                                 static_cast<double>(k));
        const Eigen::Vector3d uh = w.cwiseQuotient(sg.head_axes);
        if (uh.squaredNorm() <= 1.0) data[idx] = head_mean;
      }

  if (spec.lesions) {
    for (int les = 0; les < spec.lesion_count; ++les) {
      // place inside the head but clear of both thalami
      Eigen::Vector3d c;
      for (int attempt = 0; attempt < 200; ++attempt) {
        c = Eigen::Vector3d(lesion_rng.uniform(-0.7, 0.7), lesion_rng.uniform(-0.7, 0.7),
                            lesion_rng.uniform(-0.7, 0.7))
                .cwiseProduct(sg.head_axes);
        bool clear = true;
        for (int side = 0; side < 2; ++side) {
          const Eigen::Vector3d u = (c - sg.centers[side]).cwiseQuotient(sg.thal_axes[side]);
          if (u.norm() < 1.35) clear = false;
        }
        if (clear) break;
      }
      const double r2 = spec.lesion_radius_mm * spec.lesion_radius_mm;
      idx = 0;
      for (int64_t k = 0; k < g.shape[2]; ++k)
        for (int64_t j = 0; j < g.shape[1]; ++j)
          for (int64_t i = 0; i < g.shape[0]; ++i, ++idx) {
            if (labels[idx] > 0) continue;  // labels stay untouched by lesions
            const Eigen::Vector3d w = voxel_to_world(g, static_cast<double>(i),
                                                     static_cast<double>(j),
                                                     static_cast<double>(k));
            if ((w - c).squaredNorm() <= r2) data[idx] *= spec.lesion_intensity_factor;
          }
    }
  }

  smooth_volume(data, g, spec.smooth_passes);
  Volume img(g, std::move(data),
             mode == Contrast::SYNTHETIC ? Contrast::SYNTHETIC : mode, VoxelType::F32);
  if (spec.noise_sigma > 0.0) img = add_rician(img, NoiseSpec{spec.noise_sigma, noise_seed});
  return img;
}

}  // namespace

PhantomSubject generate_subject(const PhantomSpec& spec, uint64_t subject_index,
                                const std::string& id) {
  spec.validate();
  const Geometry g = phantom_geometry(spec);
  const uint64_t sseed = Rng::derive(spec.seed, 0xABCD + subject_index);
  Rng rng(sseed);

  const SubjectGeometry sg = subject_geometry(spec, rng);
  std::vector<int32_t> labels(static_cast<size_t>(g.voxels()), 0);
  partition_side(spec, g, sg, 0, labels);
  partition_side(spec, g, sg, 1, labels);
  apply_atrophy(spec, g, labels, rng);

  // non-empty, mutually disjoint regions per side by construction; verify
  for (int side = 0; side < 2; ++side) {
    std::array<int64_t, 13> counts{};
    size_t idx = 0;
    for (int64_t k = 0; k < g.shape[2]; ++k)
      for (int64_t j = 0; j < g.shape[1]; ++j)
        for (int64_t i = 0; i < g.shape[0]; ++i, ++idx) {
          if (labels[idx] == 0) continue;
          const double wx = voxel_to_world(g, static_cast<double>(i), static_cast<double>(j),
                                           static_cast<double>(k))[0];
          if ((side == 0) == (wx < 0.0)) ++counts[static_cast<size_t>(labels[idx])];
        }
    for (int c = 1; c <= 12; ++c)
      require(counts[static_cast<size_t>(c)] > 0, ErrorKind::Validation,
              cat("phantom region ", Taxonomy::nuclei().name(c), " is empty on side ", side));
  }

  PhantomSubject subj;
  subj.id = id;
  subj.labels = LabelMap(g, labels, &Taxonomy::nuclei(), VoxelType::I16);
  Rng lesion_rng(Rng::derive(sseed, 0x1e510));
  Rng lesion_rng2 = lesion_rng;  // same lesion placement in both contrasts
  subj.wmn = render_image(spec, g, sg, labels, Contrast::WMN, Rng::derive(sseed, 0x901),
                          lesion_rng);
  subj.csfn = render_image(spec, g, sg, labels, Contrast::CSFN, Rng::derive(sseed, 0x902),
                           lesion_rng2);
  subj.age = rng.uniform(25.0, 70.0);
  subj.gender = rng.uniform() < 0.5 ? 0 : 1;
  subj.pi = rng.uniform() < 0.5 ? 0 : 1;

  // ICV proxy: head ellipsoid volume from the constructed axes
  subj.icv_mm3 = 4.0 / 3.0 * M_PI * sg.head_axes[0] * sg.head_axes[1] * sg.head_axes[2];
  return subj;
}

std::pair<Volume, LabelMap> generate(const PhantomSpec& spec, Contrast mode) {
  PhantomSubject s = generate_subject(spec, 0, "phantom");
  return {mode == Contrast::CSFN ? std::move(s.csfn) : std::move(s.wmn), std::move(s.labels)};
}

CropTemplate make_template(const PhantomSpec& spec, int64_t box_margin) {
  PhantomSpec nominal = spec;
  nominal.site_jitter = 0.0;
  nominal.shape_jitter = 0.0;
  nominal.global_scale_std = 0.0;
  nominal.noise_sigma = 0.0;
  nominal.lesions = false;
  nominal.atrophy.clear();
  PhantomSubject s = generate_subject(nominal, 0, "template");

  CropTemplate t;
  BoundingBox box{{s.labels.geo().shape[0], s.labels.geo().shape[1], s.labels.geo().shape[2]},
                  {-1, -1, -1}};
  const Geometry& g = s.labels.geo();
  for (int64_t k = 0; k < g.shape[2]; ++k)
    for (int64_t j = 0; j < g.shape[1]; ++j)
      for (int64_t i = 0; i < g.shape[0]; ++i)
        if (s.labels.at(i, j, k) > 0) {
          box.lo[0] = std::min(box.lo[0], i);
          box.lo[1] = std::min(box.lo[1], j);
          box.lo[2] = std::min(box.lo[2], k);
          box.hi[0] = std::max(box.hi[0], i);
          box.hi[1] = std::max(box.hi[1], j);
          box.hi[2] = std::max(box.hi[2], k);
        }
  t.box = box.expanded(box_margin).clipped(g.shape);
  t.template_volume = std::move(s.wmn);
  return t;
}

std::vector<PhantomSubject> generate_cohort_members(const CohortSpec& spec) {
  require(spec.n >= 1, ErrorKind::InvalidArgument, "cohort size must be >= 1");
  PhantomSpec base = spec.base;
  base.seed = Rng::derive(spec.seed, static_cast<uint64_t>(spec.cohort) + 17);
  if (spec.cohort == Cohort::MS) {
    base.lesions = true;
    base.atrophy = spec.atrophy_override;
    if (base.atrophy.empty()) base.atrophy = {{"AV", 0.15}, {"Pul", 0.15}, {"MGN", 0.15}};
  } else if (!spec.atrophy_override.empty()) {
    base.atrophy = spec.atrophy_override;
  }
  if (spec.cohort == Cohort::ET) base.noise_sigma *= 1.25;  // 3T-like noise floor

  std::vector<PhantomSubject> subjects(static_cast<size_t>(spec.n));
  parallel_chunks(spec.n, [&](int64_t b0, int64_t b1, int) {
    for (int64_t i = b0; i < b1; ++i) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s_%03d", to_string(spec.cohort).c_str(),
                    static_cast<int>(i));
      subjects[static_cast<size_t>(i)] =
          generate_subject(base, static_cast<uint64_t>(i), buf);
    }
  });
  return subjects;
}

SideVolumes measure_side_volumes(const LabelMap& labels) {
  const int nc = labels.taxonomy().num_classes();
  SideVolumes sv;
  sv.left_mm3.assign(static_cast<size_t>(nc), 0.0);
  sv.right_mm3.assign(static_cast<size_t>(nc), 0.0);
  const Geometry& g = labels.geo();
  const double vox = g.voxel_volume_mm3();
  for (int64_t k = 0; k < g.shape[2]; ++k)
    for (int64_t j = 0; j < g.shape[1]; ++j)
      for (int64_t i = 0; i < g.shape[0]; ++i) {
        const int32_t c = labels.at(i, j, k);
        if (c == 0) continue;
        const double wx = voxel_to_world(g, static_cast<double>(i), static_cast<double>(j),
                                         static_cast<double>(k))[0];
        (wx < 0.0 ? sv.left_mm3 : sv.right_mm3)[static_cast<size_t>(c)] += vox;
      }
  return sv;
}

WrittenCohort write_cohort(const CohortSpec& spec, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto subjects = generate_cohort_members(spec);

  WrittenCohort res;
  DatasetManifest wmn_manifest, csfn_manifest;
  const FieldStrength field =
      spec.cohort == Cohort::ET ? FieldStrength::T3 : FieldStrength::T7;
  for (const auto& s : subjects) {
    const auto img_wmn = out_dir / (s.id + "_wmn.nii.gz");
    const auto img_csfn = out_dir / (s.id + "_csfn.nii.gz");
    const auto lab = out_dir / (s.id + "_labels.nii.gz");
    write_nifti(s.wmn, img_wmn);
    write_nifti(s.csfn, img_csfn);
    write_nifti(s.labels, lab);
    wmn_manifest.entries.push_back(
        {s.id, img_wmn, lab, spec.cohort, field, Contrast::WMN});
    csfn_manifest.entries.push_back(
        {s.id, img_csfn, lab, spec.cohort, field, Contrast::CSFN});
    res.subject_ids.push_back(s.id);
  }
  res.wmn_manifest = out_dir / "manifest_wmn.tsv";
  res.csfn_manifest = out_dir / "manifest_csfn.tsv";
  save_manifest(wmn_manifest, res.wmn_manifest);
  save_manifest(csfn_manifest, res.csfn_manifest);

  // covariates + per-structure volumes (bilateral averages; MTT per side)
  res.cohort_table = out_dir / "cohort_table.tsv";
  std::ofstream table(res.cohort_table);
  require(table.good(), ErrorKind::Io, "cannot write cohort table");
  const Taxonomy& tax = Taxonomy::nuclei();
  table << "subject_id\tgroup\tage\tgender\tpi\ticv_mm3";
  for (int c = 1; c < tax.num_classes(); ++c) {
    if (tax.name(c) == "MTT")
      table << "\tvol_MTT_left\tvol_MTT_right";
    else
      table << "\tvol_" << tax.name(c);
  }
  table << "\tvol_thalamus\n";
  for (const auto& s : subjects) {
    const SideVolumes sv = measure_side_volumes(s.labels);
    table << s.id << '\t' << to_string(spec.cohort) << '\t' << s.age << '\t' << s.gender << '\t'
          << s.pi << '\t' << s.icv_mm3;
    double thal_l = 0.0, thal_r = 0.0;
    for (int c = 1; c < tax.num_classes(); ++c) {
      thal_l += sv.left_mm3[static_cast<size_t>(c)];
      thal_r += sv.right_mm3[static_cast<size_t>(c)];
      if (tax.name(c) == "MTT")
        table << '\t' << sv.left_mm3[static_cast<size_t>(c)] << '\t'
              << sv.right_mm3[static_cast<size_t>(c)];
      else
        table << '\t'
              << bilateral_average(sv.left_mm3[static_cast<size_t>(c)],
                                   sv.right_mm3[static_cast<size_t>(c)]);
    }
    table << '\t' << bilateral_average(thal_l, thal_r) << '\n';
  }

  const CropTemplate tmpl = make_template(spec.base);
  res.template_path = out_dir / "crop_template.nii.gz";
  tmpl.save(res.template_path);
  return res;
}

}  // namespace thalseg
