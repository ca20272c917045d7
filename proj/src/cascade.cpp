/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#include "thalseg/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "thalseg/preprocess.hpp"

namespace thalseg {

ProbabilityMaps ClassProbs::to_probability_maps() const {
  ProbabilityMaps out;
  out.geo = geo;
  out.tax = tax;
  out.values.assign(v.begin() + static_cast<long>(stride()), v.end());
  return out;
}

namespace {

// Applies a per-class plane permutation by round-tripping through the public
// single-grid machinery (classes are independent grids).
template <class F>
ClassProbs transform_classprobs(const ClassProbs& p, const Geometry& out_geo, const F& fn) {
  ClassProbs out;
  out.geo = out_geo;
  out.tax = p.tax;
  out.v.resize(p.v.size());
  const size_t stride = p.stride();
  for (int c = 0; c < p.num_classes(); ++c) {
    std::vector<float> one(p.v.begin() + static_cast<long>(c * stride),
                           p.v.begin() + static_cast<long>((c + 1) * stride));
    std::vector<float> moved = fn(one);
    std::copy(moved.begin(), moved.end(), out.v.begin() + static_cast<long>(c * stride));
  }
  return out;
}

}  // namespace

ClassProbs reorient(const ClassProbs& p, const Orientation& target) {
  // Reuse the LabelMap permutation by moving each class plane as a dummy grid.
  if (target == p.geo.orientation) return p;
  ClassProbs out;
  out.tax = p.tax;
  // derive the output geometry and the index map from a throwaway label grid
  LabelMap probe(p.geo, std::vector<int32_t>(static_cast<size_t>(p.geo.voxels()), 0),
                 &Taxonomy::whole_thalamus());
  LabelMap moved = reorient(probe, target);
  out.geo = moved.geo();
  out.v.resize(p.v.size());
  const Geometry& g = p.geo;
  const Geometry& og = out.geo;
  // recompute the axis map the same way reorient does
  struct {
    int src[3];
    bool flip[3];
  } m{};
  for (int j = 0; j < 3; ++j) {
    const int w = target.world_axis(j);
    for (int k = 0; k < 3; ++k)
      if (g.orientation.world_axis(k) == w) m.src[j] = k;
    m.flip[j] = target.world_sign(j) != g.orientation.world_sign(m.src[j]);
  }
  const size_t in_stride = p.stride();
  const size_t out_stride = static_cast<size_t>(og.voxels());
  for (int c = 0; c < p.num_classes(); ++c) {
    int64_t old_idx[3];
    for (int64_t k = 0; k < og.shape[2]; ++k)
      for (int64_t j = 0; j < og.shape[1]; ++j)
        for (int64_t i = 0; i < og.shape[0]; ++i) {
          const int64_t nidx[3] = {i, j, k};
          for (int a = 0; a < 3; ++a)
            old_idx[m.src[a]] = m.flip[a] ? (g.shape[m.src[a]] - 1 - nidx[a]) : nidx[a];
          out.v[static_cast<size_t>(c) * out_stride + og.index(i, j, k)] =
              p.v[static_cast<size_t>(c) * in_stride +
                  g.index(old_idx[0], old_idx[1], old_idx[2])];
        }
  }
  return out;
}

ClassProbs flip_lr(const ClassProbs& p) {
  const int axis = p.geo.orientation.lr_axis();
  require(axis >= 0, ErrorKind::Validation, "orientation does not identify a left-right axis");
  return transform_classprobs(p, p.geo, [&](std::vector<float> one) {
    const Geometry& g = p.geo;
    for (int64_t k = 0; k < g.shape[2]; ++k)
      for (int64_t j = 0; j < g.shape[1]; ++j)
        for (int64_t i = 0; i < g.shape[0]; ++i) {
          int64_t idx[3] = {i, j, k};
          if (idx[axis] * 2 >= g.shape[axis]) continue;
          int64_t mir[3] = {i, j, k};
          mir[axis] = g.shape[axis] - 1 - idx[axis];
          std::swap(one[g.index(idx[0], idx[1], idx[2])], one[g.index(mir[0], mir[1], mir[2])]);
        }
    return one;
  });
}

void CascadePipeline::validate() const {
  require(threshold > 0.0 && threshold < 1.0, ErrorKind::Validation,
          "binarize threshold must be in (0, 1)");
  require(stage1.spec().num_classes == Taxonomy::whole_thalamus().num_classes(),
          ErrorKind::Validation, "stage-1 network must be 2-class");
  require(stage2.spec().num_classes == Taxonomy::nuclei().num_classes(), ErrorKind::Validation,
          "stage-2 network must match the nuclei taxonomy");
  require(box_margin >= 0, ErrorKind::Validation, "box margin must be >= 0");
}

Tensor4f slices_of(const Volume& v) {
  const Shape3 s = v.geo().shape;
  Tensor4f t(static_cast<int>(s[2]), 1, static_cast<int>(s[1]), static_cast<int>(s[0]));
  for (int64_t k = 0; k < s[2]; ++k)
    for (int64_t j = 0; j < s[1]; ++j)
      for (int64_t i = 0; i < s[0]; ++i)
        t.at(static_cast<int>(k), 0, static_cast<int>(j), static_cast<int>(i)) =
            static_cast<float>(v.at(i, j, k));
  return t;
}

ClassProbs infer_volume(const UnetF& net, const Volume& v, Plane plane, const Taxonomy& tax) {
  const Orientation target = plane_orientation(plane);
  const Volume vo = reorient(v, target);
  const Tensor4f slices = slices_of(vo);
  const Tensor4f probs = net.infer(slices);

  ClassProbs out;
  out.geo = vo.geo();
  out.tax = &tax;
  out.v.resize(static_cast<size_t>(tax.num_classes()) * static_cast<size_t>(vo.geo().voxels()));
  const Shape3 s = vo.geo().shape;
  for (int c = 0; c < tax.num_classes(); ++c)
    for (int64_t k = 0; k < s[2]; ++k)
      for (int64_t j = 0; j < s[1]; ++j)
        for (int64_t i = 0; i < s[0]; ++i)
          out.at(c, i, j, k) = probs.at(static_cast<int>(k), c, static_cast<int>(j),
                                        static_cast<int>(i));
  return reorient(out, v.geo().orientation);
}

// ---------------------------------------------------------------------------
// stage 1
// ---------------------------------------------------------------------------

namespace {

/// Largest 6-connected component of a binary grid (in place).
void keep_largest_component(std::vector<uint8_t>& mask, const Geometry& g) {
  std::vector<int32_t> comp(mask.size(), -1);
  int32_t ncomp = 0;
  int64_t best_size = 0;
  int32_t best = -1;
  std::deque<size_t> queue;
  const int64_t nx = g.shape[0], ny = g.shape[1], nz = g.shape[2];
  for (size_t start = 0; start < mask.size(); ++start) {
    if (!mask[start] || comp[start] >= 0) continue;
    const int32_t id = ncomp++;
    int64_t size = 0;
    comp[start] = id;
    queue.push_back(start);
    while (!queue.empty()) {
      const size_t cur = queue.front();
      queue.pop_front();
      ++size;
      const int64_t i = static_cast<int64_t>(cur) % nx;
      const int64_t j = (static_cast<int64_t>(cur) / nx) % ny;
      const int64_t k = static_cast<int64_t>(cur) / (nx * ny);
      const int64_t di[6] = {1, -1, 0, 0, 0, 0};
      const int64_t dj[6] = {0, 0, 1, -1, 0, 0};
      const int64_t dk[6] = {0, 0, 0, 0, 1, -1};
      for (int d = 0; d < 6; ++d) {
        const int64_t ni = i + di[d], nj = j + dj[d], nk = k + dk[d];
        if (ni < 0 || ni >= nx || nj < 0 || nj >= ny || nk < 0 || nk >= nz) continue;
        const size_t nidx = g.index(ni, nj, nk);
        if (mask[nidx] && comp[nidx] < 0) {
          comp[nidx] = id;
          queue.push_back(nidx);
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best = id;
    }
  }
  for (size_t i = 0; i < mask.size(); ++i) mask[i] = (mask[i] && comp[i] == best) ? 1 : 0;
}

}  // namespace

Stage1Result stage1_postprocess(const ClassProbs& probs, double threshold, int64_t margin,
                                const std::optional<BoundingBox>& fallback_box) {
  require(probs.num_classes() >= 2, ErrorKind::InvalidArgument, "need a thalamus class map");
  const Geometry& g = probs.geo;
  std::vector<uint8_t> mask(static_cast<size_t>(g.voxels()), 0);
  bool any = false;
  for (int64_t k = 0; k < g.shape[2]; ++k)
    for (int64_t j = 0; j < g.shape[1]; ++j)
      for (int64_t i = 0; i < g.shape[0]; ++i)
        if (probs.at(1, i, j, k) >= static_cast<float>(threshold)) {
          mask[g.index(i, j, k)] = 1;
          any = true;
        }

  Stage1Result res;
  if (!any) {
    res.fallback = true;
    res.box = fallback_box ? fallback_box->clipped(g.shape) : BoundingBox::whole(g.shape);
    if (res.box.empty()) res.box = BoundingBox::whole(g.shape);
    res.mask = LabelMap(g, std::vector<int32_t>(mask.size(), 0), &Taxonomy::whole_thalamus());
    return res;
  }
  keep_largest_component(mask, g);

  BoundingBox box{{g.shape[0], g.shape[1], g.shape[2]}, {-1, -1, -1}};
  std::vector<int32_t> labels(mask.size(), 0);
  for (int64_t k = 0; k < g.shape[2]; ++k)
    for (int64_t j = 0; j < g.shape[1]; ++j)
      for (int64_t i = 0; i < g.shape[0]; ++i) {
        if (!mask[g.index(i, j, k)]) continue;
        labels[g.index(i, j, k)] = 1;
        box.lo[0] = std::min(box.lo[0], i);
        box.lo[1] = std::min(box.lo[1], j);
        box.lo[2] = std::min(box.lo[2], k);
        box.hi[0] = std::max(box.hi[0], i);
        box.hi[1] = std::max(box.hi[1], j);
        box.hi[2] = std::max(box.hi[2], k);
      }
  res.box = box.expanded(margin).clipped(g.shape);
  res.mask = LabelMap(g, std::move(labels), &Taxonomy::whole_thalamus());
  return res;
}

Stage1Result run_stage1(const CascadePipeline& p, const Volume& v,
                        const std::optional<BoundingBox>& fallback_box) {
  p.validate();
  const ClassProbs probs = infer_volume(p.stage1, v, p.plane, Taxonomy::whole_thalamus());
  return stage1_postprocess(probs, p.threshold, p.box_margin, fallback_box);
}

// ---------------------------------------------------------------------------
// stage 2
// ---------------------------------------------------------------------------

LabelMap stage2_decide(const ClassProbs& probs, double threshold) {
  const Geometry& g = probs.geo;
  std::vector<int32_t> labels(static_cast<size_t>(g.voxels()), 0);
  const float thr = static_cast<float>(threshold);
  for (int64_t k = 0; k < g.shape[2]; ++k)
    for (int64_t j = 0; j < g.shape[1]; ++j)
      for (int64_t i = 0; i < g.shape[0]; ++i) {
        int best = 0;
        float best_p = thr;  // classes below threshold stay background
        for (int c = 1; c < probs.num_classes(); ++c) {
          const float pc = probs.at(c, i, j, k);
          if (pc >= thr && pc > best_p) {
            best = c;
            best_p = pc;
          }
        }
        labels[g.index(i, j, k)] = best;
      }
  return LabelMap(g, std::move(labels), probs.tax);
}

LabelMap run_stage2(const CascadePipeline& p, const Volume& cropped) {
  const ClassProbs probs = infer_volume(p.stage2, cropped, p.plane, Taxonomy::nuclei());
  return stage2_decide(probs, p.threshold);
}

// ---------------------------------------------------------------------------
// bilateral composition
// ---------------------------------------------------------------------------

SideResult segment_one_side(const CascadePipeline& p, const Volume& v,
                            const std::optional<BoundingBox>& fallback_box) {
  const Stage1Result s1 = run_stage1(p, v, fallback_box);
  const Volume cropped = crop(v, s1.box);
  const ClassProbs cropped_probs = infer_volume(p.stage2, cropped, p.plane, Taxonomy::nuclei());
  const LabelMap cropped_labels = stage2_decide(cropped_probs, p.threshold);

  SideResult res;
  res.box = s1.box;
  res.fallback = s1.fallback;
  res.stage2_input_voxels = s1.box.voxels();
  res.labels = uncrop(cropped_labels, s1.box, v.geo());

  res.probs.geo = v.geo();
  res.probs.tax = &Taxonomy::nuclei();
  const size_t stride = static_cast<size_t>(v.geo().voxels());
  res.probs.v.assign(stride * static_cast<size_t>(Taxonomy::nuclei().num_classes()), 0.0f);
  // background certainty 1 everywhere stage 2 did not run
  std::fill(res.probs.v.begin(), res.probs.v.begin() + static_cast<long>(stride), 1.0f);
  for (int c = 0; c < Taxonomy::nuclei().num_classes(); ++c)
    for (int64_t k = s1.box.lo[2]; k <= s1.box.hi[2]; ++k)
      for (int64_t j = s1.box.lo[1]; j <= s1.box.hi[1]; ++j)
        for (int64_t i = s1.box.lo[0]; i <= s1.box.hi[0]; ++i)
          res.probs.at(c, i, j, k) =
              cropped_probs.at(c, i - s1.box.lo[0], j - s1.box.lo[1], k - s1.box.lo[2]);
  return res;
}

namespace {

BoundingBox mirror_box(const BoundingBox& b, int axis, int64_t n) {
  BoundingBox out = b;
  out.lo[axis] = n - 1 - b.hi[axis];
  out.hi[axis] = n - 1 - b.lo[axis];
  return out;
}

}  // namespace

BilateralResult segment_bilateral_full(const CascadePipeline& p, const Volume& v,
                                       const std::optional<BoundingBox>& fallback_box) {
  const int lr = v.geo().orientation.lr_axis();
  require(lr >= 0, ErrorKind::Validation, "orientation metadata does not identify left-right");

  BilateralResult res;
  res.left = segment_one_side(p, v, fallback_box);

  std::optional<BoundingBox> flipped_fallback;
  if (fallback_box) flipped_fallback = mirror_box(*fallback_box, lr, v.geo().shape[lr]);
  SideResult flipped = segment_one_side(p, flip_lr(v), flipped_fallback);
  res.right.labels = flip_lr(flipped.labels);
  res.right.probs = flip_lr(flipped.probs);
  res.right.box = mirror_box(flipped.box, lr, v.geo().shape[lr]);
  res.right.fallback = flipped.fallback;
  res.right.stage2_input_voxels = flipped.stage2_input_voxels;

  // symmetric merge: nonzero side wins; both nonzero resolved by probability,
  // then by the lower class id (never by which pass produced it)
  const Geometry& g = v.geo();
  std::vector<int32_t> merged(static_cast<size_t>(g.voxels()), 0);
  res.probs.geo = g;
  res.probs.tax = &Taxonomy::nuclei();
  res.probs.v = res.left.probs.v;
  for (int64_t k = 0; k < g.shape[2]; ++k)
    for (int64_t j = 0; j < g.shape[1]; ++j)
      for (int64_t i = 0; i < g.shape[0]; ++i) {
        const int32_t a = res.left.labels.at(i, j, k);
        const int32_t b = res.right.labels.at(i, j, k);
        int32_t pick;
        if (a == 0 && b == 0) {
          pick = 0;
        } else if (b == 0) {
          pick = a;
        } else if (a == 0) {
          pick = b;
          for (int c = 0; c < res.probs.num_classes(); ++c)
            res.probs.at(c, i, j, k) = res.right.probs.at(c, i, j, k);
        } else {
          ++res.merge.overlap_voxels;
          const float pa = res.left.probs.at(a, i, j, k);
          const float pb = res.right.probs.at(b, i, j, k);
          if (pa > pb) {
            pick = a;
          } else if (pb > pa) {
            pick = b;
            for (int c = 0; c < res.probs.num_classes(); ++c)
              res.probs.at(c, i, j, k) = res.right.probs.at(c, i, j, k);
          } else {
            pick = std::min(a, b);
            if (pick == b && b != a)
              for (int c = 0; c < res.probs.num_classes(); ++c)
                res.probs.at(c, i, j, k) = res.right.probs.at(c, i, j, k);
          }
        }
        merged[g.index(i, j, k)] = pick;
      }
  res.labels = LabelMap(g, std::move(merged), &Taxonomy::nuclei());
  return res;
}

LabelMap segment_bilateral(const CascadePipeline& p, const Volume& v,
                           const std::optional<BoundingBox>& fallback_box, MergeStats* stats) {
  BilateralResult res = segment_bilateral_full(p, v, fallback_box);
  if (stats) *stats = res.merge;
  return std::move(res.labels);
}

// ---------------------------------------------------------------------------
// threshold selection
// ---------------------------------------------------------------------------

std::vector<PrPoint> pr_curve(const std::vector<float>& scores, const std::vector<uint8_t>& truth,
                              const std::vector<double>& thresholds) {
  require(scores.size() == truth.size(), ErrorKind::InvalidArgument,
          "scores and truth must align");
  std::vector<PrPoint> points;
  int64_t positives = 0;
  for (uint8_t t : truth) positives += t ? 1 : 0;
  for (double thr : thresholds) {
    int64_t tp = 0, fp = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= static_cast<float>(thr)) {
        if (truth[i])
          ++tp;
        else
          ++fp;
      }
    }
    PrPoint pt;
    pt.threshold = thr;
    pt.precision = (tp + fp) == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    pt.recall = positives == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(positives);
    points.push_back(pt);
  }
  return points;
}

double select_threshold(const std::vector<PrPoint>& points) {
  require(points.size() >= 3, ErrorKind::InvalidArgument, "need at least 3 PR points");
  for (size_t i = 1; i < points.size(); ++i)
    require(points[i].threshold >= points[i - 1].threshold, ErrorKind::InvalidArgument,
            "PR points must be sorted by threshold");
  bool any_precision = false;
  for (const auto& p : points)
    if (p.precision > 0.0) any_precision = true;
  require(any_precision, ErrorKind::Validation,
          "degenerate precision-recall curve (precision zero everywhere)");

  double best = points.front().threshold;
  double best_score = -1.0;
  for (const auto& p : points) {
    const double score = std::min(p.precision, p.recall);
    if (score > best_score) {  // strict: ties keep the lower threshold
      best_score = score;
      best = p.threshold;
    }
  }
  return best;
}

}  // namespace thalseg
