/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#include "thalseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "thalseg/plots.hpp"

namespace thalseg {

// ---------------------------------------------------------------------------
// PreprocessOptions
// ---------------------------------------------------------------------------

BiasCorrector PreprocessOptions::bias_corrector() const {
  if (bias_plugin == "identity") return identity_bias_corrector();
  if (bias_plugin == "poly3") return polynomial_bias_corrector(3);
  fail(ErrorKind::InvalidArgument, cat("unknown bias plugin '", bias_plugin, "'"));
}

AlignmentPlugin PreprocessOptions::alignment() const {
  if (alignment_plugin == "com") return center_of_mass_alignment();
  if (alignment_plugin == "identity") return identity_alignment();
  if (alignment_plugin.rfind("file:", 0) == 0)
    return affine_file_alignment(alignment_plugin.substr(5));
  fail(ErrorKind::InvalidArgument, cat("unknown alignment plugin '", alignment_plugin, "'"));
}

std::string PreprocessOptions::to_json() const {
  nlohmann::json j;
  j["bias_plugin"] = bias_plugin;
  j["alignment_plugin"] = alignment_plugin;
  j["crop_enabled"] = crop_enabled;
  j["crop_margin"] = crop_margin;
  j["target_spacing"] = target_spacing;
  return j.dump();
}

PreprocessOptions PreprocessOptions::from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  PreprocessOptions o;
  o.bias_plugin = j.value("bias_plugin", o.bias_plugin);
  o.alignment_plugin = j.value("alignment_plugin", o.alignment_plugin);
  o.crop_enabled = j.value("crop_enabled", o.crop_enabled);
  o.crop_margin = j.value("crop_margin", o.crop_margin);
  if (j.contains("target_spacing")) o.target_spacing = j["target_spacing"].get<Spacing3>();
  return o;
}

// ---------------------------------------------------------------------------
// subject preparation
// ---------------------------------------------------------------------------

LabelMap mask_left_hemisphere(const LabelMap& labels) {
  LabelMap out = labels;
  const Geometry& g = labels.geo();
  for (int64_t k = 0; k < g.shape[2]; ++k)
    for (int64_t j = 0; j < g.shape[1]; ++j)
      for (int64_t i = 0; i < g.shape[0]; ++i)
        if (voxel_to_world(g, static_cast<double>(i), static_cast<double>(j),
                           static_cast<double>(k))[0] >= 0.0)
          out.at(i, j, k) = 0;
  return out;
}

namespace {

bool spacing_matches(const Spacing3& a, const Spacing3& b) {
  for (int k = 0; k < 3; ++k)
    if (std::abs(a[k] - b[k]) > 1e-9) return false;
  return true;
}

}  // namespace

PreparedSubject prepare_subject(const std::string& id, const Volume& image,
                                const LabelMap* labels, const CropTemplate* tmpl,
                                const PreprocessOptions& opts) {
  PreparedSubject prep;
  prep.id = id;

  Volume v = bias_correct(image, opts.bias_corrector());
  v = normalize(v);
  v = reorient(v, kCanonicalOrientation);
  if (!spacing_matches(v.geo().spacing, opts.target_spacing))
    v = resample(v, opts.target_spacing, Interp::Trilinear);
  prep.canonical = std::move(v);

  if (labels) {
    LabelMap lm = reorient(*labels, kCanonicalOrientation);
    if (!spacing_matches(lm.geo().spacing, opts.target_spacing))
      lm = resample(lm, opts.target_spacing);
    require_same_geometry(lm.geo(), prep.canonical.geo());
    prep.labels_left = mask_left_hemisphere(lm);
    prep.labels = std::move(lm);
  }

  if (opts.crop_enabled && tmpl) {
    CropResult cr = crop_to_thalami(prep.canonical, *tmpl, opts.alignment(), opts.crop_margin);
    prep.crop_box = cr.box;
    prep.crop_fallback = cr.fallback;
    prep.stage1_input = std::move(cr.cropped);
  } else {
    prep.crop_box = BoundingBox::whole(prep.canonical.geo().shape);
    prep.stage1_input = prep.canonical;
  }
  if (prep.labels_left) prep.stage1_labels = crop(*prep.labels_left, prep.crop_box);
  return prep;
}

// ---------------------------------------------------------------------------
// slice dataset assembly
// ---------------------------------------------------------------------------

namespace {

struct RawSlice {
  int h = 0, w = 0;
  std::vector<float> image;
  std::vector<int32_t> labels;
};

struct RawSlices {
  int maxh = 0, maxw = 0;
  std::vector<RawSlice> items;
};

LabelMap binarize_labels(const LabelMap& m) {
  std::vector<int32_t> out(m.labels().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = m.labels()[i] > 0 ? 1 : 0;
  return LabelMap(m.geo(), std::move(out), &Taxonomy::whole_thalamus());
}

void harvest_slices(RawSlices& out, const Volume& img, const LabelMap& lab, Plane plane,
                    bool skip_empty) {
  const Orientation target = plane_orientation(plane);
  const Volume vo = reorient(img, target);
  const LabelMap lo = reorient(lab, target);
  const Shape3 s = vo.geo().shape;
  for (int64_t k = 0; k < s[2]; ++k) {
    RawSlice slice;
    slice.w = static_cast<int>(s[0]);
    slice.h = static_cast<int>(s[1]);
    slice.image.resize(static_cast<size_t>(slice.h) * slice.w);
    slice.labels.resize(slice.image.size());
    bool any = false;
    for (int64_t j = 0; j < s[1]; ++j)
      for (int64_t i = 0; i < s[0]; ++i) {
        const size_t p = static_cast<size_t>(j) * static_cast<size_t>(s[0]) +
                         static_cast<size_t>(i);
        slice.image[p] = static_cast<float>(vo.at(i, j, k));
        slice.labels[p] = lo.at(i, j, k);
        any = any || slice.labels[p] != 0;
      }
    if (skip_empty && !any) continue;
    out.maxh = std::max(out.maxh, slice.h);
    out.maxw = std::max(out.maxw, slice.w);
    out.items.push_back(std::move(slice));
  }
}

SliceDataset finalize_dataset(RawSlices&& raw, int num_classes) {
  SliceDataset ds;
  ds.num_classes = num_classes;
  ds.height = raw.maxh;
  ds.width = raw.maxw;
  for (auto& r : raw.items) {
    SliceSample s;
    s.image.assign(static_cast<size_t>(ds.height) * ds.width, 0.0f);
    s.labels.assign(s.image.size(), 0);
    for (int j = 0; j < r.h; ++j) {
      std::copy(r.image.begin() + static_cast<long>(j) * r.w,
                r.image.begin() + static_cast<long>(j + 1) * r.w,
                s.image.begin() + static_cast<long>(j) * ds.width);
      std::copy(r.labels.begin() + static_cast<long>(j) * r.w,
                r.labels.begin() + static_cast<long>(j + 1) * r.w,
                s.labels.begin() + static_cast<long>(j) * ds.width);
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::optional<BoundingBox> tight_label_box(const LabelMap& m, int64_t margin) {
  const Geometry& g = m.geo();
  BoundingBox box{{g.shape[0], g.shape[1], g.shape[2]}, {-1, -1, -1}};
  bool any = false;
  for (int64_t k = 0; k < g.shape[2]; ++k)
    for (int64_t j = 0; j < g.shape[1]; ++j)
      for (int64_t i = 0; i < g.shape[0]; ++i) {
        if (m.at(i, j, k) == 0) continue;
        any = true;
        box.lo[0] = std::min(box.lo[0], i);
        box.lo[1] = std::min(box.lo[1], j);
        box.lo[2] = std::min(box.lo[2], k);
        box.hi[0] = std::max(box.hi[0], i);
        box.hi[1] = std::max(box.hi[1], j);
        box.hi[2] = std::max(box.hi[2], k);
      }
  if (!any) return std::nullopt;
  return box.expanded(margin).clipped(g.shape);
}

struct StageDatasets {
  std::array<RawSlices, 3> stage1;
  std::array<RawSlices, 3> stage2;
  std::vector<std::string> warnings;

  std::array<SliceDataset, 3> finalize1() {
    std::array<SliceDataset, 3> out;
    for (int p = 0; p < 3; ++p)
      out[static_cast<size_t>(p)] = finalize_dataset(std::move(stage1[static_cast<size_t>(p)]),
                                                     Taxonomy::whole_thalamus().num_classes());
    return out;
  }
  std::array<SliceDataset, 3> finalize2() {
    std::array<SliceDataset, 3> out;
    for (int p = 0; p < 3; ++p)
      out[static_cast<size_t>(p)] = finalize_dataset(std::move(stage2[static_cast<size_t>(p)]),
                                                     Taxonomy::nuclei().num_classes());
    return out;
  }
};

StageDatasets build_stage_data(const DatasetManifest& manifest, const CropTemplate* tmpl,
                               const TrainRun& run, bool augment_enabled) {
  StageDatasets data;
  size_t subj_idx = 0;
  for (const auto& entry : manifest.entries) {
    require(entry.label_path.has_value(), ErrorKind::Validation,
            cat("subject ", entry.subject_id, " has no labels; cannot train"));
    const Volume img = read_volume(entry.image_path);
    const LabelMap lab = read_labelmap(*entry.label_path, Taxonomy::nuclei());
    PreparedSubject prep = prepare_subject(entry.subject_id, img, &lab, tmpl, run.pre);
    require(prep.stage1_labels.has_value(), ErrorKind::Validation, "missing prepared labels");

    std::vector<std::pair<Volume, LabelMap>> copies;
    if (augment_enabled && run.augmentation.max_angle_deg > 0.0 &&
        run.augmentation.copies_per_plane > 0) {
      AugmentationPolicy pol = run.augmentation;
      pol.rng_seed = Rng::derive(run.training.seed ^ run.augmentation.rng_seed, subj_idx);
      copies = augment(prep.stage1_input, *prep.stage1_labels, pol);
    } else {
      copies.emplace_back(prep.stage1_input, *prep.stage1_labels);
    }

    for (const auto& [cvol, clab] : copies) {
      if (run.stage != 2) {
        const LabelMap binary = binarize_labels(clab);
        for (int p = 0; p < 3; ++p)
          harvest_slices(data.stage1[static_cast<size_t>(p)], cvol, binary,
                         static_cast<Plane>(p), /*skip_empty=*/false);
      }
      if (run.stage != 1) {
        const auto box = tight_label_box(clab, run.stage2_label_margin);
        if (!box) {
          data.warnings.push_back(cat("subject ", entry.subject_id,
                                      ": no left-hemisphere labels; skipped for stage 2"));
          continue;
        }
        const Volume v2 = crop(cvol, *box);
        const LabelMap l2 = crop(clab, *box);
        for (int p = 0; p < 3; ++p)
          harvest_slices(data.stage2[static_cast<size_t>(p)], v2, l2, static_cast<Plane>(p),
                         /*skip_empty=*/true);
      }
    }
    ++subj_idx;
  }
  return data;
}

}  // namespace

// ---------------------------------------------------------------------------
// TrainRun (de)serialization
// ---------------------------------------------------------------------------

std::string TrainRun::to_json() const {
  nlohmann::json j;
  j["manifest"] = manifest.string();
  j["out_dir"] = out_dir.string();
  j["template"] = template_path.string();
  j["initialize_from"] = initialize_from.string();
  j["training"] = nlohmann::json::parse(training.to_json());
  j["preprocess"] = nlohmann::json::parse(pre.to_json());
  j["augmentation"] = {{"max_angle_deg", augmentation.max_angle_deg},
                       {"copies_per_plane", augmentation.copies_per_plane},
                       {"num_planes", augmentation.num_planes},
                       {"seed", augmentation.rng_seed}};
  j["augment_enabled"] = augment_enabled;
  j["stage"] = stage;
  j["plane"] = only_plane ? to_string(*only_plane) : "all";
  j["base_features"] = base_features;
  j["depth"] = depth;
  j["dropout_rate"] = dropout_rate;
  j["kernel"] = kernel;
  j["threshold"] = threshold;
  j["box_margin"] = box_margin;
  j["stage2_label_margin"] = stage2_label_margin;
  return j.dump(2);
}

TrainRun TrainRun::from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  TrainRun r;
  r.manifest = j.at("manifest").get<std::string>();
  r.out_dir = j.at("out_dir").get<std::string>();
  r.template_path = j.value("template", std::string());
  r.initialize_from = j.value("initialize_from", std::string());
  if (j.contains("training")) r.training = TrainingConfig::from_json(j["training"].dump());
  if (j.contains("preprocess")) r.pre = PreprocessOptions::from_json(j["preprocess"].dump());
  if (j.contains("augmentation")) {
    const auto& a = j["augmentation"];
    r.augmentation.max_angle_deg = a.value("max_angle_deg", 7.0);
    r.augmentation.copies_per_plane = a.value("copies_per_plane", 6);
    r.augmentation.num_planes = a.value("num_planes", 3);
    r.augmentation.rng_seed = a.value("seed", uint64_t{0});
  }
  r.augment_enabled = j.value("augment_enabled", true);
  r.stage = j.value("stage", 0);
  const std::string plane = j.value("plane", "all");
  if (plane != "all") r.only_plane = plane_from_string(plane);
  if (j.contains("base_features")) r.base_features = j["base_features"].get<std::array<int, 3>>();
  r.depth = j.value("depth", 4);
  r.dropout_rate = j.value("dropout_rate", 0.3);
  r.kernel = j.value("kernel", 3);
  r.threshold = j.value("threshold", 0.7);
  r.box_margin = j.value("box_margin", int64_t{5});
  r.stage2_label_margin = j.value("stage2_label_margin", int64_t{5});
  return r;
}

std::string TrainRunSummary::to_json() const {
  nlohmann::json j;
  j["bundle_dir"] = bundle_dir.string();
  j["bundle_complete"] = bundle_complete;
  j["warnings"] = warnings;
  j["nets"] = nlohmann::json::array();
  for (const auto& n : nets)
    j["nets"].push_back({{"name", n.name},
                         {"best_val_dice", n.best_val_dice},
                         {"best_epoch", n.best_epoch},
                         {"epochs", n.epochs},
                         {"checkpoint", n.checkpoint},
                         {"log", n.log_path}});
  return j.dump(2);
}

void write_resolved_config(const std::filesystem::path& out_dir, const std::string& json_text) {
  std::filesystem::create_directories(out_dir);
  std::ofstream out(out_dir / "resolved_config.json");
  require(out.good(), ErrorKind::Io, "cannot write resolved_config.json");
  out << json_text << "\n";
}

// ---------------------------------------------------------------------------
// run_training
// ---------------------------------------------------------------------------

TrainRunSummary run_training(const TrainRun& run) {
  run.training.validate();
  require(run.stage >= 0 && run.stage <= 2, ErrorKind::InvalidArgument, "stage must be 0, 1 or 2");
  std::filesystem::create_directories(run.out_dir);
  write_resolved_config(run.out_dir, run.to_json());

  const DatasetManifest manifest = load_manifest(run.manifest);
  SplitResult sp = split(manifest, run.training.val_fraction, run.training.seed);

  std::optional<CropTemplate> tmpl;
  if (run.pre.crop_enabled) {
    require(!run.template_path.empty(), ErrorKind::InvalidArgument,
            "cropping is enabled but no crop template was given");
    tmpl = CropTemplate::load(run.template_path);
  }

  TrainRunSummary summary;
  summary.bundle_dir = run.out_dir;
  summary.warnings = sp.warnings;

  StageDatasets train_raw =
      build_stage_data(sp.train, tmpl ? &*tmpl : nullptr, run, run.augment_enabled);
  StageDatasets val_raw = build_stage_data(sp.validation, tmpl ? &*tmpl : nullptr, run, false);
  for (const auto& w : train_raw.warnings) summary.warnings.push_back(w);

  auto train1 = train_raw.finalize1();
  auto train2 = train_raw.finalize2();
  auto val1 = val_raw.finalize1();
  auto val2 = val_raw.finalize2();

  std::vector<Plane> planes;
  if (run.only_plane)
    planes.push_back(*run.only_plane);
  else
    planes = {Plane::Axial, Plane::Coronal, Plane::Sagittal};
  std::vector<int> stages;
  if (run.stage == 0)
    stages = {1, 2};
  else
    stages.push_back(run.stage);

  for (Plane plane : planes) {
    for (int stage : stages) {
      const std::string name = cat(to_string(plane), "_stage", stage);
      NetworkSpec spec;
      spec.num_classes = stage == 1 ? Taxonomy::whole_thalamus().num_classes()
                                    : Taxonomy::nuclei().num_classes();
      spec.base_feature_maps = run.base_features[static_cast<size_t>(plane)];
      spec.depth = run.depth;
      spec.dropout_rate = run.dropout_rate;
      spec.kernel = run.kernel;
      spec.validate();

      UnetF model(spec, Rng::derive(run.training.seed,
                                    100 + static_cast<uint64_t>(plane) * 2 +
                                        static_cast<uint64_t>(stage)));
      if (!run.initialize_from.empty()) {
        const auto src_path = run.initialize_from / (name + ".tsnet");
        const Checkpoint source = Checkpoint::load(src_path);
        initialize_from(model, source, src_path.string());
      }

      auto& train_ds = stage == 1 ? train1[static_cast<size_t>(plane)]
                                  : train2[static_cast<size_t>(plane)];
      auto& val_ds = stage == 1 ? val1[static_cast<size_t>(plane)]
                                : val2[static_cast<size_t>(plane)];
      // pad validation slices up to the training grid so shapes agree
      if (val_ds.height < train_ds.height || val_ds.width < train_ds.width) {
        SliceDataset grown;
        grown.num_classes = val_ds.num_classes;
        grown.height = std::max(val_ds.height, train_ds.height);
        grown.width = std::max(val_ds.width, train_ds.width);
        for (const auto& s : val_ds.samples) {
          SliceSample ns;
          ns.image.assign(static_cast<size_t>(grown.height) * grown.width, 0.0f);
          ns.labels.assign(ns.image.size(), 0);
          for (int j = 0; j < val_ds.height; ++j) {
            std::copy(s.image.begin() + static_cast<long>(j) * val_ds.width,
                      s.image.begin() + static_cast<long>(j + 1) * val_ds.width,
                      ns.image.begin() + static_cast<long>(j) * grown.width);
            std::copy(s.labels.begin() + static_cast<long>(j) * val_ds.width,
                      s.labels.begin() + static_cast<long>(j + 1) * val_ds.width,
                      ns.labels.begin() + static_cast<long>(j) * grown.width);
          }
          grown.samples.push_back(std::move(ns));
        }
        val_ds = std::move(grown);
      }

      TrainingConfig cfg = run.training;
      if (cfg.loss == LossKind::WEIGHTED_BCE && cfg.class_weights.empty())
        cfg.class_weights = class_weights_from_labels(train_ds);
      TrainOutcome outcome = train_model(model, train_ds, val_ds, cfg);

      const auto best_path = run.out_dir / (name + ".tsnet");
      const auto final_path = run.out_dir / (name + "_final.tsnet");
      const auto log_path = run.out_dir / (name + "_log.tsv");
      outcome.best_checkpoint.save(best_path);
      outcome.final_checkpoint.save(final_path);
      outcome.log.save(log_path);

      TrainedNetSummary ns;
      ns.name = name;
      ns.best_epoch = outcome.best_epoch;
      ns.epochs = cfg.epochs;
      ns.best_val_dice = outcome.log.records.empty()
                             ? 0.0
                             : outcome.log.records[static_cast<size_t>(outcome.best_epoch - 1)]
                                   .val_dice_mean;
      ns.checkpoint = best_path.string();
      ns.log_path = log_path.string();
      summary.nets.push_back(ns);
    }
  }

  // assemble the bundle manifest when all six networks exist
  bool complete = true;
  for (int p = 0; p < 3 && complete; ++p)
    for (int s = 1; s <= 2 && complete; ++s)
      complete = std::filesystem::exists(
          run.out_dir / cat(to_string(static_cast<Plane>(p)), "_stage", s, ".tsnet"));
  if (complete) {
    nlohmann::json bj;
    bj["format_version"] = 1;
    bj["fusion_tie_break"] = "max_summed_probability";
    bj["fail_fast"] = true;
    nlohmann::json planes_json = nlohmann::json::array();
    for (int p = 0; p < 3; ++p)
      planes_json.push_back({{"plane", to_string(static_cast<Plane>(p))},
                             {"threshold", run.threshold},
                             {"box_margin", run.box_margin}});
    bj["pipelines"] = planes_json;
    std::ofstream out(run.out_dir / "bundle.json");
    require(out.good(), ErrorKind::Io, "cannot write bundle.json");
    out << bj.dump(2) << "\n";
  }
  summary.bundle_complete = complete;

  std::ofstream sj(run.out_dir / "train_summary.json");
  if (sj.good()) sj << summary.to_json() << "\n";
  return summary;
}

// ---------------------------------------------------------------------------
// segmentation orchestration
// ---------------------------------------------------------------------------

std::string SegmentOptions::to_json() const {
  nlohmann::json j;
  j["preprocess"] = nlohmann::json::parse(pre.to_json());
  j["bilateral"] = bilateral;
  return j.dump();
}

SegmentOptions SegmentOptions::from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  SegmentOptions o;
  if (j.contains("preprocess")) o.pre = PreprocessOptions::from_json(j["preprocess"].dump());
  o.bilateral = j.value("bilateral", true);
  return o;
}

SubjectSegmentation segment_subject(const MultiPlanarModel& model, const Volume& image,
                                    const CropTemplate* tmpl, const SegmentOptions& opts) {
  PreparedSubject prep = prepare_subject("subject", image, nullptr, tmpl, opts.pre);
  MultiPlanarResult mp = segment(model, prep.stage1_input, opts.bilateral);

  SubjectSegmentation out;
  out.crop_box = prep.crop_box;
  out.crop_fallback = prep.crop_fallback;
  out.canonical_voxels = prep.canonical.geo().voxels();
  out.overlap_voxels = mp.overlap_voxels;
  out.orientation_ok = mp.orientation_ok;
  for (int64_t v : mp.stage2_input_voxels)
    out.stage2_input_voxels_max = std::max(out.stage2_input_voxels_max, v);
  out.fused = uncrop(mp.fused, prep.crop_box, prep.canonical.geo());
  for (int p = 0; p < 3; ++p)
    if (mp.orientation_ok[static_cast<size_t>(p)])
      out.per_orientation[static_cast<size_t>(p)] =
          uncrop(mp.per_orientation[static_cast<size_t>(p)], prep.crop_box,
                 prep.canonical.geo());
  out.canonical = std::move(prep.canonical);
  return out;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

std::string EvaluateSummary::to_json() const {
  nlohmann::json j;
  j["failures"] = failures;
  j["reports"] = nlohmann::json::array();
  for (const auto& r : reports) j["reports"].push_back(nlohmann::json::parse(r.to_json()));
  return j.dump(2);
}

EvaluateSummary run_evaluate(const EvaluateRun& run) {
  const DatasetManifest manifest = load_manifest(run.manifest);
  const MultiPlanarModel model = MultiPlanarModel::load(run.bundle_dir);
  std::optional<CropTemplate> tmpl;
  if (run.options.pre.crop_enabled && !run.template_path.empty())
    tmpl = CropTemplate::load(run.template_path);
  std::filesystem::create_directories(run.out_dir);

  EvaluateSummary summary;
  for (const auto& entry : manifest.entries) {
    try {
      require(entry.label_path.has_value(), ErrorKind::Validation, "no reference labels");
      const Volume img = read_volume(entry.image_path);
      const LabelMap ref = read_labelmap(*entry.label_path, Taxonomy::nuclei());

      SubjectSegmentation seg = segment_subject(model, img, tmpl ? &*tmpl : nullptr, run.options);

      LabelMap ref_canon = reorient(ref, kCanonicalOrientation);
      if (!seg.fused.geo().matches(ref_canon.geo()))
        ref_canon = resample(ref_canon, seg.fused.geo().spacing);
      require_same_geometry(seg.fused.geo(), ref_canon.geo());

      write_nifti(seg.fused, run.out_dir / (entry.subject_id + "_seg.nii.gz"));
      for (int p = 0; p < 3; ++p)
        if (seg.orientation_ok[static_cast<size_t>(p)])
          write_nifti(seg.per_orientation[static_cast<size_t>(p)],
                      run.out_dir / cat(entry.subject_id, "_seg_",
                                        to_string(static_cast<Plane>(p)), ".nii.gz"));

      summary.reports.push_back(
          report(seg.fused, ref_canon, entry.subject_id, to_string(entry.cohort)));
    } catch (const Error& e) {
      summary.failures.push_back(cat(entry.subject_id, ": ", e.what()));
    }
  }
  summary.table_text = render_metrics_table(summary.reports);
  std::ofstream tj(run.out_dir / "evaluation.json");
  if (tj.good()) tj << summary.to_json() << "\n";
  std::ofstream tt(run.out_dir / "evaluation_table.txt");
  if (tt.good()) tt << summary.table_text;
  return summary;
}

std::string CrossvalSummary::to_json() const {
  nlohmann::json j;
  j["folds"] = nlohmann::json::array();
  for (const auto& f : fold_results) j["folds"].push_back(nlohmann::json::parse(f.to_json()));
  return j.dump(2);
}

CrossvalSummary run_crossval(const CrossvalRun& run) {
  require(run.folds >= 2, ErrorKind::InvalidArgument, "need at least 2 folds");
  const DatasetManifest manifest = load_manifest(run.train.manifest);
  require(manifest.size() >= static_cast<size_t>(run.folds), ErrorKind::InvalidArgument,
          "fewer subjects than folds");

  // stratified fold assignment: shuffle within cohort, deal round-robin
  std::vector<int> fold_of(manifest.size(), 0);
  {
    std::vector<Cohort> cohorts;
    std::vector<std::vector<size_t>> groups;
    for (size_t i = 0; i < manifest.entries.size(); ++i) {
      const Cohort c = manifest.entries[i].cohort;
      auto it = std::find(cohorts.begin(), cohorts.end(), c);
      if (it == cohorts.end()) {
        cohorts.push_back(c);
        groups.emplace_back();
        it = cohorts.end() - 1;
      }
      groups[static_cast<size_t>(it - cohorts.begin())].push_back(i);
    }
    Rng rng(Rng::derive(run.seed, 0xF01D));
    int next = 0;
    for (auto& g : groups) {
      for (size_t i = g.size(); i > 1; --i) std::swap(g[i - 1], g[rng.below(i)]);
      for (size_t i = 0; i < g.size(); ++i) fold_of[g[i]] = (next + static_cast<int>(i)) % run.folds;
      next = (next + static_cast<int>(g.size())) % run.folds;
    }
  }

  CrossvalSummary summary;
  std::vector<MetricsReport> pooled;
  for (int f = 0; f < run.folds; ++f) {
    const auto fold_dir = run.train.out_dir / cat("fold_", f);
    DatasetManifest train_m, test_m;
    for (size_t i = 0; i < manifest.entries.size(); ++i)
      (fold_of[i] == f ? test_m : train_m).entries.push_back(manifest.entries[i]);

    TrainRun tr = run.train;
    tr.out_dir = fold_dir;
    const auto train_manifest_path = fold_dir / "train_manifest.tsv";
    std::filesystem::create_directories(fold_dir);
    save_manifest(train_m, train_manifest_path);
    tr.manifest = train_manifest_path;
    run_training(tr);

    const auto test_manifest_path = fold_dir / "test_manifest.tsv";
    save_manifest(test_m, test_manifest_path);
    EvaluateRun ev;
    ev.manifest = test_manifest_path;
    ev.bundle_dir = fold_dir;
    ev.template_path = run.train.template_path;
    ev.out_dir = fold_dir / "eval";
    ev.options.pre = run.train.pre;
    EvaluateSummary es = run_evaluate(ev);
    for (const auto& r : es.reports) pooled.push_back(r);
    summary.fold_results.push_back(std::move(es));
  }
  summary.table_text = render_metrics_table(pooled);
  return summary;
}

// ---------------------------------------------------------------------------
// noise sweep
// ---------------------------------------------------------------------------

SweepReport run_noise_sweep(const SweepRun& run) {
  const MultiPlanarModel model = MultiPlanarModel::load(run.bundle_dir);
  std::optional<CropTemplate> tmpl;
  if (run.options.pre.crop_enabled && !run.template_path.empty())
    tmpl = CropTemplate::load(run.template_path);

  const Volume image = read_volume(run.image);
  const LabelMap ref = read_labelmap(run.reference, Taxonomy::nuclei());
  require_same_geometry(image.geo(), ref.geo());

  Segmenter segmenter = [&](const Volume& corrupted) {
    SubjectSegmentation seg =
        segment_subject(model, corrupted, tmpl ? &*tmpl : nullptr, run.options);
    require_same_geometry(seg.fused.geo(), ref.geo());
    return seg.fused;
  };

  const auto targets = sweep_targets(run.snr_from, run.snr_to, run.points);
  SweepReport rep = snr_sweep(segmenter, image, ref, targets, run.seed,
                              default_background_roi(image.geo().shape));

  if (!run.out_dir.empty()) {
    std::filesystem::create_directories(run.out_dir);
    std::ofstream tsv(run.out_dir / "sweep.tsv");
    if (tsv.good()) tsv << rep.to_tsv();
    std::ofstream js(run.out_dir / "sweep.json");
    if (js.good()) js << rep.to_json() << "\n";
    run_plot("snr-dice", run.out_dir / "sweep.json", run.out_dir / "sweep.svg");
  }
  return rep;
}

// ---------------------------------------------------------------------------
// plots
// ---------------------------------------------------------------------------

void run_plot(const std::string& kind, const std::filesystem::path& data,
              const std::filesystem::path& out_svg) {
  if (kind == "snr-dice") {
    std::ifstream in(data);
    require(in.good(), ErrorKind::Io, cat(data.string(), ": cannot open"));
    nlohmann::json j = nlohmann::json::parse(in);
    std::vector<double> xs;
    PlotSeries mean{"mean", {}}, whole{"thalamus", {}};
    std::map<std::string, PlotSeries> per_class;
    for (const auto& p : j.at("points")) {
      if (p.value("skipped", false)) continue;
      xs.push_back(p.at("target_snr").get<double>());
      mean.values.push_back(p.at("mean_dice").get<double>());
      whole.values.push_back(p.at("whole_thalamus_dice").get<double>());
      if (p.contains("dice_per_class"))
        for (const auto& [name, d] : p["dice_per_class"].items()) {
          auto& s = per_class[name];
          s.name = name;
          s.values.push_back(d.get<double>());
        }
    }
    std::vector<PlotSeries> series{whole, mean};
    for (auto& [name, s] : per_class)
      if (s.values.size() == xs.size()) series.push_back(s);
    svg_line_chart(out_svg, "Segmentation accuracy vs SNR", xs, series, "SNR", "Dice");
    return;
  }
  if (kind == "dice-bars") {
    std::ifstream in(data);
    require(in.good(), ErrorKind::Io, cat(data.string(), ": cannot open"));
    nlohmann::json j = nlohmann::json::parse(in);
    const auto& reports = j.at("reports");
    require(!reports.empty(), ErrorKind::Validation, "no reports to plot");
    std::vector<std::string> cats;
    cats.push_back("Thalamus");
    for (const auto& c : reports.front().at("per_class")) cats.push_back(c.at("name"));
    PlotSeries dice{"Dice", std::vector<double>(cats.size(), 0.0)};
    PlotSeries vsi{"VSI", std::vector<double>(cats.size(), 0.0)};
    for (const auto& r : reports) {
      dice.values[0] += r.at("whole").at("dice").get<double>();
      vsi.values[0] += r.at("whole").at("vsi").get<double>();
      size_t ci = 1;
      for (const auto& c : r.at("per_class")) {
        dice.values[ci] += c.at("dice").get<double>();
        vsi.values[ci] += c.at("vsi").get<double>();
        ++ci;
      }
    }
    for (auto& v : dice.values) v /= static_cast<double>(reports.size());
    for (auto& v : vsi.values) v /= static_cast<double>(reports.size());
    svg_bar_chart(out_svg, "Mean per-structure agreement", cats, {dice, vsi}, "score", 1.0);
    return;
  }
  if (kind == "training-curve") {
    std::ifstream in(data);
    require(in.good(), ErrorKind::Io, cat(data.string(), ": cannot open"));
    std::string line;
    std::getline(in, line);  // header
    std::vector<double> xs;
    PlotSeries loss{"train loss", {}}, dice{"val dice", {}};
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      double epoch, l, d;
      ls >> epoch >> l >> d;
      xs.push_back(epoch);
      loss.values.push_back(l);
      dice.values.push_back(d);
    }
    require(xs.size() >= 2, ErrorKind::Validation, "training log too short to plot");
    svg_line_chart(out_svg, "Training progress", xs, {loss, dice}, "epoch", "value");
    return;
  }
  fail(ErrorKind::InvalidArgument,
       cat("unknown plot kind '", kind, "' (want snr-dice | dice-bars | training-curve)"));
}

}  // namespace thalseg
