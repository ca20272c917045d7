/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#include "thalseg.h"

#include <cstring>
#include <string>
#include <variant>

#include <json.hpp>

#include "thalseg/pipeline.hpp"
#include "thalseg/stats.hpp"

using namespace thalseg;

struct ts_volume {
  std::variant<Volume, LabelMap> value;
};

struct ts_model {
  MultiPlanarModel model;
};

namespace {

thread_local std::string g_last_error;

ts_status status_of(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::InvalidArgument: return TS_INVALID_ARGUMENT;
    case ErrorKind::Io: return TS_IO_ERROR;
    case ErrorKind::Format: return TS_FORMAT_ERROR;
    case ErrorKind::Validation: return TS_VALIDATION_ERROR;
    case ErrorKind::Numeric: return TS_NUMERIC_ERROR;
  }
  return TS_ERROR;
}

template <class Fn>
ts_status guarded(Fn&& fn) {
  try {
    fn();
    return TS_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e);
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return TS_ERROR;
  } catch (...) {
    g_last_error = "unknown failure";
    return TS_ERROR;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

const Geometry& geometry_of(const ts_volume* v) {
  if (std::holds_alternative<Volume>(v->value)) return std::get<Volume>(v->value).geo();
  return std::get<LabelMap>(v->value).geo();
}

const Volume& as_volume(const ts_volume* v) {
  require(std::holds_alternative<Volume>(v->value), ErrorKind::InvalidArgument,
          "handle holds a label map, not an intensity volume");
  return std::get<Volume>(v->value);
}

const LabelMap& as_labels(const ts_volume* v) {
  require(std::holds_alternative<LabelMap>(v->value), ErrorKind::InvalidArgument,
          "handle holds an intensity volume, not a label map");
  return std::get<LabelMap>(v->value);
}

void require_handle(const void* p, const char* what) {
  require(p != nullptr, ErrorKind::InvalidArgument, cat("null ", what, " handle"));
}

}  // namespace

extern "C" {

const char* ts_version(void) { return "0.1.0"; }

const char* ts_last_error(void) { return g_last_error.c_str(); }

void ts_string_free(char* s) { std::free(s); }

void ts_set_jobs(int jobs) { set_jobs(jobs); }

ts_status ts_volume_read(const char* path, ts_volume** out) {
  return guarded([&] {
    require_handle(out, "output");
    require_handle(path, "path");
    *out = new ts_volume{read_volume(path)};
  });
}

ts_status ts_labelmap_read(const char* path, ts_volume** out) {
  return guarded([&] {
    require_handle(out, "output");
    require_handle(path, "path");
    *out = new ts_volume{read_labelmap(path, Taxonomy::nuclei())};
  });
}

ts_status ts_volume_write(const ts_volume* v, const char* path) {
  return guarded([&] {
    require_handle(v, "volume");
    require_handle(path, "path");
    if (std::holds_alternative<Volume>(v->value))
      write_nifti(std::get<Volume>(v->value), path);
    else
      write_nifti(std::get<LabelMap>(v->value), path);
  });
}

void ts_volume_free(ts_volume* v) { delete v; }

int ts_volume_is_labelmap(const ts_volume* v) {
  return v && std::holds_alternative<LabelMap>(v->value) ? 1 : 0;
}

ts_status ts_volume_dims(const ts_volume* v, int64_t dims[3]) {
  return guarded([&] {
    require_handle(v, "volume");
    const Geometry& g = geometry_of(v);
    for (int k = 0; k < 3; ++k) dims[k] = g.shape[k];
  });
}

ts_status ts_volume_spacing(const ts_volume* v, double spacing[3]) {
  return guarded([&] {
    require_handle(v, "volume");
    const Geometry& g = geometry_of(v);
    for (int k = 0; k < 3; ++k) spacing[k] = g.spacing[k];
  });
}

ts_status ts_volume_orientation(const ts_volume* v, char code[4]) {
  return guarded([&] {
    require_handle(v, "volume");
    const std::string s = geometry_of(v).orientation.str();
    std::memcpy(code, s.c_str(), 4);
  });
}

ts_status ts_volume_reorient(const ts_volume* v, const char* code, ts_volume** out) {
  return guarded([&] {
    require_handle(v, "volume");
    require_handle(out, "output");
    const Orientation o = Orientation::parse(code ? code : "");
    if (std::holds_alternative<Volume>(v->value))
      *out = new ts_volume{reorient(std::get<Volume>(v->value), o)};
    else
      *out = new ts_volume{reorient(std::get<LabelMap>(v->value), o)};
  });
}

ts_status ts_volume_flip_lr(const ts_volume* v, ts_volume** out) {
  return guarded([&] {
    require_handle(v, "volume");
    require_handle(out, "output");
    if (std::holds_alternative<Volume>(v->value))
      *out = new ts_volume{flip_lr(std::get<Volume>(v->value))};
    else
      *out = new ts_volume{flip_lr(std::get<LabelMap>(v->value))};
  });
}

ts_status ts_volume_resample(const ts_volume* v, const double spacing[3], ts_volume** out) {
  return guarded([&] {
    require_handle(v, "volume");
    require_handle(out, "output");
    const Spacing3 sp{spacing[0], spacing[1], spacing[2]};
    if (std::holds_alternative<Volume>(v->value))
      *out = new ts_volume{resample(std::get<Volume>(v->value), sp, Interp::Trilinear)};
    else
      *out = new ts_volume{resample(std::get<LabelMap>(v->value), sp)};
  });
}

ts_status ts_volume_normalize(const ts_volume* v, ts_volume** out) {
  return guarded([&] {
    require_handle(v, "volume");
    require_handle(out, "output");
    *out = new ts_volume{normalize(as_volume(v))};
  });
}

ts_status ts_add_rician(const ts_volume* v, double sigma, uint64_t seed, ts_volume** out) {
  return guarded([&] {
    require_handle(v, "volume");
    require_handle(out, "output");
    *out = new ts_volume{add_rician(as_volume(v), NoiseSpec{sigma, seed})};
  });
}

ts_status ts_measure_snr(const ts_volume* v, const ts_volume* thalamus_labels,
                         int64_t background_cube_side, double* snr_out) {
  return guarded([&] {
    require_handle(v, "volume");
    require_handle(thalamus_labels, "labels");
    require_handle(snr_out, "output");
    const auto roi = default_background_roi(geometry_of(v).shape, background_cube_side);
    *snr_out = measure_snr(as_volume(v), as_labels(thalamus_labels), roi).snr;
  });
}

ts_status ts_dice(const ts_volume* a, const ts_volume* b, int class_id, double* out) {
  return guarded([&] {
    require_handle(a, "labels");
    require_handle(b, "labels");
    require_handle(out, "output");
    *out = dice(as_labels(a), as_labels(b), class_id);
  });
}

ts_status ts_vsi(const ts_volume* a, const ts_volume* b, int class_id, double* out) {
  return guarded([&] {
    require_handle(a, "labels");
    require_handle(b, "labels");
    require_handle(out, "output");
    *out = vsi(as_labels(a), as_labels(b), class_id);
  });
}

ts_status ts_evaluate_pair(const ts_volume* pred, const ts_volume* ref, char** report_json) {
  return guarded([&] {
    require_handle(pred, "labels");
    require_handle(ref, "labels");
    require_handle(report_json, "output");
    *report_json = dup_string(report(as_labels(pred), as_labels(ref)).to_json());
  });
}

ts_status ts_phantom_cohort(const char* cohort_json, const char* out_dir, char** summary_json) {
  return guarded([&] {
    require_handle(cohort_json, "config");
    require_handle(out_dir, "out_dir");
    const nlohmann::json j = nlohmann::json::parse(cohort_json);
    CohortSpec spec;
    if (j.contains("phantom")) spec.base = PhantomSpec::from_json(j["phantom"].dump());
    spec.n = j.value("n", 10);
    spec.cohort = cohort_from_string(j.value("cohort", "synthetic"));
    spec.seed = j.value("seed", uint64_t{0});
    if (j.contains("atrophy"))
      spec.atrophy_override = j["atrophy"].get<std::map<std::string, double>>();
    const WrittenCohort wc = write_cohort(spec, out_dir);
    write_resolved_config(out_dir, j.dump(2));

    nlohmann::json s;
    s["wmn_manifest"] = wc.wmn_manifest.string();
    s["csfn_manifest"] = wc.csfn_manifest.string();
    s["cohort_table"] = wc.cohort_table.string();
    s["template"] = wc.template_path.string();
    s["subjects"] = wc.subject_ids;
    if (summary_json) *summary_json = dup_string(s.dump(2));
  });
}

ts_status ts_train(const char* train_json, char** summary_json) {
  return guarded([&] {
    require_handle(train_json, "config");
    const TrainRun run = TrainRun::from_json(train_json);
    const TrainRunSummary summary = run_training(run);
    if (summary_json) *summary_json = dup_string(summary.to_json());
  });
}

ts_status ts_crossval(const char* train_json, int folds, uint64_t seed, char** summary_json) {
  return guarded([&] {
    require_handle(train_json, "config");
    CrossvalRun run;
    run.train = TrainRun::from_json(train_json);
    run.folds = folds;
    run.seed = seed;
    const CrossvalSummary summary = run_crossval(run);
    if (summary_json) *summary_json = dup_string(summary.to_json());
  });
}

ts_status ts_model_load(const char* bundle_dir, ts_model** out) {
  return guarded([&] {
    require_handle(bundle_dir, "bundle_dir");
    require_handle(out, "output");
    *out = new ts_model{MultiPlanarModel::load(bundle_dir)};
  });
}

void ts_model_free(ts_model* m) { delete m; }

ts_status ts_segment(const ts_model* m, const char* image_path, const char* template_path,
                     const char* options_json, const char* out_prefix, char** summary_json) {
  return guarded([&] {
    require_handle(m, "model");
    require_handle(image_path, "image path");
    require_handle(out_prefix, "output prefix");
    SegmentOptions opts;
    if (options_json && options_json[0]) opts = SegmentOptions::from_json(options_json);
    std::optional<CropTemplate> tmpl;
    if (template_path && template_path[0]) tmpl = CropTemplate::load(template_path);
    if (opts.pre.crop_enabled && !tmpl) opts.pre.crop_enabled = false;

    const Volume img = read_volume(image_path);
    const SubjectSegmentation seg =
        segment_subject(m->model, img, tmpl ? &*tmpl : nullptr, opts);

    const std::string prefix = out_prefix;
    write_nifti(seg.fused, prefix + "_seg.nii.gz");
    for (int p = 0; p < 3; ++p)
      if (seg.orientation_ok[static_cast<size_t>(p)])
        write_nifti(seg.per_orientation[static_cast<size_t>(p)],
                    prefix + "_seg_" + to_string(static_cast<Plane>(p)) + ".nii.gz");

    nlohmann::json s;
    s["fused"] = prefix + "_seg.nii.gz";
    s["crop_fallback"] = seg.crop_fallback;
    s["canonical_voxels"] = seg.canonical_voxels;
    s["stage2_input_voxels_max"] = seg.stage2_input_voxels_max;
    s["overlap_voxels"] = seg.overlap_voxels;
    if (summary_json) *summary_json = dup_string(s.dump(2));
  });
}

ts_status ts_evaluate(const char* evaluate_json, char** summary_json) {
  return guarded([&] {
    require_handle(evaluate_json, "config");
    const nlohmann::json j = nlohmann::json::parse(evaluate_json);
    EvaluateRun run;
    run.manifest = j.at("manifest").get<std::string>();
    run.bundle_dir = j.at("bundle").get<std::string>();
    run.template_path = j.value("template", std::string());
    run.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("options")) run.options = SegmentOptions::from_json(j["options"].dump());
    if (run.template_path.empty()) run.options.pre.crop_enabled = false;
    const EvaluateSummary summary = run_evaluate(run);
    if (summary_json) *summary_json = dup_string(summary.to_json());
  });
}

ts_status ts_noise_sweep(const char* sweep_json, char** report_json) {
  return guarded([&] {
    require_handle(sweep_json, "config");
    const nlohmann::json j = nlohmann::json::parse(sweep_json);
    SweepRun run;
    run.bundle_dir = j.at("bundle").get<std::string>();
    run.image = j.at("image").get<std::string>();
    run.reference = j.at("reference").get<std::string>();
    run.template_path = j.value("template", std::string());
    run.out_dir = j.value("out_dir", std::string());
    run.snr_from = j.value("snr_from", 23.5);
    run.snr_to = j.value("snr_to", 8.0);
    run.points = j.value("points", 10);
    run.seed = j.value("seed", uint64_t{0});
    if (j.contains("options")) run.options = SegmentOptions::from_json(j["options"].dump());
    if (run.template_path.empty()) run.options.pre.crop_enabled = false;
    const SweepReport rep = run_noise_sweep(run);
    if (report_json) *report_json = dup_string(rep.to_json());
  });
}

ts_status ts_stats_ancova(const char* table_path, double alpha, int comparisons,
                          char** result_json) {
  return guarded([&] {
    require_handle(table_path, "table path");
    const CohortTable table = CohortTable::load(table_path);
    const AncovaRunResult res = ancova_all(table, alpha, comparisons);
    if (result_json) *result_json = dup_string(res.to_json());
  });
}

ts_status ts_paired_test(const double* metric_a, const double* metric_b, size_t n,
                         double* p_out) {
  return guarded([&] {
    require_handle(metric_a, "metric_a");
    require_handle(metric_b, "metric_b");
    require_handle(p_out, "output");
    const std::vector<double> a(metric_a, metric_a + n);
    const std::vector<double> b(metric_b, metric_b + n);
    *p_out = paired_metric_test(a, b).p;
  });
}

ts_status ts_plot(const char* kind, const char* data_path, const char* out_svg) {
  return guarded([&] {
    require_handle(kind, "kind");
    require_handle(data_path, "data path");
    require_handle(out_svg, "output path");
    run_plot(kind, data_path, out_svg);
  });
}

}  // extern "C"
