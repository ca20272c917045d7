/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "thalseg/cascade.hpp"
#include "thalseg/metrics.hpp"
#include "thalseg/multiplanar.hpp"
#include "thalseg/noise.hpp"
#include "thalseg/phantom.hpp"
#include "thalseg/preprocess.hpp"
#include "thalseg/training.hpp"

namespace thalseg {

// ---------------------------------------------------------------------------
// Preprocessing chain shared by training and inference: bias correction,
// normalization, reformat to the canonical axial orientation and spacing,
// then template-driven cropping around both thalami.
// ---------------------------------------------------------------------------
struct PreprocessOptions {
  std::string bias_plugin = "poly3";      // poly3 | identity
  std::string alignment_plugin = "com";   // com | identity | file:<path>
  bool crop_enabled = true;
  int64_t crop_margin = 5;
  Spacing3 target_spacing{{0.7, 0.5, 0.7}};

  BiasCorrector bias_corrector() const;
  AlignmentPlugin alignment() const;
  std::string to_json() const;
  static PreprocessOptions from_json(const std::string& text);
};

struct PreparedSubject {
  std::string id;
  Volume canonical;                         // normalized full volume
  std::optional<LabelMap> labels;           // full labels in canonical space
  std::optional<LabelMap> labels_left;      // right hemisphere masked out
  Volume stage1_input;                      // crop result (or full volume)
  std::optional<LabelMap> stage1_labels;    // cropped left-masked labels
  BoundingBox crop_box;
  bool crop_fallback = false;
};

/// Zeroes labels on the right hemisphere (world x >= 0).
LabelMap mask_left_hemisphere(const LabelMap& labels);

PreparedSubject prepare_subject(const std::string& id, const Volume& image,
                                const LabelMap* labels, const CropTemplate* tmpl,
                                const PreprocessOptions& opts);

// ---------------------------------------------------------------------------
// Training orchestration.
// ---------------------------------------------------------------------------
struct TrainRun {
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
  std::filesystem::path template_path;         // required when cropping is on
  std::filesystem::path initialize_from;       // bundle dir for fine-tuning
  TrainingConfig training;
  PreprocessOptions pre;
  AugmentationPolicy augmentation;
  bool augment_enabled = true;
  int stage = 0;                               // 0 = both, else 1 or 2
  std::optional<Plane> only_plane;             // unset = all three
  std::array<int, 3> base_features{{20, 30, 40}};  // axial, coronal, sagittal
  int depth = 4;
  double dropout_rate = 0.3;
  int kernel = 3;
  double threshold = 0.7;
  int64_t box_margin = 5;
  int64_t stage2_label_margin = 5;

  std::string to_json() const;
  static TrainRun from_json(const std::string& text);
};

struct TrainedNetSummary {
  std::string name;  // e.g. "axial_stage1"
  double best_val_dice = 0.0;
  int best_epoch = 0;
  int epochs = 0;
  std::string checkpoint;
  std::string log_path;
};

struct TrainRunSummary {
  std::filesystem::path bundle_dir;
  bool bundle_complete = false;
  std::vector<TrainedNetSummary> nets;
  std::vector<std::string> warnings;
  std::string to_json() const;
};

TrainRunSummary run_training(const TrainRun& run);

// ---------------------------------------------------------------------------
// Inference orchestration.
// ---------------------------------------------------------------------------
struct SegmentOptions {
  PreprocessOptions pre;
  bool bilateral = true;  // false: left hemisphere only
  std::string to_json() const;
  static SegmentOptions from_json(const std::string& text);
};

struct SubjectSegmentation {
  Volume canonical;
  LabelMap fused;                              // canonical space, full extent
  std::array<LabelMap, 3> per_orientation;     // canonical space, full extent
  std::array<bool, 3> orientation_ok{{true, true, true}};
  BoundingBox crop_box;
  bool crop_fallback = false;
  int64_t canonical_voxels = 0;
  int64_t stage2_input_voxels_max = 0;         // largest single-pass stage-2 crop
  int64_t overlap_voxels = 0;
};

SubjectSegmentation segment_subject(const MultiPlanarModel& model, const Volume& image,
                                    const CropTemplate* tmpl, const SegmentOptions& opts);

// ---------------------------------------------------------------------------
// Evaluation / cross-validation.
// ---------------------------------------------------------------------------
struct EvaluateRun {
  std::filesystem::path manifest;   // entries must carry labels
  std::filesystem::path bundle_dir;
  std::filesystem::path template_path;
  std::filesystem::path out_dir;
  SegmentOptions options;
};

struct EvaluateSummary {
  std::vector<MetricsReport> reports;
  std::vector<std::string> failures;  // subjects that could not be processed
  std::string table_text;
  std::string to_json() const;
};

EvaluateSummary run_evaluate(const EvaluateRun& run);

struct CrossvalRun {
  TrainRun train;      // manifest/out_dir reused per fold
  int folds = 4;
  uint64_t seed = 0;
};

struct CrossvalSummary {
  std::vector<EvaluateSummary> fold_results;
  std::string table_text;  // pooled across folds
  std::string to_json() const;
};

CrossvalSummary run_crossval(const CrossvalRun& run);

// ---------------------------------------------------------------------------
// Noise sweep orchestration (raw magnitude image in canonical geometry).
// ---------------------------------------------------------------------------
struct SweepRun {
  std::filesystem::path bundle_dir;
  std::filesystem::path image;
  std::filesystem::path reference;  // label map aligned with the image
  std::filesystem::path template_path;
  std::filesystem::path out_dir;
  double snr_from = 23.5;
  double snr_to = 8.0;
  int points = 10;
  uint64_t seed = 0;
  SegmentOptions options;
};

SweepReport run_noise_sweep(const SweepRun& run);

// ---------------------------------------------------------------------------
// Plots from result files.
// ---------------------------------------------------------------------------
void run_plot(const std::string& kind, const std::filesystem::path& data,
              const std::filesystem::path& out_svg);

/// Writes text to <out_dir>/resolved_config.json for exact re-runs.
void write_resolved_config(const std::filesystem::path& out_dir, const std::string& json_text);

}  // namespace thalseg
