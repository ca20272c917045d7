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

#include "thalseg/network.hpp"
#include "thalseg/volume_io.hpp"

namespace thalseg {

struct TrainingConfig {
  int epochs = 300;
  int batch_size = 100;
  double lr_initial = 0.001;
  double lr_factor = 0.5;
  int plateau_patience = 15;
  double plateau_min_delta = 1e-4;
  double val_fraction = 0.20;
  uint64_t seed = 0;
  LossKind loss = LossKind::DICE;
  double smooth_eps = 1.0;
  std::vector<double> class_weights;  // WBCE only; empty = uniform
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  std::string to_json() const;
  static TrainingConfig from_json(const std::string& text);
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::vector<double> val_dice;  // per non-background class
  double val_dice_mean = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct TrainingLog {
  std::vector<EpochRecord> records;
  std::string to_tsv() const;
  void save(const std::filesystem::path& path) const;
};

/// Checks the learning-rate invariants of a log: the sequence is
/// non-increasing, every drop is exactly x factor and follows >= patience
/// epochs without a validation-Dice improvement > min_delta. Throws on
/// violation.
void check_schedule_invariants(const TrainingLog& log, const TrainingConfig& cfg);

/// Reduce-on-plateau: halves the rate after `patience` consecutive epochs
/// without an improvement of more than min_delta over the best metric seen.
struct PlateauScheduler {
  double lr = 0.001;
  double factor = 0.5;
  int patience = 15;
  double min_delta = 1e-4;
  double best = -1.0;
  int stagnant = 0;

  /// Feed one epoch's validation metric; returns true if the rate dropped.
  bool observe(double metric);
  SchedulerState state() const { return SchedulerState{lr, best, stagnant}; }
  void restore(const SchedulerState& s) {
    lr = s.lr;
    best = s.best_metric;
    stagnant = s.stagnant;
  }
};

struct AdamOptimizer {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t t = 0;
  std::vector<float> m, v;

  void init(size_t count);
  void step(std::vector<Param<float>*>& params, double lr);
  OptimizerState state() const { return OptimizerState{t, m, v}; }
  void restore(const OptimizerState& s) {
    t = s.t;
    m = s.m;
    v = s.v;
  }
};

// ---------------------------------------------------------------------------
// Subject-level split (stratified by cohort, deterministic in the seed).
// ---------------------------------------------------------------------------
struct SplitResult {
  DatasetManifest train;
  DatasetManifest validation;
  std::vector<std::string> warnings;
};

SplitResult split(const DatasetManifest& manifest, double val_fraction, uint64_t seed);

// ---------------------------------------------------------------------------
// Slice datasets: the 2D training units.
// ---------------------------------------------------------------------------
struct SliceSample {
  std::vector<float> image;    // h*w
  std::vector<int32_t> labels; // h*w
};

struct SliceDataset {
  int height = 0, width = 0;
  int num_classes = 2;
  std::vector<SliceSample> samples;

  uint64_t content_hash() const;
  bool empty() const { return samples.empty(); }
};

/// Per-class weights from label frequencies: foreground/background voxel
/// ratio per class (the literal definition); invert = background/foreground.
std::vector<double> class_weights_from_labels(const SliceDataset& ds, bool invert = false);

struct TrainOutcome {
  Checkpoint final_checkpoint;
  Checkpoint best_checkpoint;
  int best_epoch = 0;
  TrainingLog log;
};

/// Runs the optimization loop: Adam over shuffled slice batches, plateau LR
/// scheduling on the mean validation Dice, best-checkpoint retention.
/// Reproducible for a fixed seed; an optional resume checkpoint continues an
/// interrupted run bit-identically (RNG streams are keyed by epoch).
TrainOutcome train_model(UnetF& model, const SliceDataset& train_set,
                         const SliceDataset& val_set, const TrainingConfig& cfg,
                         const Checkpoint* resume_from = nullptr);

/// Global per-class hard Dice (threshold 0.5 one-vs-rest) over a dataset,
/// classes 1..C-1; both-empty counts as 1.
std::vector<double> evaluate_dice(const UnetF& model, const SliceDataset& ds, int batch_size);

}  // namespace thalseg
