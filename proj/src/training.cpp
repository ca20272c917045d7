/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#include "thalseg/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace thalseg {

void TrainingConfig::validate() const {
  require(epochs >= 1, ErrorKind::Validation, "epochs must be >= 1");
  require(batch_size >= 1, ErrorKind::Validation, "batch_size must be >= 1");
  require(lr_initial > 0.0, ErrorKind::Validation, "lr_initial must be > 0");
  require(lr_factor > 0.0 && lr_factor < 1.0, ErrorKind::Validation,
          "lr_factor must be in (0, 1)");
  require(plateau_patience >= 1, ErrorKind::Validation, "plateau_patience must be >= 1");
  require(plateau_min_delta >= 0.0, ErrorKind::Validation, "plateau_min_delta must be >= 0");
  require(val_fraction > 0.0 && val_fraction < 1.0, ErrorKind::Validation,
          "val_fraction must be in (0, 1)");
  require(smooth_eps > 0.0, ErrorKind::Validation, "smooth_eps must be > 0");
}

std::string TrainingConfig::to_json() const {
  nlohmann::json j;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr_initial"] = lr_initial;
  j["lr_factor"] = lr_factor;
  j["plateau_patience"] = plateau_patience;
  j["plateau_min_delta"] = plateau_min_delta;
  j["val_fraction"] = val_fraction;
  j["seed"] = seed;
  j["loss"] = loss == LossKind::DICE ? "dice" : "wbce";
  j["smooth_eps"] = smooth_eps;
  j["class_weights"] = class_weights;
  j["adam_beta1"] = adam_beta1;
  j["adam_beta2"] = adam_beta2;
  j["adam_eps"] = adam_eps;
  return j.dump(2);
}

TrainingConfig TrainingConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  TrainingConfig c;
  c.epochs = j.value("epochs", 300);
  c.batch_size = j.value("batch_size", 100);
  c.lr_initial = j.value("lr_initial", 0.001);
  c.lr_factor = j.value("lr_factor", 0.5);
  c.plateau_patience = j.value("plateau_patience", 15);
  c.plateau_min_delta = j.value("plateau_min_delta", 1e-4);
  c.val_fraction = j.value("val_fraction", 0.20);
  c.seed = j.value("seed", uint64_t{0});
  const std::string loss = j.value("loss", "dice");
  require(loss == "dice" || loss == "wbce", ErrorKind::Validation,
          cat("unknown loss '", loss, "'"));
  c.loss = loss == "dice" ? LossKind::DICE : LossKind::WEIGHTED_BCE;
  c.smooth_eps = j.value("smooth_eps", 1.0);
  c.class_weights = j.value("class_weights", std::vector<double>{});
  c.adam_beta1 = j.value("adam_beta1", 0.9);
  c.adam_beta2 = j.value("adam_beta2", 0.999);
  c.adam_eps = j.value("adam_eps", 1e-8);
  c.validate();
  return c;
}

std::string TrainingLog::to_tsv() const {
  std::ostringstream os;
  os << "epoch\ttrain_loss\tval_dice_mean\tlr\twall_ms\tval_dice_per_class\n";
  for (const auto& r : records) {
    os << r.epoch << '\t' << r.train_loss << '\t' << r.val_dice_mean << '\t' << r.lr << '\t'
       << r.wall_ms << '\t';
    for (size_t i = 0; i < r.val_dice.size(); ++i) {
      if (i) os << ',';
      os << r.val_dice[i];
    }
    os << '\n';
  }
  return os.str();
}

void TrainingLog::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  require(out.good(), ErrorKind::Io, cat(path.string(), ": cannot open for writing"));
  out << to_tsv();
}

bool PlateauScheduler::observe(double metric) {
  if (metric > best + min_delta) {
    best = metric;
    stagnant = 0;
    return false;
  }
  ++stagnant;
  if (stagnant >= patience) {
    lr *= factor;
    stagnant = 0;
    return true;
  }
  return false;
}

void check_schedule_invariants(const TrainingLog& log, const TrainingConfig& cfg) {
  // Replays the scheduler over the recorded metrics; the recorded rates must
  // match, which implies every drop is exactly x factor after >= patience
  // stagnant epochs.
  PlateauScheduler sched{cfg.lr_initial, cfg.lr_factor, cfg.plateau_patience,
                         cfg.plateau_min_delta};
  double prev_lr = cfg.lr_initial;
  for (const auto& r : log.records) {
    require(r.lr <= prev_lr + 1e-15, ErrorKind::Validation,
            cat("learning rate increased at epoch ", r.epoch));
    require(std::abs(r.lr - sched.lr) < 1e-15 * std::max(1.0, sched.lr) + 1e-18,
            ErrorKind::Validation,
            cat("learning rate at epoch ", r.epoch, " (", r.lr,
                ") does not follow the plateau schedule (expected ", sched.lr, ")"));
    prev_lr = r.lr;
    sched.observe(r.val_dice_mean);
  }
}

void AdamOptimizer::init(size_t count) {
  t = 0;
  m.assign(count, 0.0f);
  v.assign(count, 0.0f);
}

void AdamOptimizer::step(std::vector<Param<float>*>& params, double lr) {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  size_t off = 0;
  for (Param<float>* p : params) {
    if (!p->trainable) continue;
    for (size_t i = 0; i < p->value.size(); ++i, ++off) {
      const double g = static_cast<double>(p->grad[i]);
      const double mi = beta1 * static_cast<double>(m[off]) + (1.0 - beta1) * g;
      const double vi = beta2 * static_cast<double>(v[off]) + (1.0 - beta2) * g * g;
      m[off] = static_cast<float>(mi);
      v[off] = static_cast<float>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      p->value[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
  require(off == m.size(), ErrorKind::Numeric, "optimizer state size drifted");
}

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------

SplitResult split(const DatasetManifest& manifest, double val_fraction, uint64_t seed) {
  require(manifest.size() >= 2, ErrorKind::InvalidArgument,
          "need at least 2 subjects for a split");
  require(val_fraction > 0.0 && val_fraction < 1.0, ErrorKind::InvalidArgument,
          "val_fraction must be in (0, 1)");

  SplitResult res;
  // group subjects per cohort, preserving manifest order
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

  const size_t total_val = static_cast<size_t>(
      std::floor(val_fraction * static_cast<double>(manifest.size()) + 0.5));
  // largest-remainder apportionment across cohorts
  std::vector<size_t> quota(groups.size(), 0);
  std::vector<std::pair<double, size_t>> remainders;
  size_t assigned = 0;
  for (size_t g = 0; g < groups.size(); ++g) {
    const double exact = val_fraction * static_cast<double>(groups[g].size());
    quota[g] = static_cast<size_t>(std::floor(exact));
    if (groups[g].size() == 1) {
      quota[g] = 0;  // singleton cohorts stay in train
      res.warnings.push_back(cat("cohort ", to_string(cohorts[g]),
                                 " has a single subject; assigned to train"));
      continue;
    }
    quota[g] = std::min(quota[g], groups[g].size() - 1);
    assigned += quota[g];
    remainders.push_back({exact - std::floor(exact), g});
  }
  std::sort(remainders.begin(), remainders.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  for (const auto& [rem, g] : remainders) {
    (void)rem;
    if (assigned >= total_val) break;
    if (quota[g] + 1 < groups[g].size()) {
      ++quota[g];
      ++assigned;
    }
  }

  Rng rng(Rng::derive(seed, 0xC0FFEE));
  std::vector<bool> in_val(manifest.size(), false);
  for (size_t g = 0; g < groups.size(); ++g) {
    std::vector<size_t> idx = groups[g];
    for (size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[rng.below(i)]);
    for (size_t i = 0; i < quota[g]; ++i) in_val[idx[i]] = true;
  }
  for (size_t i = 0; i < manifest.entries.size(); ++i)
    (in_val[i] ? res.validation : res.train).entries.push_back(manifest.entries[i]);
  return res;
}

// ---------------------------------------------------------------------------
// datasets and weights
// ---------------------------------------------------------------------------

uint64_t SliceDataset::content_hash() const {
  uint64_t h = fnv1a(&height, sizeof(height));
  h = fnv1a(&width, sizeof(width), h);
  h = fnv1a(&num_classes, sizeof(num_classes), h);
  for (const auto& s : samples) {
    h = fnv1a(s.image.data(), s.image.size() * sizeof(float), h);
    h = fnv1a(s.labels.data(), s.labels.size() * sizeof(int32_t), h);
  }
  return h;
}

std::vector<double> class_weights_from_labels(const SliceDataset& ds, bool invert) {
  std::vector<int64_t> fg(static_cast<size_t>(ds.num_classes), 0);
  int64_t total = 0;
  for (const auto& s : ds.samples) {
    for (int32_t l : s.labels) ++fg[static_cast<size_t>(l)];
    total += static_cast<int64_t>(s.labels.size());
  }
  std::vector<double> w(static_cast<size_t>(ds.num_classes), 1.0);
  for (int c = 0; c < ds.num_classes; ++c) {
    const double f = static_cast<double>(fg[static_cast<size_t>(c)]);
    const double b = static_cast<double>(total) - f;
    if (f <= 0.0 || b <= 0.0) continue;  // degenerate class keeps weight 1
    w[static_cast<size_t>(c)] = invert ? b / f : f / b;
  }
  return w;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

namespace {

void fill_batch(const SliceDataset& ds, const std::vector<size_t>& order, size_t begin,
                size_t end, Tensor4f& x, std::vector<int32_t>& labels) {
  const int n = static_cast<int>(end - begin);
  x.resize(n, 1, ds.height, ds.width);
  labels.resize(static_cast<size_t>(n) * ds.height * ds.width);
  const size_t plane = static_cast<size_t>(ds.height) * ds.width;
  for (int s = 0; s < n; ++s) {
    const SliceSample& sample = ds.samples[order[begin + static_cast<size_t>(s)]];
    std::copy(sample.image.begin(), sample.image.end(), x.sample(s));
    std::copy(sample.labels.begin(), sample.labels.end(),
              labels.begin() + static_cast<size_t>(s) * plane);
  }
}

}  // namespace

std::vector<double> evaluate_dice(const UnetF& model, const SliceDataset& ds, int batch_size) {
  const int C = model.spec().num_classes;
  std::vector<double> inter(static_cast<size_t>(C), 0.0), pred(static_cast<size_t>(C), 0.0),
      truth(static_cast<size_t>(C), 0.0);
  const size_t plane = static_cast<size_t>(ds.height) * ds.width;
  std::vector<size_t> order(ds.samples.size());
  std::iota(order.begin(), order.end(), size_t{0});
  Tensor4f x;
  std::vector<int32_t> labels;
  for (size_t b = 0; b < ds.samples.size(); b += static_cast<size_t>(batch_size)) {
    const size_t e = std::min(ds.samples.size(), b + static_cast<size_t>(batch_size));
    fill_batch(ds, order, b, e, x, labels);
    const Tensor4f probs = model.infer(x);
    for (int s = 0; s < x.n; ++s)
      for (int c = 1; c < C; ++c) {
        const float* p = probs.sample(s) + static_cast<size_t>(c) * plane;
        const int32_t* l = labels.data() + static_cast<size_t>(s) * plane;
        for (size_t i = 0; i < plane; ++i) {
          const bool hp = p[i] >= 0.5f;
          const bool ht = l[i] == c;
          inter[static_cast<size_t>(c)] += (hp && ht);
          pred[static_cast<size_t>(c)] += hp;
          truth[static_cast<size_t>(c)] += ht;
        }
      }
  }
  std::vector<double> dice;
  for (int c = 1; c < C; ++c) {
    const double den = pred[static_cast<size_t>(c)] + truth[static_cast<size_t>(c)];
    dice.push_back(den == 0.0 ? 1.0 : 2.0 * inter[static_cast<size_t>(c)] / den);
  }
  return dice;
}

TrainOutcome train_model(UnetF& model, const SliceDataset& train_set, const SliceDataset& val_set,
                         const TrainingConfig& cfg, const Checkpoint* resume_from) {
  cfg.validate();
  require(!train_set.empty(), ErrorKind::InvalidArgument, "training set is empty");
  require(!val_set.empty(), ErrorKind::InvalidArgument, "validation set is empty");
  require(train_set.num_classes == model.spec().num_classes, ErrorKind::InvalidArgument,
          cat("dataset has ", train_set.num_classes, " classes but the model expects ",
              model.spec().num_classes));

  std::vector<double> weights = cfg.class_weights;
  if (cfg.loss == LossKind::WEIGHTED_BCE && weights.empty())
    weights.assign(static_cast<size_t>(model.spec().num_classes), 1.0);

  auto params = model.params();
  AdamOptimizer adam;
  adam.beta1 = cfg.adam_beta1;
  adam.beta2 = cfg.adam_beta2;
  adam.eps = cfg.adam_eps;
  size_t trainable = 0;
  for (const auto* p : params)
    if (p->trainable) trainable += p->count();
  adam.init(trainable);

  PlateauScheduler sched{cfg.lr_initial, cfg.lr_factor, cfg.plateau_patience,
                         cfg.plateau_min_delta};
  int start_epoch = 1;
  if (resume_from) {
    resume_from->apply_to(model);
    require(resume_from->optimizer.has_value() && resume_from->scheduler.has_value(),
            ErrorKind::Validation, "resume checkpoint lacks optimizer/scheduler state");
    adam.restore(*resume_from->optimizer);
    sched.restore(*resume_from->scheduler);
    start_epoch = resume_from->finished_epochs + 1;
  }

  TrainOutcome out;
  out.best_epoch = 0;
  double best_metric = -1.0;
  model.fingerprint().data_hash = train_set.content_hash();
  model.fingerprint().epochs = cfg.epochs;

  const size_t n = train_set.samples.size();
  Tensor4f x;
  std::vector<int32_t> labels;
  for (int epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = sched.lr;
    // epoch-keyed streams keep resumed runs identical to uninterrupted ones
    Rng shuffle_rng(Rng::derive(cfg.seed, 0x5u * static_cast<uint64_t>(epoch) + 1));
    Rng dropout_rng(Rng::derive(cfg.seed, 0x7u * static_cast<uint64_t>(epoch) + 2));
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double loss_sum = 0.0;
    size_t batches = 0;
    for (size_t b = 0; b < n; b += static_cast<size_t>(cfg.batch_size)) {
      const size_t e = std::min(n, b + static_cast<size_t>(cfg.batch_size));
      fill_batch(train_set, order, b, e, x, labels);
      const Tensor4f probs = model.forward(x, &dropout_rng);
      const Tensor4f target =
          one_hot<float>(labels, x.n, x.h, x.w, model.spec().num_classes);
      LossResult<float> loss = cfg.loss == LossKind::DICE
                                   ? dice_loss(probs, target, cfg.smooth_eps)
                                   : weighted_bce_loss(probs, target, weights, true);
      require(std::isfinite(loss.value), ErrorKind::Numeric,
              cat("NaN/Inf loss at epoch ", epoch, ", batch ", batches + 1, "; aborting"));
      model.zero_grads();
      model.backward(loss.grad);
      adam.step(params, lr);
      loss_sum += loss.value;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(std::max<size_t>(1, batches));
    rec.val_dice = evaluate_dice(model, val_set, cfg.batch_size);
    double mean = 0.0;
    for (double d : rec.val_dice) mean += d;
    rec.val_dice_mean = rec.val_dice.empty() ? 0.0 : mean / static_cast<double>(rec.val_dice.size());
    rec.lr = lr;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    out.log.records.push_back(rec);

    if (rec.val_dice_mean > best_metric) {
      best_metric = rec.val_dice_mean;
      out.best_epoch = epoch;
      out.best_checkpoint = Checkpoint::from_model(model);
      out.best_checkpoint.finished_epochs = epoch;
    }
    sched.observe(rec.val_dice_mean);
  }

  out.final_checkpoint = Checkpoint::from_model(model);
  out.final_checkpoint.finished_epochs = cfg.epochs;
  out.final_checkpoint.optimizer = adam.state();
  out.final_checkpoint.scheduler = sched.state();
  if (out.best_epoch == 0) {
    out.best_checkpoint = out.final_checkpoint;
    out.best_epoch = cfg.epochs;
  }
  return out;
}

}  // namespace thalseg
