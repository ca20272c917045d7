/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "thalseg/common.hpp"
#include "thalseg/tensor.hpp"

namespace thalseg {

// ---------------------------------------------------------------------------
// Declarative network description. The architecture is a 2D residual U-Net:
// each conv block is conv -> batch norm -> leaky ReLU(0.1), feature widths
// double per encoder level, and a 1x1 convolution with per-class sigmoids
// produces one probability map per class.
// ---------------------------------------------------------------------------
struct NetworkSpec {
  int in_channels = 1;
  int num_classes = 2;
  int base_feature_maps = 20;
  int depth = 4;  // encoder levels
  double dropout_rate = 0.3;
  double leaky_slope = 0.1;
  int kernel = 3;
  bool uses_batch_norm = true;
  bool uses_residual_blocks = true;

  void validate() const;
  bool compatible_except_classes(const NetworkSpec& o) const;
  std::string to_json() const;
  static NetworkSpec from_json(const std::string& text);
};

template <class T>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool trainable = true;

  size_t count() const { return value.size(); }
  void init_shape(std::string n, std::vector<int> s, bool train = true) {
    name = std::move(n);
    shape = std::move(s);
    size_t total = 1;
    for (int d : shape) total *= static_cast<size_t>(d);
    value.assign(total, T(0));
    grad.assign(total, T(0));
    trainable = train;
  }
};

// ---------------------------------------------------------------------------
// Layers. Training forward saves what backward needs; infer() is const and
// allocation-local so a trained model can serve concurrent requests.
// ---------------------------------------------------------------------------

template <class T>
struct Conv2d {
  int cin = 0, cout = 0, k = 3, pad = 1;
  Param<T> W, b;

  void init(const std::string& name, int cin_, int cout_, int k_);
  void forward(const Tensor4<T>& x, Tensor4<T>& y, bool train);
  void backward(const Tensor4<T>& dy, Tensor4<T>& dx);
  void infer(const Tensor4<T>& x, Tensor4<T>& y) const;

  Tensor4<T> x_cache;
};

template <class T>
struct BatchNorm2d {
  int channels = 0;
  double eps = 1e-5;
  double momentum = 0.1;
  Param<T> gamma, beta, run_mean, run_var;

  void init(const std::string& name, int channels_);
  void forward(Tensor4<T>& x, bool train);  // in place
  void backward(Tensor4<T>& dy);            // in place
  void infer(Tensor4<T>& x) const;          // in place

  std::vector<double> mean_cache, inv_std_cache;
  Tensor4<T> xhat_cache;
};

template <class T>
struct MaxPool2x2 {
  void forward(const Tensor4<T>& x, Tensor4<T>& y, bool train);
  void backward(const Tensor4<T>& dy, Tensor4<T>& dx) const;
  void infer(const Tensor4<T>& x, Tensor4<T>& y) const;

  std::vector<uint8_t> argmax_cache;
  int in_h = 0, in_w = 0;
};

template <class T>
struct ConvTranspose2x2 {
  int cin = 0, cout = 0;
  Param<T> W, b;  // W shape [cin, cout, 2, 2]

  void init(const std::string& name, int cin_, int cout_);
  void forward(const Tensor4<T>& x, Tensor4<T>& y, bool train);
  void backward(const Tensor4<T>& dy, Tensor4<T>& dx);
  void infer(const Tensor4<T>& x, Tensor4<T>& y) const;

  Tensor4<T> x_cache;
};

template <class T>
struct Dropout {
  double rate = 0.0;
  void forward(Tensor4<T>& x, bool train, Rng& rng);  // in place, train only
  void backward(Tensor4<T>& dy) const;                // in place
  std::vector<T> mask_cache;
};

/// conv-bn-lrelu x2 plus a (projected) identity shortcut, activation after
/// the sum.
template <class T>
struct ResBlock {
  int cin = 0, cout = 0;
  double slope = 0.1;
  Conv2d<T> conv1, conv2;
  BatchNorm2d<T> bn1, bn2;
  bool has_proj = false;
  Conv2d<T> proj;
  BatchNorm2d<T> bnp;

  void init(const std::string& name, int cin_, int cout_, int kernel, double slope_);
  void forward(const Tensor4<T>& x, Tensor4<T>& y, bool train);
  void backward(const Tensor4<T>& dy, Tensor4<T>& dx);
  void infer(const Tensor4<T>& x, Tensor4<T>& y) const;
  void collect(std::vector<Param<T>*>& out);

  Tensor4<T> a1_cache, y_cache;
};

struct TrainingFingerprint {
  uint64_t seed = 0;
  int epochs = 0;
  uint64_t data_hash = 0;
  std::string initialized_from;  // provenance, empty for fresh init
};

// ---------------------------------------------------------------------------
// The network. forward() pads inputs to a multiple of 2^depth and crops the
// output back, so any spatial size is accepted.
// ---------------------------------------------------------------------------
template <class T>
class Unet {
 public:
  Unet() = default;
  Unet(const NetworkSpec& spec, uint64_t init_seed);

  const NetworkSpec& spec() const { return spec_; }
  TrainingFingerprint& fingerprint() { return fingerprint_; }
  const TrainingFingerprint& fingerprint() const { return fingerprint_; }

  /// Training-mode forward; keeps caches for backward.
  Tensor4<T> forward(const Tensor4<T>& x, Rng* dropout_rng);
  /// Backpropagates through the cached forward; accumulates parameter grads.
  void backward(const Tensor4<T>& dprobs);
  /// Deterministic inference (dropout off, batch norm running stats).
  Tensor4<T> infer(const Tensor4<T>& x) const;

  std::vector<Param<T>*> params();
  std::vector<const Param<T>*> params() const;
  void zero_grads();
  int64_t parameter_count() const;
  uint64_t parameter_checksum() const;

 private:
  void build();
  NetworkSpec spec_;
  TrainingFingerprint fingerprint_;
  std::vector<ResBlock<T>> enc_;
  std::vector<MaxPool2x2<T>> pools_;
  std::vector<ConvTranspose2x2<T>> ups_;
  std::vector<ResBlock<T>> dec_;
  Conv2d<T> head_;
  Dropout<T> drop_bottleneck_, drop_deep_;

  // training caches
  std::vector<Tensor4<T>> enc_out_, pool_out_, up_out_, cat_in_, dec_out_;
  Tensor4<T> x_padded_, probs_cache_;
  int orig_h_ = 0, orig_w_ = 0;
};

using UnetF = Unet<float>;

/// build(spec): deterministic construction (same seed, same checksums).
UnetF build_network(const NetworkSpec& spec, uint64_t seed);

// ---------------------------------------------------------------------------
// Losses over per-class probability tensors and one-hot targets.
// ---------------------------------------------------------------------------

enum class LossKind { DICE, WEIGHTED_BCE };

template <class T>
struct LossResult {
  double value = 0.0;
  Tensor4<T> grad;  // d loss / d probs
};

/// Soft multi-class Dice loss: mean over classes of 1 - (2*sum(pq)+eps) /
/// (sum(p)+sum(q)+eps). Value in [0, 1].
template <class T>
LossResult<T> dice_loss(const Tensor4<T>& probs, const Tensor4<T>& onehot,
                        double smooth_eps = 1.0);

/// Weighted binary cross-entropy summed over classes and voxels with
/// per-class weights; probabilities clamped at 1e-7. Targets must be binary.
/// reduce_mean divides by the voxel count (training normalization).
template <class T>
LossResult<T> weighted_bce_loss(const Tensor4<T>& probs, const Tensor4<T>& onehot,
                                const std::vector<double>& weights, bool reduce_mean = false);

/// One-hot expansion of integer labels into C channels.
template <class T>
Tensor4<T> one_hot(const std::vector<int32_t>& labels, int n, int h, int w, int num_classes);

/// Max relative error between the analytic gradient and central finite
/// differences (h = 1e-5) on a double-precision probe.
double gradient_check(LossKind kind, const Tensor4d& probs, const Tensor4d& onehot,
                      const std::vector<double>& weights, double smooth_eps = 1.0);

// ---------------------------------------------------------------------------
// Checkpoints: self-describing container (versioned JSON descriptor + raw
// float32 blobs). Reloading reproduces forward outputs bitwise.
// ---------------------------------------------------------------------------

struct OptimizerState {
  int64_t t = 0;
  std::vector<float> m, v;
};

struct SchedulerState {
  double lr = 0.0;
  double best_metric = -1.0;
  int stagnant = 0;
};

struct Checkpoint {
  NetworkSpec spec;
  TrainingFingerprint fingerprint;
  std::vector<std::string> param_names;
  std::vector<std::vector<int>> param_shapes;
  std::vector<std::vector<float>> param_values;
  std::optional<OptimizerState> optimizer;
  std::optional<SchedulerState> scheduler;
  int finished_epochs = 0;

  static Checkpoint from_model(const UnetF& model);
  /// Strict restore: every parameter must match by name and shape.
  void apply_to(UnetF& model) const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

/// Copies all shape-compatible parameters from source into target; a final
/// layer with a different class count is left freshly initialized. Any other
/// mismatch is an error listing the offending parameters.
void initialize_from(UnetF& target, const Checkpoint& source,
                     const std::string& provenance = "");

}  // namespace thalseg
