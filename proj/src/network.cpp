/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#include "thalseg/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace thalseg {

namespace {

template <class T>
using MatC = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapC = Eigen::Map<MatC<T>>;
template <class T>
using CMapC = Eigen::Map<const MatC<T>>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;

/// cols layout: (HW x K) column-major; column r = (ci*k+di)*k+dj holds the
/// shifted input plane.
template <class T>
void im2col(const T* x, int cin, int h, int w, int k, int pad, T* cols) {
  const int out_h = h + 2 * pad - k + 1;
  const int out_w = w + 2 * pad - k + 1;
  const size_t hw = static_cast<size_t>(out_h) * out_w;
  for (int ci = 0; ci < cin; ++ci) {
    const T* plane = x + static_cast<size_t>(ci) * h * w;
    for (int di = 0; di < k; ++di) {
      for (int dj = 0; dj < k; ++dj) {
        T* col = cols + (static_cast<size_t>(ci) * k * k + di * k + dj) * hw;
        for (int i = 0; i < out_h; ++i) {
          const int si = i + di - pad;
          T* dst = col + static_cast<size_t>(i) * out_w;
          if (si < 0 || si >= h) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = plane + static_cast<size_t>(si) * w;
          for (int j = 0; j < out_w; ++j) {
            const int sj = j + dj - pad;
            dst[j] = (sj >= 0 && sj < w) ? src[sj] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, int cin, int h, int w, int k, int pad, T* dx) {
  const int out_h = h + 2 * pad - k + 1;
  const int out_w = w + 2 * pad - k + 1;
  const size_t hw = static_cast<size_t>(out_h) * out_w;
  for (int ci = 0; ci < cin; ++ci) {
    T* plane = dx + static_cast<size_t>(ci) * h * w;
    for (int di = 0; di < k; ++di) {
      for (int dj = 0; dj < k; ++dj) {
        const T* col = cols + (static_cast<size_t>(ci) * k * k + di * k + dj) * hw;
        for (int i = 0; i < out_h; ++i) {
          const int si = i + di - pad;
          if (si < 0 || si >= h) continue;
          const T* src = col + static_cast<size_t>(i) * out_w;
          T* dst = plane + static_cast<size_t>(si) * w;
          for (int j = 0; j < out_w; ++j) {
            const int sj = j + dj - pad;
            if (sj >= 0 && sj < w) dst[sj] += src[j];
          }
        }
      }
    }
  }
}

template <class T>
void lrelu_forward(Tensor4<T>& x, T slope) {
  for (auto& v : x.v)
    if (v < T(0)) v *= slope;
}

/// dx = dy * lrelu'(x) read off the saved output sign.
template <class T>
void lrelu_backward(Tensor4<T>& dy, const Tensor4<T>& y_saved, T slope) {
  for (size_t i = 0; i < dy.v.size(); ++i)
    if (y_saved.v[i] <= T(0)) dy.v[i] *= slope;
}

}  // namespace

// ---------------------------------------------------------------------------
// NetworkSpec
// ---------------------------------------------------------------------------

void NetworkSpec::validate() const {
  require(in_channels >= 1, ErrorKind::Validation, "in_channels must be >= 1");
  require(num_classes >= 2, ErrorKind::Validation, "num_classes must be >= 2");
  require(base_feature_maps >= 1, ErrorKind::Validation, "base_feature_maps must be >= 1");
  require(depth >= 2 && depth <= 8, ErrorKind::Validation, "depth must be in [2, 8]");
  require(dropout_rate >= 0.0 && dropout_rate < 1.0, ErrorKind::Validation,
          "dropout_rate must be in [0, 1)");
  require(leaky_slope > 0.0 && leaky_slope < 1.0, ErrorKind::Validation,
          "leaky_slope must be in (0, 1)");
  require(kernel >= 1 && kernel % 2 == 1, ErrorKind::Validation, "kernel must be odd");
  require(uses_batch_norm && uses_residual_blocks, ErrorKind::Validation,
          "this architecture always uses batch norm and residual blocks");
}

bool NetworkSpec::compatible_except_classes(const NetworkSpec& o) const {
  return in_channels == o.in_channels && base_feature_maps == o.base_feature_maps &&
         depth == o.depth && kernel == o.kernel &&
         std::abs(leaky_slope - o.leaky_slope) < 1e-12;
}

std::string NetworkSpec::to_json() const {
  nlohmann::json j;
  j["in_channels"] = in_channels;
  j["num_classes"] = num_classes;
  j["base_feature_maps"] = base_feature_maps;
  j["depth"] = depth;
  j["dropout_rate"] = dropout_rate;
  j["leaky_slope"] = leaky_slope;
  j["kernel"] = kernel;
  j["uses_batch_norm"] = uses_batch_norm;
  j["uses_residual_blocks"] = uses_residual_blocks;
  return j.dump();
}

NetworkSpec NetworkSpec::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  NetworkSpec s;
  s.in_channels = j.value("in_channels", 1);
  s.num_classes = j.at("num_classes").get<int>();
  s.base_feature_maps = j.at("base_feature_maps").get<int>();
  s.depth = j.value("depth", 4);
  s.dropout_rate = j.value("dropout_rate", 0.3);
  s.leaky_slope = j.value("leaky_slope", 0.1);
  s.kernel = j.value("kernel", 3);
  s.uses_batch_norm = j.value("uses_batch_norm", true);
  s.uses_residual_blocks = j.value("uses_residual_blocks", true);
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

template <class T>
void Conv2d<T>::init(const std::string& name, int cin_, int cout_, int k_) {
  cin = cin_;
  cout = cout_;
  k = k_;
  pad = k_ / 2;
  W.init_shape(name + ".W", {cout, cin, k, k});
  b.init_shape(name + ".b", {cout});
}

template <class T>
void Conv2d<T>::infer(const Tensor4<T>& x, Tensor4<T>& y) const {
  require(x.c == cin, ErrorKind::InvalidArgument,
          cat("conv expects ", cin, " channels, got ", x.c));
  const int out_h = x.h + 2 * pad - k + 1;
  const int out_w = x.w + 2 * pad - k + 1;
  y.resize(x.n, cout, out_h, out_w);
  const int K = cin * k * k;
  const size_t hw = static_cast<size_t>(out_h) * out_w;
  parallel_chunks(x.n, [&](int64_t b0, int64_t b1, int) {
    std::vector<T> cols(hw * static_cast<size_t>(K));
    CMapR<T> Wm(W.value.data(), cout, K);
    for (int64_t i = b0; i < b1; ++i) {
      im2col(x.sample(static_cast<int>(i)), cin, x.h, x.w, k, pad, cols.data());
      CMapC<T> C(cols.data(), static_cast<Eigen::Index>(hw), K);
      MapC<T> Z(y.sample(static_cast<int>(i)), static_cast<Eigen::Index>(hw), cout);
      Z.noalias() = C * Wm.transpose();
      for (int co = 0; co < cout; ++co) Z.col(co).array() += b.value[static_cast<size_t>(co)];
    }
  });
}

template <class T>
void Conv2d<T>::forward(const Tensor4<T>& x, Tensor4<T>& y, bool train) {
  if (train) x_cache = x;
  infer(x, y);
}

template <class T>
void Conv2d<T>::backward(const Tensor4<T>& dy, Tensor4<T>& dx) {
  const Tensor4<T>& x = x_cache;
  dx.resize(x.n, x.c, x.h, x.w);
  const int out_h = dy.h, out_w = dy.w;
  const int K = cin * k * k;
  const size_t hw = static_cast<size_t>(out_h) * out_w;
  const size_t wcount = W.value.size();

  std::vector<std::vector<T>> dW_chunks(kParallelChunks);
  std::vector<std::vector<T>> db_chunks(kParallelChunks);
  parallel_chunks(x.n, [&](int64_t b0, int64_t b1, int chunk) {
    auto& dWc = dW_chunks[static_cast<size_t>(chunk)];
    auto& dbc = db_chunks[static_cast<size_t>(chunk)];
    dWc.assign(wcount, T(0));
    dbc.assign(static_cast<size_t>(cout), T(0));
    std::vector<T> cols(hw * static_cast<size_t>(K));
    std::vector<T> dcols(hw * static_cast<size_t>(K));
    CMapR<T> Wm(W.value.data(), cout, K);
    MapR<T> dWm(dWc.data(), cout, K);
    for (int64_t i = b0; i < b1; ++i) {
      im2col(x.sample(static_cast<int>(i)), cin, x.h, x.w, k, pad, cols.data());
      CMapC<T> C(cols.data(), static_cast<Eigen::Index>(hw), K);
      CMapC<T> dY(dy.sample(static_cast<int>(i)), static_cast<Eigen::Index>(hw), cout);
      dWm.noalias() += dY.transpose() * C;
      for (int co = 0; co < cout; ++co) dbc[static_cast<size_t>(co)] += dY.col(co).sum();
      MapC<T> dC(dcols.data(), static_cast<Eigen::Index>(hw), K);
      dC.noalias() = dY * Wm;
      col2im_add(dcols.data(), cin, x.h, x.w, k, pad, dx.sample(static_cast<int>(i)));
    }
  });
  for (int c = 0; c < kParallelChunks; ++c) {
    if (dW_chunks[static_cast<size_t>(c)].empty()) continue;
    for (size_t i = 0; i < wcount; ++i) W.grad[i] += dW_chunks[static_cast<size_t>(c)][i];
    for (int co = 0; co < cout; ++co)
      b.grad[static_cast<size_t>(co)] += db_chunks[static_cast<size_t>(c)][static_cast<size_t>(co)];
  }
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

template <class T>
void BatchNorm2d<T>::init(const std::string& name, int channels_) {
  channels = channels_;
  gamma.init_shape(name + ".gamma", {channels});
  beta.init_shape(name + ".beta", {channels});
  run_mean.init_shape(name + ".rmean", {channels}, /*train=*/false);
  run_var.init_shape(name + ".rvar", {channels}, /*train=*/false);
  std::fill(gamma.value.begin(), gamma.value.end(), T(1));
  std::fill(run_var.value.begin(), run_var.value.end(), T(1));
}

template <class T>
void BatchNorm2d<T>::forward(Tensor4<T>& x, bool train) {
  require(x.c == channels, ErrorKind::InvalidArgument, "batch norm channel mismatch");
  if (!train) {
    infer(x);
    return;
  }
  const size_t plane = x.plane();
  const size_t stride = x.sample_stride();
  const double m = static_cast<double>(x.n) * static_cast<double>(plane);
  mean_cache.assign(static_cast<size_t>(channels), 0.0);
  inv_std_cache.assign(static_cast<size_t>(channels), 0.0);
  xhat_cache.resize(x.n, x.c, x.h, x.w);
  parallel_chunks(channels, [&](int64_t c0, int64_t c1, int) {
    for (int64_t c = c0; c < c1; ++c) {
      double sum = 0.0, sq = 0.0;
      for (int ni = 0; ni < x.n; ++ni) {
        const T* p = x.v.data() + stride * static_cast<size_t>(ni) + plane * static_cast<size_t>(c);
        for (size_t i = 0; i < plane; ++i) {
          const double val = static_cast<double>(p[i]);
          sum += val;
          sq += val * val;
        }
      }
      const double mu = sum / m;
      const double var = std::max(0.0, sq / m - mu * mu);
      const double inv = 1.0 / std::sqrt(var + eps);
      mean_cache[static_cast<size_t>(c)] = mu;
      inv_std_cache[static_cast<size_t>(c)] = inv;
      const double g = static_cast<double>(gamma.value[static_cast<size_t>(c)]);
      const double bt = static_cast<double>(beta.value[static_cast<size_t>(c)]);
      for (int ni = 0; ni < x.n; ++ni) {
        T* p = x.v.data() + stride * static_cast<size_t>(ni) + plane * static_cast<size_t>(c);
        T* xh = xhat_cache.v.data() + stride * static_cast<size_t>(ni) +
                plane * static_cast<size_t>(c);
        for (size_t i = 0; i < plane; ++i) {
          const double h = (static_cast<double>(p[i]) - mu) * inv;
          xh[i] = static_cast<T>(h);
          p[i] = static_cast<T>(g * h + bt);
        }
      }
      const double unbiased = m > 1.0 ? var * m / (m - 1.0) : var;
      run_mean.value[static_cast<size_t>(c)] = static_cast<T>(
          (1.0 - momentum) * static_cast<double>(run_mean.value[static_cast<size_t>(c)]) +
          momentum * mu);
      run_var.value[static_cast<size_t>(c)] = static_cast<T>(
          (1.0 - momentum) * static_cast<double>(run_var.value[static_cast<size_t>(c)]) +
          momentum * unbiased);
    }
  });
}

template <class T>
void BatchNorm2d<T>::infer(Tensor4<T>& x) const {
  const size_t plane = x.plane();
  const size_t stride = x.sample_stride();
  parallel_chunks(channels, [&](int64_t c0, int64_t c1, int) {
    for (int64_t c = c0; c < c1; ++c) {
      const double mu = static_cast<double>(run_mean.value[static_cast<size_t>(c)]);
      const double inv =
          1.0 / std::sqrt(static_cast<double>(run_var.value[static_cast<size_t>(c)]) + eps);
      const double g = static_cast<double>(gamma.value[static_cast<size_t>(c)]);
      const double bt = static_cast<double>(beta.value[static_cast<size_t>(c)]);
      for (int ni = 0; ni < x.n; ++ni) {
        T* p = x.v.data() + stride * static_cast<size_t>(ni) + plane * static_cast<size_t>(c);
        for (size_t i = 0; i < plane; ++i)
          p[i] = static_cast<T>(g * ((static_cast<double>(p[i]) - mu) * inv) + bt);
      }
    }
  });
}

template <class T>
void BatchNorm2d<T>::backward(Tensor4<T>& dy) {
  const size_t plane = dy.plane();
  const size_t stride = dy.sample_stride();
  const double m = static_cast<double>(dy.n) * static_cast<double>(plane);
  parallel_chunks(channels, [&](int64_t c0, int64_t c1, int) {
    for (int64_t c = c0; c < c1; ++c) {
      const double g = static_cast<double>(gamma.value[static_cast<size_t>(c)]);
      const double inv = inv_std_cache[static_cast<size_t>(c)];
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int ni = 0; ni < dy.n; ++ni) {
        const T* d = dy.v.data() + stride * static_cast<size_t>(ni) + plane * static_cast<size_t>(c);
        const T* xh = xhat_cache.v.data() + stride * static_cast<size_t>(ni) +
                      plane * static_cast<size_t>(c);
        for (size_t i = 0; i < plane; ++i) {
          sum_dy += static_cast<double>(d[i]);
          sum_dy_xhat += static_cast<double>(d[i]) * static_cast<double>(xh[i]);
        }
      }
      gamma.grad[static_cast<size_t>(c)] += static_cast<T>(sum_dy_xhat);
      beta.grad[static_cast<size_t>(c)] += static_cast<T>(sum_dy);
      const double k1 = sum_dy / m;
      const double k2 = sum_dy_xhat / m;
      for (int ni = 0; ni < dy.n; ++ni) {
        T* d = dy.v.data() + stride * static_cast<size_t>(ni) + plane * static_cast<size_t>(c);
        const T* xh = xhat_cache.v.data() + stride * static_cast<size_t>(ni) +
                      plane * static_cast<size_t>(c);
        for (size_t i = 0; i < plane; ++i)
          d[i] = static_cast<T>(g * inv *
                                (static_cast<double>(d[i]) - k1 -
                                 static_cast<double>(xh[i]) * k2));
      }
    }
  });
}

// ---------------------------------------------------------------------------
// MaxPool2x2
// ---------------------------------------------------------------------------

template <class T>
void MaxPool2x2<T>::infer(const Tensor4<T>& x, Tensor4<T>& y) const {
  require(x.h % 2 == 0 && x.w % 2 == 0, ErrorKind::InvalidArgument,
          "pool input dims must be even (inputs are padded to a multiple of 2^depth)");
  y.resize(x.n, x.c, x.h / 2, x.w / 2);
  for (int ni = 0; ni < x.n; ++ni)
    for (int ci = 0; ci < x.c; ++ci)
      for (int i = 0; i < y.h; ++i)
        for (int j = 0; j < y.w; ++j) {
          T best = x.at(ni, ci, 2 * i, 2 * j);
          for (int d = 1; d < 4; ++d) {
            const T v = x.at(ni, ci, 2 * i + d / 2, 2 * j + d % 2);
            if (v > best) best = v;
          }
          y.at(ni, ci, i, j) = best;
        }
}

template <class T>
void MaxPool2x2<T>::forward(const Tensor4<T>& x, Tensor4<T>& y, bool train) {
  require(x.h % 2 == 0 && x.w % 2 == 0, ErrorKind::InvalidArgument,
          "pool input dims must be even (inputs are padded to a multiple of 2^depth)");
  y.resize(x.n, x.c, x.h / 2, x.w / 2);
  in_h = x.h;
  in_w = x.w;
  if (train) argmax_cache.assign(y.size(), 0);
  for (int ni = 0; ni < x.n; ++ni)
    for (int ci = 0; ci < x.c; ++ci)
      for (int i = 0; i < y.h; ++i)
        for (int j = 0; j < y.w; ++j) {
          T best = x.at(ni, ci, 2 * i, 2 * j);
          uint8_t arg = 0;
          for (uint8_t d = 1; d < 4; ++d) {
            const T v = x.at(ni, ci, 2 * i + d / 2, 2 * j + d % 2);
            if (v > best) {
              best = v;
              arg = d;
            }
          }
          y.at(ni, ci, i, j) = best;
          if (train)
            argmax_cache[((static_cast<size_t>(ni) * x.c + ci) * y.h + i) * y.w + j] = arg;
        }
}

template <class T>
void MaxPool2x2<T>::backward(const Tensor4<T>& dy, Tensor4<T>& dx) const {
  dx.resize(dy.n, dy.c, in_h, in_w);
  for (int ni = 0; ni < dy.n; ++ni)
    for (int ci = 0; ci < dy.c; ++ci)
      for (int i = 0; i < dy.h; ++i)
        for (int j = 0; j < dy.w; ++j) {
          const uint8_t arg =
              argmax_cache[((static_cast<size_t>(ni) * dy.c + ci) * dy.h + i) * dy.w + j];
          dx.at(ni, ci, 2 * i + arg / 2, 2 * j + arg % 2) += dy.at(ni, ci, i, j);
        }
}

// ---------------------------------------------------------------------------
// ConvTranspose2x2 (stride 2)
// ---------------------------------------------------------------------------

template <class T>
void ConvTranspose2x2<T>::init(const std::string& name, int cin_, int cout_) {
  cin = cin_;
  cout = cout_;
  W.init_shape(name + ".W", {cin, cout, 2, 2});
  b.init_shape(name + ".b", {cout});
}

template <class T>
void ConvTranspose2x2<T>::infer(const Tensor4<T>& x, Tensor4<T>& y) const {
  require(x.c == cin, ErrorKind::InvalidArgument, "transposed conv channel mismatch");
  y.resize(x.n, cout, x.h * 2, x.w * 2);
  const size_t hw = x.plane();
  // pack the 4 sub-kernels as (cin x cout) column-major
  std::array<MatC<T>, 4> Wsub;
  for (int d = 0; d < 4; ++d) {
    Wsub[static_cast<size_t>(d)].resize(cin, cout);
    for (int ci = 0; ci < cin; ++ci)
      for (int co = 0; co < cout; ++co)
        Wsub[static_cast<size_t>(d)](ci, co) =
            W.value[((static_cast<size_t>(ci) * cout + co) * 2 + d / 2) * 2 + d % 2];
  }
  parallel_chunks(x.n, [&](int64_t b0, int64_t b1, int) {
    MatC<T> Ysub(static_cast<Eigen::Index>(hw), cout);
    for (int64_t s = b0; s < b1; ++s) {
      CMapC<T> X(x.sample(static_cast<int>(s)), static_cast<Eigen::Index>(hw), cin);
      for (int d = 0; d < 4; ++d) {
        Ysub.noalias() = X * Wsub[static_cast<size_t>(d)];
        const int di = d / 2, dj = d % 2;
        for (int co = 0; co < cout; ++co) {
          const T bias = b.value[static_cast<size_t>(co)];
          for (int i = 0; i < x.h; ++i)
            for (int j = 0; j < x.w; ++j)
              y.at(static_cast<int>(s), co, 2 * i + di, 2 * j + dj) =
                  Ysub(static_cast<Eigen::Index>(i) * x.w + j, co) + bias;
        }
      }
    }
  });
}

template <class T>
void ConvTranspose2x2<T>::forward(const Tensor4<T>& x, Tensor4<T>& y, bool train) {
  if (train) x_cache = x;
  infer(x, y);
}

template <class T>
void ConvTranspose2x2<T>::backward(const Tensor4<T>& dy, Tensor4<T>& dx) {
  const Tensor4<T>& x = x_cache;
  dx.resize(x.n, x.c, x.h, x.w);
  const size_t hw = x.plane();
  std::array<MatC<T>, 4> Wsub;
  for (int d = 0; d < 4; ++d) {
    Wsub[static_cast<size_t>(d)].resize(cin, cout);
    for (int ci = 0; ci < cin; ++ci)
      for (int co = 0; co < cout; ++co)
        Wsub[static_cast<size_t>(d)](ci, co) =
            W.value[((static_cast<size_t>(ci) * cout + co) * 2 + d / 2) * 2 + d % 2];
  }
  std::vector<std::vector<T>> dW_chunks(kParallelChunks);
  std::vector<std::vector<T>> db_chunks(kParallelChunks);
  parallel_chunks(x.n, [&](int64_t b0, int64_t b1, int chunk) {
    auto& dWc = dW_chunks[static_cast<size_t>(chunk)];
    auto& dbc = db_chunks[static_cast<size_t>(chunk)];
    dWc.assign(W.value.size(), T(0));
    dbc.assign(static_cast<size_t>(cout), T(0));
    MatC<T> dYsub(static_cast<Eigen::Index>(hw), cout);
    MatC<T> dWsub(cin, cout);
    for (int64_t s = b0; s < b1; ++s) {
      CMapC<T> X(x.sample(static_cast<int>(s)), static_cast<Eigen::Index>(hw), cin);
      MapC<T> dX(dx.sample(static_cast<int>(s)), static_cast<Eigen::Index>(hw), cin);
      for (int d = 0; d < 4; ++d) {
        const int di = d / 2, dj = d % 2;
        for (int co = 0; co < cout; ++co)
          for (int i = 0; i < x.h; ++i)
            for (int j = 0; j < x.w; ++j)
              dYsub(static_cast<Eigen::Index>(i) * x.w + j, co) =
                  dy.at(static_cast<int>(s), co, 2 * i + di, 2 * j + dj);
        dX.noalias() += dYsub * Wsub[static_cast<size_t>(d)].transpose();
        dWsub.noalias() = X.transpose() * dYsub;
        for (int ci = 0; ci < cin; ++ci)
          for (int co = 0; co < cout; ++co)
            dWc[((static_cast<size_t>(ci) * cout + co) * 2 + di) * 2 + dj] += dWsub(ci, co);
        for (int co = 0; co < cout; ++co) dbc[static_cast<size_t>(co)] += dYsub.col(co).sum();
      }
    }
  });
  for (int c = 0; c < kParallelChunks; ++c) {
    if (dW_chunks[static_cast<size_t>(c)].empty()) continue;
    for (size_t i = 0; i < W.grad.size(); ++i) W.grad[i] += dW_chunks[static_cast<size_t>(c)][i];
    for (int co = 0; co < cout; ++co)
      b.grad[static_cast<size_t>(co)] += db_chunks[static_cast<size_t>(c)][static_cast<size_t>(co)];
  }
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

template <class T>
void Dropout<T>::forward(Tensor4<T>& x, bool train, Rng& rng) {
  if (!train || rate <= 0.0) {
    mask_cache.clear();
    return;
  }
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  mask_cache.resize(x.v.size());
  for (size_t i = 0; i < x.v.size(); ++i)
    mask_cache[i] = rng.uniform() < rate ? T(0) : scale;
  for (size_t i = 0; i < x.v.size(); ++i) x.v[i] *= mask_cache[i];
}

template <class T>
void Dropout<T>::backward(Tensor4<T>& dy) const {
  if (mask_cache.empty()) return;
  for (size_t i = 0; i < dy.v.size(); ++i) dy.v[i] *= mask_cache[i];
}

// ---------------------------------------------------------------------------
// ResBlock
// ---------------------------------------------------------------------------

template <class T>
void ResBlock<T>::init(const std::string& name, int cin_, int cout_, int kernel, double slope_) {
  cin = cin_;
  cout = cout_;
  slope = slope_;
  conv1.init(name + ".conv1", cin, cout, kernel);
  conv2.init(name + ".conv2", cout, cout, kernel);
  bn1.init(name + ".bn1", cout);
  bn2.init(name + ".bn2", cout);
  has_proj = cin != cout;
  if (has_proj) {
    proj.init(name + ".proj", cin, cout, 1);
    bnp.init(name + ".bnp", cout);
  }
}

template <class T>
void ResBlock<T>::forward(const Tensor4<T>& x, Tensor4<T>& y, bool train) {
  Tensor4<T> t1;
  conv1.forward(x, t1, train);
  bn1.forward(t1, train);
  lrelu_forward(t1, static_cast<T>(slope));
  Tensor4<T> t2;
  conv2.forward(t1, t2, train);  // conv2.x_cache doubles as the a1 cache
  bn2.forward(t2, train);
  if (has_proj) {
    Tensor4<T> s;
    proj.forward(x, s, train);
    bnp.forward(s, train);
    for (size_t i = 0; i < t2.v.size(); ++i) t2.v[i] += s.v[i];
  } else {
    for (size_t i = 0; i < t2.v.size(); ++i) t2.v[i] += x.v[i];
  }
  lrelu_forward(t2, static_cast<T>(slope));
  if (train) y_cache = t2;
  y = std::move(t2);
}

template <class T>
void ResBlock<T>::infer(const Tensor4<T>& x, Tensor4<T>& y) const {
  Tensor4<T> t1;
  conv1.infer(x, t1);
  bn1.infer(t1);
  lrelu_forward(t1, static_cast<T>(slope));
  Tensor4<T> t2;
  conv2.infer(t1, t2);
  bn2.infer(t2);
  if (has_proj) {
    Tensor4<T> s;
    proj.infer(x, s);
    bnp.infer(s);
    for (size_t i = 0; i < t2.v.size(); ++i) t2.v[i] += s.v[i];
  } else {
    for (size_t i = 0; i < t2.v.size(); ++i) t2.v[i] += x.v[i];
  }
  lrelu_forward(t2, static_cast<T>(slope));
  y = std::move(t2);
}

template <class T>
void ResBlock<T>::backward(const Tensor4<T>& dy, Tensor4<T>& dx) {
  Tensor4<T> dsum = dy;
  lrelu_backward(dsum, y_cache, static_cast<T>(slope));

  Tensor4<T> dx_short;
  if (has_proj) {
    Tensor4<T> ds = dsum;
    bnp.backward(ds);
    proj.backward(ds, dx_short);
  } else {
    dx_short = dsum;
  }

  bn2.backward(dsum);
  Tensor4<T> da1;
  conv2.backward(dsum, da1);
  lrelu_backward(da1, conv2.x_cache, static_cast<T>(slope));
  bn1.backward(da1);
  conv1.backward(da1, dx);

  for (size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dx_short.v[i];
}

template <class T>
void ResBlock<T>::collect(std::vector<Param<T>*>& out) {
  out.push_back(&conv1.W);
  out.push_back(&conv1.b);
  out.push_back(&bn1.gamma);
  out.push_back(&bn1.beta);
  out.push_back(&bn1.run_mean);
  out.push_back(&bn1.run_var);
  out.push_back(&conv2.W);
  out.push_back(&conv2.b);
  out.push_back(&bn2.gamma);
  out.push_back(&bn2.beta);
  out.push_back(&bn2.run_mean);
  out.push_back(&bn2.run_var);
  if (has_proj) {
    out.push_back(&proj.W);
    out.push_back(&proj.b);
    out.push_back(&bnp.gamma);
    out.push_back(&bnp.beta);
    out.push_back(&bnp.run_mean);
    out.push_back(&bnp.run_var);
  }
}

// ---------------------------------------------------------------------------
// Unet
// ---------------------------------------------------------------------------

template <class T>
Unet<T>::Unet(const NetworkSpec& spec, uint64_t init_seed) : spec_(spec) {
  spec_.validate();
  build();
  // He initialization with the leaky-ReLU correction, deterministic in seed.
  Rng rng(init_seed);
  const double corr = 2.0 / (1.0 + spec_.leaky_slope * spec_.leaky_slope);
  for (Param<T>* p : params()) {
    if (!p->trainable) continue;
    if (p->name.size() >= 2 && p->name.compare(p->name.size() - 2, 2, ".W") == 0) {
      int fan_in = 1;
      if (p->shape.size() == 4 && p->name.find("up") == 0)
        fan_in = p->shape[0] * p->shape[2] * p->shape[3];  // [cin, cout, 2, 2]
      else if (p->shape.size() == 4)
        fan_in = p->shape[1] * p->shape[2] * p->shape[3];  // [cout, cin, k, k]
      const double std = std::sqrt(corr / static_cast<double>(fan_in));
      for (auto& v : p->value) v = static_cast<T>(rng.normal(0.0, std));
    }
    // biases, gamma, beta keep their init values
  }
  fingerprint_.seed = init_seed;
}

template <class T>
void Unet<T>::build() {
  const int D = spec_.depth;
  enc_.resize(static_cast<size_t>(D));
  pools_.resize(static_cast<size_t>(D - 1));
  ups_.resize(static_cast<size_t>(D - 1));
  dec_.resize(static_cast<size_t>(D - 1));
  auto ch = [&](int l) { return spec_.base_feature_maps << l; };
  enc_[0].init("enc0", spec_.in_channels, ch(0), spec_.kernel, spec_.leaky_slope);
  for (int l = 1; l < D; ++l)
    enc_[static_cast<size_t>(l)].init(cat("enc", l), ch(l - 1), ch(l), spec_.kernel,
                                      spec_.leaky_slope);
  for (int l = 0; l < D - 1; ++l) {
    ups_[static_cast<size_t>(l)].init(cat("up", l), ch(l + 1), ch(l));
    dec_[static_cast<size_t>(l)].init(cat("dec", l), 2 * ch(l), ch(l), spec_.kernel,
                                      spec_.leaky_slope);
  }
  head_.init("head", ch(0), spec_.num_classes, 1);
  drop_bottleneck_.rate = spec_.dropout_rate;
  drop_deep_.rate = spec_.dropout_rate;
  enc_out_.resize(static_cast<size_t>(D));
  pool_out_.resize(static_cast<size_t>(D - 1));
  up_out_.resize(static_cast<size_t>(D - 1));
  cat_in_.resize(static_cast<size_t>(D - 1));
  dec_out_.resize(static_cast<size_t>(D - 1));
}

namespace {

template <class T>
void pad_input(const Tensor4<T>& x, int mult, Tensor4<T>& out) {
  const int ph = (x.h + mult - 1) / mult * mult;
  const int pw = (x.w + mult - 1) / mult * mult;
  out.resize(x.n, x.c, ph, pw);
  for (int ni = 0; ni < x.n; ++ni)
    for (int ci = 0; ci < x.c; ++ci)
      for (int i = 0; i < x.h; ++i)
        std::memcpy(&out.at(ni, ci, i, 0), &x.at(ni, ci, i, 0), sizeof(T) * static_cast<size_t>(x.w));
}

template <class T>
void concat_channels(const Tensor4<T>& a, const Tensor4<T>& b, Tensor4<T>& out) {
  out.resize(a.n, a.c + b.c, a.h, a.w);
  const size_t pa = a.sample_stride(), pb = b.sample_stride();
  for (int ni = 0; ni < a.n; ++ni) {
    std::memcpy(out.sample(ni), a.sample(ni), sizeof(T) * pa);
    std::memcpy(out.sample(ni) + pa, b.sample(ni), sizeof(T) * pb);
  }
}

template <class T>
void split_channels(const Tensor4<T>& d, int ca, Tensor4<T>& da, Tensor4<T>& db) {
  da.resize(d.n, ca, d.h, d.w);
  db.resize(d.n, d.c - ca, d.h, d.w);
  const size_t pa = da.sample_stride(), pb = db.sample_stride();
  for (int ni = 0; ni < d.n; ++ni) {
    std::memcpy(da.sample(ni), d.sample(ni), sizeof(T) * pa);
    std::memcpy(db.sample(ni), d.sample(ni) + pa, sizeof(T) * pb);
  }
}

}  // namespace

template <class T>
Tensor4<T> Unet<T>::forward(const Tensor4<T>& x, Rng* dropout_rng) {
  require(x.c == spec_.in_channels, ErrorKind::InvalidArgument, "input channel mismatch");
  orig_h_ = x.h;
  orig_w_ = x.w;
  pad_input(x, 1 << spec_.depth, x_padded_);
  const int D = spec_.depth;
  Rng fallback(0);
  Rng& rng = dropout_rng ? *dropout_rng : fallback;

  enc_[0].forward(x_padded_, enc_out_[0], true);
  for (int l = 1; l < D; ++l) {
    if (l - 1 == D - 2) drop_deep_.forward(enc_out_[static_cast<size_t>(l - 1)], true, rng);
    pools_[static_cast<size_t>(l - 1)].forward(enc_out_[static_cast<size_t>(l - 1)],
                                               pool_out_[static_cast<size_t>(l - 1)], true);
    enc_[static_cast<size_t>(l)].forward(pool_out_[static_cast<size_t>(l - 1)],
                                         enc_out_[static_cast<size_t>(l)], true);
  }
  drop_bottleneck_.forward(enc_out_[static_cast<size_t>(D - 1)], true, rng);

  const Tensor4<T>* cur = &enc_out_[static_cast<size_t>(D - 1)];
  for (int l = D - 2; l >= 0; --l) {
    ups_[static_cast<size_t>(l)].forward(*cur, up_out_[static_cast<size_t>(l)], true);
    concat_channels(enc_out_[static_cast<size_t>(l)], up_out_[static_cast<size_t>(l)],
                    cat_in_[static_cast<size_t>(l)]);
    dec_[static_cast<size_t>(l)].forward(cat_in_[static_cast<size_t>(l)],
                                         dec_out_[static_cast<size_t>(l)], true);
    cur = &dec_out_[static_cast<size_t>(l)];
  }
  Tensor4<T> logits;
  head_.forward(*cur, logits, true);

  Tensor4<T> probs(x.n, spec_.num_classes, orig_h_, orig_w_);
  for (int ni = 0; ni < x.n; ++ni)
    for (int ci = 0; ci < spec_.num_classes; ++ci)
      for (int i = 0; i < orig_h_; ++i)
        for (int j = 0; j < orig_w_; ++j)
          probs.at(ni, ci, i, j) =
              static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(logits.at(ni, ci, i, j)))));
  probs_cache_ = probs;
  return probs;
}

template <class T>
void Unet<T>::backward(const Tensor4<T>& dprobs) {
  const int D = spec_.depth;
  const int ph = x_padded_.h, pw = x_padded_.w;
  Tensor4<T> dlogits(dprobs.n, spec_.num_classes, ph, pw);
  for (int ni = 0; ni < dprobs.n; ++ni)
    for (int ci = 0; ci < spec_.num_classes; ++ci)
      for (int i = 0; i < orig_h_; ++i)
        for (int j = 0; j < orig_w_; ++j) {
          const T p = probs_cache_.at(ni, ci, i, j);
          dlogits.at(ni, ci, i, j) = dprobs.at(ni, ci, i, j) * p * (T(1) - p);
        }

  std::vector<Tensor4<T>> d_enc(static_cast<size_t>(D));
  for (int l = 0; l < D; ++l) {
    const auto& e = enc_out_[static_cast<size_t>(l)];
    d_enc[static_cast<size_t>(l)].resize(e.n, e.c, e.h, e.w);
  }

  Tensor4<T> dcur;
  head_.backward(dlogits, dcur);
  for (int l = 0; l <= D - 2; ++l) {
    Tensor4<T> dcat;
    dec_[static_cast<size_t>(l)].backward(dcur, dcat);
    Tensor4<T> dskip, dup;
    split_channels(dcat, enc_out_[static_cast<size_t>(l)].c, dskip, dup);
    for (size_t i = 0; i < dskip.v.size(); ++i)
      d_enc[static_cast<size_t>(l)].v[i] += dskip.v[i];
    ups_[static_cast<size_t>(l)].backward(dup, dcur);  // dcur now grads the level above
    if (l == D - 2) {
      for (size_t i = 0; i < dcur.v.size(); ++i)
        d_enc[static_cast<size_t>(D - 1)].v[i] += dcur.v[i];
    } else {
      // continue: dcur is the gradient w.r.t. dec_out_[l+1]
    }
  }

  drop_bottleneck_.backward(d_enc[static_cast<size_t>(D - 1)]);
  for (int l = D - 1; l >= 1; --l) {
    Tensor4<T> dpool_in;
    Tensor4<T> dpool_out;
    enc_[static_cast<size_t>(l)].backward(d_enc[static_cast<size_t>(l)], dpool_out);
    pools_[static_cast<size_t>(l - 1)].backward(dpool_out, dpool_in);
    for (size_t i = 0; i < dpool_in.v.size(); ++i)
      d_enc[static_cast<size_t>(l - 1)].v[i] += dpool_in.v[i];
    if (l - 1 == D - 2) drop_deep_.backward(d_enc[static_cast<size_t>(l - 1)]);
  }
  Tensor4<T> dx;
  enc_[0].backward(d_enc[0], dx);
}

template <class T>
Tensor4<T> Unet<T>::infer(const Tensor4<T>& x) const {
  require(x.c == spec_.in_channels, ErrorKind::InvalidArgument, "input channel mismatch");
  const int D = spec_.depth;
  Tensor4<T> padded;
  pad_input(x, 1 << D, padded);

  std::vector<Tensor4<T>> eo(static_cast<size_t>(D));
  enc_[0].infer(padded, eo[0]);
  for (int l = 1; l < D; ++l) {
    Tensor4<T> pooled;
    pools_[static_cast<size_t>(l - 1)].infer(eo[static_cast<size_t>(l - 1)], pooled);
    enc_[static_cast<size_t>(l)].infer(pooled, eo[static_cast<size_t>(l)]);
  }
  Tensor4<T> cur = eo[static_cast<size_t>(D - 1)];
  for (int l = D - 2; l >= 0; --l) {
    Tensor4<T> up;
    ups_[static_cast<size_t>(l)].infer(cur, up);
    Tensor4<T> catd;
    concat_channels(eo[static_cast<size_t>(l)], up, catd);
    dec_[static_cast<size_t>(l)].infer(catd, cur);
  }
  Tensor4<T> logits;
  head_.infer(cur, logits);
  Tensor4<T> probs(x.n, spec_.num_classes, x.h, x.w);
  for (int ni = 0; ni < x.n; ++ni)
    for (int ci = 0; ci < spec_.num_classes; ++ci)
      for (int i = 0; i < x.h; ++i)
        for (int j = 0; j < x.w; ++j)
          probs.at(ni, ci, i, j) =
              static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(logits.at(ni, ci, i, j)))));
  return probs;
}

template <class T>
std::vector<Param<T>*> Unet<T>::params() {
  std::vector<Param<T>*> out;
  for (auto& b : enc_) b.collect(out);
  for (auto& u : ups_) {
    out.push_back(&u.W);
    out.push_back(&u.b);
  }
  for (auto& b : dec_) b.collect(out);
  out.push_back(&head_.W);
  out.push_back(&head_.b);
  return out;
}

template <class T>
std::vector<const Param<T>*> Unet<T>::params() const {
  std::vector<const Param<T>*> out;
  auto* self = const_cast<Unet<T>*>(this);
  for (auto* p : self->params()) out.push_back(p);
  return out;
}

template <class T>
void Unet<T>::zero_grads() {
  for (Param<T>* p : params()) std::fill(p->grad.begin(), p->grad.end(), T(0));
}

template <class T>
int64_t Unet<T>::parameter_count() const {
  int64_t n = 0;
  for (const Param<T>* p : params())
    if (p->trainable) n += static_cast<int64_t>(p->count());
  return n;
}

template <class T>
uint64_t Unet<T>::parameter_checksum() const {
  uint64_t h = 1469598103934665603ULL;
  for (const Param<T>* p : params()) {
    h = fnv1a(p->name.data(), p->name.size(), h);
    h = fnv1a(p->value.data(), p->value.size() * sizeof(T), h);
  }
  return h;
}

template struct Conv2d<float>;
template struct Conv2d<double>;
template struct BatchNorm2d<float>;
template struct BatchNorm2d<double>;
template struct MaxPool2x2<float>;
template struct MaxPool2x2<double>;
template struct ConvTranspose2x2<float>;
template struct ConvTranspose2x2<double>;
template struct Dropout<float>;
template struct Dropout<double>;
template struct ResBlock<float>;
template struct ResBlock<double>;
template class Unet<float>;
template class Unet<double>;

UnetF build_network(const NetworkSpec& spec, uint64_t seed) { return UnetF(spec, seed); }

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

template <class T>
LossResult<T> dice_loss(const Tensor4<T>& probs, const Tensor4<T>& onehot, double smooth_eps) {
  require(probs.same_shape(onehot), ErrorKind::InvalidArgument,
          "dice loss: prediction/target shape mismatch");
  require(smooth_eps > 0.0, ErrorKind::InvalidArgument, "smooth_eps must be > 0");
  const int C = probs.c;
  const size_t plane = probs.plane();
  LossResult<T> res;
  res.grad.resize(probs.n, probs.c, probs.h, probs.w);

  double loss = 0.0;
  for (int c = 0; c < C; ++c) {
    double num = 0.0, sp = 0.0, sq = 0.0;
    for (int ni = 0; ni < probs.n; ++ni) {
      const T* p = probs.sample(ni) + plane * static_cast<size_t>(c);
      const T* q = onehot.sample(ni) + plane * static_cast<size_t>(c);
      for (size_t i = 0; i < plane; ++i) {
        num += static_cast<double>(p[i]) * static_cast<double>(q[i]);
        sp += static_cast<double>(p[i]);
        sq += static_cast<double>(q[i]);
      }
    }
    const double den = sp + sq + smooth_eps;
    const double two_num = 2.0 * num + smooth_eps;
    loss += 1.0 - two_num / den;
    const double inv_den2 = 1.0 / (den * den);
    for (int ni = 0; ni < probs.n; ++ni) {
      const T* q = onehot.sample(ni) + plane * static_cast<size_t>(c);
      T* g = res.grad.sample(ni) + plane * static_cast<size_t>(c);
      for (size_t i = 0; i < plane; ++i)
        g[i] = static_cast<T>(-(2.0 * static_cast<double>(q[i]) * den - two_num) * inv_den2 / C);
    }
  }
  res.value = loss / C;
  return res;
}

template <class T>
LossResult<T> weighted_bce_loss(const Tensor4<T>& probs, const Tensor4<T>& onehot,
                                const std::vector<double>& weights, bool reduce_mean) {
  require(probs.same_shape(onehot), ErrorKind::InvalidArgument,
          "weighted bce: prediction/target shape mismatch");
  require(static_cast<int>(weights.size()) == probs.c, ErrorKind::InvalidArgument,
          cat("weighted bce: ", weights.size(), " weights for ", probs.c, " classes"));
  for (double w : weights)
    require(w > 0.0, ErrorKind::InvalidArgument, "class weights must be > 0");
  constexpr double kClamp = 1e-7;
  const size_t plane = probs.plane();
  const double scale = reduce_mean ? 1.0 / (static_cast<double>(probs.n) * plane) : 1.0;

  LossResult<T> res;
  res.grad.resize(probs.n, probs.c, probs.h, probs.w);
  double loss = 0.0;
  for (int c = 0; c < probs.c; ++c) {
    const double w = weights[static_cast<size_t>(c)];
    for (int ni = 0; ni < probs.n; ++ni) {
      const T* p = probs.sample(ni) + plane * static_cast<size_t>(c);
      const T* q = onehot.sample(ni) + plane * static_cast<size_t>(c);
      T* g = res.grad.sample(ni) + plane * static_cast<size_t>(c);
      for (size_t i = 0; i < plane; ++i) {
        const double qi = static_cast<double>(q[i]);
        require(qi == 0.0 || qi == 1.0, ErrorKind::Validation,
                "weighted bce: targets must be binary");
        const double raw = static_cast<double>(p[i]);
        const double pi = std::min(1.0 - kClamp, std::max(kClamp, raw));
        loss -= w * (qi * std::log(pi) + (1.0 - qi) * std::log(1.0 - pi));
        const bool clamped = raw < kClamp || raw > 1.0 - kClamp;
        g[i] = clamped ? T(0)
                       : static_cast<T>(scale * w * (pi - qi) / (pi * (1.0 - pi)));
      }
    }
  }
  res.value = loss * scale;
  return res;
}

template LossResult<float> dice_loss(const Tensor4<float>&, const Tensor4<float>&, double);
template LossResult<double> dice_loss(const Tensor4<double>&, const Tensor4<double>&, double);
template LossResult<float> weighted_bce_loss(const Tensor4<float>&, const Tensor4<float>&,
                                             const std::vector<double>&, bool);
template LossResult<double> weighted_bce_loss(const Tensor4<double>&, const Tensor4<double>&,
                                              const std::vector<double>&, bool);

template <class T>
Tensor4<T> one_hot(const std::vector<int32_t>& labels, int n, int h, int w, int num_classes) {
  require(labels.size() == static_cast<size_t>(n) * h * w, ErrorKind::InvalidArgument,
          "one_hot: label count mismatch");
  Tensor4<T> out(n, num_classes, h, w);
  const size_t plane = static_cast<size_t>(h) * w;
  for (int ni = 0; ni < n; ++ni)
    for (size_t i = 0; i < plane; ++i) {
      const int32_t c = labels[static_cast<size_t>(ni) * plane + i];
      require(c >= 0 && c < num_classes, ErrorKind::Validation,
              cat("one_hot: label ", c, " outside ", num_classes, " classes"));
      out.sample(ni)[static_cast<size_t>(c) * plane + i] = T(1);
    }
  return out;
}

template Tensor4<float> one_hot(const std::vector<int32_t>&, int, int, int, int);
template Tensor4<double> one_hot(const std::vector<int32_t>&, int, int, int, int);

double gradient_check(LossKind kind, const Tensor4d& probs, const Tensor4d& onehot,
                      const std::vector<double>& weights, double smooth_eps) {
  require(probs.h <= 16 && probs.w <= 16 && probs.c <= 3, ErrorKind::InvalidArgument,
          "gradient_check probes must be <= 16x16 with <= 3 classes");
  auto eval = [&](const Tensor4d& p) {
    return kind == LossKind::DICE ? dice_loss(p, onehot, smooth_eps).value
                                  : weighted_bce_loss(p, onehot, weights).value;
  };
  const LossResult<double> analytic = kind == LossKind::DICE
                                          ? dice_loss(probs, onehot, smooth_eps)
                                          : weighted_bce_loss(probs, onehot, weights);
  const double h = 1e-5;
  double max_rel = 0.0;
  Tensor4d p = probs;
  for (size_t i = 0; i < p.v.size(); ++i) {
    const double orig = p.v[i];
    p.v[i] = orig + h;
    const double fp = eval(p);
    p.v[i] = orig - h;
    const double fm = eval(p);
    p.v[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic.grad.v[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
  }
  return max_rel;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

nlohmann::json fingerprint_to_json(const TrainingFingerprint& f) {
  return nlohmann::json{{"seed", f.seed},
                        {"epochs", f.epochs},
                        {"data_hash", f.data_hash},
                        {"initialized_from", f.initialized_from}};
}

TrainingFingerprint fingerprint_from_json(const nlohmann::json& j) {
  TrainingFingerprint f;
  f.seed = j.value("seed", uint64_t{0});
  f.epochs = j.value("epochs", 0);
  f.data_hash = j.value("data_hash", uint64_t{0});
  f.initialized_from = j.value("initialized_from", std::string());
  return f;
}

constexpr char kCkptMagic[8] = {'T', 'S', 'N', 'E', 'T', '0', '0', '1'};

}  // namespace

Checkpoint Checkpoint::from_model(const UnetF& model) {
  Checkpoint c;
  c.spec = model.spec();
  c.fingerprint = model.fingerprint();
  for (const Param<float>* p : model.params()) {
    c.param_names.push_back(p->name);
    c.param_shapes.push_back(p->shape);
    c.param_values.push_back(p->value);
  }
  return c;
}

void Checkpoint::apply_to(UnetF& model) const {
  require(model.spec().to_json() == spec.to_json(), ErrorKind::Validation,
          "checkpoint spec does not match the model spec");
  auto params = model.params();
  require(params.size() == param_names.size(), ErrorKind::Validation,
          "checkpoint parameter table size mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    require(params[i]->name == param_names[i] && params[i]->shape == param_shapes[i],
            ErrorKind::Validation, cat("checkpoint parameter mismatch at ", param_names[i]));
    params[i]->value = param_values[i];
  }
  model.fingerprint() = fingerprint;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["format_version"] = 1;
  j["spec"] = nlohmann::json::parse(spec.to_json());
  j["fingerprint"] = fingerprint_to_json(fingerprint);
  j["finished_epochs"] = finished_epochs;
  j["params"] = nlohmann::json::array();
  for (size_t i = 0; i < param_names.size(); ++i)
    j["params"].push_back({{"name", param_names[i]}, {"shape", param_shapes[i]}});
  if (optimizer) j["optimizer"] = {{"t", optimizer->t}, {"count", optimizer->m.size()}};
  if (scheduler)
    j["scheduler"] = {{"lr", scheduler->lr},
                      {"best_metric", scheduler->best_metric},
                      {"stagnant", scheduler->stagnant}};
  const std::string text = j.dump();

  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Io, cat(path.string(), ": cannot open for writing"));
  out.write(kCkptMagic, sizeof(kCkptMagic));
  const uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& v : param_values)
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (optimizer) {
    out.write(reinterpret_cast<const char*>(optimizer->m.data()),
              static_cast<std::streamsize>(optimizer->m.size() * sizeof(float)));
    out.write(reinterpret_cast<const char*>(optimizer->v.data()),
              static_cast<std::streamsize>(optimizer->v.size() * sizeof(float)));
  }
  require(out.good(), ErrorKind::Io, cat(path.string(), ": write failed"));
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, cat(path.string(), ": cannot open"));
  char magic[8];
  in.read(magic, sizeof(magic));
  require(in.good() && std::memcmp(magic, kCkptMagic, 8) == 0, ErrorKind::Format,
          cat(path.string(), ": not a checkpoint file"));
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  require(in.good(), ErrorKind::Format, cat(path.string(), ": truncated descriptor"));
  nlohmann::json j = nlohmann::json::parse(text);

  Checkpoint c;
  c.spec = NetworkSpec::from_json(j.at("spec").dump());
  c.fingerprint = fingerprint_from_json(j.at("fingerprint"));
  c.finished_epochs = j.value("finished_epochs", 0);
  for (const auto& p : j.at("params")) {
    c.param_names.push_back(p.at("name").get<std::string>());
    c.param_shapes.push_back(p.at("shape").get<std::vector<int>>());
  }
  for (size_t i = 0; i < c.param_names.size(); ++i) {
    size_t count = 1;
    for (int d : c.param_shapes[i]) count *= static_cast<size_t>(d);
    std::vector<float> v(count);
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    require(in.good(), ErrorKind::Format, cat(path.string(), ": truncated parameter data"));
    c.param_values.push_back(std::move(v));
  }
  if (j.contains("optimizer")) {
    OptimizerState st;
    st.t = j["optimizer"].at("t").get<int64_t>();
    const size_t count = j["optimizer"].at("count").get<size_t>();
    st.m.resize(count);
    st.v.resize(count);
    in.read(reinterpret_cast<char*>(st.m.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    in.read(reinterpret_cast<char*>(st.v.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    require(in.good(), ErrorKind::Format, cat(path.string(), ": truncated optimizer data"));
    c.optimizer = std::move(st);
  }
  if (j.contains("scheduler")) {
    SchedulerState st;
    st.lr = j["scheduler"].at("lr").get<double>();
    st.best_metric = j["scheduler"].at("best_metric").get<double>();
    st.stagnant = j["scheduler"].at("stagnant").get<int>();
    c.scheduler = st;
  }
  return c;
}

void initialize_from(UnetF& target, const Checkpoint& source, const std::string& provenance) {
  require(target.spec().compatible_except_classes(source.spec), ErrorKind::Validation,
          "initialize_from: source and target specs differ beyond the class count");
  const bool same_classes = target.spec().num_classes == source.spec.num_classes;
  std::vector<std::string> mismatched;
  auto params = target.params();
  for (Param<float>* p : params) {
    const bool is_head = p->name.rfind("head.", 0) == 0;
    int idx = -1;
    for (size_t i = 0; i < source.param_names.size(); ++i)
      if (source.param_names[i] == p->name) idx = static_cast<int>(i);
    if (idx < 0) {
      mismatched.push_back(p->name + " (missing in source)");
      continue;
    }
    if (p->shape != source.param_shapes[static_cast<size_t>(idx)]) {
      if (is_head && !same_classes) continue;  // fresh head kept
      mismatched.push_back(p->name + " (shape mismatch)");
      continue;
    }
    p->value = source.param_values[static_cast<size_t>(idx)];
  }
  require(mismatched.empty(), ErrorKind::Validation, [&] {
    std::string msg = "initialize_from: incompatible parameters:";
    for (const auto& m : mismatched) msg += "\n  - " + m;
    return msg;
  }());
  target.fingerprint().initialized_from =
      provenance.empty() ? cat("seed:", source.fingerprint.seed, ",epochs:",
                               source.fingerprint.epochs)
                         : provenance;
}

}  // namespace thalseg
