/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#pragma once

#include <vector>

#include "thalseg/common.hpp"

namespace thalseg {

/// Dense NCHW tensor (w fastest). Sample n occupies a contiguous block whose
/// layout is column-major (h*w rows, c columns) when viewed as a matrix,
/// which is what the conv GEMMs exploit.
template <class T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_) { resize(n_, c_, h_, w_); }

  void resize(int n_, int c_, int h_, int w_) {
    n = n_;
    c = c_;
    h = h_;
    w = w_;
    v.assign(static_cast<size_t>(n) * c * h * w, T(0));
  }
  void zero() { std::fill(v.begin(), v.end(), T(0)); }
  size_t size() const { return v.size(); }
  size_t plane() const { return static_cast<size_t>(h) * w; }
  size_t sample_stride() const { return static_cast<size_t>(c) * h * w; }
  T* sample(int i) { return v.data() + sample_stride() * static_cast<size_t>(i); }
  const T* sample(int i) const { return v.data() + sample_stride() * static_cast<size_t>(i); }
  T& at(int ni, int ci, int hi, int wi) {
    return v[((static_cast<size_t>(ni) * c + ci) * h + hi) * w + wi];
  }
  const T& at(int ni, int ci, int hi, int wi) const {
    return v[((static_cast<size_t>(ni) * c + ci) * h + hi) * w + wi];
  }
  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
};

using Tensor4f = Tensor4<float>;
using Tensor4d = Tensor4<double>;

}  // namespace thalseg
