/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>

namespace thalseg {

enum class ErrorKind {
  InvalidArgument,
  Io,
  Format,
  Validation,
  Numeric,
};

/// Exception used across the library; the C API maps kind() to a status code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

namespace detail {
inline void format_into(std::ostringstream&) {}
template <class T, class... Rest>
void format_into(std::ostringstream& os, const T& t, const Rest&... rest) {
  os << t;
  format_into(os, rest...);
}
}  // namespace detail

template <class... Args>
std::string cat(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  return os.str();
}

// ---------------------------------------------------------------------------
// Deterministic RNG. All stochastic steps in the library draw from this
// generator (xoshiro256** seeded via splitmix64) so that results are
// bit-reproducible for a fixed seed independent of the C++ runtime.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
    have_gauss_ = false;
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n) {
    // Rejection sampling keeps the distribution exact.
    const uint64_t limit = n * ((~uint64_t{0}) / n);
    uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  /// Standard normal via Box-Muller (cached pair for determinism).
  double normal() {
    if (have_gauss_) {
      have_gauss_ = false;
      return gauss_;
    }
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    gauss_ = r * std::sin(a);
    have_gauss_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  /// Derive an independent sub-seed; used to key per-subject / per-epoch streams.
  static uint64_t derive(uint64_t seed, uint64_t stream) {
    uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL + stream * 0xd1342543de82ef95ULL);
    (void)splitmix64(s);
    return splitmix64(s);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
  double gauss_ = 0.0;
  bool have_gauss_ = false;
};

/// FNV-1a over raw bytes; used for data fingerprints and file checksums.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Worker-pool knob. Work is always split into a fixed number of chunks and
// partial results are combined in chunk order, so numeric results do not
// depend on how many threads execute the chunks.
// ---------------------------------------------------------------------------

int jobs();
void set_jobs(int n);

/// Runs fn(begin, end) over [0, n) split into fixed chunks; chunks may execute
/// on up to jobs() threads. fn must write only to disjoint outputs per index.
void parallel_chunks(int64_t n, const std::function<void(int64_t, int64_t, int)>& fn);

/// Number of chunks parallel_chunks uses (fixed; independent of jobs()).
constexpr int kParallelChunks = 8;

}  // namespace thalseg
