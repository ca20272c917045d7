/*
 * (C) Copyright 2026 thalseg developers
 *
 * This software is licensed under the terms of the Apache Licence Version 2.0
 * which can be obtained at http://www.apache.org/licenses/LICENSE-2.0.
 */
#include "thalseg/common.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace thalseg {

namespace {
std::atomic<int> g_jobs{0};  // 0 = auto
}

int jobs() {
  int j = g_jobs.load();
  if (j > 0) return j;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void set_jobs(int n) { g_jobs.store(n); }

void parallel_chunks(int64_t n, const std::function<void(int64_t, int64_t, int)>& fn) {
  if (n <= 0) return;
  const int chunks = kParallelChunks;
  const int64_t step = (n + chunks - 1) / chunks;
  const int nthreads = std::min<int>(jobs(), chunks);
  if (nthreads <= 1) {
    for (int c = 0; c < chunks; ++c) {
      const int64_t b = c * step;
      if (b >= n) break;
      fn(b, std::min<int64_t>(n, b + step), c);
    }
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int c = next.fetch_add(1);
      if (c >= chunks) return;
      const int64_t b = c * step;
      if (b >= n) continue;
      fn(b, std::min<int64_t>(n, b + step), c);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(nthreads) - 1);
  for (int t = 1; t < nthreads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
}

}  // namespace thalseg
