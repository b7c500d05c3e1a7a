#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace r3d {

// Runs fn(0..n-1) over up to n_threads workers with a static stride schedule.
// Work item i always means the same computation regardless of thread count;
// callers are responsible for combining results in index order. The first
// exception (by item index) is rethrown on the calling thread.
template <class Fn>
void parallel_for(std::size_t n, int n_threads, Fn&& fn) {
  if (n == 0) return;
  const std::size_t used =
      std::min(static_cast<std::size_t>(std::max(1, n_threads)), n);
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < n; i += stride) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (used <= 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(used);
    for (std::size_t w = 0; w < used; ++w) pool.emplace_back(run, w, used);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace r3d
