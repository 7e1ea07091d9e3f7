#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace mpiforge {

/// Resolve a requested worker count: 0 means MPIFORGE_THREADS, then hardware concurrency.
inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("MPIFORGE_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Split [0, count) into `chunks` contiguous ranges; range k is a pure function of (count, chunks, k).
inline std::pair<int, int> chunk_range(int count, int chunks, int k) {
  const int base = count / chunks;
  const int rem = count % chunks;
  const int begin = k * base + std::min(k, rem);
  return {begin, begin + base + (k < rem ? 1 : 0)};
}

/// Run fn(begin, end, chunk) over `chunks` static ranges, one thread per chunk.
/// Results written per index are independent of the thread count as long as fn is.
template <typename Fn>
void parallel_chunks(int count, int threads, Fn&& fn) {
  threads = std::max(1, std::min(threads, count));
  if (threads <= 1) {
    if (count > 0) fn(0, count, 0);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(threads);
  workers.reserve(threads - 1);
  for (int k = 1; k < threads; ++k) {
    workers.emplace_back([&, k] {
      try {
        auto [b, e] = chunk_range(count, threads, k);
        fn(b, e, k);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  try {
    auto [b, e] = chunk_range(count, threads, 0);
    fn(b, e, 0);
  } catch (...) {
    errors[0] = std::current_exception();
  }
  for (auto& w : workers) w.join();
  for (auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
}

}  // namespace mpiforge
