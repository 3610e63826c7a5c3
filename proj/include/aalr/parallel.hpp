#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace aalr {

// Fixed block size for deterministic reductions. Partial sums are computed
// per block in index order and folded in block order, so the result is
// bit-identical for any thread count.
inline constexpr std::size_t kReduceBlock = 2048;

template <typename TermFn>
double blocked_sum(std::size_t n, int threads, TermFn&& term) {
  if (n == 0) return 0.0;
  const std::size_t nblocks = (n + kReduceBlock - 1) / kReduceBlock;
  std::vector<double> partial(nblocks, 0.0);
  auto run_block = [&](std::size_t b) {
    const std::size_t lo = b * kReduceBlock;
    const std::size_t hi = std::min(n, lo + kReduceBlock);
    double s = 0.0;
    for (std::size_t k = lo; k < hi; ++k) s += term(k);
    partial[b] = s;
  };
  if (threads <= 1 || nblocks == 1) {
    for (std::size_t b = 0; b < nblocks; ++b) run_block(b);
  } else {
    const std::size_t t_count = std::min<std::size_t>(static_cast<std::size_t>(threads), nblocks);
    std::vector<std::thread> pool;
    pool.reserve(t_count);
    for (std::size_t t = 0; t < t_count; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t b = t; b < nblocks; b += t_count) run_block(b);
      });
    }
    for (auto& th : pool) th.join();
  }
  double total = 0.0;
  for (std::size_t b = 0; b < nblocks; ++b) total += partial[b];
  return total;
}

// Parallel fill of disjoint output slots; order-independent by construction.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (n == 0) return;
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t t_count = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  pool.reserve(t_count);
  const std::size_t chunk = (n + t_count - 1) / t_count;
  for (std::size_t t = 0; t < t_count; ++t) {
    const std::size_t lo = t * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace aalr
