#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "aalr/tensor.hpp"

namespace aalr {

// Dilation rates of the 3x3 neighborhood kernels; strictly increasing.
struct KernelSet {
  std::vector<int> dilations;

  void validate() const {
    if (dilations.empty()) throw validation_error("kernel set must not be empty");
    int prev = 0;
    for (int d : dilations) {
      if (d <= prev)
        throw validation_error("kernel dilations must be positive and strictly increasing");
      prev = d;
    }
  }
};

// Ordered pixel pair: `center` is the kernel center i, `neighbor` the sampled
// offset pixel j. Both are flat row-major indices. KL is asymmetric, so both
// directions of a symmetric pair are enumerated.
struct PixelPair {
  std::uint32_t center = 0, neighbor = 0;
  bool operator==(const PixelPair&) const = default;
};

struct DilationPairs {
  int dilation = 0;
  std::vector<PixelPair> fg_pos;  // same non-background label
  std::vector<PixelPair> bg_pos;  // both background
  std::vector<PixelPair> neg;     // labels differ
};

struct PairSet {
  std::size_t height = 0, width = 0;
  std::vector<DilationPairs> per_dilation;
};

// The 8 offsets of a 3x3 kernel at dilation d, fixed row-major order.
inline std::array<std::pair<int, int>, 8> kernel_offsets(int d) {
  return {{{-d, -d}, {-d, 0}, {-d, d}, {0, -d}, {0, d}, {d, -d}, {d, 0}, {d, d}}};
}

// Enumerates one ordered pair per (dilation, non-neutral center, in-bounds
// non-neutral neighbor), row-major over centers, offsets in kernel_offsets
// order. Deterministic, so downstream reductions are bit-stable.
PairSet build_pairs(const LabelMap& labels, const KernelSet& kernels);

struct PairCounts {
  int dilation = 0;
  std::size_t fg_pos = 0, bg_pos = 0, neg = 0;
};

std::vector<PairCounts> pair_counts(const PairSet& pairs);

}  // namespace aalr
