#include <algorithm>

#include "aalr/pairs.hpp"
#include "aalr/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace aalr;

namespace {

std::vector<std::pair<std::uint32_t, std::uint32_t>> as_sorted(const std::vector<PixelPair>& v) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  out.reserve(v.size());
  for (const auto& p : v) out.emplace_back(p.center, p.neighbor);
  std::sort(out.begin(), out.end());
  return out;
}

template <typename T>
std::vector<T> sorted(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  return v;
}

LabelMap random_labels(Rng& rng, std::size_t h, std::size_t w, int classes,
                       double neutral_frac) {
  LabelMap m(h, w);
  for (auto& v : m.labels)
    v = rng.next_double() < neutral_frac ? kNeutralLabel
                                         : static_cast<std::uint8_t>(rng.next_below(classes));
  return m;
}

}  // namespace

TEST_CASE("2x2 worked example") {
  LabelMap m(2, 2);
  m.at(0, 0) = 1;
  m.at(0, 1) = 1;
  m.at(1, 0) = 0;
  m.at(1, 1) = kNeutralLabel;
  const PairSet ps = build_pairs(m, KernelSet{{1}});
  REQUIRE(ps.per_dilation.size() == 1);
  const auto& dp = ps.per_dilation[0];

  // flat indices: (0,0)=0 (0,1)=1 (1,0)=2 (1,1)=3
  CHECK(as_sorted(dp.fg_pos) ==
        std::vector<std::pair<std::uint32_t, std::uint32_t>>{{0, 1}, {1, 0}});
  CHECK(dp.bg_pos.empty());
  CHECK(as_sorted(dp.neg) ==
        std::vector<std::pair<std::uint32_t, std::uint32_t>>{{0, 2}, {1, 2}, {2, 0}, {2, 1}});

  // no pair may touch the neutral pixel
  for (const auto& set : {dp.fg_pos, dp.bg_pos, dp.neg})
    for (const auto& p : set) {
      CHECK(p.center != 3);
      CHECK(p.neighbor != 3);
    }

  const auto counts = pair_counts(ps);
  CHECK(counts[0].fg_pos == 2);
  CHECK(counts[0].bg_pos == 0);
  CHECK(counts[0].neg == 4);

  // agrees with the independent enumeration
  const auto ref = oracle::enumerate_pairs(m, 1);
  CHECK(as_sorted(dp.fg_pos) == sorted(ref.fg));
  CHECK(as_sorted(dp.neg) == sorted(ref.neg));
}

TEST_CASE("all-neutral map yields empty sets at every dilation") {
  LabelMap m(6, 6, kNeutralLabel);
  const PairSet ps = build_pairs(m, KernelSet{{1, 2, 3}});
  for (const auto& dp : ps.per_dilation) {
    CHECK(dp.fg_pos.empty());
    CHECK(dp.bg_pos.empty());
    CHECK(dp.neg.empty());
  }
}

TEST_CASE("uniform background 5x5 count matches the counting oracle") {
  LabelMap m(5, 5, 0);
  const PairSet ps = build_pairs(m, KernelSet{{1}});
  const auto counts = pair_counts(ps);
  CHECK(counts[0].fg_pos == 0);
  CHECK(counts[0].neg == 0);
  const auto ref = oracle::enumerate_pairs(m, 1);
  CHECK(counts[0].bg_pos == ref.bg.size());
  // ordered in-bounds 8-neighbor pairs on a 5x5 grid (both directions)
  CHECK(counts[0].bg_pos == 144);
}

TEST_CASE("doubling the map height roughly doubles interior-dominated counts") {
  LabelMap small(16, 16, 0);
  LabelMap tall(32, 16, 0);
  const auto a = oracle::enumerate_pairs(small, 1).bg.size();
  const auto b = oracle::enumerate_pairs(tall, 1).bg.size();
  const auto ca = pair_counts(build_pairs(small, KernelSet{{1}}))[0].bg_pos;
  const auto cb = pair_counts(build_pairs(tall, KernelSet{{1}}))[0].bg_pos;
  CHECK(ca == a);
  CHECK(cb == b);
  const double ratio = double(b) / double(a);
  CHECK(ratio > 1.9);
  CHECK(ratio < 2.1);
}

TEST_CASE("partition completeness against brute force on random maps") {
  Rng rng(555);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t h = 2 + rng.next_below(31);
    const std::size_t w = 2 + rng.next_below(31);
    const LabelMap m = random_labels(rng, h, w, 4, 0.25);
    const KernelSet kernels{{1, 2, 5}};
    const PairSet ps = build_pairs(m, kernels);
    for (std::size_t k = 0; k < kernels.dilations.size(); ++k) {
      const auto ref = oracle::enumerate_pairs(m, kernels.dilations[k]);
      const auto& dp = ps.per_dilation[k];
      CHECK(as_sorted(dp.fg_pos) == sorted(ref.fg));
      CHECK(as_sorted(dp.bg_pos) == sorted(ref.bg));
      CHECK(as_sorted(dp.neg) == sorted(ref.neg));
      // each ordered neighbor pair lands in exactly one subset
      CHECK(dp.fg_pos.size() + dp.bg_pos.size() + dp.neg.size() ==
            ref.fg.size() + ref.bg.size() + ref.neg.size());
    }
  }
}

TEST_CASE("enumeration order is deterministic") {
  Rng rng(9);
  const LabelMap m = random_labels(rng, 12, 9, 3, 0.2);
  const PairSet a = build_pairs(m, KernelSet{{1, 4}});
  const PairSet b = build_pairs(m, KernelSet{{1, 4}});
  for (std::size_t k = 0; k < a.per_dilation.size(); ++k) {
    CHECK(a.per_dilation[k].fg_pos == b.per_dilation[k].fg_pos);
    CHECK(a.per_dilation[k].bg_pos == b.per_dilation[k].bg_pos);
    CHECK(a.per_dilation[k].neg == b.per_dilation[k].neg);
  }
}

TEST_CASE("argument errors") {
  LabelMap m(4, 4, 0);
  CHECK_THROWS_AS(build_pairs(m, KernelSet{{}}), validation_error);
  CHECK_THROWS_AS(build_pairs(m, KernelSet{{2, 2}}), validation_error);
  CHECK_THROWS_AS(build_pairs(m, KernelSet{{-1}}), validation_error);
  LabelMap tiny(1, 1, 0);
  CHECK_THROWS_AS(build_pairs(tiny, KernelSet{{1}}), validation_error);
  CHECK_THROWS_AS(LabelMap(0, 3), validation_error);
}

TEST_CASE("pair_counts of empty sets") {
  LabelMap m(3, 3, kNeutralLabel);
  const auto counts = pair_counts(build_pairs(m, KernelSet{{1}}));
  CHECK(counts[0].fg_pos == 0);
  CHECK(counts[0].bg_pos == 0);
  CHECK(counts[0].neg == 0);
}
