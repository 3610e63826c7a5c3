#include "aalr/pairs.hpp"

namespace aalr {

PairSet build_pairs(const LabelMap& labels, const KernelSet& kernels) {
  kernels.validate();
  // 2x2 is the smallest map with any in-bounds neighbor pair.
  if (labels.height < 2 || labels.width < 2)
    throw validation_error("label map too small for pair enumeration (need at least 2x2)");
  if (labels.pixels() > 0xFFFFFFFFull)
    throw validation_error("label map exceeds 32-bit pixel indexing");

  const long h = static_cast<long>(labels.height);
  const long w = static_cast<long>(labels.width);

  PairSet out;
  out.height = labels.height;
  out.width = labels.width;
  out.per_dilation.reserve(kernels.dilations.size());

  for (int d : kernels.dilations) {
    DilationPairs dp;
    dp.dilation = d;
    const auto offsets = kernel_offsets(d);
    for (long ch = 0; ch < h; ++ch) {
      for (long cw = 0; cw < w; ++cw) {
        const std::uint8_t lc = labels.at(ch, cw);
        if (lc == kNeutralLabel) continue;
        const std::uint32_t ci = static_cast<std::uint32_t>(ch * w + cw);
        for (const auto& [dh, dw] : offsets) {
          const long nh = ch + dh, nw = cw + dw;
          if (nh < 0 || nh >= h || nw < 0 || nw >= w) continue;
          const std::uint8_t ln = labels.at(nh, nw);
          if (ln == kNeutralLabel) continue;
          const PixelPair pair{ci, static_cast<std::uint32_t>(nh * w + nw)};
          if (lc == ln) {
            (lc == 0 ? dp.bg_pos : dp.fg_pos).push_back(pair);
          } else {
            dp.neg.push_back(pair);
          }
        }
      }
    }
    out.per_dilation.push_back(std::move(dp));
  }
  return out;
}

std::vector<PairCounts> pair_counts(const PairSet& pairs) {
  std::vector<PairCounts> counts;
  counts.reserve(pairs.per_dilation.size());
  for (const auto& dp : pairs.per_dilation)
    counts.push_back({dp.dilation, dp.fg_pos.size(), dp.bg_pos.size(), dp.neg.size()});
  return counts;
}

}  // namespace aalr
