#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "aalr/pairs.hpp"
#include "aalr/tensor.hpp"

namespace aalr {

enum class AffinityMode { kSA, kAA };

// How the two endpoint confidences combine into the connection weight.
enum class ModelingFn { kMax, kMin, kPlus };

struct AffinityConfig {
  double margin_m = 3.0;
  KernelSet kernels;
  AffinityMode mode = AffinityMode::kSA;
  ModelingFn modeling_fn = ModelingFn::kMax;  // adaptive mode only
  double prob_floor = 1e-8;
  // The connection weight is a detached penalty by default; set false to let
  // gradients flow into the confidence map.
  bool detach_conf = true;
  int threads = 1;
};

struct DilationTerms {
  int dilation = 0;
  double fg_pos = 0, bg_pos = 0, neg = 0;
};

struct AffinityReport {
  double total = 0;  // sum over dilations of fg_pos + bg_pos + 2 * neg
  std::vector<DilationTerms> per_dilation;
  DenseTensor grad_probs;                 // same dims as the probability map
  std::optional<DenseTensor> grad_conf;   // adaptive mode with detach_conf=false
};

// KL(p || q) with both distributions clamped at `floor` before the logs.
// Exactly zero for p == q. Throws on length mismatch.
double kl_pair(std::span<const float> p, std::span<const float> q, double floor);

// Connection weight from the two endpoint confidences. Throws if either
// confidence is outside [0, 1].
double connectivity(double v_i, double v_j, ModelingFn fn);

// Standard affinity loss over probability maps: per dilation, the mean pair
// KL over same-label sets plus a margin hinge over differing-label pairs.
AffinityReport sa_loss(const DenseTensor& probs, const PairSet& pairs, const AffinityConfig& cfg);

// Adaptive variant: positive pair terms are scaled by the connection weight,
// and the hinge margin becomes weight * margin.
AffinityReport aa_loss(const DenseTensor& probs, const DenseTensor& conf, const PairSet& pairs,
                       const AffinityConfig& cfg);

namespace detail {

// Double-precision evaluation core shared by the f32 public API and the
// finite-difference harness. `state_signature` fingerprints every discrete
// branch (hinge activity, floor clamps) so the harness can reject
// perturbations that cross a kink.
struct AffinityEval {
  double total = 0;
  std::vector<DilationTerms> per_dilation;
  std::vector<double> grad_probs;  // empty unless want_grad
  std::vector<double> grad_conf;   // empty unless want_grad, AA, and !detach_conf
  std::uint64_t state_signature = 0;
};

template <typename In>
AffinityEval affinity_eval(const In* probs, std::size_t height, std::size_t width,
                           std::size_t channels, const In* conf, const PairSet& pairs,
                           const AffinityConfig& cfg, bool want_grad);

extern template AffinityEval affinity_eval<float>(const float*, std::size_t, std::size_t,
                                                  std::size_t, const float*, const PairSet&,
                                                  const AffinityConfig&, bool);
extern template AffinityEval affinity_eval<double>(const double*, std::size_t, std::size_t,
                                                   std::size_t, const double*, const PairSet&,
                                                   const AffinityConfig&, bool);

}  // namespace detail

}  // namespace aalr
