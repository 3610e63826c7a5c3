#pragma once

#include <cstdint>

#include "aalr/affinity.hpp"
#include "aalr/metric.hpp"
#include "aalr/net.hpp"

namespace aalr {

// Pinned contract tolerances for analytic-vs-finite-difference agreement.
inline constexpr double kLossGradTol = 1e-4;   // affinity and label-reassign losses
inline constexpr double kModelGradTol = 1e-3;  // full training objective w.r.t. parameters
inline constexpr double kFdStep = 1e-3;        // central-difference step on the 64-bit shadow

struct GradCheckResult {
  double max_rel_err = 0;
  std::size_t checked = 0;   // coordinates compared
  std::size_t excluded = 0;  // coordinates rejected because the probe crossed a kink
};

// Seeded random instance, analytic gradient vs central differences on a
// double-precision shadow of the same evaluation core. Coordinates whose
// +/-h probes disagree on any discrete branch state are excluded.
GradCheckResult affinity_grad_check(AffinityMode mode, std::size_t height, std::size_t width,
                                    std::size_t channels, const KernelSet& kernels,
                                    std::uint64_t seed, std::size_t target_coords = 120);

// Centroids, assignments, and alpha are frozen at the base point during
// differencing, matching the declared gradient contract.
GradCheckResult lr_grad_check(std::size_t height, std::size_t width, std::size_t dim,
                              int num_classes, double gamma, std::uint64_t seed,
                              std::size_t target_coords = 120);

// Full training objective w.r.t. a sampled subset of model parameters, with
// the step-frozen quantities (confidence, centroids, assignment) held fixed.
GradCheckResult model_grad_check(std::size_t height, std::size_t width, int num_classes,
                                 std::uint64_t seed, std::size_t target_coords = 100);

namespace detail {

// Random label map with ~neutral_frac neutral pixels and at least two
// distinct classes (background included in the draw).
LabelMap random_label_map(Rng& rng, std::size_t height, std::size_t width, int num_classes,
                          double neutral_frac);

std::vector<double> random_prob_map(Rng& rng, std::size_t n_px, std::size_t channels);
std::vector<double> random_conf_map(Rng& rng, std::size_t n_px);

}  // namespace detail

}  // namespace aalr
