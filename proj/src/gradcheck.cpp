#include "aalr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace aalr {

namespace detail {

LabelMap random_label_map(Rng& rng, std::size_t height, std::size_t width, int num_classes,
                          double neutral_frac) {
  LabelMap map(height, width);
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::vector<bool> seen(num_classes, false);
    int distinct = 0;
    for (std::size_t i = 0; i < map.pixels(); ++i) {
      if (rng.next_double() < neutral_frac) {
        map.labels[i] = kNeutralLabel;
      } else {
        const int cls = static_cast<int>(rng.next_below(num_classes));
        map.labels[i] = static_cast<std::uint8_t>(cls);
        if (!seen[cls]) {
          seen[cls] = true;
          ++distinct;
        }
      }
    }
    if (distinct >= 2) return map;
  }
  throw contract_error("random_label_map failed to produce two classes");
}

std::vector<double> random_prob_map(Rng& rng, std::size_t n_px, std::size_t channels) {
  // Softmax of random logits mixed with the uniform distribution. The mixture
  // keeps every entry >= 0.3/C: the finite-difference contract pins the step
  // at 1e-3, and the KL terms carry 1/p^2-scale curvature, so unbounded small
  // probabilities would make central differences themselves inaccurate beyond
  // the 1e-4 tolerance.
  std::vector<double> probs(n_px * channels);
  const double lambda = 0.3;
  for (std::size_t i = 0; i < n_px; ++i) {
    double* row = probs.data() + i * channels;
    double zmax = -1e300;
    for (std::size_t c = 0; c < channels; ++c) {
      row[c] = rng.uniform(-2.0, 2.0);
      zmax = std::max(zmax, row[c]);
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      row[c] = std::exp(row[c] - zmax);
      sum += row[c];
    }
    for (std::size_t c = 0; c < channels; ++c)
      row[c] = (1.0 - lambda) * (row[c] / sum) + lambda / double(channels);
  }
  return probs;
}

std::vector<double> random_conf_map(Rng& rng, std::size_t n_px) {
  std::vector<double> conf(n_px);
  // keep away from the [0,1] boundary so +/- perturbations of other inputs
  // never interact with the range checks
  for (auto& v : conf) v = rng.uniform(0.05, 0.95);
  return conf;
}

namespace {

// Relative error with a unit scale guard (as in the usual autograd
// gradcheck): coordinates where pair contributions nearly cancel have tiny
// net gradients, while the finite-difference truncation error at the pinned
// 1e-3 step does not cancel, so a purely relative comparison would be
// dominated by FD noise rather than the analytic formula under test.
double rel_err(double analytic, double fd) {
  const double denom = std::max({std::abs(analytic), std::abs(fd), 1.0});
  return std::abs(analytic - fd) / denom;
}

}  // namespace

}  // namespace detail

GradCheckResult affinity_grad_check(AffinityMode mode, std::size_t height, std::size_t width,
                                    std::size_t channels, const KernelSet& kernels,
                                    std::uint64_t seed, std::size_t target_coords) {
  using namespace detail;
  Rng rng(seed);
  const std::size_t n_px = height * width;
  LabelMap labels = random_label_map(rng, height, width, static_cast<int>(channels), 0.2);
  std::vector<double> probs = random_prob_map(rng, n_px, channels);
  std::vector<double> conf = random_conf_map(rng, n_px);
  const PairSet pairs = build_pairs(labels, kernels);

  AffinityConfig cfg;
  cfg.kernels = kernels;
  cfg.mode = mode;
  const bool adaptive = mode == AffinityMode::kAA;
  const double* conf_ptr = adaptive ? conf.data() : nullptr;

  const AffinityEval base =
      affinity_eval<double>(probs.data(), height, width, channels, conf_ptr, pairs, cfg, true);

  GradCheckResult r;
  const std::size_t max_attempts = target_coords * 4;
  for (std::size_t attempt = 0; attempt < max_attempts && r.checked < target_coords; ++attempt) {
    const std::size_t coord = static_cast<std::size_t>(rng.next_below(probs.size()));
    const double saved = probs[coord];
    probs[coord] = saved + kFdStep;
    const AffinityEval plus =
        affinity_eval<double>(probs.data(), height, width, channels, conf_ptr, pairs, cfg, false);
    probs[coord] = saved - kFdStep;
    const AffinityEval minus =
        affinity_eval<double>(probs.data(), height, width, channels, conf_ptr, pairs, cfg, false);
    probs[coord] = saved;
    if (plus.state_signature != minus.state_signature ||
        plus.state_signature != base.state_signature) {
      ++r.excluded;
      continue;
    }
    const double fd = (plus.total - minus.total) / (2.0 * kFdStep);
    r.max_rel_err = std::max(r.max_rel_err, rel_err(base.grad_probs[coord], fd));
    ++r.checked;
  }
  return r;
}

GradCheckResult lr_grad_check(std::size_t height, std::size_t width, std::size_t dim,
                              int num_classes, double gamma, std::uint64_t seed,
                              std::size_t target_coords) {
  using namespace detail;
  Rng rng(seed);
  const std::size_t n_px = height * width;
  LabelMap labels = random_label_map(rng, height, width, num_classes, 0.2);
  std::vector<double> conf = random_conf_map(rng, n_px);
  std::vector<double> embed(n_px * dim);
  for (auto& v : embed) v = rng.uniform(-1.0, 1.0);

  LrConfig cfg;
  cfg.gamma = gamma;

  const LrEval base = lr_eval<double>(embed.data(), dim, labels, conf.data(), cfg, true);
  // freeze centroids, assignment, and alpha at the base point
  const CentroidSet centroids = centroids_core<double>(embed.data(), dim, labels, conf.data());
  const Reassignment assign = reassign_core<double>(embed.data(), dim, labels, centroids, cfg);

  GradCheckResult r;
  const std::size_t max_attempts = target_coords * 4;
  for (std::size_t attempt = 0; attempt < max_attempts && r.checked < target_coords; ++attempt) {
    const std::size_t coord = static_cast<std::size_t>(rng.next_below(embed.size()));
    const double saved = embed[coord];
    std::uint64_t sig_plus = 0, sig_minus = 0;
    embed[coord] = saved + kFdStep;
    const double f_plus = lr_frozen_value<double>(embed.data(), dim, centroids, assign, cfg, &sig_plus);
    embed[coord] = saved - kFdStep;
    const double f_minus =
        lr_frozen_value<double>(embed.data(), dim, centroids, assign, cfg, &sig_minus);
    embed[coord] = saved;
    if (sig_plus != sig_minus || sig_plus != base.state_signature) {
      ++r.excluded;
      continue;
    }
    const double fd = (f_plus - f_minus) / (2.0 * kFdStep);
    r.max_rel_err = std::max(r.max_rel_err, rel_err(base.grad_embed[coord], fd));
    ++r.checked;
  }
  return r;
}

GradCheckResult model_grad_check(std::size_t height, std::size_t width, int num_classes,
                                 std::uint64_t seed, std::size_t target_coords) {
  using namespace detail;
  Rng rng(seed);
  const std::size_t n_px = height * width;

  TrainConfig cfg;
  cfg.model.num_classes = num_classes;
  cfg.model.in_channels = 3;
  cfg.model.hidden = 8;
  cfg.model.embed_dim = 8;
  cfg.affinity.kernels = KernelSet{{1, 2}};
  cfg.affinity.mode = AffinityMode::kAA;
  cfg.lr_loss.gamma = 2.0;
  cfg.seed = seed;

  TrainSample sample;
  sample.image = DenseTensor({height, width, 3});
  for (auto& v : sample.image.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
  sample.pseudo = random_label_map(rng, height, width, num_classes, 0.2);
  sample.image_labels.assign(num_classes, 0);
  for (std::size_t i = 0; i < n_px; ++i) {
    const std::uint8_t lab = sample.pseudo.labels[i];
    if (lab != kNeutralLabel && lab != 0) sample.image_labels[lab] = 1;
  }

  Rng model_rng(mix64(seed));
  ToyModel model = make_model(cfg.model, model_rng);
  const PairSet pairs = build_pairs(sample.pseudo, cfg.affinity.kernels);

  ParamsD params = promote(model);
  const StepEval base = objective_grad(params, sample, pairs, cfg, /*lr_active=*/true);

  std::vector<double>* arrays[] = {&params.c1w, &params.c1b, &params.c2w,
                                   &params.c2b, &params.hw,  &params.hb};
  const std::vector<double>* grads[] = {&base.g_c1w, &base.g_c1b, &base.g_c2w,
                                        &base.g_c2b, &base.g_hw,  &base.g_hb};
  std::size_t total_params = 0;
  for (auto* a : arrays) total_params += a->size();

  const TotalEval base_value = objective_value_frozen(params, sample, pairs, cfg, base);

  GradCheckResult r;
  const std::size_t max_attempts = target_coords * 4;
  for (std::size_t attempt = 0; attempt < max_attempts && r.checked < target_coords; ++attempt) {
    std::size_t flat = static_cast<std::size_t>(rng.next_below(total_params));
    std::size_t arr = 0;
    while (flat >= arrays[arr]->size()) {
      flat -= arrays[arr]->size();
      ++arr;
    }
    double& slot = (*arrays[arr])[flat];
    const double saved = slot;
    slot = saved + kFdStep;
    const TotalEval plus = objective_value_frozen(params, sample, pairs, cfg, base);
    slot = saved - kFdStep;
    const TotalEval minus = objective_value_frozen(params, sample, pairs, cfg, base);
    slot = saved;
    if (plus.state_signature != minus.state_signature ||
        plus.state_signature != base_value.state_signature) {
      ++r.excluded;
      continue;
    }
    const double fd = (plus.total - minus.total) / (2.0 * kFdStep);
    r.max_rel_err = std::max(r.max_rel_err, rel_err((*grads[arr])[flat], fd));
    ++r.checked;
  }
  return r;
}

}  // namespace aalr
