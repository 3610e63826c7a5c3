#include "aalr/affinity.hpp"

#include <cmath>

#include "aalr/parallel.hpp"
#include "aalr/rng.hpp"

namespace aalr {

double kl_pair(std::span<const float> p, std::span<const float> q, double floor) {
  if (p.size() != q.size())
    throw validation_error("kl_pair: length mismatch " + std::to_string(p.size()) + " vs " +
                           std::to_string(q.size()));
  double s = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    const double pc = p[c], qc = q[c];
    s += pc * (std::log(std::max(pc, floor)) - std::log(std::max(qc, floor)));
  }
  return s;
}

double connectivity(double v_i, double v_j, ModelingFn fn) {
  if (!(v_i >= 0.0 && v_i <= 1.0) || !(v_j >= 0.0 && v_j <= 1.0))
    throw validation_error("connectivity: confidence outside [0,1]");
  switch (fn) {
    case ModelingFn::kMax: return std::max(v_i, v_j);
    case ModelingFn::kMin: return std::min(v_i, v_j);
    case ModelingFn::kPlus: return 0.5 * (v_i + v_j);
  }
  throw validation_error("connectivity: unknown modeling function");
}

namespace detail {

namespace {

constexpr std::uint64_t kSigSiteClamp = 5, kSigSiteHinge = 6;

}  // namespace

template <typename In>
AffinityEval affinity_eval(const In* probs, std::size_t height, std::size_t width,
                           std::size_t channels, const In* conf, const PairSet& pairs,
                           const AffinityConfig& cfg, bool want_grad) {
  const std::size_t n_px = height * width;
  const std::size_t n = n_px * channels;
  const bool adaptive = cfg.mode == AffinityMode::kAA;
  const double m = cfg.margin_m;
  const double floor = cfg.prob_floor;
  const int threads = cfg.threads;

  AffinityEval out;
  std::uint64_t sig = 0;

  // Probabilities and their clamped logs, promoted to double once.
  std::vector<double> p(n), lp(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = static_cast<double>(probs[i]);
    p[i] = v;
    const bool above = v > floor;
    lp[i] = std::log(above ? v : floor);
    if (!above) sig += sig_code(kSigSiteClamp, 0, i);
  }

  if (want_grad) out.grad_probs.assign(n, 0.0);
  const bool conf_grad = want_grad && adaptive && !cfg.detach_conf;
  if (conf_grad) out.grad_conf.assign(n_px, 0.0);

  auto kl_of = [&](std::uint32_t i, std::uint32_t j) {
    const double* pi = p.data() + std::size_t(i) * channels;
    const double* li = lp.data() + std::size_t(i) * channels;
    const double* lj = lp.data() + std::size_t(j) * channels;
    double s = 0.0;
    for (std::size_t c = 0; c < channels; ++c) s += pi[c] * (li[c] - lj[c]);
    return s;
  };

  auto omega_of = [&](const PixelPair& pr) {
    const double vi = static_cast<double>(conf[pr.center]);
    const double vj = static_cast<double>(conf[pr.neighbor]);
    switch (cfg.modeling_fn) {
      case ModelingFn::kMax: return std::max(vi, vj);
      case ModelingFn::kMin: return std::min(vi, vj);
      default: return 0.5 * (vi + vj);
    }
  };

  // d KL(p_i || p_j) / d p scattered into the gradient buffer with weight `coef`.
  auto scatter_kl_grad = [&](const PixelPair& pr, double coef) {
    const std::size_t bi = std::size_t(pr.center) * channels;
    const std::size_t bj = std::size_t(pr.neighbor) * channels;
    for (std::size_t c = 0; c < channels; ++c) {
      const double pic = p[bi + c];
      out.grad_probs[bi + c] += coef * (lp[bi + c] - lp[bj + c] + (pic > floor ? 1.0 : 0.0));
      const double pjc = p[bj + c];
      if (pjc > floor) out.grad_probs[bj + c] += coef * (-pic / pjc);
    }
  };

  // Gradient of the connection weight w.r.t. conf, times `coef`.
  auto scatter_conf_grad = [&](const PixelPair& pr, double coef) {
    const double vi = static_cast<double>(conf[pr.center]);
    const double vj = static_cast<double>(conf[pr.neighbor]);
    switch (cfg.modeling_fn) {
      case ModelingFn::kMax:
        out.grad_conf[vi >= vj ? pr.center : pr.neighbor] += coef;
        break;
      case ModelingFn::kMin:
        out.grad_conf[vi <= vj ? pr.center : pr.neighbor] += coef;
        break;
      default:
        out.grad_conf[pr.center] += 0.5 * coef;
        out.grad_conf[pr.neighbor] += 0.5 * coef;
        break;
    }
  };

  std::vector<double> wbuf;  // per-pair KL, reused across sets
  std::uint64_t set_salt = 0;

  for (const auto& dp : pairs.per_dilation) {
    DilationTerms terms{dp.dilation, 0.0, 0.0, 0.0};

    auto eval_positive = [&](const std::vector<PixelPair>& set, double& term_out) {
      ++set_salt;
      const std::size_t count = set.size();
      if (count == 0) return;  // empty subsets contribute 0, not NaN
      wbuf.resize(count);
      parallel_for(count, threads, [&](std::size_t k) { wbuf[k] = kl_of(set[k].center, set[k].neighbor); });
      const double inv = 1.0 / static_cast<double>(count);
      if (adaptive) {
        term_out = inv * blocked_sum(count, threads,
                                     [&](std::size_t k) { return omega_of(set[k]) * wbuf[k]; });
      } else {
        term_out = inv * blocked_sum(count, threads, [&](std::size_t k) { return wbuf[k]; });
      }
      if (want_grad) {
        for (std::size_t k = 0; k < count; ++k) {
          const double omega = adaptive ? omega_of(set[k]) : 1.0;
          scatter_kl_grad(set[k], inv * omega);
          if (conf_grad) scatter_conf_grad(set[k], inv * wbuf[k]);
        }
      }
    };

    eval_positive(dp.fg_pos, terms.fg_pos);
    eval_positive(dp.bg_pos, terms.bg_pos);

    // Negative set: hinge max(0, omega * m - W); subgradient 0 at the kink.
    {
      ++set_salt;
      const std::size_t count = dp.neg.size();
      if (count > 0) {
        wbuf.resize(count);
        parallel_for(count, threads,
                     [&](std::size_t k) { wbuf[k] = kl_of(dp.neg[k].center, dp.neg[k].neighbor); });
        const double inv = 1.0 / static_cast<double>(count);
        terms.neg = inv * blocked_sum(count, threads, [&](std::size_t k) {
          const double target = adaptive ? omega_of(dp.neg[k]) * m : m;
          const double h = target - wbuf[k];
          return h > 0.0 ? h : 0.0;
        });
        for (std::size_t k = 0; k < count; ++k) {
          const double target = adaptive ? omega_of(dp.neg[k]) * m : m;
          const bool active = target - wbuf[k] > 0.0;
          if (active) sig += sig_code(kSigSiteHinge, set_salt, k);
          if (active && want_grad) {
            scatter_kl_grad(dp.neg[k], -2.0 * inv);
            if (conf_grad) scatter_conf_grad(dp.neg[k], 2.0 * inv * m);
          }
        }
      }
    }

    out.total += terms.fg_pos + terms.bg_pos + 2.0 * terms.neg;
    out.per_dilation.push_back(terms);
  }

  out.state_signature = sig;
  return out;
}

template AffinityEval affinity_eval<float>(const float*, std::size_t, std::size_t, std::size_t,
                                           const float*, const PairSet&, const AffinityConfig&,
                                           bool);
template AffinityEval affinity_eval<double>(const double*, std::size_t, std::size_t, std::size_t,
                                            const double*, const PairSet&, const AffinityConfig&,
                                            bool);

}  // namespace detail

namespace {

void check_probs_shape(const DenseTensor& probs, const PairSet& pairs) {
  if (probs.rank() != 3)
    throw validation_error("probability map must be H x W x C");
  if (probs.dims[0] != pairs.height || probs.dims[1] != pairs.width)
    throw validation_error("probability map dims do not match the pair set's label map");
  if (probs.dims[2] < 2) throw validation_error("probability map needs at least 2 classes");
  const std::size_t n_px = pairs.height * pairs.width;
  for (const auto& dp : pairs.per_dilation)
    for (const auto* set : {&dp.fg_pos, &dp.bg_pos, &dp.neg})
      for (const auto& pr : *set)
        if (pr.center >= n_px || pr.neighbor >= n_px)
          throw validation_error("pair set references a pixel outside the map");
}

AffinityReport finish_report(detail::AffinityEval&& eval, const DenseTensor& probs,
                             const DenseTensor* conf) {
  AffinityReport r;
  r.total = eval.total;
  r.per_dilation = std::move(eval.per_dilation);
  r.grad_probs = DenseTensor(probs.dims);
  for (std::size_t i = 0; i < eval.grad_probs.size(); ++i)
    r.grad_probs.data[i] = static_cast<float>(eval.grad_probs[i]);
  if (!eval.grad_conf.empty() && conf != nullptr) {
    DenseTensor gc(conf->dims);
    for (std::size_t i = 0; i < eval.grad_conf.size(); ++i)
      gc.data[i] = static_cast<float>(eval.grad_conf[i]);
    r.grad_conf = std::move(gc);
  }
  return r;
}

}  // namespace

AffinityReport sa_loss(const DenseTensor& probs, const PairSet& pairs, const AffinityConfig& cfg) {
  if (cfg.mode != AffinityMode::kSA) throw validation_error("sa_loss requires cfg.mode = SA");
  check_probs_shape(probs, pairs);
  auto eval = detail::affinity_eval<float>(probs.data.data(), probs.dims[0], probs.dims[1],
                                           probs.dims[2], nullptr, pairs, cfg, true);
  return finish_report(std::move(eval), probs, nullptr);
}

AffinityReport aa_loss(const DenseTensor& probs, const DenseTensor& conf, const PairSet& pairs,
                       const AffinityConfig& cfg) {
  if (cfg.mode != AffinityMode::kAA) throw validation_error("aa_loss requires cfg.mode = AA");
  check_probs_shape(probs, pairs);
  if (conf.rank() != 2 || conf.dims[0] != probs.dims[0] || conf.dims[1] != probs.dims[1])
    throw validation_error("confidence map dims must be H x W matching the probability map");
  for (std::size_t i = 0; i < conf.data.size(); ++i)
    if (!(conf.data[i] >= 0.0f && conf.data[i] <= 1.0f))
      throw validation_error("confidence value outside [0,1] at flat index " + std::to_string(i));
  auto eval = detail::affinity_eval<float>(probs.data.data(), probs.dims[0], probs.dims[1],
                                           probs.dims[2], conf.data.data(), pairs, cfg, true);
  return finish_report(std::move(eval), probs, &conf);
}

}  // namespace aalr
