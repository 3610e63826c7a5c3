#include "aalr/metric.hpp"

#include <algorithm>
#include <cmath>

#include "aalr/parallel.hpp"
#include "aalr/rng.hpp"

namespace aalr {

namespace detail {

namespace {

template <typename In>
double dot_dd(const In* x, const double* c, std::size_t dim) {
  double s = 0.0;
  for (std::size_t k = 0; k < dim; ++k) s += static_cast<double>(x[k]) * c[k];
  return s;
}

template <typename In>
double norm_of(const In* x, std::size_t dim) {
  double s = 0.0;
  for (std::size_t k = 0; k < dim; ++k) s += static_cast<double>(x[k]) * static_cast<double>(x[k]);
  return std::sqrt(s);
}

double norm_of_d(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

template <typename In>
double sim_to_centroid(const In* x, std::size_t dim, const std::vector<double>& c, double c_norm,
                       double eps) {
  const double nx = std::max(norm_of(x, dim), eps);
  const double nc = std::max(c_norm, eps);
  return dot_dd(x, c.data(), dim) / (nx * nc);
}

// d cos(x, c) / dx with c constant; the norm guard gives a flat (constant
// denominator) branch below eps.
template <typename In>
void sim_grad(const In* x, std::size_t dim, const std::vector<double>& c, double c_norm, double eps,
              double coef, double* out) {
  const double raw_nx = norm_of(x, dim);
  const double nc = std::max(c_norm, eps);
  if (raw_nx > eps) {
    const double s = dot_dd(x, c.data(), dim) / (raw_nx * nc);
    const double inv = 1.0 / (raw_nx * nc);
    const double inv2 = s / (raw_nx * raw_nx);
    for (std::size_t k = 0; k < dim; ++k)
      out[k] += coef * (c[k] * inv - inv2 * static_cast<double>(x[k]));
  } else {
    const double inv = 1.0 / (eps * nc);
    for (std::size_t k = 0; k < dim; ++k) out[k] += coef * c[k] * inv;
  }
}

}  // namespace

template <typename In>
CentroidSet centroids_core(const In* embed, std::size_t dim, const LabelMap& labels,
                           const In* conf) {
  struct Acc {
    std::vector<double> sum_weighted, sum_plain;
    double weight = 0;
    std::size_t members = 0;
  };
  std::vector<Acc> acc(kNeutralLabel);  // class index < 255
  std::vector<int> seen;

  const std::size_t n_px = labels.pixels();
  for (std::size_t i = 0; i < n_px; ++i) {
    const std::uint8_t lab = labels.labels[i];
    if (lab == kNeutralLabel) continue;
    Acc& a = acc[lab];
    if (a.members == 0) {
      a.sum_weighted.assign(dim, 0.0);
      a.sum_plain.assign(dim, 0.0);
      seen.push_back(lab);
    }
    const double beta = static_cast<double>(conf[i]);
    const In* x = embed + i * dim;
    for (std::size_t k = 0; k < dim; ++k) {
      const double xv = static_cast<double>(x[k]);
      a.sum_weighted[k] += beta * xv;
      a.sum_plain[k] += xv;
    }
    a.weight += beta;
    a.members += 1;
  }

  if (seen.size() < 2)
    throw validation_error("LR loss undefined: fewer than 2 classes have labeled pixels");

  std::sort(seen.begin(), seen.end());
  CentroidSet out;
  out.dim = dim;
  for (int cls : seen) {
    Acc& a = acc[cls];
    Centroid c;
    c.cls = cls;
    c.members = a.members;
    c.total_weight = a.weight;
    c.mean.resize(dim);
    if (a.weight > 0.0) {
      for (std::size_t k = 0; k < dim; ++k) c.mean[k] = a.sum_weighted[k] / a.weight;
    } else {
      // all-zero confidence: fall back to the unweighted mean
      for (std::size_t k = 0; k < dim; ++k) c.mean[k] = a.sum_plain[k] / double(a.members);
    }
    out.items.push_back(std::move(c));
  }
  return out;
}

template <typename In>
Reassignment reassign_core(const In* embed, std::size_t dim, const LabelMap& labels,
                           const CentroidSet& centroids, const LrConfig& cfg) {
  if (centroids.items.size() < 2)
    throw validation_error("reassign requires at least 2 centroids");
  if (centroids.dim != dim) throw validation_error("centroid dim does not match embedding dim");

  std::vector<double> c_norms(centroids.items.size());
  for (std::size_t k = 0; k < centroids.items.size(); ++k)
    c_norms[k] = norm_of_d(centroids.items[k].mean);

  Reassignment out;
  const std::size_t n_px = labels.pixels();
  for (std::size_t i = 0; i < n_px; ++i) {
    const std::uint8_t lab = labels.labels[i];
    if (lab == kNeutralLabel) continue;
    const In* x = embed + i * dim;
    std::size_t best = 0, second = 1;
    double s_best = -2.0, s_second = -2.0;
    for (std::size_t k = 0; k < centroids.items.size(); ++k) {
      const double s = sim_to_centroid(x, dim, centroids.items[k].mean, c_norms[k], cfg.sim_eps);
      // strict > keeps ties on the lowest class index (items are sorted)
      if (s > s_best) {
        second = best;
        s_second = s_best;
        best = k;
        s_best = s;
      } else if (s > s_second) {
        second = k;
        s_second = s;
      }
    }
    (void)second;
    PixelAssign pa;
    pa.pixel = static_cast<std::uint32_t>(i);
    pa.given = lab;
    pa.assigned = static_cast<std::uint8_t>(centroids.items[best].cls);
    pa.s_best = s_best;
    pa.s_second = s_second;
    pa.alpha = alpha_factor(s_best, s_second, cfg.gamma);
    if (pa.assigned == 0)
      out.bg_count += 1;
    else
      out.fg_count += 1;
    out.items.push_back(pa);
  }
  return out;
}

template <typename In>
double lr_frozen_value(const In* embed, std::size_t dim, const CentroidSet& centroids,
                       const Reassignment& assign, const LrConfig& cfg, std::uint64_t* sig) {
  std::vector<double> c_norms(centroids.items.size());
  for (std::size_t k = 0; k < centroids.items.size(); ++k)
    c_norms[k] = norm_of_d(centroids.items[k].mean);

  const double n_margin = cfg.margin_n;
  std::uint64_t sig_acc = 0;
  double sum_fg = 0.0, sum_bg = 0.0;

  for (std::size_t idx = 0; idx < assign.items.size(); ++idx) {
    const PixelAssign& pa = assign.items[idx];
    const In* x = embed + std::size_t(pa.pixel) * dim;
    std::size_t a_idx = 0;
    for (std::size_t k = 0; k < centroids.items.size(); ++k)
      if (centroids.items[k].cls == pa.assigned) a_idx = k;
    const double s_own =
        sim_to_centroid(x, dim, centroids.items[a_idx].mean, c_norms[a_idx], cfg.sim_eps);
    double inner = 0.0;
    for (std::size_t k = 0; k < centroids.items.size(); ++k) {
      if (k == a_idx) continue;
      const double s_other =
          sim_to_centroid(x, dim, centroids.items[k].mean, c_norms[k], cfg.sim_eps);
      const double h = n_margin + s_other - s_own;
      if (h > 0.0) {
        inner += h;
        sig_acc += sig_code(7, 0, (idx << 8) ^ k);
      }
    }
    (pa.assigned == 0 ? sum_bg : sum_fg) += pa.alpha * inner;
  }

  if (sig != nullptr) *sig = sig_acc;
  const double l_neg = assign.bg_count > 0 ? sum_bg / double(assign.bg_count) : 0.0;
  const double l_pos = assign.fg_count > 0 ? sum_fg / double(assign.fg_count) : 0.0;
  return l_neg + l_pos;
}

template <typename In>
LrEval lr_eval(const In* embed, std::size_t dim, const LabelMap& labels, const In* conf,
               const LrConfig& cfg, bool want_grad) {
  const CentroidSet centroids = centroids_core(embed, dim, labels, conf);
  const Reassignment assign = reassign_core(embed, dim, labels, centroids, cfg);

  std::vector<double> c_norms(centroids.items.size());
  for (std::size_t k = 0; k < centroids.items.size(); ++k)
    c_norms[k] = norm_of_d(centroids.items[k].mean);

  LrEval out;
  out.fg_count = assign.fg_count;
  out.bg_count = assign.bg_count;
  if (want_grad) out.grad_embed.assign(labels.pixels() * dim, 0.0);

  const double n_margin = cfg.margin_n;
  const double inv_fg = assign.fg_count > 0 ? 1.0 / double(assign.fg_count) : 0.0;
  const double inv_bg = assign.bg_count > 0 ? 1.0 / double(assign.bg_count) : 0.0;
  const std::size_t n_items = assign.items.size();

  // Per item: the modulated inner hinge sum and a branch-state word. Items are
  // independent and each writes only its own pixel's gradient slots, so the
  // loop parallelizes without races; the folds below run in fixed order.
  std::vector<double> contrib(n_items, 0.0);
  std::vector<std::uint64_t> sig_item(n_items, 0);
  parallel_for(n_items, cfg.threads, [&](std::size_t idx) {
    const PixelAssign& pa = assign.items[idx];
    const In* x = embed + std::size_t(pa.pixel) * dim;
    double* gx = want_grad ? out.grad_embed.data() + std::size_t(pa.pixel) * dim : nullptr;
    std::size_t a_idx = 0;
    for (std::size_t k = 0; k < centroids.items.size(); ++k)
      if (centroids.items[k].cls == pa.assigned) a_idx = k;
    const double s_own =
        sim_to_centroid(x, dim, centroids.items[a_idx].mean, c_norms[a_idx], cfg.sim_eps);
    const double part_inv = pa.assigned == 0 ? inv_bg : inv_fg;
    const double coef = pa.alpha * part_inv;
    double inner = 0.0;
    for (std::size_t k = 0; k < centroids.items.size(); ++k) {
      if (k == a_idx) continue;
      const double s_other =
          sim_to_centroid(x, dim, centroids.items[k].mean, c_norms[k], cfg.sim_eps);
      const double h = n_margin + s_other - s_own;
      if (h > 0.0) {
        inner += h;
        sig_item[idx] += sig_code(7, 0, (idx << 8) ^ k);
        if (want_grad) {
          sim_grad(x, dim, centroids.items[k].mean, c_norms[k], cfg.sim_eps, coef, gx);
          sim_grad(x, dim, centroids.items[a_idx].mean, c_norms[a_idx], cfg.sim_eps, -coef, gx);
        }
      }
    }
    contrib[idx] = pa.alpha * inner;
  });

  const double sum_bg = blocked_sum(n_items, cfg.threads, [&](std::size_t idx) {
    return assign.items[idx].assigned == 0 ? contrib[idx] : 0.0;
  });
  const double sum_fg = blocked_sum(n_items, cfg.threads, [&](std::size_t idx) {
    return assign.items[idx].assigned != 0 ? contrib[idx] : 0.0;
  });
  std::uint64_t sig_acc = 0;
  for (std::uint64_t s : sig_item) sig_acc += s;

  out.l_neg = assign.bg_count > 0 ? sum_bg / double(assign.bg_count) : 0.0;
  out.l_pos = assign.fg_count > 0 ? sum_fg / double(assign.fg_count) : 0.0;
  out.total = out.l_neg + out.l_pos;
  out.state_signature = sig_acc;
  return out;
}

template CentroidSet centroids_core<float>(const float*, std::size_t, const LabelMap&, const float*);
template CentroidSet centroids_core<double>(const double*, std::size_t, const LabelMap&,
                                            const double*);
template Reassignment reassign_core<float>(const float*, std::size_t, const LabelMap&,
                                           const CentroidSet&, const LrConfig&);
template Reassignment reassign_core<double>(const double*, std::size_t, const LabelMap&,
                                            const CentroidSet&, const LrConfig&);
template double lr_frozen_value<float>(const float*, std::size_t, const CentroidSet&,
                                       const Reassignment&, const LrConfig&, std::uint64_t*);
template double lr_frozen_value<double>(const double*, std::size_t, const CentroidSet&,
                                        const Reassignment&, const LrConfig&, std::uint64_t*);
template LrEval lr_eval<float>(const float*, std::size_t, const LabelMap&, const float*,
                               const LrConfig&, bool);
template LrEval lr_eval<double>(const double*, std::size_t, const LabelMap&, const double*,
                                const LrConfig&, bool);

}  // namespace detail

double cosine_sim(std::span<const float> a, std::span<const float> b, double eps) {
  if (a.size() != b.size()) throw validation_error("cosine_sim: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double x = a[k], y = b[k];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  return dot / (std::max(std::sqrt(na), eps) * std::max(std::sqrt(nb), eps));
}

double alpha_factor(double s_best, double s_second, double gamma) {
  const double sb = 0.5 * (1.0 + s_best);
  const double ss = 0.5 * (1.0 + s_second);
  const double denom = sb + ss;
  const double gap = denom > 1e-300 ? (sb - ss) / denom : 0.0;
  return std::pow(1.0 - gap, gamma);
}

namespace {

void check_embed_conf(const DenseTensor& embed, const LabelMap& labels, const DenseTensor& conf) {
  if (embed.rank() != 3) throw validation_error("embedding map must be H x W x C");
  if (embed.dims[0] != labels.height || embed.dims[1] != labels.width)
    throw validation_error("embedding map dims do not match the label map");
  if (conf.rank() != 2 || conf.dims[0] != labels.height || conf.dims[1] != labels.width)
    throw validation_error("confidence map dims must be H x W matching the label map");
  for (std::size_t i = 0; i < conf.data.size(); ++i)
    if (!(conf.data[i] >= 0.0f && conf.data[i] <= 1.0f))
      throw validation_error("confidence value outside [0,1] at flat index " + std::to_string(i));
}

}  // namespace

CentroidSet compute_centroids(const DenseTensor& embed, const LabelMap& labels,
                              const DenseTensor& conf) {
  check_embed_conf(embed, labels, conf);
  return detail::centroids_core<float>(embed.data.data(), embed.dims[2], labels, conf.data.data());
}

Reassignment reassign(const DenseTensor& embed, const LabelMap& labels,
                      const CentroidSet& centroids, const LrConfig& cfg) {
  if (embed.rank() != 3) throw validation_error("embedding map must be H x W x C");
  if (embed.dims[0] != labels.height || embed.dims[1] != labels.width)
    throw validation_error("embedding map dims do not match the label map");
  return detail::reassign_core<float>(embed.data.data(), embed.dims[2], labels, centroids, cfg);
}

LrReport lr_loss(const DenseTensor& embed, const LabelMap& labels, const DenseTensor& conf,
                 const LrConfig& cfg) {
  check_embed_conf(embed, labels, conf);
  auto eval =
      detail::lr_eval<float>(embed.data.data(), embed.dims[2], labels, conf.data.data(), cfg, true);
  LrReport r;
  r.total = eval.total;
  r.l_pos = eval.l_pos;
  r.l_neg = eval.l_neg;
  r.fg_count = eval.fg_count;
  r.bg_count = eval.bg_count;
  r.grad_embed = DenseTensor(embed.dims);
  for (std::size_t i = 0; i < eval.grad_embed.size(); ++i)
    r.grad_embed.data[i] = static_cast<float>(eval.grad_embed[i]);
  return r;
}

}  // namespace aalr
