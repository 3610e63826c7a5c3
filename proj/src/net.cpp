#include "aalr/net.hpp"

#include <cmath>
#include <fstream>

#include "aalr/io.hpp"
#include "aalr/pairs.hpp"

#include "json.hpp"

namespace aalr {

namespace {

constexpr double kCeFloor = 1e-8;

std::vector<std::size_t> conv_w_dims(int cin, int cout) {
  return {3, 3, static_cast<std::size_t>(cin), static_cast<std::size_t>(cout)};
}

void fill_uniform(DenseTensor& t, double limit, Rng& rng) {
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-limit, limit));
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1 || steps_per_epoch < 1) throw validation_error("epochs and steps_per_epoch must be >= 1");
  if (lambda1 < 0 || lambda2 < 0) throw validation_error("lambda weights must be >= 0");
  if (lr_loss_last_epochs < 0 || lr_loss_last_epochs > epochs)
    throw validation_error("lr_loss_last_epochs must be in [0, epochs]");
  if (model.num_classes < 2) throw validation_error("model.num_classes must be >= 2");
  if (model.in_channels < 1 || model.hidden < 1 || model.embed_dim < 1)
    throw validation_error("model channel counts must be positive");
  if (!(learn_rate > 0)) throw validation_error("learn_rate must be positive");
}

ToyModel make_model(const ToyModelConfig& cfg, Rng& rng) {
  ToyModel m;
  m.cfg = cfg;
  m.conv1_w = DenseTensor(conv_w_dims(cfg.in_channels, cfg.hidden));
  m.conv1_b = DenseTensor({static_cast<std::size_t>(cfg.hidden)});
  m.conv2_w = DenseTensor(conv_w_dims(cfg.hidden, cfg.embed_dim));
  m.conv2_b = DenseTensor({static_cast<std::size_t>(cfg.embed_dim)});
  m.head_w = DenseTensor({static_cast<std::size_t>(cfg.embed_dim), static_cast<std::size_t>(cfg.num_classes)});
  m.head_b = DenseTensor({static_cast<std::size_t>(cfg.num_classes)});
  fill_uniform(m.conv1_w, std::sqrt(6.0 / (9.0 * cfg.in_channels)), rng);
  fill_uniform(m.conv2_w, std::sqrt(6.0 / (9.0 * cfg.hidden)), rng);
  fill_uniform(m.head_w, std::sqrt(6.0 / cfg.embed_dim), rng);
  return m;
}

namespace detail {

ParamsD promote(const ToyModel& m) {
  auto lift = [](const DenseTensor& t) { return std::vector<double>(t.data.begin(), t.data.end()); };
  ParamsD p;
  p.cfg = m.cfg;
  p.c1w = lift(m.conv1_w);
  p.c1b = lift(m.conv1_b);
  p.c2w = lift(m.conv2_w);
  p.c2b = lift(m.conv2_b);
  p.hw = lift(m.head_w);
  p.hb = lift(m.head_b);
  return p;
}

namespace {

// out[oh,ow,co] = b[co] + sum_{dh,dw,ci} in[oh+dh-1, ow+dw-1, ci] * w[dh,dw,ci,co]
template <typename InT>
void conv3x3_forward(const InT* in, std::size_t h, std::size_t w, std::size_t cin,
                     const double* wgt, const double* bias, std::size_t cout, double* out) {
  for (std::size_t oh = 0; oh < h; ++oh) {
    for (std::size_t ow = 0; ow < w; ++ow) {
      double* o = out + (oh * w + ow) * cout;
      for (std::size_t co = 0; co < cout; ++co) o[co] = bias[co];
      for (int dh = 0; dh < 3; ++dh) {
        const long ih = static_cast<long>(oh) + dh - 1;
        if (ih < 0 || ih >= static_cast<long>(h)) continue;
        for (int dw = 0; dw < 3; ++dw) {
          const long iw = static_cast<long>(ow) + dw - 1;
          if (iw < 0 || iw >= static_cast<long>(w)) continue;
          const InT* px = in + (static_cast<std::size_t>(ih) * w + static_cast<std::size_t>(iw)) * cin;
          const double* wt = wgt + (static_cast<std::size_t>(dh) * 3 + dw) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double a = static_cast<double>(px[ci]);
            const double* wrow = wt + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) o[co] += a * wrow[co];
          }
        }
      }
    }
  }
}

template <typename InT>
void conv3x3_backward(const InT* in, std::size_t h, std::size_t w, std::size_t cin,
                      const double* wgt, std::size_t cout, const double* d_out, double* d_in,
                      double* d_wgt, double* d_bias) {
  for (std::size_t oh = 0; oh < h; ++oh) {
    for (std::size_t ow = 0; ow < w; ++ow) {
      const double* go = d_out + (oh * w + ow) * cout;
      for (std::size_t co = 0; co < cout; ++co) d_bias[co] += go[co];
      for (int dh = 0; dh < 3; ++dh) {
        const long ih = static_cast<long>(oh) + dh - 1;
        if (ih < 0 || ih >= static_cast<long>(h)) continue;
        for (int dw = 0; dw < 3; ++dw) {
          const long iw = static_cast<long>(ow) + dw - 1;
          if (iw < 0 || iw >= static_cast<long>(w)) continue;
          const std::size_t ip = static_cast<std::size_t>(ih) * w + static_cast<std::size_t>(iw);
          const InT* px = in + ip * cin;
          const std::size_t tap = (static_cast<std::size_t>(dh) * 3 + dw) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double a = static_cast<double>(px[ci]);
            double* gw = d_wgt + tap + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) gw[co] += a * go[co];
          }
          if (d_in != nullptr) {
            double* gi = d_in + ip * cin;
            const double* wt = wgt + tap;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const double* wrow = wt + ci * cout;
              double s = 0.0;
              for (std::size_t co = 0; co < cout; ++co) s += wrow[co] * go[co];
              gi[ci] += s;
            }
          }
        }
      }
    }
  }
}

void relu_inplace(std::vector<double>& v, std::uint64_t salt, std::uint64_t& sig) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] > 0.0) {
      sig += sig_code(salt, 0, i);
    } else {
      v[i] = 0.0;
    }
  }
}

struct CeEval {
  double value = 0;
  std::vector<double> grad_probs;
  std::uint64_t sig = 0;
};

CeEval ce_core(const double* probs, std::size_t n_px, std::size_t c, const LabelMap& labels,
               bool want_grad) {
  CeEval out;
  if (want_grad) out.grad_probs.assign(n_px * c, 0.0);
  std::size_t labeled = 0;
  for (std::size_t i = 0; i < n_px; ++i)
    if (labels.labels[i] != kNeutralLabel) ++labeled;
  if (labeled == 0) return out;
  const double inv = 1.0 / static_cast<double>(labeled);
  double sum = 0.0;
  for (std::size_t i = 0; i < n_px; ++i) {
    const std::uint8_t lab = labels.labels[i];
    if (lab == kNeutralLabel) continue;
    const double p = probs[i * c + lab];
    const bool above = p > kCeFloor;
    if (!above) out.sig += sig_code(3, 0, i);
    sum += -std::log(above ? p : kCeFloor);
    if (want_grad && above) out.grad_probs[i * c + lab] = -inv / p;
  }
  out.value = sum * inv;
  return out;
}

struct ClsEval {
  double value = 0;
  std::vector<double> grad_logits;
  std::uint64_t sig = 0;
};

ClsEval cls_core(const double* logits, std::size_t n_px, std::size_t c,
                 const std::vector<int>& image_labels, bool want_grad) {
  ClsEval out;
  if (want_grad) out.grad_logits.assign(n_px * c, 0.0);
  if (c < 2) return out;  // no foreground classes
  const double inv = 1.0 / static_cast<double>(c - 1);
  double sum = 0.0;
  for (std::size_t cls = 1; cls < c; ++cls) {
    std::size_t best = 0;
    double z = logits[cls];
    for (std::size_t i = 1; i < n_px; ++i) {
      const double v = logits[i * c + cls];
      if (v > z) {
        z = v;
        best = i;
      }
    }
    out.sig += sig_code(4, 0, (cls << 32) ^ best);
    const double y = image_labels[cls] != 0 ? 1.0 : 0.0;
    // numerically stable BCE on the pooled logit
    sum += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    if (want_grad) {
      const double s = 1.0 / (1.0 + std::exp(-z));
      out.grad_logits[best * c + cls] = (s - y) * inv;
    }
  }
  out.value = sum * inv;
  return out;
}

void softmax_rows(std::vector<double>& logits, std::vector<double>& probs, std::size_t n_px,
                  std::size_t c) {
  probs.resize(logits.size());
  for (std::size_t i = 0; i < n_px; ++i) {
    const double* z = logits.data() + i * c;
    double* p = probs.data() + i * c;
    double zmax = z[0];
    for (std::size_t k = 1; k < c; ++k) zmax = std::max(zmax, z[k]);
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      p[k] = std::exp(z[k] - zmax);
      sum += p[k];
    }
    const double inv = 1.0 / sum;
    for (std::size_t k = 0; k < c; ++k) p[k] *= inv;
  }
}

// d_logits[k] = p_k * (g_k - sum_j g_j p_j)
void softmax_backward(const std::vector<double>& probs, const std::vector<double>& d_probs,
                      std::size_t n_px, std::size_t c, std::vector<double>& d_logits) {
  d_logits.assign(probs.size(), 0.0);
  for (std::size_t i = 0; i < n_px; ++i) {
    const double* p = probs.data() + i * c;
    const double* g = d_probs.data() + i * c;
    double dot = 0.0;
    for (std::size_t k = 0; k < c; ++k) dot += g[k] * p[k];
    double* o = d_logits.data() + i * c;
    for (std::size_t k = 0; k < c; ++k) o[k] = p[k] * (g[k] - dot);
  }
}

std::vector<double> confidence_from_probs(const std::vector<double>& probs, const LabelMap& labels,
                                          std::size_t c) {
  std::vector<double> v(labels.pixels(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::uint8_t lab = labels.labels[i];
    if (lab != kNeutralLabel) v[i] = probs[i * c + lab];
  }
  return v;
}

LabelMap argmax_labels(const std::vector<double>& probs, std::size_t h, std::size_t w,
                       std::size_t c) {
  LabelMap out(h, w);
  for (std::size_t i = 0; i < h * w; ++i) {
    const double* p = probs.data() + i * c;
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (p[k] > p[best]) best = k;
    out.labels[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace

void forward_core(const ParamsD& p, const float* image, std::size_t height, std::size_t width,
                  ActivationsD& acts) {
  const auto& cfg = p.cfg;
  const std::size_t n_px = height * width;
  acts.height = height;
  acts.width = width;
  acts.relu_sig = 0;
  acts.hidden.assign(n_px * cfg.hidden, 0.0);
  acts.embed.assign(n_px * cfg.embed_dim, 0.0);
  acts.logits.assign(n_px * cfg.num_classes, 0.0);

  conv3x3_forward(image, height, width, cfg.in_channels, p.c1w.data(), p.c1b.data(), cfg.hidden,
                  acts.hidden.data());
  relu_inplace(acts.hidden, 1, acts.relu_sig);
  conv3x3_forward(acts.hidden.data(), height, width, cfg.hidden, p.c2w.data(), p.c2b.data(),
                  cfg.embed_dim, acts.embed.data());
  relu_inplace(acts.embed, 2, acts.relu_sig);

  const std::size_t c = cfg.num_classes;
  const std::size_t d = cfg.embed_dim;
  for (std::size_t i = 0; i < n_px; ++i) {
    const double* e = acts.embed.data() + i * d;
    double* z = acts.logits.data() + i * c;
    for (std::size_t k = 0; k < c; ++k) z[k] = p.hb[k];
    for (std::size_t j = 0; j < d; ++j) {
      const double a = e[j];
      const double* wrow = p.hw.data() + j * c;
      for (std::size_t k = 0; k < c; ++k) z[k] += a * wrow[k];
    }
  }
  softmax_rows(acts.logits, acts.probs, n_px, c);
}

StepEval objective_grad(const ParamsD& params, const TrainSample& sample, const PairSet& pairs,
                        const TrainConfig& cfg, bool lr_active) {
  const std::size_t h = sample.image.dims[0], w = sample.image.dims[1];
  const std::size_t n_px = h * w;
  const std::size_t c = params.cfg.num_classes;
  const std::size_t d = params.cfg.embed_dim;

  StepEval out;
  ActivationsD acts;
  forward_core(params, sample.image.data.data(), h, w, acts);

  out.conf = confidence_from_probs(acts.probs, sample.pseudo, c);

  const PairSet* use_pairs = &pairs;
  PairSet refreshed;
  if (cfg.refresh_pairs) {
    refreshed = build_pairs(argmax_labels(acts.probs, h, w, c), cfg.affinity.kernels);
    use_pairs = &refreshed;
  }

  CeEval ce = ce_core(acts.probs.data(), n_px, c, sample.pseudo, true);
  ClsEval cls = cls_core(acts.logits.data(), n_px, c, sample.image_labels, true);

  AffinityEval aa;
  if (cfg.lambda1 > 0) {
    const bool adaptive = cfg.affinity.mode == AffinityMode::kAA;
    aa = affinity_eval<double>(acts.probs.data(), h, w, c,
                               adaptive ? out.conf.data() : nullptr, *use_pairs, cfg.affinity,
                               true);
  }

  LrEval lr;
  out.lr_included = lr_active && cfg.lambda2 > 0;
  if (out.lr_included) {
    lr = lr_eval<double>(acts.embed.data(), d, sample.pseudo, out.conf.data(), cfg.lr_loss, true);
    out.centroids = centroids_core<double>(acts.embed.data(), d, sample.pseudo, out.conf.data());
    out.assignment =
        reassign_core<double>(acts.embed.data(), d, sample.pseudo, out.centroids, cfg.lr_loss);
  }

  // assemble d probs, then chain to logits
  std::vector<double> d_probs(n_px * c, 0.0);
  if (!ce.grad_probs.empty())
    for (std::size_t i = 0; i < d_probs.size(); ++i) d_probs[i] += ce.grad_probs[i];
  if (!aa.grad_probs.empty())
    for (std::size_t i = 0; i < d_probs.size(); ++i) d_probs[i] += cfg.lambda1 * aa.grad_probs[i];
  if (!aa.grad_conf.empty()) {
    // confidence is the probability of the pseudo-label class
    for (std::size_t i = 0; i < n_px; ++i) {
      const std::uint8_t lab = sample.pseudo.labels[i];
      if (lab != kNeutralLabel) d_probs[i * c + lab] += cfg.lambda1 * aa.grad_conf[i];
    }
  }

  std::vector<double> d_logits;
  softmax_backward(acts.probs, d_probs, n_px, c, d_logits);
  if (!cls.grad_logits.empty())
    for (std::size_t i = 0; i < d_logits.size(); ++i) d_logits[i] += cls.grad_logits[i];

  // head backward
  out.g_hw.assign(params.hw.size(), 0.0);
  out.g_hb.assign(params.hb.size(), 0.0);
  std::vector<double> d_embed(n_px * d, 0.0);
  for (std::size_t i = 0; i < n_px; ++i) {
    const double* e = acts.embed.data() + i * d;
    const double* gz = d_logits.data() + i * c;
    for (std::size_t k = 0; k < c; ++k) out.g_hb[k] += gz[k];
    for (std::size_t j = 0; j < d; ++j) {
      const double a = e[j];
      const double* wrow = params.hw.data() + j * c;
      double* gwrow = out.g_hw.data() + j * c;
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        gwrow[k] += a * gz[k];
        s += wrow[k] * gz[k];
      }
      d_embed[i * d + j] = s;
    }
  }
  if (out.lr_included && !lr.grad_embed.empty())
    for (std::size_t i = 0; i < d_embed.size(); ++i) d_embed[i] += cfg.lambda2 * lr.grad_embed[i];

  // ReLU mask of conv2 (embed is post-activation)
  for (std::size_t i = 0; i < d_embed.size(); ++i)
    if (!(acts.embed[i] > 0.0)) d_embed[i] = 0.0;

  out.g_c2w.assign(params.c2w.size(), 0.0);
  out.g_c2b.assign(params.c2b.size(), 0.0);
  std::vector<double> d_hidden(n_px * params.cfg.hidden, 0.0);
  conv3x3_backward(acts.hidden.data(), h, w, params.cfg.hidden, params.c2w.data(),
                   params.cfg.embed_dim, d_embed.data(), d_hidden.data(), out.g_c2w.data(),
                   out.g_c2b.data());

  for (std::size_t i = 0; i < d_hidden.size(); ++i)
    if (!(acts.hidden[i] > 0.0)) d_hidden[i] = 0.0;

  out.g_c1w.assign(params.c1w.size(), 0.0);
  out.g_c1b.assign(params.c1b.size(), 0.0);
  conv3x3_backward(sample.image.data.data(), h, w, params.cfg.in_channels, params.c1w.data(),
                   params.cfg.hidden, d_hidden.data(), nullptr, out.g_c1w.data(),
                   out.g_c1b.data());

  out.totals.cls = cls.value;
  out.totals.ce = ce.value;
  out.totals.aa = aa.total;
  out.totals.lr = lr.total;
  out.totals.total = cls.value + ce.value + cfg.lambda1 * aa.total + cfg.lambda2 * lr.total;
  out.totals.state_signature =
      acts.relu_sig + ce.sig + cls.sig + aa.state_signature + lr.state_signature;
  return out;
}

TotalEval objective_value_frozen(const ParamsD& params, const TrainSample& sample,
                                 const PairSet& pairs, const TrainConfig& cfg,
                                 const StepEval& frozen) {
  const std::size_t h = sample.image.dims[0], w = sample.image.dims[1];
  const std::size_t n_px = h * w;
  const std::size_t c = params.cfg.num_classes;

  ActivationsD acts;
  forward_core(params, sample.image.data.data(), h, w, acts);

  CeEval ce = ce_core(acts.probs.data(), n_px, c, sample.pseudo, false);
  ClsEval cls = cls_core(acts.logits.data(), n_px, c, sample.image_labels, false);

  AffinityEval aa;
  if (cfg.lambda1 > 0) {
    const bool adaptive = cfg.affinity.mode == AffinityMode::kAA;
    aa = affinity_eval<double>(acts.probs.data(), h, w, c,
                               adaptive ? frozen.conf.data() : nullptr, pairs, cfg.affinity,
                               false);
  }

  double lr_value = 0;
  std::uint64_t lr_sig = 0;
  if (frozen.lr_included)
    lr_value = lr_frozen_value<double>(acts.embed.data(), params.cfg.embed_dim, frozen.centroids,
                                       frozen.assignment, cfg.lr_loss, &lr_sig);

  TotalEval out;
  out.cls = cls.value;
  out.ce = ce.value;
  out.aa = aa.total;
  out.lr = lr_value;
  out.total = cls.value + ce.value + cfg.lambda1 * aa.total + cfg.lambda2 * lr_value;
  out.state_signature = acts.relu_sig + ce.sig + cls.sig + aa.state_signature + lr_sig;
  return out;
}

}  // namespace detail

Forward forward(const ToyModel& model, const DenseTensor& image) {
  if (image.rank() != 3 || image.dims[2] != static_cast<std::size_t>(model.cfg.in_channels))
    throw validation_error("image must be H x W x in_channels");
  image.check_finite("image");
  detail::ActivationsD acts;
  detail::forward_core(detail::promote(model), image.data.data(), image.dims[0], image.dims[1],
                       acts);
  const std::size_t hgt = image.dims[0], wid = image.dims[1];
  Forward out;
  out.embed = DenseTensor({hgt, wid, static_cast<std::size_t>(model.cfg.embed_dim)});
  out.logits = DenseTensor({hgt, wid, static_cast<std::size_t>(model.cfg.num_classes)});
  out.probs = DenseTensor({hgt, wid, static_cast<std::size_t>(model.cfg.num_classes)});
  for (std::size_t i = 0; i < acts.embed.size(); ++i)
    out.embed.data[i] = static_cast<float>(acts.embed[i]);
  for (std::size_t i = 0; i < acts.logits.size(); ++i)
    out.logits.data[i] = static_cast<float>(acts.logits[i]);
  for (std::size_t i = 0; i < acts.probs.size(); ++i)
    out.probs.data[i] = static_cast<float>(acts.probs[i]);
  return out;
}

LabelMap refine(const ToyModel& model, const DenseTensor& image) {
  if (image.rank() != 3 || image.dims[2] != static_cast<std::size_t>(model.cfg.in_channels))
    throw validation_error("image must be H x W x in_channels");
  detail::ActivationsD acts;
  detail::forward_core(detail::promote(model), image.data.data(), image.dims[0], image.dims[1],
                       acts);
  return detail::argmax_labels(acts.probs, image.dims[0], image.dims[1], model.cfg.num_classes);
}

LossReport ce_loss(const DenseTensor& probs, const LabelMap& labels, double prob_floor) {
  if (probs.rank() != 3 || probs.dims[0] != labels.height || probs.dims[1] != labels.width)
    throw validation_error("probability map dims do not match the label map");
  validate_labels(labels, static_cast<int>(probs.dims[2]));
  const std::size_t n_px = labels.pixels();
  const std::size_t c = probs.dims[2];
  std::vector<double> p(probs.data.begin(), probs.data.end());

  LossReport r;
  r.grad = DenseTensor(probs.dims);
  std::size_t labeled = 0;
  for (std::size_t i = 0; i < n_px; ++i)
    if (labels.labels[i] != kNeutralLabel) ++labeled;
  if (labeled == 0) return r;
  const double inv = 1.0 / static_cast<double>(labeled);
  double sum = 0.0;
  for (std::size_t i = 0; i < n_px; ++i) {
    const std::uint8_t lab = labels.labels[i];
    if (lab == kNeutralLabel) continue;
    const double pv = p[i * c + lab];
    sum += -std::log(std::max(pv, prob_floor));
    if (pv > prob_floor) r.grad.data[i * c + lab] = static_cast<float>(-inv / pv);
  }
  r.value = sum * inv;
  return r;
}

LossReport cls_loss(const DenseTensor& logits, const std::vector<int>& image_labels) {
  if (logits.rank() != 3) throw validation_error("logit map must be H x W x C");
  const std::size_t c = logits.dims[2];
  if (image_labels.size() != c)
    throw validation_error("image_labels length must equal the class count");
  std::vector<double> z(logits.data.begin(), logits.data.end());
  auto eval = detail::cls_core(z.data(), logits.dims[0] * logits.dims[1], c, image_labels, true);
  LossReport r;
  r.value = eval.value;
  r.grad = DenseTensor(logits.dims);
  for (std::size_t i = 0; i < eval.grad_logits.size(); ++i)
    r.grad.data[i] = static_cast<float>(eval.grad_logits[i]);
  return r;
}

Trainer::Trainer(TrainConfig cfg, TrainSample sample)
    : cfg_(std::move(cfg)), sample_(std::move(sample)) {
  cfg_.validate();
  cfg_.affinity.kernels.validate();
  if (sample_.image.rank() != 3 ||
      sample_.image.dims[2] != static_cast<std::size_t>(cfg_.model.in_channels))
    throw validation_error("sample image must be H x W x in_channels");
  if (sample_.pseudo.height != sample_.image.dims[0] ||
      sample_.pseudo.width != sample_.image.dims[1])
    throw validation_error("pseudo-label map dims do not match the image");
  validate_labels(sample_.pseudo, cfg_.model.num_classes);
  if (sample_.image_labels.size() != static_cast<std::size_t>(cfg_.model.num_classes))
    throw validation_error("image_labels length must equal num_classes");

  Rng rng(cfg_.seed);
  model_ = make_model(cfg_.model, rng);
  if (!cfg_.refresh_pairs) pairs_ = build_pairs(sample_.pseudo, cfg_.affinity.kernels);
  for (const DenseTensor* t :
       {&model_.conv1_w, &model_.conv1_b, &model_.conv2_w, &model_.conv2_b, &model_.head_w,
        &model_.head_b})
    velocity_.emplace_back(t->data.size(), 0.0f);
}

bool Trainer::lr_active(int epoch) const {
  return cfg_.lambda2 > 0 && epoch > cfg_.epochs - cfg_.lr_loss_last_epochs;
}

StepMetrics Trainer::step(int epoch) {
  detail::ParamsD params = detail::promote(model_);
  detail::StepEval eval = detail::objective_grad(params, sample_, pairs_, cfg_, lr_active(epoch));

  DenseTensor* tensors[] = {&model_.conv1_w, &model_.conv1_b, &model_.conv2_w,
                            &model_.conv2_b, &model_.head_w,  &model_.head_b};
  const std::vector<double>* grads[] = {&eval.g_c1w, &eval.g_c1b, &eval.g_c2w,
                                        &eval.g_c2b, &eval.g_hw,  &eval.g_hb};
  for (std::size_t t = 0; t < 6; ++t) {
    std::vector<float>& vel = velocity_[t];
    std::vector<float>& theta = tensors[t]->data;
    const std::vector<double>& g = *grads[t];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g[i] + cfg_.weight_decay * static_cast<double>(theta[i]);
      const double v = cfg_.momentum * static_cast<double>(vel[i]) + gi;
      vel[i] = static_cast<float>(v);
      theta[i] = static_cast<float>(static_cast<double>(theta[i]) - cfg_.learn_rate * v);
    }
  }

  StepMetrics m;
  m.cls = eval.totals.cls;
  m.ce = eval.totals.ce;
  m.aa = eval.totals.aa;
  m.lr = eval.totals.lr;
  m.total = eval.totals.total;
  return m;
}

void save_checkpoint(const ToyModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::pair<const char*, const DenseTensor*> params[] = {
      {"conv1_w", &model.conv1_w}, {"conv1_b", &model.conv1_b}, {"conv2_w", &model.conv2_w},
      {"conv2_b", &model.conv2_b}, {"head_w", &model.head_w},   {"head_b", &model.head_b}};
  nlohmann::json manifest;
  manifest["format"] = "aalr-checkpoint";
  manifest["version"] = 1;
  manifest["model"] = {{"in_channels", model.cfg.in_channels},
                       {"hidden", model.cfg.hidden},
                       {"embed_dim", model.cfg.embed_dim},
                       {"num_classes", model.cfg.num_classes}};
  manifest["params"] = nlohmann::json::array();
  for (const auto& [name, tensor] : params) {
    const std::string file = std::string(name) + ".dten";
    tensor_write(*tensor, dir / file);
    manifest["params"].push_back({{"name", name}, {"file", file}});
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw io_error("cannot write checkpoint manifest in " + dir.string());
  out << manifest.dump(2) << "\n";
}

ToyModel load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw io_error("cannot open checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw format_error("malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "aalr-checkpoint")
    throw format_error("not an aalr checkpoint manifest: " + (dir / "manifest.json").string());

  ToyModel m;
  m.cfg.in_channels = manifest["model"]["in_channels"].get<int>();
  m.cfg.hidden = manifest["model"]["hidden"].get<int>();
  m.cfg.embed_dim = manifest["model"]["embed_dim"].get<int>();
  m.cfg.num_classes = manifest["model"]["num_classes"].get<int>();

  auto read_param = [&](const char* name) {
    for (const auto& p : manifest["params"])
      if (p["name"].get<std::string>() == name)
        return tensor_read(dir / p["file"].get<std::string>());
    throw format_error("checkpoint manifest missing parameter " + std::string(name));
  };
  m.conv1_w = read_param("conv1_w");
  m.conv1_b = read_param("conv1_b");
  m.conv2_w = read_param("conv2_w");
  m.conv2_b = read_param("conv2_b");
  m.head_w = read_param("head_w");
  m.head_b = read_param("head_b");
  return m;
}

}  // namespace aalr
