#include "aalr/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>

#include "aalr/rng.hpp"

namespace aalr {

void SceneSpec::validate() const {
  if (height < 8 || width < 8)
    throw validation_error("scene must be at least 8x8");
  if (num_shapes < 1 || num_shapes > 3) throw validation_error("num_shapes must be in [1,3]");
  if (classes.empty()) throw validation_error("scene needs at least one foreground class");
  for (int c : classes)
    if (c < 1 || c >= num_classes)
      throw validation_error("scene classes must lie in [1, num_classes)");
  if (num_classes < 2 || num_classes > 254)
    throw validation_error("num_classes must be in [2, 254]");
  if (flip_rate < 0.0 || flip_rate > 1.0) throw validation_error("flip_rate must be in [0,1]");
  if (band_keep_rate < 0.0 || band_keep_rate > 1.0)
    throw validation_error("band_keep_rate must be in [0,1]");
  if (corruption == Corruption::kIdeal && flip_rate != 0.0)
    throw validation_error("flip_rate must be 0 in ideal mode");
  if (neutral_band < 0) throw validation_error("neutral_band must be >= 0");
  if (!(conf_decay > 0)) throw validation_error("conf_decay must be positive");
}

namespace {

constexpr std::array<std::array<float, 3>, 8> kPalette = {{
    {0.15f, 0.15f, 0.15f},  // background
    {0.80f, 0.25f, 0.20f},
    {0.20f, 0.70f, 0.30f},
    {0.25f, 0.35f, 0.85f},
    {0.85f, 0.75f, 0.20f},
    {0.70f, 0.30f, 0.75f},
    {0.20f, 0.75f, 0.75f},
    {0.90f, 0.55f, 0.30f},
}};

struct Shape {
  bool circle = false;
  long ch = 0, cw = 0;  // center
  long rh = 0, rw = 0;  // half extents (circle uses rh)
  std::uint8_t cls = 0;
};

void paint(LabelMap& gt, const Shape& s) {
  const long h = static_cast<long>(gt.height), w = static_cast<long>(gt.width);
  for (long y = std::max(0l, s.ch - s.rh); y <= std::min(h - 1, s.ch + s.rh); ++y) {
    for (long x = std::max(0l, s.cw - s.rw); x <= std::min(w - 1, s.cw + s.rw); ++x) {
      if (s.circle) {
        const double dy = double(y - s.ch), dx = double(x - s.cw);
        if (dy * dy + dx * dx > double(s.rh) * double(s.rh)) continue;
      }
      gt.at(y, x) = s.cls;
    }
  }
}

// Chebyshev distance to the nearest pixel carrying a different label:
// multi-source BFS on the 8-connected grid, run once per present label.
std::vector<int> boundary_distance(const LabelMap& gt) {
  const long h = static_cast<long>(gt.height), w = static_cast<long>(gt.width);
  const std::size_t n = gt.pixels();
  std::vector<int> dist(n, kNoBoundary);

  std::vector<bool> present(256, false);
  for (std::size_t i = 0; i < n; ++i) present[gt.labels[i]] = true;

  std::vector<int> layer(n);
  std::deque<std::uint32_t> queue;
  for (int lab = 0; lab < 256; ++lab) {
    if (!present[lab]) continue;
    std::fill(layer.begin(), layer.end(), -1);
    queue.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (gt.labels[i] != lab) {
        layer[i] = 0;
        queue.push_back(static_cast<std::uint32_t>(i));
      }
    }
    while (!queue.empty()) {
      const std::uint32_t i = queue.front();
      queue.pop_front();
      const long y = i / w, x = i % w;
      for (long dy = -1; dy <= 1; ++dy) {
        for (long dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          const long ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const std::size_t j = static_cast<std::size_t>(ny * w + nx);
          if (layer[j] >= 0) continue;
          layer[j] = layer[i] + 1;
          queue.push_back(static_cast<std::uint32_t>(j));
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i)
      if (gt.labels[i] == lab && layer[i] > 0) dist[i] = std::min(dist[i], layer[i]);
  }
  return dist;
}

// Label of the nearest differently-labeled gt pixel, scanning the Chebyshev
// ring at the known boundary distance in row-major order.
std::uint8_t nearest_other_label(const LabelMap& gt, long y, long x, int radius) {
  const long h = static_cast<long>(gt.height), w = static_cast<long>(gt.width);
  const std::uint8_t own = gt.at(y, x);
  for (long dy = -radius; dy <= radius; ++dy) {
    for (long dx = -radius; dx <= radius; ++dx) {
      if (std::max(std::abs(dy), std::abs(dx)) != radius) continue;
      const long ny = y + dy, nx = x + dx;
      if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
      const std::uint8_t lab = gt.at(ny, nx);
      if (lab != own) return lab;
    }
  }
  return own;  // unreachable when radius == boundary_dist
}

}  // namespace

SceneInstance generate(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const long h = static_cast<long>(spec.height), w = static_cast<long>(spec.width);

  SceneInstance inst;
  inst.spec = spec;
  inst.gt = LabelMap(spec.height, spec.width, 0);

  // Place shapes fully inside the map with a 2-pixel border margin. Half
  // extents run 3..min(8, map/4-ish); a draw that does not fit is retried, so
  // undersized scenes fail deterministically after the retry budget.
  for (int s = 0; s < spec.num_shapes; ++s) {
    const std::uint8_t cls = static_cast<std::uint8_t>(spec.classes[s % spec.classes.size()]);
    const long half_cap = std::max(3l, std::min(8l, std::min(h, w) / 4));
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      Shape sh;
      sh.circle = rng.next_below(2) == 1;
      sh.cls = cls;
      sh.rh = 3 + static_cast<long>(rng.next_below(half_cap - 2));
      sh.rw = sh.circle ? sh.rh : 3 + static_cast<long>(rng.next_below(half_cap - 2));
      const long margin_h = sh.rh + 2, margin_w = sh.rw + 2;
      if (2 * margin_h >= h || 2 * margin_w >= w) continue;
      sh.ch = margin_h + static_cast<long>(rng.next_below(h - 2 * margin_h));
      sh.cw = margin_w + static_cast<long>(rng.next_below(w - 2 * margin_w));
      paint(inst.gt, sh);
      placed = true;
    }
    if (!placed)
      throw validation_error("could not place shape " + std::to_string(s) +
                             " after bounded retries; enlarge the scene");
  }

  inst.boundary_dist = boundary_distance(inst.gt);

  // Pseudo-labels: erode every region by neutral_band, neutralizing the ring.
  // A seeded fraction of the band keeps its label, so the band is ragged and
  // true label transitions also appear adjacently, as with real seed masks.
  inst.pseudo = inst.gt;
  for (std::size_t i = 0; i < inst.gt.pixels(); ++i) {
    if (inst.boundary_dist[i] > spec.neutral_band) continue;
    if (rng.next_double() < spec.band_keep_rate) continue;
    inst.pseudo.labels[i] = kNeutralLabel;
  }

  // ambiguity mode: flip a fixed fraction of the labeled band next to the
  // neutral ring toward the adjacent region's label
  if (spec.corruption == Corruption::kAmbiguity && spec.flip_rate > 0.0) {
    std::vector<std::uint32_t> band;
    for (std::size_t i = 0; i < inst.gt.pixels(); ++i) {
      if (inst.pseudo.labels[i] == kNeutralLabel) continue;
      if (inst.boundary_dist[i] <= spec.neutral_band + kFlipBandWidth)
        band.push_back(static_cast<std::uint32_t>(i));
    }
    const std::size_t flips = static_cast<std::size_t>(spec.flip_rate * double(band.size()));
    rng.shuffle(band);
    for (std::size_t k = 0; k < flips; ++k) {
      const std::uint32_t i = band[k];
      const long y = i / w, x = i % w;
      const std::uint8_t other = nearest_other_label(inst.gt, y, x, inst.boundary_dist[i]);
      if (other != inst.gt.labels[i]) inst.pseudo.labels[i] = other;
    }
  }

  // confidence: saturating ramp in boundary distance plus bounded noise
  inst.conf = DenseTensor({spec.height, spec.width});
  for (std::size_t i = 0; i < inst.conf.size(); ++i) {
    const double base = inst.boundary_dist[i] >= kNoBoundary
                            ? 1.0
                            : std::min(1.0, double(inst.boundary_dist[i]) / spec.conf_decay);
    const double noisy = base + rng.uniform(-spec.conf_noise, spec.conf_noise);
    inst.conf.data[i] = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
  }

  // class-correlated colors with noise
  inst.image = DenseTensor({spec.height, spec.width, 3});
  for (std::size_t i = 0; i < inst.gt.pixels(); ++i) {
    const auto& base = kPalette[inst.gt.labels[i] % kPalette.size()];
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double noisy = double(base[ch]) + rng.uniform(-spec.color_noise, spec.color_noise);
      inst.image.data[i * 3 + ch] = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
    }
  }

  inst.image_labels.assign(spec.num_classes, 0);
  for (std::size_t i = 0; i < inst.gt.pixels(); ++i)
    if (inst.gt.labels[i] != 0) inst.image_labels[inst.gt.labels[i]] = 1;

  return inst;
}

IoUReport miou(const LabelMap& pred, const LabelMap& gt, int num_classes) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw validation_error("miou: map dimensions differ");
  if (num_classes < 1 || num_classes > 255) throw validation_error("miou: bad num_classes");

  std::vector<std::uint64_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  std::vector<bool> present(num_classes, false);
  for (std::size_t i = 0; i < gt.pixels(); ++i) {
    const std::uint8_t g = gt.labels[i];
    if (g == kNeutralLabel) continue;
    if (g >= num_classes)
      throw validation_error("miou: gt label " + std::to_string(int(g)) + " out of range");
    const std::uint8_t p = pred.labels[i];
    present[g] = true;
    if (p == kNeutralLabel) {
      fn[g] += 1;  // unlabeled prediction misses the gt class
      continue;
    }
    if (p >= num_classes)
      throw validation_error("miou: pred label " + std::to_string(int(p)) + " out of range");
    present[p] = true;
    if (p == g) {
      tp[g] += 1;
    } else {
      fn[g] += 1;
      fp[p] += 1;
    }
  }

  IoUReport r;
  double sum = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    if (!present[c]) continue;
    const std::uint64_t denom = tp[c] + fp[c] + fn[c];
    const double iou = denom == 0 ? 0.0 : double(tp[c]) / double(denom);
    r.classes.push_back(c);
    r.iou.push_back(iou);
    sum += iou;
  }
  r.mean = r.classes.empty() ? 0.0 : sum / double(r.classes.size());
  return r;
}

std::vector<std::uint64_t> confusion(const LabelMap& pred, const LabelMap& gt, int num_classes) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw validation_error("confusion: map dimensions differ");
  if (num_classes < 1 || num_classes > 255) throw validation_error("confusion: bad num_classes");
  std::vector<std::uint64_t> counts(std::size_t(num_classes) * num_classes, 0);
  for (std::size_t i = 0; i < gt.pixels(); ++i) {
    const std::uint8_t g = gt.labels[i];
    if (g == kNeutralLabel) continue;
    const std::uint8_t p = pred.labels[i];
    if (g >= num_classes || p >= num_classes)
      throw validation_error("confusion: label out of range at flat index " + std::to_string(i) +
                             " (neutral predictions are not representable)");
    counts[std::size_t(g) * num_classes + p] += 1;
  }
  return counts;
}

}  // namespace aalr
