#pragma once

#include <cstdint>
#include <vector>

#include "aalr/tensor.hpp"

namespace aalr {

enum class Corruption { kIdeal, kAmbiguity };

struct SceneSpec {
  std::size_t height = 64, width = 64;
  int num_shapes = 2;              // 1..3
  std::vector<int> classes = {1, 2};  // foreground classes, assigned round-robin
  int num_classes = 3;             // including background
  Corruption corruption = Corruption::kAmbiguity;
  int neutral_band = 3;            // erosion iterations around every region boundary
  double band_keep_rate = 0.3;     // fraction of band pixels that keep their label (ragged band)
  double flip_rate = 0.15;         // fraction of the labeled boundary band flipped (ambiguity mode)
  double conf_decay = 6.0;         // confidence saturates 1 at this boundary distance
  double conf_noise = 0.05;
  double color_noise = 0.08;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SceneInstance {
  SceneSpec spec;
  DenseTensor image;  // H x W x 3, class-correlated colors plus noise
  LabelMap gt;        // dense ground truth
  LabelMap pseudo;    // eroded cores labeled, boundary band neutral, flips in ambiguity mode
  DenseTensor conf;   // H x W in [0,1], high at cores, decaying toward boundaries
  std::vector<int> image_labels;  // multi-hot over num_classes; slot 0 unused

  // Chebyshev distance from each pixel to the nearest differently-labeled
  // ground-truth pixel; kNoBoundary where the map has a single label.
  std::vector<int> boundary_dist;
};

inline constexpr int kNoBoundary = 1 << 20;

// Labeled pixels within this many extra rings of the neutral zone form the
// flip-candidate band of ambiguity mode.
inline constexpr int kFlipBandWidth = 2;

// Deterministic per seed, byte-for-byte. Throws validation_error when shapes
// cannot be placed after bounded retries.
SceneInstance generate(const SceneSpec& spec);

struct IoUReport {
  std::vector<int> classes;     // classes present in gt or pred
  std::vector<double> iou;      // aligned with `classes`
  double mean = 0;
};

// Neutral gt pixels are excluded everywhere; a neutral prediction counts as a
// miss (false negative) for the gt class. The mean runs over classes present
// in either map.
IoUReport miou(const LabelMap& pred, const LabelMap& gt, int num_classes);

// C x C row-major counts indexed [gt][pred]. Requires a dense (no-neutral)
// prediction; neutral gt pixels are skipped.
std::vector<std::uint64_t> confusion(const LabelMap& pred, const LabelMap& gt, int num_classes);

}  // namespace aalr
