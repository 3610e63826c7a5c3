#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "aalr/errors.hpp"

namespace aalr {

// Label value meaning "no pseudo-label here"; excluded from every loss.
inline constexpr std::uint8_t kNeutralLabel = 255;

inline std::size_t checked_volume(const std::vector<std::size_t>& dims) {
  if (dims.empty()) throw validation_error("tensor must have at least one dimension");
  std::size_t n = 1;
  for (std::size_t d : dims) {
    if (d == 0) throw validation_error("tensor dimensions must be positive");
    if (d > (SIZE_MAX / n)) throw validation_error("tensor dimensions overflow");
    n *= d;
  }
  return n;
}

// Row-major f32 tensor. Spatial tensors index as (h, w, c): channel last.
// Storage is 32-bit; all loss reductions accumulate in 64-bit.
struct DenseTensor {
  std::vector<std::size_t> dims;
  std::vector<float> data;

  DenseTensor() = default;

  explicit DenseTensor(std::vector<std::size_t> d) : dims(std::move(d)) {
    data.assign(checked_volume(dims), 0.0f);
  }

  DenseTensor(std::vector<std::size_t> d, std::vector<float> payload)
      : dims(std::move(d)), data(std::move(payload)) {
    if (checked_volume(dims) != data.size())
      throw validation_error("tensor payload size does not match dims");
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return dims.size(); }

  // rank-3 (h, w, c)
  float& at(std::size_t h, std::size_t w, std::size_t c) {
    return data[(h * dims[1] + w) * dims[2] + c];
  }
  float at(std::size_t h, std::size_t w, std::size_t c) const {
    return data[(h * dims[1] + w) * dims[2] + c];
  }

  // rank-2 (h, w)
  float& at(std::size_t h, std::size_t w) { return data[h * dims[1] + w]; }
  float at(std::size_t h, std::size_t w) const { return data[h * dims[1] + w]; }

  bool operator==(const DenseTensor&) const = default;

  void check_finite(const std::string& what) const {
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!std::isfinite(data[i]))
        throw validation_error(what + ": non-finite value at flat index " + std::to_string(i));
    }
  }
};

// H x W map of class indices; 255 is the neutral sentinel, class 0 is background.
struct LabelMap {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = 0)
      : height(h), width(w), labels(h * w, fill) {
    if (h == 0 || w == 0) throw validation_error("label map dimensions must be positive");
  }

  std::uint8_t& at(std::size_t h, std::size_t w) { return labels[h * width + w]; }
  std::uint8_t at(std::size_t h, std::size_t w) const { return labels[h * width + w]; }
  std::size_t pixels() const { return height * width; }

  bool operator==(const LabelMap&) const = default;
};

// Every non-neutral value must be a class index < num_classes.
inline void validate_labels(const LabelMap& map, int num_classes) {
  if (num_classes < 1) throw validation_error("num_classes must be >= 1");
  std::string offenders;
  std::size_t bad = 0;
  for (std::size_t h = 0; h < map.height; ++h) {
    for (std::size_t w = 0; w < map.width; ++w) {
      std::uint8_t v = map.at(h, w);
      if (v == kNeutralLabel || v < num_classes) continue;
      if (bad < 8)
        offenders += " (" + std::to_string(h) + "," + std::to_string(w) + ")=" + std::to_string(int(v));
      ++bad;
    }
  }
  if (bad > 0)
    throw validation_error("label values out of range for num_classes=" +
                           std::to_string(num_classes) + ":" + offenders +
                           (bad > 8 ? " (+" + std::to_string(bad - 8) + " more)" : ""));
}

}  // namespace aalr
