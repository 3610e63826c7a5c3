#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "aalr/tensor.hpp"

namespace aalr {

struct LrConfig {
  double margin_n = 1.0;   // hinge threshold
  double gamma = 2.0;      // concentration exponent of the modulation factor
  double sim_eps = 1e-12;  // norm guard for cosine similarity
  int threads = 1;
};

// Confidence-weighted mean embedding of one class's labeled pixels.
struct Centroid {
  int cls = 0;
  std::vector<double> mean;
  std::size_t members = 0;
  double total_weight = 0;
};

// Sorted by class index; only classes with at least one labeled pixel appear.
struct CentroidSet {
  std::size_t dim = 0;
  std::vector<Centroid> items;

  const Centroid* find(int cls) const {
    for (const auto& c : items)
      if (c.cls == cls) return &c;
    return nullptr;
  }
};

struct PixelAssign {
  std::uint32_t pixel = 0;      // flat row-major index
  std::uint8_t given = 0;       // pseudo-label the pixel carried
  std::uint8_t assigned = 0;    // class of the most similar centroid
  double s_best = 0;            // similarity to the assigned centroid
  double s_second = 0;          // runner-up similarity
  double alpha = 1;             // modulation factor
};

struct Reassignment {
  std::vector<PixelAssign> items;  // labeled pixels, row-major order
  std::size_t fg_count = 0;        // assigned class != 0
  std::size_t bg_count = 0;        // assigned class == 0
};

struct LrReport {
  double total = 0;  // l_pos + l_neg
  double l_pos = 0;  // foreground part
  double l_neg = 0;  // background part
  DenseTensor grad_embed;
  std::size_t fg_count = 0, bg_count = 0;
};

// Throws if fewer than two classes have labeled pixels ("LR loss undefined").
// A class whose total confidence weight is zero falls back to the unweighted
// mean of its members.
CentroidSet compute_centroids(const DenseTensor& embed, const LabelMap& labels,
                              const DenseTensor& conf);

double cosine_sim(std::span<const float> a, std::span<const float> b, double eps);

// Modulation factor from the two best similarities, which are first shifted
// into [0,1] via s' = (1+s)/2 so the ratio is well defined. Equal
// similarities give 1 for any gamma; gamma = 0 gives 1 always.
double alpha_factor(double s_best, double s_second, double gamma);

// Assigns every labeled pixel to its most cosine-similar centroid (ties go to
// the lowest class index) and splits the result into foreground/background by
// assigned class.
Reassignment reassign(const DenseTensor& embed, const LabelMap& labels, const CentroidSet& centroids,
                      const LrConfig& cfg);

// Triplet-center style hinge over centroid similarities, modulated by alpha
// and averaged separately over the background and foreground parts. The
// gradient treats centroids, assignments, and alpha as constants of the step.
LrReport lr_loss(const DenseTensor& embed, const LabelMap& labels, const DenseTensor& conf,
                 const LrConfig& cfg);

namespace detail {

template <typename In>
CentroidSet centroids_core(const In* embed, std::size_t dim, const LabelMap& labels,
                           const In* conf);

template <typename In>
Reassignment reassign_core(const In* embed, std::size_t dim, const LabelMap& labels,
                           const CentroidSet& centroids, const LrConfig& cfg);

// Loss value as a function of the embeddings with centroids, assignments, and
// alpha frozen; this is the function whose gradient lr_loss reports. `sig`
// accumulates hinge activity for kink detection.
template <typename In>
double lr_frozen_value(const In* embed, std::size_t dim, const CentroidSet& centroids,
                       const Reassignment& assign, const LrConfig& cfg, std::uint64_t* sig);

struct LrEval {
  double total = 0, l_pos = 0, l_neg = 0;
  std::vector<double> grad_embed;  // empty unless want_grad
  std::size_t fg_count = 0, bg_count = 0;
  std::uint64_t state_signature = 0;
};

template <typename In>
LrEval lr_eval(const In* embed, std::size_t dim, const LabelMap& labels, const In* conf,
               const LrConfig& cfg, bool want_grad);

extern template CentroidSet centroids_core<float>(const float*, std::size_t, const LabelMap&,
                                                  const float*);
extern template CentroidSet centroids_core<double>(const double*, std::size_t, const LabelMap&,
                                                   const double*);
extern template Reassignment reassign_core<float>(const float*, std::size_t, const LabelMap&,
                                                  const CentroidSet&, const LrConfig&);
extern template Reassignment reassign_core<double>(const double*, std::size_t, const LabelMap&,
                                                   const CentroidSet&, const LrConfig&);
extern template double lr_frozen_value<float>(const float*, std::size_t, const CentroidSet&,
                                              const Reassignment&, const LrConfig&, std::uint64_t*);
extern template double lr_frozen_value<double>(const double*, std::size_t, const CentroidSet&,
                                               const Reassignment&, const LrConfig&,
                                               std::uint64_t*);
extern template LrEval lr_eval<float>(const float*, std::size_t, const LabelMap&, const float*,
                                      const LrConfig&, bool);
extern template LrEval lr_eval<double>(const double*, std::size_t, const LabelMap&, const double*,
                                       const LrConfig&, bool);

}  // namespace detail

}  // namespace aalr
