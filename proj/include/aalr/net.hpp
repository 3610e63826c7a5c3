#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "aalr/affinity.hpp"
#include "aalr/metric.hpp"
#include "aalr/rng.hpp"
#include "aalr/tensor.hpp"

namespace aalr {

struct ToyModelConfig {
  int in_channels = 3;
  int hidden = 16;     // conv1 output channels
  int embed_dim = 16;  // conv2 output channels = embedding width
  int num_classes = 0;
};

// Two 3x3 convolutions (stride 1, zero padding 1, ReLU after each) producing
// the embedding map, then a 1x1 head producing per-pixel class logits.
struct ToyModel {
  ToyModelConfig cfg;
  DenseTensor conv1_w;  // [3,3,in,hidden]
  DenseTensor conv1_b;  // [hidden]
  DenseTensor conv2_w;  // [3,3,hidden,embed]
  DenseTensor conv2_b;  // [embed]
  DenseTensor head_w;   // [embed,classes]
  DenseTensor head_b;   // [classes]
};

// He-uniform weights, zero biases, deterministic given the rng stream.
ToyModel make_model(const ToyModelConfig& cfg, Rng& rng);

struct Forward {
  DenseTensor embed;   // H x W x embed_dim, post-ReLU
  DenseTensor logits;  // H x W x C
  DenseTensor probs;   // H x W x C, per-pixel softmax
};

Forward forward(const ToyModel& model, const DenseTensor& image);

// Dense argmax labeling of the class probabilities; ties go to the lowest
// class, and previously neutral pixels receive a label like any other.
LabelMap refine(const ToyModel& model, const DenseTensor& image);

struct LossReport {
  double value = 0;
  DenseTensor grad;
};

// Mean over non-neutral pixels of -log(max(p_true, floor)); gradient w.r.t.
// the probability map. All-neutral maps give 0 with zero gradient.
LossReport ce_loss(const DenseTensor& probs, const LabelMap& labels, double prob_floor = 1e-8);

// Global-max-pooled binary cross entropy over foreground classes 1..C-1
// against the image-level multi-hot vector; gradient w.r.t. the logits flows
// through the argmax pixel of each class. C == 1 gives 0 over the empty set.
LossReport cls_loss(const DenseTensor& logits, const std::vector<int>& image_labels);

struct TrainConfig {
  int epochs = 8;
  int steps_per_epoch = 25;
  double learn_rate = 1e-2;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double lambda1 = 0.1;  // affinity weight
  double lambda2 = 0.1;  // label-reassign weight
  int lr_loss_last_epochs = 2;
  bool refresh_pairs = false;  // rebuild pair sets from the current argmax each step
  std::uint64_t seed = 1;
  AffinityConfig affinity;
  LrConfig lr_loss;
  ToyModelConfig model;

  void validate() const;
};

struct TrainSample {
  DenseTensor image;            // H x W x in_channels
  LabelMap pseudo;              // pseudo-labels with neutral regions
  std::vector<int> image_labels;  // multi-hot, length num_classes, slot 0 unused
};

struct StepMetrics {
  double cls = 0, ce = 0, aa = 0, lr = 0, total = 0;
};

namespace detail {

// f32 parameters promoted to double once per step; all forward/backward and
// loss arithmetic runs in double on top of them.
struct ParamsD {
  ToyModelConfig cfg;
  std::vector<double> c1w, c1b, c2w, c2b, hw, hb;
};

ParamsD promote(const ToyModel& model);

struct ActivationsD {
  std::size_t height = 0, width = 0;
  std::vector<double> hidden, embed, logits, probs;
  std::uint64_t relu_sig = 0;
};

void forward_core(const ParamsD& p, const float* image, std::size_t height, std::size_t width,
                  ActivationsD& acts);

struct TotalEval {
  double cls = 0, ce = 0, aa = 0, lr = 0, total = 0;
  std::uint64_t state_signature = 0;
};

struct StepEval {
  TotalEval totals;
  std::vector<double> g_c1w, g_c1b, g_c2w, g_c2b, g_hw, g_hb;
  // step-frozen quantities, exported for the finite-difference harness
  std::vector<double> conf;
  CentroidSet centroids;
  Reassignment assignment;
  bool lr_included = false;
};

StepEval objective_grad(const ParamsD& params, const TrainSample& sample, const PairSet& pairs,
                        const TrainConfig& cfg, bool lr_active);

// Objective value with the confidence map, centroids, assignments, and alpha
// frozen at their base-point values: the function whose parameter gradient
// objective_grad reports. The signature fingerprints ReLU, hinge, clamp, and
// pooling branch states.
TotalEval objective_value_frozen(const ParamsD& params, const TrainSample& sample,
                                 const PairSet& pairs, const TrainConfig& cfg,
                                 const StepEval& frozen);

}  // namespace detail

// Owns the model, momentum state, and the cached pair sets for one sample.
class Trainer {
 public:
  Trainer(TrainConfig cfg, TrainSample sample);

  // Runs one SGD step; `epoch` is 1-based and controls whether the
  // label-reassign term is included (only in the last lr_loss_last_epochs).
  StepMetrics step(int epoch);

  bool lr_active(int epoch) const;
  const ToyModel& model() const { return model_; }
  ToyModel& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  const TrainSample& sample() const { return sample_; }

 private:
  TrainConfig cfg_;
  TrainSample sample_;
  ToyModel model_;
  PairSet pairs_;
  std::vector<std::vector<float>> velocity_;
};

void save_checkpoint(const ToyModel& model, const std::filesystem::path& dir);
ToyModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace aalr
