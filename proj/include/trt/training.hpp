#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "trt/localization.hpp"

namespace trt {

/// Synthetic stand-in for a WSOL dataset: one colored square per image on a
/// noisy gray background; the label is the square's color class and the
/// ground-truth box is its extent.
struct ToyTaskConfig {
  std::uint32_t image_size = 32;
  std::uint32_t num_classes = 2;
  std::uint32_t min_object = 12;
  std::uint32_t max_object = 24;
  double noise = 0.1;
  double background = 0.5;  // gray level behind the square
  std::uint32_t samples_per_epoch = 256;
  std::uint64_t seed = 1;

  void validate() const;
};

struct TrainConfig {
  double learning_rate = 0.1;
  double weight_decay = 5e-4;
  std::uint32_t phase1_steps = 200;  // backbone + TPSM
  std::uint32_t phase2_steps = 100;  // CAM only
  std::uint32_t batch_size = 8;
  std::uint64_t seed = 9;
  // Architecture; image size and class count come from the task.
  std::uint32_t patch_size = 4;
  std::uint32_t embed_dim = 32;
  std::uint32_t num_blocks = 3;
  std::uint32_t num_heads = 2;
  std::uint32_t mlp_ratio = 4;
  double selection_mass = 0.65;

  void validate() const;
  ModelConfig model_config(const ToyTaskConfig& toy) const;
};

/// RGB color of class k, in [0, 1].
std::array<float, 3> class_color(std::size_t k, std::size_t num_classes);

/// `count` deterministic samples drawn from `seed` (independent of toy.seed).
std::vector<Sample> make_toy_samples(const ToyTaskConfig& toy, std::size_t count, std::uint64_t seed);

/// -(log p_c[y] + log p_t[y]) with probabilities floored at 1e-12.
double cross_entropy_joint(const Tensor& p_c, const Tensor& p_t, std::size_t y);

/// p <- p - lr * (g + weight_decay * p) for every parameter that has a
/// gradient; the rest are copied through untouched.
ParamStore sgd_step(const ParamStore& params, const ParamStore& grads, double lr, double weight_decay);

using ParamFilter = std::function<bool(const std::string&)>;

struct BatchGradients {
  double loss = 0.0;  // batch mean
  ParamStore grads;   // batch mean, trainable parameters only
};

/// Forward + backward over a batch. Per-image tapes may run in parallel; the
/// reduction runs in batch order so the result is deterministic.
BatchGradients batch_gradients(const ParamStore& params, const ModelConfig& config, const std::vector<Sample>& batch,
                               const ParamFilter& trainable);

struct LossPoint {
  std::size_t step = 0;
  int phase = 1;
  double loss = 0.0;
};

struct TrainResult {
  ModelConfig config;
  ParamStore params;
  std::vector<LossPoint> curve;
};

/// Phase 1 trains backbone and TPSM parameters against the joint loss; phase
/// 2 freezes them and trains the CAM branch.
TrainResult train_toy(const ToyTaskConfig& toy, const TrainConfig& train);

}  // namespace trt
