#include "trt/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>

namespace trt {

void ToyTaskConfig::validate() const {
  auto fail = [](const std::string& m) { throw ContractError("invalid toy task config: " + m); };
  if (num_classes < 2) fail("num_classes must be at least 2");
  if (min_object == 0 || min_object > max_object) fail("need 0 < min_object <= max_object");
  if (max_object > image_size) fail("object does not fit inside the image");
  if (noise < 0.0) fail("noise must be nonnegative");
  if (!(background >= 0.0 && background <= 1.0)) fail("background must lie in [0, 1]");
  if (samples_per_epoch == 0) fail("samples_per_epoch must be positive");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ContractError("invalid train config: " + m); };
  if (learning_rate < 0.0 || weight_decay < 0.0) fail("rates must be nonnegative");
  if (batch_size == 0) fail("batch_size must be positive");
}

ModelConfig TrainConfig::model_config(const ToyTaskConfig& toy) const {
  ModelConfig c;
  c.image_size = toy.image_size;
  c.num_classes = toy.num_classes;
  c.patch_size = patch_size;
  c.embed_dim = embed_dim;
  c.num_blocks = num_blocks;
  c.num_heads = num_heads;
  c.mlp_ratio = mlp_ratio;
  c.selection_mass = selection_mass;
  c.validate();
  return c;
}

std::array<float, 3> class_color(std::size_t k, std::size_t num_classes) {
  // Hues k / (K + 1) of the way round the wheel, saturation and value 0.9.
  // With K + 1 slots no two class colors sit opposite each other around the
  // gray background, so every class differs from the background along a
  // shared direction as well as its own.
  const double h = 6.0 * double(k) / double(num_classes + 1);
  const double v = 0.9, s = 0.9;
  const double c = v * s;
  const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
  const double m = v - c;
  double r = 0, g = 0, b = 0;
  switch (int(h) % 6) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  return {float(r + m), float(g + m), float(b + m)};
}

std::vector<Sample> make_toy_samples(const ToyTaskConfig& toy, std::size_t count, std::uint64_t seed) {
  toy.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t n = toy.image_size;
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Sample s;
    s.id = "toy" + std::to_string(i);
    s.label = std::uniform_int_distribution<std::size_t>(0, toy.num_classes - 1)(rng);
    const auto size = std::uniform_int_distribution<std::uint32_t>(toy.min_object, toy.max_object)(rng);
    const auto x0 = std::uniform_int_distribution<std::uint32_t>(0, toy.image_size - size)(rng);
    const auto y0 = std::uniform_int_distribution<std::uint32_t>(0, toy.image_size - size)(rng);
    s.boxes.push_back({std::int32_t(x0), std::int32_t(y0), std::int32_t(x0 + size), std::int32_t(y0 + size)});
    const auto color = class_color(s.label, toy.num_classes);
    s.image = Tensor({3, n, n});
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const bool inside = x >= x0 && x < x0 + size && y >= y0 && y < y0 + size;
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double base = inside ? color[ch] : toy.background;
          s.image[(ch * n + y) * n + x] = float(std::clamp(base + toy.noise * noise(rng), 0.0, 1.0));
        }
      }
    out.push_back(std::move(s));
  }
  return out;
}

double cross_entropy_joint(const Tensor& p_c, const Tensor& p_t, std::size_t y) {
  if (p_c.size() != p_t.size()) throw DimensionError("cross_entropy_joint: branch class counts differ");
  if (y >= p_c.size()) {
    throw ContractError("class id " + std::to_string(y) + " out of range for " + std::to_string(p_c.size()) +
                        " classes");
  }
  return -(std::log(std::max(double(p_c[y]), kProbabilityFloor)) +
           std::log(std::max(double(p_t[y]), kProbabilityFloor)));
}

ParamStore sgd_step(const ParamStore& params, const ParamStore& grads, double lr, double weight_decay) {
  ParamStore out = params;
  for (const auto& [name, g] : grads) {
    auto it = out.find(name);
    if (it == out.end()) throw ContractError("sgd_step: gradient for unknown parameter '" + name + "'");
    auto& p = it->second;
    require_same_dims(p, g, ("sgd_step: " + name).c_str());
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = float(double(p[i]) - lr * (double(g[i]) + weight_decay * double(p[i])));
    }
  }
  return out;
}

BatchGradients batch_gradients(const ParamStore& params, const ModelConfig& config, const std::vector<Sample>& batch,
                               const ParamFilter& trainable) {
  struct PerImage {
    double loss = 0.0;
    ParamStore grads;
  };
  std::vector<PerImage> parts(batch.size());
  const auto select = adaptive_selector(config.selection_mass);
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < long(batch.size()); ++i) {
    try {
      ad::Tape<float> tape;
      Binder<float> bind(tape, params, trainable);
      const auto& s = batch[std::size_t(i)];
      auto f = forward(s.image, bind, config, select);
      auto loss = joint_loss(f, s.label);
      tape.backward(loss);
      PerImage part;
      part.loss = loss.value()[0];
      for (const auto& [name, v] : bind.bound()) {
        if (tape.requires_grad(v)) part.grads.emplace(name, tape.grad(v));
      }
      parts[std::size_t(i)] = std::move(part);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  BatchGradients out;
  const double inv = 1.0 / double(batch.size());
  std::map<std::string, std::vector<double>> acc;
  for (const auto& part : parts) {
    out.loss += part.loss;
    for (const auto& [name, g] : part.grads) {
      auto& a = acc[name];
      if (a.empty()) a.assign(g.size(), 0.0);
      for (std::size_t j = 0; j < g.size(); ++j) a[j] += g[j];
    }
  }
  out.loss *= inv;
  for (const auto& [name, a] : acc) {
    Tensor g(params.at(name).dims());
    for (std::size_t j = 0; j < a.size(); ++j) g[j] = float(a[j] * inv);
    out.grads.emplace(name, std::move(g));
  }
  return out;
}

TrainResult train_toy(const ToyTaskConfig& toy, const TrainConfig& train) {
  toy.validate();
  train.validate();
  TrainResult r;
  r.config = train.model_config(toy);
  r.params = init_parameters(r.config, train.seed);
  const auto data = make_toy_samples(toy, toy.samples_per_epoch, toy.seed);

  std::mt19937_64 shuffle_rng(train.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  auto next_batch = [&]() {
    std::vector<Sample> batch;
    for (std::size_t i = 0; i < train.batch_size; ++i) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        cursor = 0;
      }
      batch.push_back(data[order[cursor++]]);
    }
    return batch;
  };

  std::size_t step = 0;
  auto run_phase = [&](int phase, std::uint32_t steps, const ParamFilter& trainable) {
    for (std::uint32_t s = 0; s < steps; ++s) {
      const auto g = batch_gradients(r.params, r.config, next_batch(), trainable);
      r.curve.push_back({step++, phase, g.loss});
      r.params = sgd_step(r.params, g.grads, train.learning_rate, train.weight_decay);
    }
  };
  run_phase(1, train.phase1_steps, is_backbone_or_tpsm_parameter);
  run_phase(2, train.phase2_steps, is_cam_parameter);
  return r;
}

}  // namespace trt
