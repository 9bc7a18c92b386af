#pragma once

// Shared helpers for the unit and acceptance suites: seeded fixtures,
// tolerance checks and the gradient-check drivers.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "trt/model.hpp"
#include "trt/training.hpp"

namespace trt::testing {

template <std::floating_point T = float>
BasicTensor<T> random_tensor(const Dims& dims, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  BasicTensor<T> t(dims);
  for (auto& v : t.storage()) v = T(d(rng));
  return t;
}

/// |a - n| <= max(abs_floor, rel * max(|a|, |n|)).
inline bool grad_close(double analytic, double numeric, double rel = 1e-3, double abs_floor = 1e-4) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  return std::abs(analytic - numeric) <= std::max(abs_floor, rel * scale);
}

struct GradReport {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst_excess = 0.0;  // largest |a-n| - allowed
  std::string first_failure;

  bool ok() const { return failed == 0 && checked > 0; }
};

inline void compare_grads(GradReport& r, const std::string& what, const BasicTensor<double>& analytic,
                          const BasicTensor<double>& numeric) {
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    ++r.checked;
    const double a = analytic[i], n = numeric[i];
    if (!grad_close(a, n)) {
      ++r.failed;
      const double allowed = std::max(1e-4, 1e-3 * std::max(std::abs(a), std::abs(n)));
      r.worst_excess = std::max(r.worst_excess, std::abs(a - n) - allowed);
      if (r.first_failure.empty()) {
        r.first_failure = what + "[" + std::to_string(i) + "]: analytic " + std::to_string(a) + " numeric " +
                          std::to_string(n);
      }
    }
  }
}

/// Builds a scalar from a tape-level function of one input, then checks the
/// reverse-mode gradient against central differences.
using UnaryGraph = std::function<ad::Var<double>(ad::Tape<double>&, ad::Var<double>)>;

inline GradReport check_unary(const std::string& what, const UnaryGraph& graph, const BasicTensor<double>& x,
                              double h = 1e-6) {
  ad::Tape<double> tape;
  auto in = tape.parameter(x);
  auto out = graph(tape, in);
  tape.backward(out);
  const auto analytic = tape.grad(in);
  auto f = [&](const BasicTensor<double>& probe) {
    ad::Tape<double> t;
    return graph(t, t.parameter(probe)).value()[0];
  };
  GradReport r;
  compare_grads(r, what, analytic, finite_diff_grad<double>(f, x, h));
  return r;
}

/// Reduces any tensor to a scalar with fixed random weights so that every
/// output element influences the loss differently.
inline ad::Var<double> weighted_sum(ad::Var<double> y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  const auto v = y.value();  // copy: pushing onto the tape may move node storage
  auto w = y.tape->constant(random_tensor<double>(v.dims(), rng));
  BasicTensor<double> out({1, 1});
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) acc += v[i] * w.value()[i];
  out[0] = acc;
  return y.tape->record(out, {y, w}, [y = y.id, w = w.id](ad::Tape<double>& t, std::size_t self) {
    BasicTensor<double> g = t.value(w);
    for (auto& e : g.storage()) e *= t.grad_of(self)[0];
    t.accumulate(y, g);
  });
}

/// Tiny two-branch model used by the composed gradient check: N = 4 patches
/// (8x8 image, patch 4), D = 8, two heads, L = 2, K = 3.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.num_blocks = 2;
  c.num_heads = 2;
  c.mlp_ratio = 2;
  c.num_classes = 3;
  c.selection_mass = 0.65;
  return c;
}

/// Random parameters with larger spread than the training initialization so
/// every path carries a visible gradient.
inline BasicParamStore<double> tiny_params(const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  BasicParamStore<double> p;
  for (const auto& [name, dims] : parameter_shapes(c)) p.emplace(name, random_tensor<double>(dims, rng, -0.5, 0.5));
  return p;
}

/// Joint loss of the full network on one image with the token selection
/// frozen to `fixed` (selection is a constant of the graph).
inline double composed_loss(const BasicParamStore<double>& params, const ModelConfig& c,
                            const BasicTensor<double>& image, std::size_t label, const Mask& fixed) {
  ad::Tape<double> tape;
  Binder<double> bind(tape, params);
  auto f = forward(image, bind, c, [&](const std::vector<double>&) { return Selection{0.0, fixed}; });
  return joint_loss(f, label).value()[0];
}

/// Checks d(joint loss)/d(parameter) for every parameter of the tiny model.
inline GradReport check_composed_loss(std::uint64_t seed, double h = 1e-6) {
  const auto c = tiny_config();
  auto params = tiny_params(c, seed);
  std::mt19937_64 rng(seed + 1);
  const auto image = random_tensor<double>({3, c.image_size, c.image_size}, rng, 0.0, 1.0);
  const std::size_t label = seed % c.num_classes;

  ad::Tape<double> tape;
  Binder<double> bind(tape, params, [](const std::string&) { return true; });
  Mask frozen;
  auto f = forward(image, bind, c, [&](const std::vector<double>& m) {
    auto s = adaptive_select_or_argmax(m, c.selection_mass);
    frozen = s.b;
    return s;
  });
  tape.backward(joint_loss(f, label));

  GradReport r;
  for (const auto& [name, var] : bind.bound()) {
    auto probe_fn = [&, name = name](const BasicTensor<double>& probe) {
      auto p = params;
      p.at(name) = probe;
      return composed_loss(p, c, image, label, frozen);
    };
    compare_grads(r, name, tape.grad(var), finite_diff_grad<double>(probe_fn, params.at(name), h));
  }
  return r;
}

}  // namespace trt::testing
