#pragma once

#include <functional>
#include <vector>

#include "trt/vit.hpp"

namespace trt {

/// Outcome of choosing which patch tokens take part in re-attention.
struct Selection {
  double tau = 0.0;  // effective threshold
  Mask b;            // 1 where the token is selected
};

/// All intermediate quantities of the token priority scoring path for one image.
struct TokenSelection {
  std::vector<double> m;  // preliminary attention, length N
  double tau = 0.0;
  Mask b;                 // length N
  Mask B;                 // N x N, row-major
  std::vector<double> lambda;
  std::vector<double> m_refined;
};

using Selector = std::function<Selection(const std::vector<double>& m)>;

/// m = sum over blocks of the head-averaged class-token row, patch columns only.
template <std::floating_point T>
std::vector<double> preliminary_attention(const BasicAttentionStack<T>& stack) {
  if (stack.blocks.empty()) throw ContractError("preliminary_attention: empty attention stack");
  const std::size_t cols = stack.blocks.front().front().cols();
  std::vector<double> m(cols - 1, 0.0);
  for (const auto& heads : stack.blocks) {
    if (heads.empty()) throw ContractError("preliminary_attention: block without heads");
    std::vector<double> row(cols - 1, 0.0);
    for (const auto& a : heads) {
      if (a.cols() != cols) throw DimensionError("preliminary_attention: inconsistent attention dims");
      for (std::size_t j = 1; j < cols; ++j) row[j - 1] += a(0, j);
    }
    for (std::size_t j = 0; j + 1 < cols; ++j) m[j] += row[j] / double(heads.size());
  }
  return m;
}

/// Cumulative-mass threshold: the smallest descending-sorted prefix whose
/// share of the total reaches u defines tau; every token with m >= tau is
/// selected. Throws ContractError when m sums to zero.
Selection adaptive_select(const std::vector<double>& m, double u);

/// adaptive_select, falling back to the argmax token on degenerate input.
Selection adaptive_select_or_argmax(const std::vector<double>& m, double u);

/// Token-to-token mask: B[i][j] = b[j] off the diagonal, 1 on it.
Mask selection_matrix(const Mask& b);

/// m' = m * (1 - b) + lambda * r with r = sum(m * b) / sum(lambda).
std::vector<double> reattention(const std::vector<double>& m, const Mask& b, const std::vector<double>& lambda);

/// Row-major reshape of an N-vector to sqrt(N) x sqrt(N).
Tensor tpsm_map(const std::vector<double>& m_refined);

std::size_t exact_sqrt(std::size_t n);

// ---------------------------------------------------------------------------
// Differentiable parts

/// Mask-transformer block over patch tokens, scalar score per token, softmax
/// over the selected tokens. Returns lambda as 1 x N.
template <std::floating_point T>
ad::Var<T> importance_weights(ad::Var<T> z_p, const Mask& b, const Mask& B, Binder<T>& bind,
                              const ModelConfig& config) {
  auto w = BlockVars<T>::bind(bind, kMaskBlockPrefix);
  auto y = block_forward(z_p, w, config.num_heads, B).out;
  auto scores = linear(y, bind("tpsm.score.weight"), bind("tpsm.score.bias"));  // N x 1
  return ad::softmax_rows(ad::transpose(scores), b);
}

/// Fuses patch tokens by lambda, runs the final block on [cls; fusion] and
/// classifies the class-token row. Returns p_t as 1 x K.
template <std::floating_point T>
ad::Var<T> tpsm_classify(ad::Var<T> z_cls, ad::Var<T> z_p, ad::Var<T> lambda, Binder<T>& bind,
                         const ModelConfig& config) {
  auto fusion = ad::matmul(lambda, z_p);
  auto w = BlockVars<T>::bind(bind, kFinalBlockPrefix);
  auto out = block_forward(ad::concat_rows<T>({z_cls, fusion}), w, config.num_heads).out;
  auto logits = linear(ad::slice_rows(out, 0, 1), bind("tpsm.head.weight"), bind("tpsm.head.bias"));
  return ad::softmax_rows(logits);
}

// Value-level wrappers.

template <std::floating_point T>
AttentionResult<T> masked_mhsa(const BasicTensor<T>& z_p, const Mask& B, const BasicParamStore<T>& params,
                               const std::string& prefix, std::size_t heads) {
  if (B.size() != z_p.rows() * z_p.rows()) throw DimensionError("masked_mhsa: selection matrix does not match tokens");
  return mhsa(z_p, params, prefix, heads, B);
}

template <std::floating_point T>
std::vector<double> importance_weights(const BasicTensor<T>& z_p, const Mask& b, const BasicParamStore<T>& params,
                                       const ModelConfig& config) {
  ad::Tape<T> tape;
  Binder<T> bind(tape, params);
  auto lambda = importance_weights(tape.constant(z_p), b, selection_matrix(b), bind, config);
  const auto& v = lambda.value();
  return std::vector<double>(v.data().begin(), v.data().end());
}

template <std::floating_point T>
BasicTensor<T> tpsm_classify(const BasicTensor<T>& z_cls, const BasicTensor<T>& z_p, const std::vector<double>& lambda,
                             const BasicParamStore<T>& params, const ModelConfig& config) {
  ad::Tape<T> tape;
  Binder<T> bind(tape, params);
  BasicTensor<T> l({1, lambda.size()});
  for (std::size_t i = 0; i < lambda.size(); ++i) l[i] = T(lambda[i]);
  return tpsm_classify(tape.constant(z_cls), tape.constant(z_p), tape.constant(l), bind, config).value();
}

}  // namespace trt
