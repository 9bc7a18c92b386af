#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "trt/autodiff.hpp"
#include "trt/config.hpp"
#include "trt/params.hpp"

namespace trt {

// ---------------------------------------------------------------------------
// Patches

/// image: 3 x H x W. Row n of the result holds patch n (raster order),
/// flattened channel-major, then row, then column.
template <std::floating_point T>
BasicTensor<T> patchify(const BasicTensor<T>& image, std::size_t patch) {
  if (image.ndim() != 3 || image.dim(0) != 3) {
    throw DimensionError("patchify: expected a 3xHxW image, got " + dims_to_string(image.dims()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw DimensionError("patchify: image " + dims_to_string(image.dims()) +
                         " is not divisible into patches of " + std::to_string(patch));
  }
  const std::size_t gh = h / patch, gw = w / patch;
  BasicTensor<T> out({gh * gw, 3 * patch * patch});
  for (std::size_t pr = 0; pr < gh; ++pr)
    for (std::size_t pc = 0; pc < gw; ++pc) {
      const std::size_t n = pr * gw + pc;
      std::size_t k = 0;
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x)
            out(n, k++) = image[(ch * h + pr * patch + y) * w + pc * patch + x];
    }
  return out;
}

template <std::floating_point T>
BasicTensor<T> unpatchify(const BasicTensor<T>& patches, std::size_t patch, std::size_t h, std::size_t w) {
  if (patches.ndim() != 2 || patches.cols() != 3 * patch * patch || patches.rows() != (h / patch) * (w / patch)) {
    throw DimensionError("unpatchify: patches " + dims_to_string(patches.dims()) + " do not tile " +
                         std::to_string(h) + "x" + std::to_string(w));
  }
  BasicTensor<T> image({3, h, w});
  const std::size_t gw = w / patch;
  for (std::size_t n = 0; n < patches.rows(); ++n) {
    const std::size_t pr = n / gw, pc = n % gw;
    std::size_t k = 0;
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t y = 0; y < patch; ++y)
        for (std::size_t x = 0; x < patch; ++x) image[(ch * h + pr * patch + y) * w + pc * patch + x] = patches(n, k++);
  }
  return image;
}

// ---------------------------------------------------------------------------
// Binding parameters onto a tape

/// Puts named parameters on a tape, once each. Names accepted by `trainable`
/// become gradient leaves; the rest are constants.
template <std::floating_point T>
class Binder {
 public:
  using Predicate = std::function<bool(const std::string&)>;

  Binder(ad::Tape<T>& tape, const BasicParamStore<T>& params, Predicate trainable = nullptr)
      : tape_(&tape), params_(&params), trainable_(std::move(trainable)) {}

  ad::Var<T> operator()(const std::string& name) {
    if (auto it = bound_.find(name); it != bound_.end()) return it->second;
    auto p = params_->find(name);
    if (p == params_->end()) throw FormatError("missing parameter '" + name + "'");
    const bool train = trainable_ && trainable_(name);
    auto v = train ? tape_->parameter(p->second) : tape_->constant(p->second);
    bound_.emplace(name, v);
    return v;
  }

  ad::Tape<T>& tape() { return *tape_; }
  const std::map<std::string, ad::Var<T>>& bound() const { return bound_; }

 private:
  ad::Tape<T>* tape_;
  const BasicParamStore<T>* params_;
  Predicate trainable_;
  std::map<std::string, ad::Var<T>> bound_;
};

template <std::floating_point T>
struct BlockVars {
  ad::Var<T> norm1_w, norm1_b;
  ad::Var<T> q_w, q_b, k_w, k_b, v_w, v_b, proj_w, proj_b;
  ad::Var<T> norm2_w, norm2_b;
  ad::Var<T> fc1_w, fc1_b, fc2_w, fc2_b;

  static BlockVars bind(Binder<T>& b, const std::string& p) {
    return BlockVars{b(p + "norm1.weight"),   b(p + "norm1.bias"),     b(p + "attn.q.weight"),
                     b(p + "attn.q.bias"),    b(p + "attn.k.weight"),  b(p + "attn.k.bias"),
                     b(p + "attn.v.weight"),  b(p + "attn.v.bias"),    b(p + "attn.proj.weight"),
                     b(p + "attn.proj.bias"), b(p + "norm2.weight"),   b(p + "norm2.bias"),
                     b(p + "mlp.fc1.weight"), b(p + "mlp.fc1.bias"),   b(p + "mlp.fc2.weight"),
                     b(p + "mlp.fc2.bias")};
  }
};

// ---------------------------------------------------------------------------
// Differentiable building blocks

template <std::floating_point T>
struct AttentionOutput {
  ad::Var<T> out;
  std::vector<ad::Var<T>> attention;  // one per head, rows x rows
};

template <std::floating_point T>
ad::Var<T> linear(ad::Var<T> x, ad::Var<T> w, ad::Var<T> b) {
  return ad::add_row(ad::matmul(x, w), b);
}

/// Multi-head self-attention. Scores are scaled by sqrt(D / heads). When
/// `mask` is non-empty (rows x rows, row-major) each row's softmax only
/// covers entries whose mask byte is set.
template <std::floating_point T>
AttentionOutput<T> mhsa(ad::Var<T> z, const BlockVars<T>& w, std::size_t heads, const Mask& mask = {}) {
  const std::size_t d = z.value().cols();
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("mhsa: embed dim " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  auto q = linear(z, w.q_w, w.q_b);
  auto k = linear(z, w.k_w, w.k_b);
  auto v = linear(z, w.v_w, w.v_b);
  AttentionOutput<T> result;
  std::vector<ad::Var<T>> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
    auto kh = ad::slice_cols(k, h * dh, (h + 1) * dh);
    auto vh = ad::slice_cols(v, h * dh, (h + 1) * dh);
    auto scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), 1.0 / std::sqrt(double(dh)));
    auto a = ad::softmax_rows(scores, mask);
    result.attention.push_back(a);
    outs.push_back(ad::matmul(a, vh));
  }
  result.out = linear(ad::concat_cols(outs), w.proj_w, w.proj_b);
  return result;
}

template <std::floating_point T>
ad::Var<T> mlp(ad::Var<T> x, const BlockVars<T>& w) {
  return linear(ad::gelu(linear(x, w.fc1_w, w.fc1_b)), w.fc2_w, w.fc2_b);
}

/// Pre-norm transformer block: z + attn(ln(z)), then + mlp(ln(.)).
template <std::floating_point T>
AttentionOutput<T> block_forward(ad::Var<T> z, const BlockVars<T>& w, std::size_t heads, const Mask& mask = {}) {
  auto attn = mhsa(ad::layer_norm_rows(z, w.norm1_w, w.norm1_b), w, heads, mask);
  auto z1 = ad::add(z, attn.out);
  auto z2 = ad::add(z1, mlp(ad::layer_norm_rows(z1, w.norm2_w, w.norm2_b), w));
  return {z2, std::move(attn.attention)};
}

/// Z0 = [cls; patches * E] + E_pos.
template <std::floating_point T>
ad::Var<T> embed(ad::Var<T> patches, Binder<T>& b) {
  auto tokens = ad::matmul(patches, b("patch_embed.weight"));
  return ad::add(ad::concat_rows<T>({b("cls_token"), tokens}), b("pos_embed"));
}

/// Per block, per head attention matrices of the backbone.
template <std::floating_point T>
struct BasicAttentionStack {
  std::vector<std::vector<BasicTensor<T>>> blocks;
};
using AttentionStack = BasicAttentionStack<float>;

template <std::floating_point T>
struct BackboneOutput {
  ad::Var<T> z;
  BasicAttentionStack<T> stack;
};

/// Runs blocks 1..L-1.
template <std::floating_point T>
BackboneOutput<T> backbone_forward(ad::Var<T> z0, Binder<T>& b, const ModelConfig& config) {
  BackboneOutput<T> out{z0, {}};
  for (std::size_t i = 0; i < config.backbone_blocks(); ++i) {
    auto w = BlockVars<T>::bind(b, block_prefix(i));
    auto r = block_forward(out.z, w, config.num_heads);
    out.z = r.out;
    std::vector<BasicTensor<T>> heads;
    for (const auto& a : r.attention) heads.push_back(a.value());
    out.stack.blocks.push_back(std::move(heads));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Value-level wrappers: same code path, run on a throwaway tape.

template <std::floating_point T>
struct AttentionResult {
  BasicTensor<T> out;
  std::vector<BasicTensor<T>> attention;
};

template <std::floating_point T>
BasicTensor<T> embed(const BasicTensor<T>& patches, const BasicParamStore<T>& params) {
  ad::Tape<T> tape;
  Binder<T> b(tape, params);
  return embed(tape.constant(patches), b).value();
}

template <std::floating_point T>
AttentionResult<T> mhsa(const BasicTensor<T>& z, const BasicParamStore<T>& params, const std::string& prefix,
                        std::size_t heads, const Mask& mask = {}) {
  ad::Tape<T> tape;
  Binder<T> b(tape, params);
  auto r = mhsa(tape.constant(z), BlockVars<T>::bind(b, prefix), heads, mask);
  AttentionResult<T> out{r.out.value(), {}};
  for (auto& a : r.attention) out.attention.push_back(a.value());
  return out;
}

template <std::floating_point T>
AttentionResult<T> block_forward(const BasicTensor<T>& z, const BasicParamStore<T>& params, const std::string& prefix,
                                 std::size_t heads, const Mask& mask = {}) {
  ad::Tape<T> tape;
  Binder<T> b(tape, params);
  auto r = block_forward(tape.constant(z), BlockVars<T>::bind(b, prefix), heads, mask);
  AttentionResult<T> out{r.out.value(), {}};
  for (auto& a : r.attention) out.attention.push_back(a.value());
  return out;
}

template <std::floating_point T>
std::pair<BasicTensor<T>, BasicAttentionStack<T>> backbone_forward(const BasicTensor<T>& z0,
                                                                   const BasicParamStore<T>& params,
                                                                   const ModelConfig& config) {
  ad::Tape<T> tape;
  Binder<T> b(tape, params);
  auto r = backbone_forward(tape.constant(z0), b, config);
  return {r.z.value(), std::move(r.stack)};
}

}  // namespace trt
