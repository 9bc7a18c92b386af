#pragma once

// The complete two-branch network: backbone, token priority scoring path
// (producing p_t and the context map M_T) and the CAM path (producing p_c and
// the class maps M_C).

#include "trt/cam.hpp"

namespace trt {

inline constexpr double kProbabilityFloor = 1e-12;

inline Selector adaptive_selector(double u) {
  return [u](const std::vector<double>& m) { return adaptive_select_or_argmax(m, u); };
}

template <std::floating_point T>
struct ForwardVars {
  ad::Var<T> z;       // Z_{L-1}, (N+1) x D
  BasicAttentionStack<T> stack;
  TokenSelection selection;  // m, tau, b, B (lambda / m_refined filled by predict)
  ad::Var<T> lambda;  // 1 x N
  ad::Var<T> p_t;     // 1 x K
  CamVars<T> cam;
};

/// Runs the whole network on one image. Token selection is computed from the
/// attention values and enters the graph as a constant mask.
template <std::floating_point T>
ForwardVars<T> forward(const BasicTensor<T>& image, Binder<T>& bind, const ModelConfig& config,
                       const Selector& select) {
  auto& tape = bind.tape();
  const std::size_t n = config.num_patches();
  auto patches = tape.constant(patchify(image, config.patch_size));
  auto z0 = embed(patches, bind);
  auto backbone = backbone_forward(z0, bind, config);

  ForwardVars<T> out;
  out.z = backbone.z;
  out.stack = std::move(backbone.stack);
  out.selection.m = preliminary_attention(out.stack);
  auto sel = select(out.selection.m);
  if (sel.b.size() != n) throw DimensionError("selector returned a mask of the wrong length");
  out.selection.tau = sel.tau;
  out.selection.b = std::move(sel.b);
  out.selection.B = selection_matrix(out.selection.b);

  auto z_cls = ad::slice_rows(out.z, 0, 1);
  auto z_p = ad::slice_rows(out.z, 1, n + 1);
  out.lambda = importance_weights(z_p, out.selection.b, out.selection.B, bind, config);
  out.p_t = tpsm_classify(z_cls, z_p, out.lambda, bind, config);
  out.cam = cam_forward(z_p, bind);
  return out;
}

/// Joint objective -(log p_c[y] + log p_t[y]).
template <std::floating_point T>
ad::Var<T> joint_loss(const ForwardVars<T>& f, std::size_t label) {
  return ad::add(ad::neg_log_pick(f.cam.probs, label, kProbabilityFloor),
                 ad::neg_log_pick(f.p_t, label, kProbabilityFloor));
}

/// Everything inference needs from one forward pass.
struct Prediction {
  Tensor p_c;          // K
  Tensor p_t;          // K
  Tensor cam_logits;   // K
  Tensor class_maps;   // K x side x side (M_C)
  TokenSelection selection;
  Tensor context_map;  // side x side (M_T from m_refined)
  Tensor raw_map;      // side x side (M from raw m, re-attention skipped)
};

Prediction predict(const ParamStore& params, const ModelConfig& config, const Tensor& image,
                   const Selector& select);

inline Prediction predict(const ParamStore& params, const ModelConfig& config, const Tensor& image) {
  return predict(params, config, image, adaptive_selector(config.selection_mass));
}

/// Class indices ordered by probability, descending; ties by lower index.
std::vector<std::size_t> rank_classes(const Tensor& probs);

}  // namespace trt
