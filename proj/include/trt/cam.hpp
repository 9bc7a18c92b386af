#pragma once

#include "trt/tpsm.hpp"

namespace trt {

template <std::floating_point T>
struct CamVars {
  ad::Var<T> maps;    // N x K, column k is class map k in raster order
  ad::Var<T> logits;  // 1 x K, spatial means of the maps
  ad::Var<T> probs;   // 1 x K
};

template <std::floating_point T>
CamVars<T> cam_forward(ad::Var<T> z_p, Binder<T>& bind) {
  const std::size_t side = exact_sqrt(z_p.value().rows());
  auto maps = ad::conv3x3(z_p, bind("cam.conv.weight"), bind("cam.conv.bias"), side);
  auto logits = ad::mean_rows(maps);
  return {maps, logits, ad::softmax_rows(logits)};
}

template <std::floating_point T>
struct CamResult {
  BasicTensor<T> maps;    // K x side x side
  BasicTensor<T> logits;  // K
  BasicTensor<T> probs;   // K
};

/// Token-major N x K conv output to class-major K x side x side.
template <std::floating_point T>
BasicTensor<T> class_maps(const BasicTensor<T>& token_major) {
  const std::size_t n = token_major.rows(), k = token_major.cols();
  const std::size_t side = exact_sqrt(n);
  BasicTensor<T> out({k, side, side});
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < k; ++c) out[c * n + p] = token_major(p, c);
  return out;
}

template <std::floating_point T>
CamResult<T> cam_forward(const BasicTensor<T>& z_p, const BasicParamStore<T>& params) {
  ad::Tape<T> tape;
  Binder<T> bind(tape, params);
  auto r = cam_forward(tape.constant(z_p), bind);
  const std::size_t k = r.logits.value().size();
  return {class_maps(r.maps.value()), r.logits.value().reshaped({k}), r.probs.value().reshaped({k})};
}

}  // namespace trt
