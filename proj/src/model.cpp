#include "trt/model.hpp"

#include <algorithm>
#include <numeric>

namespace trt {

Prediction predict(const ParamStore& params, const ModelConfig& config, const Tensor& image,
                   const Selector& select) {
  ad::Tape<float> tape;
  Binder<float> bind(tape, params);
  auto f = forward(image, bind, config, select);

  Prediction p;
  const std::size_t k = config.num_classes;
  p.p_c = f.cam.probs.value().reshaped({k});
  p.p_t = f.p_t.value().reshaped({k});
  p.cam_logits = f.cam.logits.value().reshaped({k});
  p.class_maps = class_maps(f.cam.maps.value());
  p.selection = std::move(f.selection);
  const auto& lambda = f.lambda.value();
  p.selection.lambda.assign(lambda.data().begin(), lambda.data().end());
  p.selection.m_refined = reattention(p.selection.m, p.selection.b, p.selection.lambda);
  p.context_map = tpsm_map(p.selection.m_refined);
  p.raw_map = tpsm_map(p.selection.m);
  return p;
}

std::vector<std::size_t> rank_classes(const Tensor& probs) {
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  return order;
}

}  // namespace trt
