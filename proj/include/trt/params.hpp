#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "trt/config.hpp"
#include "trt/tensor.hpp"

namespace trt {

/// Named learnable tensors, ordered by name.
template <std::floating_point T>
using BasicParamStore = std::map<std::string, BasicTensor<T>>;
using ParamStore = BasicParamStore<float>;

/// Every learnable tensor the model needs, with its dims.
std::map<std::string, Dims> parameter_shapes(const ModelConfig& config);

/// Throws FormatError listing every missing name, or the first dims mismatch.
void check_parameters(const ModelConfig& config, const ParamStore& params);

/// Seeded initialization: truncated normal (std 0.02, cut at 2 std) for
/// projection weights, normal std 0.02 for position embeddings, zeros for
/// biases and the class token, ones/zeros for layer norms.
ParamStore init_parameters(const ModelConfig& config, std::uint64_t seed);

std::string block_prefix(std::size_t index);
inline constexpr const char* kMaskBlockPrefix = "tpsm.mask_block.";
inline constexpr const char* kFinalBlockPrefix = "tpsm.final_block.";

bool is_cam_parameter(const std::string& name);
bool is_backbone_or_tpsm_parameter(const std::string& name);

template <std::floating_point U>
BasicParamStore<U> cast_params(const ParamStore& p) {
  BasicParamStore<U> out;
  for (const auto& [k, v] : p) out.emplace(k, v.template cast<U>());
  return out;
}

}  // namespace trt
