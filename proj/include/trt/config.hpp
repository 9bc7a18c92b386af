#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>

#include "trt/errors.hpp"

namespace trt {

struct ModelConfig {
  std::uint32_t image_size = 32;  // W = H
  std::uint32_t patch_size = 4;
  std::uint32_t embed_dim = 32;
  std::uint32_t num_blocks = 3;  // backbone blocks + the final TPSM block
  std::uint32_t num_heads = 2;
  std::uint32_t mlp_ratio = 4;
  std::uint32_t num_classes = 2;
  double selection_mass = 0.65;  // u

  std::size_t grid_side() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid_side() * grid_side(); }
  std::size_t num_tokens() const { return num_patches() + 1; }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t mlp_hidden() const { return std::size_t(embed_dim) * mlp_ratio; }
  std::size_t patch_dim() const { return 3 * std::size_t(patch_size) * patch_size; }
  std::size_t backbone_blocks() const { return num_blocks - 1; }

  // u is persisted as fixed-point millionths.
  std::uint32_t selection_mass_fixed() const {
    return static_cast<std::uint32_t>(std::llround(selection_mass * 1e6));
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ContractError("invalid model config: " + m); };
    if (image_size == 0 || patch_size == 0 || embed_dim == 0 || num_heads == 0 || mlp_ratio == 0)
      fail("extents must be positive");
    if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
    if (embed_dim % num_heads != 0) fail("embed_dim must be divisible by num_heads");
    if (num_blocks < 2) fail("num_blocks must be at least 2");
    if (num_classes < 2) fail("num_classes must be at least 2");
    if (!(selection_mass > 0.0 && selection_mass <= 1.0)) fail("selection_mass must lie in (0, 1]");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace trt
