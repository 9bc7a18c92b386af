#pragma once

// On-disk formats.
//
// TRT1 tensor file (all integers little-endian):
//   "TRT1" | u8 dtype (0 = float32) | u8 ndim (>= 1) | ndim x u32 extents |
//   product(extents) x float32 payload, row-major
//
// TRTC checkpoint:
//   "TRTC" | u32 entry count | entries
//   entry = u16 name length | name bytes (UTF-8) | payload
//   The entry named "config" comes first; its payload is 8 x u32:
//   image_size, patch_size, embed_dim, num_blocks, num_heads, mlp_ratio,
//   num_classes, selection_mass * 1e6. Every other payload is a TRT1 file.
//   Parameter entries follow in byte-wise name order.
//
// Manifest: one record per line, whitespace-separated key:value fields
//   id:<text> image:<path to TRT1 3xHxW> label:<int> box:x0,y0,x1,y1 [box:...]
//   Relative image paths resolve against the manifest's directory. Blank
//   lines and lines starting with '#' are ignored.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "trt/training.hpp"

namespace trt::io {

using Bytes = std::vector<std::uint8_t>;

inline constexpr char kTensorMagic[4] = {'T', 'R', 'T', '1'};
inline constexpr char kCheckpointMagic[4] = {'T', 'R', 'T', 'C'};
inline constexpr std::uint8_t kDtypeFloat32 = 0;

Bytes encode_tensor(const Tensor& t);
/// Decodes one TRT1 record starting at `offset`; advances it past the record.
Tensor decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
};

Bytes encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

struct ManifestLine {
  std::size_t line = 0;  // 1-based source line
  std::string id;
  std::string image;
  std::size_t label = 0;
  std::vector<BoundingBox> boxes;
};

std::vector<ManifestLine> parse_manifest(const std::filesystem::path& path);
std::vector<ManifestLine> parse_manifest_text(const std::string& text);

/// Parses the manifest and loads every image; checks boxes against image bounds.
std::vector<Sample> load_samples(const std::filesystem::path& manifest);

/// Writes each sample as <dir>/<id>.trt plus <dir>/manifest.txt.
void write_samples(const std::filesystem::path& dir, const std::vector<Sample>& samples);

/// Binary PPM (P6, maxval 255): alpha * colormap(map) + (1 - alpha) * image,
/// colormap linear from blue (0) to red (1), values rounded half up.
Bytes encode_heatmap(const Tensor& map, const Tensor& image, double alpha);
void write_heatmap(const std::filesystem::path& path, const Tensor& map, const Tensor& image, double alpha);

ToyTaskConfig read_toy_config(const std::filesystem::path& path);
TrainConfig read_train_config(const std::filesystem::path& path);
std::string to_json(const ToyTaskConfig& c);
std::string to_json(const TrainConfig& c);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace trt::io
