#pragma once

#include <optional>
#include <string>
#include <vector>

#include "trt/metrics.hpp"
#include "trt/model.hpp"

namespace trt {

struct BinaryImage {
  std::size_t height = 0, width = 0;
  Mask pixels;  // row-major

  BinaryImage() = default;
  BinaryImage(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w, 0) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  std::size_t count() const;
  friend bool operator==(const BinaryImage&, const BinaryImage&) = default;
};

/// Rectify class map k, min-max normalize it and the context map (constant
/// maps become zero), multiply elementwise. Result lies in [0, 1].
Tensor fuse(const Tensor& context_map, const Tensor& class_maps, std::size_t k);

/// Foreground where map >= theta.
BinaryImage binarize(const Tensor& map, double theta);

struct Component {
  BinaryImage mask;
  bool empty = true;
};

/// Largest 8-connected foreground region; ties go to the region whose first
/// pixel comes earliest in raster order.
Component largest_component(const BinaryImage& mask);

/// Tight half-open box around the set pixels. Throws ContractError if none.
BoundingBox tight_bbox(const BinaryImage& component);

struct BoxResult {
  BoundingBox box;
  bool degenerate = false;  // empty foreground, box is the whole image
};

/// binarize -> largest_component -> tight_bbox, with the full-image fallback.
BoxResult box_from_map(const Tensor& map, double theta);

/// Fused map for class k resized to height x width. With `reattention`
/// false the context map comes from the raw preliminary attention.
Tensor localization_map(const Prediction& p, std::size_t k, std::size_t height, std::size_t width,
                        bool reattention = true);

struct LocalizationResult {
  Tensor map;  // image resolution, values in [0, 1]
  double theta = 0.0;
  BoundingBox box;
  std::size_t class_id = 0;
  bool degenerate = false;
};

/// Full pipeline on one image. No class id means argmax of p_c.
LocalizationResult localize(const ParamStore& params, const ModelConfig& config, const Tensor& image,
                            std::optional<std::size_t> class_id, double u, double theta);

// ---------------------------------------------------------------------------
// Threshold calibration over a labelled set

struct ThresholdGrid {
  double start = 0.05, stop = 0.95, step = 0.05;

  /// start, start + step, ... up to stop inclusive (with 1e-9 slack).
  std::vector<double> values() const;
  /// "start:stop:step"
  static ThresholdGrid parse(const std::string& text);
};

struct Sample {
  std::string id;
  Tensor image;  // 3 x H x W
  std::size_t label = 0;
  std::vector<BoundingBox> boxes;
};

/// Per-image products of one forward pass: the ground-truth class map at
/// image resolution plus everything needed to score boxes from it.
struct ImageMaps {
  std::string id;
  Tensor map;
  std::vector<BoundingBox> boxes;
  std::size_t label = 0;
  std::vector<std::size_t> ranking;
  std::size_t selected_tokens = 0;
  Tensor class_maps;  // M_C, kept for inspection
};

/// Runs the network over all samples (in parallel) with results in sample order.
std::vector<ImageMaps> compute_maps(const ParamStore& params, const ModelConfig& config,
                                    const std::vector<Sample>& samples, const Selector& select,
                                    bool reattention = true);

std::vector<EvalRecord> records_at(const std::vector<ImageMaps>& maps, double theta);

struct ThresholdRow {
  double theta = 0.0;
  double gt_known = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  double max_box_acc_v2 = 0.0;
};

ThresholdRow evaluate_at(const std::vector<ImageMaps>& maps, double theta);

struct GridSearchResult {
  double theta_star = 0.0;
  std::vector<ThresholdRow> table;
  double calibrated_max_box_acc_v2 = 0.0;  // each IoU level at its own best theta
};

/// Evaluates GT-Known accuracy at every theta and keeps the best (ties go to
/// the smaller theta).
GridSearchResult grid_search_threshold(const std::vector<ImageMaps>& maps, const std::vector<double>& thetas);

GridSearchResult grid_search_threshold(const ParamStore& params, const ModelConfig& config,
                                       const std::vector<Sample>& samples, double u, const ThresholdGrid& grid);

/// Either a single threshold or a grid to calibrate over.
struct ThetaSpec {
  std::optional<double> fixed;
  ThresholdGrid grid;

  /// "0.4", "grid:0.1:0.9:0.1" or "grid 0.1:0.9:0.1".
  static ThetaSpec parse(const std::string& text);
};

/// Metrics for one evaluation run. With a fixed theta everything is scored
/// at that theta. With a grid, GT-Known / Top-1 / Top-5 are scored at the
/// GT-Known-optimal theta and MaxBoxAccV2 lets each IoU level pick its own.
struct EvalSummary {
  double theta = 0.0;
  double gt_known = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  double max_box_acc_v2 = 0.0;
};

EvalSummary summarize(const std::vector<ImageMaps>& maps, const ThetaSpec& theta);

}  // namespace trt
