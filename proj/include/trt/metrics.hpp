#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace trt {

/// Pixel box, half-open: x0 <= x < x1, y0 <= y < y1.
struct BoundingBox {
  std::int32_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  std::int64_t area() const { return std::int64_t(x1 - x0) * std::int64_t(y1 - y0); }
  bool valid() const { return x0 < x1 && y0 < y1; }
  bool within(std::size_t width, std::size_t height) const {
    return x0 >= 0 && y0 >= 0 && std::size_t(x1) <= width && std::size_t(y1) <= height;
  }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

double iou(const BoundingBox& a, const BoundingBox& b);

struct EvalRecord {
  std::string image_id;
  BoundingBox predicted;              // box from the ground-truth class map
  std::vector<BoundingBox> ground_truth;
  std::size_t gt_class = 0;
  std::vector<std::size_t> ranking;   // classes by p_c descending, ties by id
};

enum class LocMode { gt_known, top1, top5 };

LocMode parse_loc_mode(const std::string& s);
std::string to_string(LocMode mode);

/// Best IoU of the prediction against any ground-truth box.
double best_iou(const EvalRecord& r);

/// Fraction of records whose best IoU strictly exceeds `iou_thresh` and whose
/// class condition for `mode` holds.
double loc_acc(const std::vector<EvalRecord>& records, LocMode mode, double iou_thresh = 0.5);

inline constexpr std::array<double, 3> kMaxBoxAccIouThresholds{0.3, 0.5, 0.7};

/// Mean over IoU thresholds {0.3, 0.5, 0.7} of the fraction of records
/// above each threshold, one box per record, ignoring classification.
double max_box_acc_v2(const std::vector<EvalRecord>& records);

/// Calibrated variant: `per_threshold[t]` holds the records produced at
/// the t-th binarization threshold; each IoU level takes its best threshold.
double max_box_acc_v2(const std::vector<std::vector<EvalRecord>>& per_threshold);

}  // namespace trt
