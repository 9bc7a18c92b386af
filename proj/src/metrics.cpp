#include "trt/metrics.hpp"

#include <algorithm>

#include "trt/errors.hpp"

namespace trt {

double iou(const BoundingBox& a, const BoundingBox& b) {
  const std::int64_t iw = std::max(0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const std::int64_t ih = std::max(0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const std::int64_t inter = iw * ih;
  const std::int64_t uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return double(inter) / double(uni);
}

LocMode parse_loc_mode(const std::string& s) {
  if (s == "gt-known") return LocMode::gt_known;
  if (s == "top1") return LocMode::top1;
  if (s == "top5") return LocMode::top5;
  throw UsageError("unknown localization mode '" + s + "'");
}

std::string to_string(LocMode mode) {
  switch (mode) {
    case LocMode::gt_known: return "gt-known";
    case LocMode::top1: return "top1";
    case LocMode::top5: return "top5";
  }
  return "?";
}

double best_iou(const EvalRecord& r) {
  if (r.ground_truth.empty()) throw ContractError("record '" + r.image_id + "' has no ground-truth box");
  double best = 0.0;
  for (const auto& g : r.ground_truth) best = std::max(best, iou(r.predicted, g));
  return best;
}

namespace {

bool class_ok(const EvalRecord& r, LocMode mode) {
  switch (mode) {
    case LocMode::gt_known: return true;
    case LocMode::top1: return !r.ranking.empty() && r.ranking.front() == r.gt_class;
    case LocMode::top5: {
      const std::size_t n = std::min<std::size_t>(5, r.ranking.size());
      return std::find(r.ranking.begin(), r.ranking.begin() + std::ptrdiff_t(n), r.gt_class) !=
             r.ranking.begin() + std::ptrdiff_t(n);
    }
  }
  return false;
}

}  // namespace

double loc_acc(const std::vector<EvalRecord>& records, LocMode mode, double iou_thresh) {
  if (records.empty()) throw ContractError("loc_acc: no records");
  std::size_t hits = 0;
  for (const auto& r : records) {
    if (best_iou(r) > iou_thresh && class_ok(r, mode)) ++hits;
  }
  return double(hits) / double(records.size());
}

double max_box_acc_v2(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw ContractError("max_box_acc_v2: no records");
  double total = 0.0;
  for (double t : kMaxBoxAccIouThresholds) total += loc_acc(records, LocMode::gt_known, t);
  return total / double(kMaxBoxAccIouThresholds.size());
}

double max_box_acc_v2(const std::vector<std::vector<EvalRecord>>& per_threshold) {
  if (per_threshold.empty()) throw ContractError("max_box_acc_v2: no thresholds");
  double total = 0.0;
  for (double t : kMaxBoxAccIouThresholds) {
    double best = 0.0;
    for (const auto& records : per_threshold) best = std::max(best, loc_acc(records, LocMode::gt_known, t));
    total += best;
  }
  return total / double(kMaxBoxAccIouThresholds.size());
}

}  // namespace trt
