#include "trt/localization.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <exception>
#include <sstream>

namespace trt {

std::size_t BinaryImage::count() const {
  return std::size_t(std::count(pixels.begin(), pixels.end(), std::uint8_t{1}));
}

namespace {

// Min-max to [0, 1]; a constant map normalizes to all zeros.
Tensor normalize(Tensor m) {
  const auto [lo, hi] = std::minmax_element(m.storage().begin(), m.storage().end());
  const double mn = *lo, mx = *hi;
  if (!(mx > mn)) {
    std::fill(m.storage().begin(), m.storage().end(), 0.0f);
    return m;
  }
  for (auto& v : m.storage()) v = float((double(v) - mn) / (mx - mn));
  return m;
}

}  // namespace

Tensor fuse(const Tensor& context_map, const Tensor& class_maps, std::size_t k) {
  context_map.require_matrix();
  if (class_maps.ndim() != 3) throw DimensionError("fuse: class maps must be K x side x side");
  if (k >= class_maps.dim(0)) {
    throw ContractError("fuse: class id " + std::to_string(k) + " out of range for " +
                        std::to_string(class_maps.dim(0)) + " classes");
  }
  const std::size_t h = context_map.rows(), w = context_map.cols();
  if (class_maps.dim(1) != h || class_maps.dim(2) != w) {
    throw DimensionError("fuse: context map " + dims_to_string(context_map.dims()) + " vs class maps " +
                         dims_to_string(class_maps.dims()));
  }
  Tensor cam({h, w});
  for (std::size_t i = 0; i < h * w; ++i) cam[i] = std::max(0.0f, class_maps[k * h * w + i]);
  const Tensor a = normalize(context_map);
  const Tensor b = normalize(std::move(cam));
  Tensor out({h, w});
  for (std::size_t i = 0; i < h * w; ++i) out[i] = a[i] * b[i];
  return out;
}

BinaryImage binarize(const Tensor& map, double theta) {
  map.require_matrix();
  BinaryImage out(map.rows(), map.cols());
  for (std::size_t i = 0; i < map.size(); ++i) out.pixels[i] = double(map[i]) >= theta ? 1 : 0;
  return out;
}

Component largest_component(const BinaryImage& mask) {
  const std::size_t h = mask.height, w = mask.width;
  std::vector<int> label(h * w, -1);
  std::vector<std::size_t> sizes;
  std::deque<std::size_t> queue;
  // Components are discovered in raster order of their first pixel.
  for (std::size_t start = 0; start < h * w; ++start) {
    if (!mask.pixels[start] || label[start] >= 0) continue;
    const int id = int(sizes.size());
    std::size_t size = 0;
    label[start] = id;
    queue.push_back(start);
    while (!queue.empty()) {
      const std::size_t p = queue.front();
      queue.pop_front();
      ++size;
      const long y = long(p / w), x = long(p % w);
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long ny = y + dy, nx = x + dx;
          if (ny < 0 || nx < 0 || ny >= long(h) || nx >= long(w)) continue;
          const std::size_t q = std::size_t(ny) * w + std::size_t(nx);
          if (mask.pixels[q] && label[q] < 0) {
            label[q] = id;
            queue.push_back(q);
          }
        }
    }
    sizes.push_back(size);
  }
  Component out{BinaryImage(h, w), sizes.empty()};
  if (sizes.empty()) return out;
  int best = 0;
  for (int i = 1; i < int(sizes.size()); ++i)
    if (sizes[std::size_t(i)] > sizes[std::size_t(best)]) best = i;
  for (std::size_t i = 0; i < h * w; ++i) out.mask.pixels[i] = label[i] == best ? 1 : 0;
  return out;
}

BoundingBox tight_bbox(const BinaryImage& component) {
  long x0 = long(component.width), y0 = long(component.height), x1 = -1, y1 = -1;
  for (std::size_t y = 0; y < component.height; ++y)
    for (std::size_t x = 0; x < component.width; ++x) {
      if (!component.at(y, x)) continue;
      x0 = std::min(x0, long(x));
      y0 = std::min(y0, long(y));
      x1 = std::max(x1, long(x));
      y1 = std::max(y1, long(y));
    }
  if (x1 < 0) throw ContractError("tight_bbox: empty component");
  return {std::int32_t(x0), std::int32_t(y0), std::int32_t(x1 + 1), std::int32_t(y1 + 1)};
}

BoxResult box_from_map(const Tensor& map, double theta) {
  auto comp = largest_component(binarize(map, theta));
  if (comp.empty) return {{0, 0, std::int32_t(map.cols()), std::int32_t(map.rows())}, true};
  return {tight_bbox(comp.mask), false};
}

Tensor localization_map(const Prediction& p, std::size_t k, std::size_t height, std::size_t width,
                        bool reattention) {
  const Tensor& context = reattention ? p.context_map : p.raw_map;
  return bilinear_resize(fuse(context, p.class_maps, k), height, width);
}

LocalizationResult localize(const ParamStore& params, const ModelConfig& config, const Tensor& image,
                            std::optional<std::size_t> class_id, double u, double theta) {
  if (image.ndim() != 3) throw DimensionError("localize: expected a 3xHxW image");
  const auto p = predict(params, config, image, adaptive_selector(u));
  const std::size_t k = class_id ? *class_id : rank_classes(p.p_c).front();
  if (k >= config.num_classes) {
    throw ContractError("class id " + std::to_string(k) + " out of range for " +
                        std::to_string(config.num_classes) + " classes");
  }
  LocalizationResult r;
  r.map = localization_map(p, k, image.dim(1), image.dim(2));
  r.theta = theta;
  r.class_id = k;
  const auto box = box_from_map(r.map, theta);
  r.box = box.box;
  r.degenerate = box.degenerate;
  return r;
}

std::vector<double> ThresholdGrid::values() const {
  if (!(step > 0.0) || stop < start) {
    throw ContractError("threshold grid needs step > 0 and stop >= start");
  }
  const auto n = std::size_t(std::floor((stop - start) / step + 1e-9)) + 1;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = start + double(i) * step;
  return out;
}

ThresholdGrid ThresholdGrid::parse(const std::string& text) {
  ThresholdGrid g;
  std::istringstream is(text);
  char c1 = 0, c2 = 0;
  if (!(is >> g.start >> c1 >> g.stop >> c2 >> g.step) || c1 != ':' || c2 != ':' || !is.eof()) {
    throw UsageError("threshold grid must be start:stop:step, got '" + text + "'");
  }
  g.values();
  return g;
}

std::vector<ImageMaps> compute_maps(const ParamStore& params, const ModelConfig& config,
                                    const std::vector<Sample>& samples, const Selector& select,
                                    bool reattention) {
  std::vector<ImageMaps> out(samples.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < long(samples.size()); ++i) {
    try {
      const auto& s = samples[std::size_t(i)];
      if (s.label >= config.num_classes) {
        throw ContractError("sample '" + s.id + "' has label " + std::to_string(s.label) + " but the model has " +
                            std::to_string(config.num_classes) + " classes");
      }
      const auto p = predict(params, config, s.image, select);
      ImageMaps m;
      m.id = s.id;
      m.map = localization_map(p, s.label, s.image.dim(1), s.image.dim(2), reattention);
      m.boxes = s.boxes;
      m.label = s.label;
      m.ranking = rank_classes(p.p_c);
      m.selected_tokens = std::size_t(std::count(p.selection.b.begin(), p.selection.b.end(), 1));
      m.class_maps = p.class_maps;
      out[std::size_t(i)] = std::move(m);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::vector<EvalRecord> records_at(const std::vector<ImageMaps>& maps, double theta) {
  std::vector<EvalRecord> out;
  out.reserve(maps.size());
  for (const auto& m : maps) {
    out.push_back({m.id, box_from_map(m.map, theta).box, m.boxes, m.label, m.ranking});
  }
  return out;
}

ThresholdRow evaluate_at(const std::vector<ImageMaps>& maps, double theta) {
  const auto records = records_at(maps, theta);
  return {theta, loc_acc(records, LocMode::gt_known), loc_acc(records, LocMode::top1),
          loc_acc(records, LocMode::top5), max_box_acc_v2(records)};
}

GridSearchResult grid_search_threshold(const std::vector<ImageMaps>& maps, const std::vector<double>& thetas) {
  if (maps.empty()) throw ContractError("grid search: empty manifest");
  if (thetas.empty()) throw ContractError("grid search: empty threshold grid");
  GridSearchResult r;
  std::vector<std::vector<EvalRecord>> per_theta;
  for (double t : thetas) {
    per_theta.push_back(records_at(maps, t));
    const auto& rec = per_theta.back();
    r.table.push_back({t, loc_acc(rec, LocMode::gt_known), loc_acc(rec, LocMode::top1),
                       loc_acc(rec, LocMode::top5), max_box_acc_v2(rec)});
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < r.table.size(); ++i)
    if (r.table[i].gt_known > r.table[best].gt_known) best = i;
  r.theta_star = r.table[best].theta;
  r.calibrated_max_box_acc_v2 = max_box_acc_v2(per_theta);
  return r;
}

GridSearchResult grid_search_threshold(const ParamStore& params, const ModelConfig& config,
                                       const std::vector<Sample>& samples, double u, const ThresholdGrid& grid) {
  if (samples.empty()) throw ContractError("grid search: empty manifest");
  return grid_search_threshold(compute_maps(params, config, samples, adaptive_selector(u)), grid.values());
}

}  // namespace trt

namespace trt {

ThetaSpec ThetaSpec::parse(const std::string& text) {
  ThetaSpec spec;
  if (text.rfind("grid", 0) == 0) {
    std::string rest = text.substr(4);
    if (rest.empty() || (rest[0] != ':' && rest[0] != ' ')) {
      throw UsageError("theta grid must be written grid:start:stop:step, got '" + text + "'");
    }
    spec.grid = ThresholdGrid::parse(rest.substr(1));
    return spec;
  }
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw UsageError("theta must be a number or grid:start:stop:step, got '" + text + "'");
  if (!(v >= 0.0 && v <= 1.0)) throw UsageError("theta must lie in [0, 1]");
  spec.fixed = v;
  return spec;
}

EvalSummary summarize(const std::vector<ImageMaps>& maps, const ThetaSpec& theta) {
  if (maps.empty()) throw ContractError("evaluation: empty manifest");
  if (theta.fixed) {
    const auto row = evaluate_at(maps, *theta.fixed);
    return {row.theta, row.gt_known, row.top1, row.top5, row.max_box_acc_v2};
  }
  const auto g = grid_search_threshold(maps, theta.grid.values());
  const auto& best = *std::find_if(g.table.begin(), g.table.end(),
                                   [&](const ThresholdRow& r) { return r.theta == g.theta_star; });
  return {best.theta, best.gt_known, best.top1, best.top5, g.calibrated_max_box_acc_v2};
}

}  // namespace trt
