#include <doctest.h>

#include <random>

#include "../support/oracles.hpp"
#include "../support/reference.hpp"

using namespace trt;
using trt::testing::random_tensor;

namespace {

BinaryImage from_rows(const std::vector<std::string>& rows) {
  BinaryImage m(rows.size(), rows.front().size());
  for (std::size_t y = 0; y < rows.size(); ++y)
    for (std::size_t x = 0; x < rows[y].size(); ++x) m.at(y, x) = rows[y][x] == '#';
  return m;
}

BoundingBox scan_box(const BinaryImage& m) {
  int x0 = 1 << 30, y0 = 1 << 30, x1 = -1, y1 = -1;
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x)
      if (m.at(y, x)) {
        x0 = std::min(x0, int(x));
        y0 = std::min(y0, int(y));
        x1 = std::max(x1, int(x) + 1);
        y1 = std::max(y1, int(y) + 1);
      }
  return {x0, y0, x1, y1};
}

EvalRecord record(BoundingBox pred, BoundingBox gt, std::size_t cls, std::vector<std::size_t> ranking) {
  return {"r", pred, {gt}, cls, std::move(ranking)};
}

}  // namespace

// ---------------------------------------------------------------------------
// Map fusion and boxes

TEST_CASE("fuse normalizes both maps and multiplies") {
  const Tensor flat({2, 2}, 0.7f);
  const Tensor cams({1, 2, 2}, std::vector<float>{0.0f, 1.0f, 2.0f, 4.0f});
  const auto f0 = fuse(flat, cams, 0);
  for (float v : f0.data()) CHECK(v == 0.0f);
  const Tensor flat_cam({1, 2, 2}, 3.0f);
  const auto f1 = fuse(Tensor::matrix(2, 2, {1, 2, 3, 4}), flat_cam, 0);
  for (float v : f1.data()) CHECK(v == 0.0f);

  const auto ctx = Tensor::matrix(2, 2, {0.2f, 0.6f, 0.4f, 1.0f});
  const Tensor two({2, 2, 2}, std::vector<float>{9, 9, 9, 9, -1.0f, 3.0f, 1.0f, 2.0f});
  const auto f = fuse(ctx, two, 1);
  // Rectified class map [0, 3, 1, 2] normalizes to [0, 1, 1/3, 2/3];
  // context [0.2, 0.6, 0.4, 1] normalizes to [0, 0.5, 0.25, 1].
  const double expect[4] = {0.0, 0.5, 0.25 / 3.0, 2.0 / 3.0};
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(f[i] - expect[i]) <= 1e-6);
  CHECK_THROWS_AS(fuse(ctx, two, 2), ContractError);
  CHECK_THROWS_AS(fuse(Tensor({3, 3}), two, 0), DimensionError);
}

TEST_CASE("binarize boundaries and ramp") {
  const auto ramp = Tensor::matrix(2, 4, {0.0f, 0.2f, 0.4f, 0.6f, 0.5f, 0.7f, 0.9f, 1.0f});
  CHECK(binarize(ramp, 0.0).count() == 8);
  CHECK(binarize(ramp, 1.0001).count() == 0);
  const auto half = binarize(ramp, 0.5);
  for (std::size_t i = 0; i < 8; ++i) CHECK(half.pixels[i] == (ramp[i] >= 0.5f ? 1 : 0));
}

TEST_CASE("largest component") {
  const auto blob = from_rows({"....", ".##.", ".##.", "...."});
  CHECK(largest_component(blob).mask == blob);

  const auto two = from_rows({"##...", "#....", "...##", "..###"});
  const auto big = largest_component(two);
  CHECK(big.mask == from_rows({".....", ".....", "...##", "..###"}));
  CHECK(big.mask == reference::largest_component(two));

  const auto diag = from_rows({"#..", ".#.", "..#"});
  CHECK(largest_component(diag).mask == diag);

  // Equal sizes: the earlier one in raster order wins.
  const auto tie = from_rows({"#.#"});
  CHECK(largest_component(tie).mask == from_rows({"#.."}));
  CHECK(largest_component(BinaryImage(3, 3)).empty);

  std::mt19937_64 rng(21);
  for (int t = 0; t < 30; ++t) {
    const auto m = reference::random_mask(rng, 10, 12, 0.4);
    CHECK(largest_component(m).mask == reference::largest_component(m));
  }
}

TEST_CASE("tight bounding box") {
  BinaryImage dot(5, 7);
  dot.at(3, 2) = 1;
  CHECK(tight_bbox(dot) == BoundingBox{2, 3, 3, 4});
  BinaryImage full(5, 7);
  for (auto& p : full.pixels) p = 1;
  CHECK(tight_bbox(full) == BoundingBox{0, 0, 7, 5});
  const auto ell = from_rows({"......", ".#....", ".#....", ".####.", "......"});
  CHECK(tight_bbox(ell) == scan_box(ell));
  CHECK_THROWS_AS(tight_bbox(BinaryImage(2, 2)), ContractError);
}

TEST_CASE("box from a planted square") {
  Tensor map({32, 32});
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<float> low(0.0f, 0.2f);
  for (auto& v : map.storage()) v = low(rng);
  for (std::size_t y = 10; y < 18; ++y)
    for (std::size_t x = 5; x < 13; ++x) map(y, x) = 0.9f;
  const auto r = box_from_map(map, 0.5);
  CHECK_FALSE(r.degenerate);
  CHECK(iou(r.box, {5, 10, 13, 18}) >= 0.8);

  const auto all = box_from_map(map, 0.0);
  CHECK(all.box == BoundingBox{0, 0, 32, 32});
  const auto none = box_from_map(map, 1.0);
  CHECK(none.degenerate);
  CHECK(none.box == BoundingBox{0, 0, 32, 32});
}

TEST_CASE("localize is deterministic and honours theta 0") {
  ModelConfig c = trt::testing::tiny_config();
  c.image_size = 16;
  const auto params = init_parameters(c, 2);
  std::mt19937_64 rng(23);
  const auto image = random_tensor({3, 16, 16}, rng, 0.0, 1.0);
  const auto a = localize(params, c, image, std::nullopt, 0.65, 0.4);
  const auto b = localize(params, c, image, std::nullopt, 0.65, 0.4);
  CHECK(a.map == b.map);
  CHECK(a.box == b.box);
  CHECK(a.class_id == b.class_id);
  for (float v : a.map.data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(localize(params, c, image, 1, 0.65, 0.0).box == BoundingBox{0, 0, 16, 16});
  CHECK_THROWS_AS(localize(params, c, image, 7, 0.65, 0.5), ContractError);
}

// ---------------------------------------------------------------------------
// Metrics

TEST_CASE("iou examples") {
  const BoundingBox a{0, 0, 10, 10};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, {10, 0, 20, 10}) == 0.0);
  CHECK(iou(a, {5, 0, 15, 10}) == 1.0 / 3.0);
  std::mt19937_64 rng(24);
  for (int t = 0; t < 100; ++t) {
    const auto p = reference::random_box(rng, 12), q = reference::random_box(rng, 12);
    CHECK(iou(p, q) == reference::iou(p, q));
  }
}

TEST_CASE("localization accuracy modes") {
  const BoundingBox gt{0, 0, 10, 10};
  const std::vector<EvalRecord> perfect{record(gt, gt, 2, {2, 0, 1}), record(gt, gt, 0, {0, 1, 2})};
  for (auto mode : {LocMode::gt_known, LocMode::top1, LocMode::top5}) CHECK(loc_acc(perfect, mode) == 1.0);

  // IoU 0.6: a 10x6 box inside the 10x10 ground truth.
  const std::vector<EvalRecord> third{record({0, 0, 10, 6}, gt, 4, {1, 2, 4, 0, 3, 5})};
  CHECK(loc_acc(third, LocMode::gt_known) == 1.0);
  CHECK(loc_acc(third, LocMode::top5) == 1.0);
  CHECK(loc_acc(third, LocMode::top1) == 0.0);

  const std::vector<EvalRecord> half{record({0, 0, 10, 5}, gt, 0, {0})};
  CHECK(iou(half[0].predicted, gt) == 0.5);
  CHECK(loc_acc(half, LocMode::gt_known) == 0.0);

  CHECK(parse_loc_mode("top5") == LocMode::top5);
  CHECK_THROWS_AS(parse_loc_mode("top3"), UsageError);
  CHECK_THROWS_AS(loc_acc({}, LocMode::top1), ContractError);
}

TEST_CASE("max box accuracy") {
  const BoundingBox gt{0, 0, 10, 10};
  CHECK(max_box_acc_v2({record({0, 0, 10, 6}, gt, 0, {})}) == 2.0 / 3.0);
  CHECK(max_box_acc_v2({record(gt, gt, 0, {}), record(gt, gt, 1, {})}) == 1.0);

  std::mt19937_64 rng(25);
  const auto recs = reference::random_records(rng, 20);
  CHECK(max_box_acc_v2(recs) == reference::max_box_acc_v2(recs));
  for (auto mode : {LocMode::gt_known, LocMode::top1, LocMode::top5})
    CHECK(loc_acc(recs, mode) == reference::loc_acc(recs, mode, 0.5));

  // Per-threshold calibration lets each IoU level pick its best threshold:
  // the first set scores (1, 1/2, 1/2), the second (1, 1, 0), together (1, 1, 1/2).
  const std::vector<std::vector<EvalRecord>> sets{
      {record({0, 0, 10, 8}, gt, 0, {}), record({0, 0, 10, 4}, gt, 0, {})},
      {record({0, 0, 10, 6}, gt, 0, {}), record({0, 0, 10, 6}, gt, 0, {})}};
  CHECK(max_box_acc_v2(sets[0]) == 2.0 / 3.0);
  CHECK(max_box_acc_v2(sets[1]) == 2.0 / 3.0);
  CHECK(max_box_acc_v2(sets) == 2.5 / 3.0);
}

// ---------------------------------------------------------------------------
// Threshold calibration

TEST_CASE("threshold grid parsing") {
  const auto g = ThresholdGrid::parse("0.1:0.9:0.1");
  CHECK(g.values().size() == 9);
  CHECK(ThresholdGrid{0.05, 0.95, 0.05}.values().size() == 19);
  CHECK(ThresholdGrid::parse("0.3:0.3:0.1").values() == std::vector<double>{0.3});
  CHECK_THROWS_AS(ThresholdGrid::parse("0.1-0.9"), UsageError);
  CHECK_THROWS_AS(ThresholdGrid::parse("0.9:0.1:0.1"), ContractError);

  CHECK(*ThetaSpec::parse("0.4").fixed == 0.4);
  CHECK_FALSE(ThetaSpec::parse("grid:0.2:0.8:0.2").fixed);
  CHECK(ThetaSpec::parse("grid 0.2:0.8:0.2").grid.values().size() == 4);
  CHECK_THROWS_AS(ThetaSpec::parse("1.5"), UsageError);
  CHECK_THROWS_AS(ThetaSpec::parse("abc"), UsageError);
}

TEST_CASE("grid search equals exhaustive re-evaluation") {
  std::mt19937_64 rng(26);
  std::vector<ImageMaps> maps;
  for (int i = 0; i < 10; ++i) {
    ImageMaps m;
    m.id = "img" + std::to_string(i);
    m.map = random_tensor({16, 16}, rng, 0.0, 0.3);
    const auto box = reference::random_box(rng, 16);
    for (int y = box.y0; y < box.y1; ++y)
      for (int x = box.x0; x < box.x1; ++x) m.map(std::size_t(y), std::size_t(x)) += 0.5f;
    m.boxes = {reference::random_box(rng, 16), box};
    m.label = std::size_t(i % 3);
    m.ranking = {std::size_t(i % 2), 2, std::size_t(1 - i % 2)};
    maps.push_back(std::move(m));
  }
  const auto thetas = ThresholdGrid{0.1, 0.9, 0.1}.values();
  const auto g = grid_search_threshold(maps, thetas);
  REQUIRE(g.table.size() == thetas.size());
  double best = -1;
  for (std::size_t t = 0; t < thetas.size(); ++t) {
    std::vector<EvalRecord> recs;
    for (const auto& m : maps) {
      const auto comp = reference::largest_component(binarize(m.map, thetas[t]));
      const BoundingBox box = comp.count() ? scan_box(comp) : BoundingBox{0, 0, 16, 16};
      recs.push_back({m.id, box, m.boxes, m.label, m.ranking});
    }
    const auto& row = g.table[t];
    CHECK(row.theta == thetas[t]);
    CHECK(row.gt_known == reference::loc_acc(recs, LocMode::gt_known, 0.5));
    CHECK(row.top1 == reference::loc_acc(recs, LocMode::top1, 0.5));
    CHECK(row.top5 == reference::loc_acc(recs, LocMode::top5, 0.5));
    CHECK(row.max_box_acc_v2 == reference::max_box_acc_v2(recs));
    best = std::max(best, row.gt_known);
  }
  const auto star = std::find_if(g.table.begin(), g.table.end(), [&](const auto& r) { return r.theta == g.theta_star; });
  REQUIRE(star != g.table.end());
  CHECK(star->gt_known == best);

  const auto single = grid_search_threshold(maps, {0.35});
  CHECK(single.theta_star == 0.35);
  const auto s = summarize(maps, ThetaSpec::parse("0.35"));
  CHECK(s.gt_known == single.table[0].gt_known);
  CHECK(s.max_box_acc_v2 == single.table[0].max_box_acc_v2);
}
