#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "../support/oracles.hpp"
#include "trt/ablation.hpp"
#include "trt/cli.hpp"
#include "trt/io.hpp"

using namespace trt;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run trt_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ModelConfig fixture_config() {
  ModelConfig c = trt::testing::tiny_config();
  c.image_size = 16;
  c.num_classes = 2;
  return c;
}

/// Untrained checkpoint plus a handful of synthetic samples on disk.
struct Fixture {
  fs::path dir;
  fs::path ckpt, manifest;
  io::Checkpoint model;
  std::vector<Sample> samples;

  explicit Fixture(const std::string& name, std::size_t count = 5) {
    dir = fs::temp_directory_path() / ("trt_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    model = {fixture_config(), init_parameters(fixture_config(), 5)};
    ckpt = dir / "model.trtc";
    io::write_checkpoint(ckpt, model);
    ToyTaskConfig toy;
    toy.image_size = 16;
    toy.min_object = 4;
    toy.max_object = 10;
    samples = make_toy_samples(toy, count, 3);
    io::write_samples(dir / "set", samples);
    manifest = dir / "set" / "manifest.txt";
  }
  std::string path(const std::string& leaf) const { return (dir / leaf).string(); }
};

std::map<std::string, std::string> report_values(const std::string& csv) {
  std::map<std::string, std::string> out;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    out[line.substr(0, comma)] = line.substr(comma + 1);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Command line

TEST_CASE("usage errors exit 2") {
  auto r = trt_run({});
  CHECK(r.code == cli::kExitUsage);
  CHECK(r.err.rfind("error[usage]:", 0) == 0);
  CHECK(trt_run({"frobnicate"}).code == cli::kExitUsage);
  CHECK(trt_run({"eval", "--ckpt", "x"}).code == cli::kExitUsage);
  CHECK(trt_run({"--help"}).code == cli::kExitOk);

  Fixture f("usage");
  r = trt_run({"eval", "--ckpt", f.ckpt.string(), "--manifest", f.manifest.string(), "--theta", "2",
               "--out-report", f.path("r.csv")});
  CHECK(r.code == cli::kExitUsage);
  CHECK(trt_run({"localize", "--ckpt", f.ckpt.string(), "--input", (f.dir / "set" / (f.samples[0].id + ".trt")).string(),
                 "--class", "two", "--out-box", f.path("b.txt")})
            .code == cli::kExitUsage);
}

TEST_CASE("format and io errors exit 3") {
  Fixture f("format");
  auto r = trt_run({"eval", "--ckpt", f.path("nope.trtc"), "--manifest", f.manifest.string(), "--out-report",
                    f.path("r.csv")});
  CHECK(r.code == cli::kExitFormat);
  CHECK(r.err.rfind("error[io]:", 0) == 0);

  io::write_text(f.dir / "junk.trtc", "JUNKJUNKJUNK");
  r = trt_run({"eval", "--ckpt", f.path("junk.trtc"), "--manifest", f.manifest.string(), "--out-report",
               f.path("r.csv")});
  CHECK(r.code == cli::kExitFormat);
  CHECK(r.err.rfind("error[format]:", 0) == 0);
  CHECK(r.err.find("magic") != std::string::npos);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
}

TEST_CASE("contract and dimension errors exit 4") {
  Fixture f("contract");
  const auto img = (f.dir / "set" / (f.samples[0].id + ".trt")).string();
  auto r = trt_run({"localize", "--ckpt", f.ckpt.string(), "--input", img, "--class", "9", "--out-box",
                    f.path("b.txt")});
  CHECK(r.code == cli::kExitContract);
  CHECK(r.err.rfind("error[contract]:", 0) == 0);

  io::write_tensor(f.dir / "small.trt", Tensor({3, 8, 8}));
  r = trt_run({"infer", "--ckpt", f.ckpt.string(), "--input", f.path("small.trt"), "--out-logits", f.path("pc.trt"),
               "--out-pt", f.path("pt.trt")});
  CHECK(r.code == cli::kExitContract);
  CHECK(r.err.rfind("error[dimension]:", 0) == 0);
}

TEST_CASE("infer writes both distributions") {
  Fixture f("infer");
  const auto img = (f.dir / "set" / (f.samples[0].id + ".trt")).string();
  REQUIRE(trt_run({"infer", "--ckpt", f.ckpt.string(), "--input", img, "--out-logits", f.path("pc.trt"), "--out-pt",
                   f.path("pt.trt")})
              .code == 0);
  const auto p = predict(f.model.params, f.model.config, f.samples[0].image);
  CHECK(io::read_tensor(f.path("pc.trt")) == p.p_c);
  CHECK(io::read_tensor(f.path("pt.trt")) == p.p_t);
}

TEST_CASE("localize with theta 0 gives the full image") {
  Fixture f("localize");
  const auto img = (f.dir / "set" / (f.samples[1].id + ".trt")).string();
  REQUIRE(trt_run({"localize", "--ckpt", f.ckpt.string(), "--input", img, "--theta", "0", "--out-box", f.path("b.txt"),
                   "--out-map", f.path("m.trt")})
              .code == 0);
  CHECK(slurp(f.dir / "b.txt") == "0 0 16 16\n");
  CHECK(io::read_tensor(f.path("m.trt")).dims() == Dims{16, 16});
}

TEST_CASE("eval with whole-image boxes is perfect at theta 0") {
  Fixture f("perfect");
  std::ostringstream m;
  for (const auto& s : f.samples)
    m << "id:" << s.id << " image:set/" << s.id << ".trt label:" << s.label << " box:0,0,16,16\n";
  io::write_text(f.dir / "whole.txt", m.str());
  REQUIRE(trt_run({"eval", "--ckpt", f.ckpt.string(), "--manifest", f.path("whole.txt"), "--theta", "0",
                   "--out-report", f.path("r.csv")})
              .code == 0);
  const auto v = report_values(slurp(f.dir / "r.csv"));
  CHECK(v.at("gt-known") == "1");
  CHECK(v.at("maxboxaccv2") == "1");
}

TEST_CASE("calibrate singleton grid matches eval") {
  Fixture f("calibrate");
  REQUIRE(trt_run({"calibrate", "--ckpt", f.ckpt.string(), "--manifest", f.manifest.string(), "--grid", "0.3:0.3:0.1",
                   "--out-table", f.path("t.csv")})
              .code == 0);
  REQUIRE(trt_run({"eval", "--ckpt", f.ckpt.string(), "--manifest", f.manifest.string(), "--theta", "0.3",
                   "--out-report", f.path("r.csv")})
              .code == 0);
  std::istringstream table(slurp(f.dir / "t.csv"));
  std::string header, row, extra;
  std::getline(table, header);
  std::getline(table, row);
  CHECK_FALSE(std::getline(table, extra));
  CHECK(header == "theta,gt-known,top1,top5,maxboxaccv2");
  const auto v = report_values(slurp(f.dir / "r.csv"));
  CHECK(row == v.at("theta") + "," + v.at("gt-known") + "," + v.at("top1") + "," + v.at("top5") + "," +
                   v.at("maxboxaccv2"));
}

TEST_CASE("toy set, training and heatmap commands") {
  Fixture f("tools");
  ToyTaskConfig toy;
  toy.image_size = 16;
  toy.min_object = 4;
  toy.max_object = 8;
  toy.samples_per_epoch = 8;
  TrainConfig train;
  train.embed_dim = 8;
  train.num_blocks = 2;
  train.mlp_ratio = 2;
  train.batch_size = 2;
  train.phase1_steps = 2;
  train.phase2_steps = 1;
  io::write_text(f.dir / "toy.json", io::to_json(toy));
  io::write_text(f.dir / "train.json", io::to_json(train));

  REQUIRE(trt_run({"make-toy-set", "--toy-config", f.path("toy.json"), "--count", "3", "--seed", "4", "--out-dir",
                   f.path("made")})
              .code == 0);
  CHECK(io::load_samples(f.dir / "made" / "manifest.txt").size() == 3);

  REQUIRE(trt_run({"train-toy", "--toy-config", f.path("toy.json"), "--train-config", f.path("train.json"),
                   "--out-ckpt", f.path("toy.trtc"), "--out-curve", f.path("curve.csv")})
              .code == 0);
  const auto curve = slurp(f.dir / "curve.csv");
  CHECK(curve.rfind("step,phase,loss\n0,1,", 0) == 0);
  CHECK(std::count(curve.begin(), curve.end(), '\n') == 4);
  CHECK(io::read_checkpoint(f.dir / "toy.trtc").config.embed_dim == 8);

  const auto img = (f.dir / "set" / (f.samples[0].id + ".trt")).string();
  io::write_tensor(f.dir / "map.trt", Tensor({16, 16}, 1.0f));
  REQUIRE(trt_run({"heatmap", "--map", f.path("map.trt"), "--image", img, "--alpha", "1", "--out", f.path("h.ppm")})
              .code == 0);
  const auto ppm = io::read_file(f.dir / "h.ppm");
  CHECK(ppm.size() == std::string("P6\n16 16\n255\n").size() + 16 * 16 * 3);
}

TEST_CASE("installed binary reports exit codes") {
  Fixture f("binary");
  auto status = [](const std::string& cmd) {
    const int s = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  const std::string bin = TRT_CLI_PATH;
  CHECK(status(bin + " --help") == 0);
  CHECK(status(bin) == 2);
  CHECK(status(bin + " eval --ckpt " + f.path("missing") + " --manifest " + f.manifest.string() +
               " --out-report " + f.path("r.csv")) == 3);
  CHECK(status(bin + " calibrate --ckpt " + f.ckpt.string() + " --manifest " + f.manifest.string() +
               " --grid 0.5:0.5:0.1 --out-table " + f.path("t.csv")) == 0);
}

// ---------------------------------------------------------------------------
// Selection strategies

TEST_CASE("strategy rules") {
  const std::vector<double> m{0.5, 0.3, 0.2};
  CHECK(select_with_strategy(m, {StrategySpec::Kind::topk, 3}).b == Mask{1, 1, 1});
  CHECK(select_with_strategy(m, {StrategySpec::Kind::fixed, 0.0}).b == Mask{1, 1, 1});
  const auto top2 = select_with_strategy(m, {StrategySpec::Kind::topk, 2}).b;
  CHECK(top2 == Mask{1, 1, 0});
  CHECK(top2 == select_with_strategy(m, {StrategySpec::Kind::adaptive, 0.7}).b);
  CHECK(select_with_strategy({0.3, 0.3, 0.1}, {StrategySpec::Kind::topk, 1}).b == Mask{1, 0, 0});
  CHECK(select_with_strategy(m, {StrategySpec::Kind::fixed, 0.9}).b == Mask{1, 0, 0});

  CHECK(StrategySpec::parse("adaptive", 0.65).param == 0.65);
  CHECK(StrategySpec::parse("adaptive:0.4", 0.65).param == 0.4);
  CHECK(StrategySpec::parse("topk:3", 0.65).kind == StrategySpec::Kind::topk);
  CHECK(StrategySpec::parse("fixed:0.1", 0.65).label() == "fixed:0.1");
  CHECK_THROWS_AS(StrategySpec::parse("topk:1.5", 0.65), UsageError);
  CHECK_THROWS_AS(StrategySpec::parse("random", 0.65), UsageError);
  CHECK_THROWS_AS(select_with_strategy(m, {StrategySpec::Kind::topk, 4}), ContractError);
  CHECK_THROWS_AS(select_with_strategy(m, {StrategySpec::Kind::adaptive, 1.5}), ContractError);
}

TEST_CASE("adaptive and topk agree when they select the same count") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> m(9);
    for (auto& v : m) v = ud(rng);
    const auto a = adaptive_select(m, ud(rng) * 0.9 + 0.05).b;
    const auto k = double(std::count(a.begin(), a.end(), 1));
    CHECK(select_with_strategy(m, {StrategySpec::Kind::topk, k}).b == a);
  }
}

TEST_CASE("ablation rows") {
  const Fixture f("ablation", 6);
  const auto& p = f.model.params;
  const auto& c = f.model.config;
  const auto theta = ThetaSpec::parse("0.4");

  const auto rows = run_ablation(p, c, f.samples, {StrategySpec::parse("adaptive", 0.65), StrategySpec::parse("adaptive", 0.65)},
                                 {true, false}, theta);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].strategy == rows[2].strategy);
  CHECK(rows[0].summary.gt_known == rows[2].summary.gt_known);
  CHECK(rows[1].summary.max_box_acc_v2 == rows[3].summary.max_box_acc_v2);
  CHECK(rows[0].selected_tokens == rows[2].selected_tokens);
  CHECK_FALSE(rows[1].reattention);

  const auto direct = summarize(compute_maps(p, c, f.samples, adaptive_selector(0.65)), theta);
  CHECK(rows[0].summary.gt_known == direct.gt_known);
  CHECK(rows[0].summary.max_box_acc_v2 == direct.max_box_acc_v2);

  // Switching re-attention off only changes the context map.
  const auto on = compute_maps(p, c, f.samples, adaptive_selector(0.65), true);
  const auto off = compute_maps(p, c, f.samples, adaptive_selector(0.65), false);
  for (std::size_t i = 0; i < on.size(); ++i) {
    CHECK(on[i].class_maps == off[i].class_maps);
    CHECK(on[i].ranking == off[i].ranking);
  }

  std::vector<StrategySpec> sweep;
  for (double u : {0.25, 0.45, 0.65, 0.85}) sweep.push_back({StrategySpec::Kind::adaptive, u});
  const auto swept = run_ablation(p, c, f.samples, sweep, {true}, theta);
  REQUIRE(swept.size() == 4);
  for (std::size_t s = 1; s < 4; ++s)
    for (std::size_t i = 0; i < f.samples.size(); ++i)
      CHECK(swept[s].selected_tokens[i] >= swept[s - 1].selected_tokens[i]);
}
