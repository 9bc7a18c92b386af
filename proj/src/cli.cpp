#include "trt/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "trt/ablation.hpp"
#include "trt/io.hpp"

namespace trt::cli {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return kExitUsage;
    case ErrorKind::format:
    case ErrorKind::io: return kExitFormat;
    case ErrorKind::contract:
    case ErrorKind::dimension: return kExitContract;
  }
  return kExitContract;
}

const char* error_tag(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::format: return "format";
    case ErrorKind::io: return "io";
    case ErrorKind::contract: return "contract";
    case ErrorKind::dimension: return "dimension";
  }
  return "error";
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

struct Options {
  std::string ckpt, input, out_logits, out_pt, class_id = "auto", theta = "0.5", out_box, out_map;
  std::string manifest, metrics = "gt-known,top1,top5,maxboxaccv2", out_report, grid = "0.05:0.95:0.05";
  std::string out_table, toy_config, train_config, out_ckpt, out_curve, strategies = "adaptive";
  std::string reattention = "on,off", map, image, out, out_dir;
  double u = -1.0;  // negative: take u from the checkpoint
  double alpha = 0.5;
  std::size_t count = 50;
  std::uint64_t seed = 1;
};

double effective_u(const Options& o, const io::Checkpoint& c) {
  if (o.u < 0.0) return c.config.selection_mass;
  if (!(o.u > 0.0 && o.u <= 1.0)) throw UsageError("--u must lie in (0, 1]");
  return o.u;
}

void cmd_infer(const Options& o, std::ostream& out) {
  const auto ckpt = io::read_checkpoint(o.ckpt);
  const auto image = io::read_tensor(o.input);
  const auto p = predict(ckpt.params, ckpt.config, image, adaptive_selector(effective_u(o, ckpt)));
  io::write_tensor(o.out_logits, p.p_c);
  io::write_tensor(o.out_pt, p.p_t);
  out << "p_c";
  for (float v : p.p_c.data()) out << ' ' << num(v);
  out << "\np_t";
  for (float v : p.p_t.data()) out << ' ' << num(v);
  out << '\n';
}

void cmd_localize(const Options& o, std::ostream& out) {
  const auto ckpt = io::read_checkpoint(o.ckpt);
  const auto image = io::read_tensor(o.input);
  std::optional<std::size_t> k;
  if (o.class_id != "auto") {
    try {
      std::size_t used = 0;
      const long v = std::stol(o.class_id, &used);
      if (used != o.class_id.size() || v < 0) throw std::invalid_argument("class");
      k = std::size_t(v);
    } catch (const std::exception&) {
      throw UsageError("--class must be a class id or 'auto', got '" + o.class_id + "'");
    }
  }
  const auto spec = ThetaSpec::parse(o.theta);
  if (!spec.fixed) throw UsageError("localize needs a single --theta value");
  const auto r = localize(ckpt.params, ckpt.config, image, k, effective_u(o, ckpt), *spec.fixed);
  std::ostringstream box;
  box << r.box.x0 << ' ' << r.box.y0 << ' ' << r.box.x1 << ' ' << r.box.y1 << '\n';
  io::write_text(o.out_box, box.str());
  if (!o.out_map.empty()) io::write_tensor(o.out_map, r.map);
  out << "class " << r.class_id << " box " << box.str();
  if (r.degenerate) out << "empty foreground, full-image box\n";
}

void cmd_eval(const Options& o, std::ostream& out) {
  const auto ckpt = io::read_checkpoint(o.ckpt);
  const auto samples = io::load_samples(o.manifest);
  if (samples.empty()) throw ContractError("eval: manifest '" + o.manifest + "' has no records");
  const auto theta = ThetaSpec::parse(o.theta);
  const auto maps = compute_maps(ckpt.params, ckpt.config, samples, adaptive_selector(effective_u(o, ckpt)));
  const auto s = summarize(maps, theta);
  std::ostringstream csv;
  csv << "metric,value\n";
  csv << "theta," << num(s.theta) << '\n';
  for (const auto& m : split(o.metrics, ',')) {
    double v = 0.0;
    if (m == "gt-known") v = s.gt_known;
    else if (m == "top1") v = s.top1;
    else if (m == "top5") v = s.top5;
    else if (m == "maxboxaccv2") v = s.max_box_acc_v2;
    else throw UsageError("unknown metric '" + m + "'");
    csv << m << ',' << num(v) << '\n';
  }
  io::write_text(o.out_report, csv.str());
  out << csv.str();
}

void cmd_calibrate(const Options& o, std::ostream& out) {
  const auto ckpt = io::read_checkpoint(o.ckpt);
  const auto samples = io::load_samples(o.manifest);
  const auto r = grid_search_threshold(ckpt.params, ckpt.config, samples, effective_u(o, ckpt),
                                       ThresholdGrid::parse(o.grid));
  std::ostringstream csv;
  csv << "theta,gt-known,top1,top5,maxboxaccv2\n";
  for (const auto& row : r.table) {
    csv << num(row.theta) << ',' << num(row.gt_known) << ',' << num(row.top1) << ',' << num(row.top5) << ','
        << num(row.max_box_acc_v2) << '\n';
  }
  io::write_text(o.out_table, csv.str());
  out << "theta_star " << num(r.theta_star) << '\n';
}

void cmd_train_toy(const Options& o, std::ostream& out) {
  const auto toy = io::read_toy_config(o.toy_config);
  const auto train = io::read_train_config(o.train_config);
  const auto r = train_toy(toy, train);
  io::write_checkpoint(o.out_ckpt, {r.config, r.params});
  std::ostringstream csv;
  csv << "step,phase,loss\n";
  for (const auto& p : r.curve) csv << p.step << ',' << p.phase << ',' << num(p.loss) << '\n';
  io::write_text(o.out_curve, csv.str());
  if (!r.curve.empty()) out << "trained " << r.curve.size() << " steps, final loss " << num(r.curve.back().loss) << '\n';
}

void cmd_ablate(const Options& o, std::ostream& out) {
  const auto ckpt = io::read_checkpoint(o.ckpt);
  const auto samples = io::load_samples(o.manifest);
  std::vector<StrategySpec> strategies;
  for (const auto& s : split(o.strategies, ',')) strategies.push_back(StrategySpec::parse(s, ckpt.config.selection_mass));
  std::vector<bool> modes;
  for (const auto& m : split(o.reattention, ',')) {
    if (m == "on") modes.push_back(true);
    else if (m == "off") modes.push_back(false);
    else throw UsageError("--reattention takes on, off or on,off");
  }
  const auto rows = run_ablation(ckpt.params, ckpt.config, samples, strategies, modes, ThetaSpec::parse(o.theta));
  std::ostringstream csv;
  csv << "strategy,reattention,theta,gt-known,maxboxaccv2,mean_selected\n";
  for (const auto& r : rows) {
    double mean = 0.0;
    for (auto n : r.selected_tokens) mean += double(n);
    mean /= double(r.selected_tokens.size());
    csv << r.strategy << ',' << (r.reattention ? "on" : "off") << ',' << num(r.summary.theta) << ','
        << num(r.summary.gt_known) << ',' << num(r.summary.max_box_acc_v2) << ',' << num(mean) << '\n';
  }
  io::write_text(o.out_table, csv.str());
  out << csv.str();
}

void cmd_heatmap(const Options& o, std::ostream&) {
  io::write_heatmap(o.out, io::read_tensor(o.map), io::read_tensor(o.image), o.alpha);
}

void cmd_make_toy_set(const Options& o, std::ostream& out) {
  const auto toy = io::read_toy_config(o.toy_config);
  io::write_samples(o.out_dir, make_toy_samples(toy, o.count, o.seed));
  out << "wrote " << o.count << " samples to " << o.out_dir << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Token refinement transformer for weakly supervised localization", "trt"};
  app.require_subcommand(1);
  Options o;

  auto* infer = app.add_subcommand("infer", "Run both branches, write p_c and p_t");
  infer->add_option("--ckpt", o.ckpt)->required();
  infer->add_option("--input", o.input, "TRT1 image, 3xHxW")->required();
  infer->add_option("--out-logits", o.out_logits, "TRT1 file receiving p_c")->required();
  infer->add_option("--out-pt", o.out_pt, "TRT1 file receiving p_t")->required();
  infer->add_option("--u", o.u, "selection mass (default: checkpoint)");

  auto* loc = app.add_subcommand("localize", "Predict one box");
  loc->add_option("--ckpt", o.ckpt)->required();
  loc->add_option("--input", o.input)->required();
  loc->add_option("--class", o.class_id, "class id or 'auto'");
  loc->add_option("--u", o.u);
  loc->add_option("--theta", o.theta);
  loc->add_option("--out-box", o.out_box, "text file: x0 y0 x1 y1")->required();
  loc->add_option("--out-map", o.out_map, "TRT1 file receiving the fused map");

  auto* eval = app.add_subcommand("eval", "Localization metrics over a manifest");
  eval->add_option("--ckpt", o.ckpt)->required();
  eval->add_option("--manifest", o.manifest)->required();
  eval->add_option("--u", o.u);
  eval->add_option("--theta", o.theta, "value or grid:start:stop:step");
  eval->add_option("--metrics", o.metrics);
  eval->add_option("--out-report", o.out_report)->required();

  auto* cal = app.add_subcommand("calibrate", "Grid-search the box threshold");
  cal->add_option("--ckpt", o.ckpt)->required();
  cal->add_option("--manifest", o.manifest)->required();
  cal->add_option("--u", o.u);
  cal->add_option("--grid", o.grid, "start:stop:step");
  cal->add_option("--out-table", o.out_table)->required();

  auto* train = app.add_subcommand("train-toy", "Two-phase training on the synthetic task");
  train->add_option("--toy-config", o.toy_config)->required();
  train->add_option("--train-config", o.train_config)->required();
  train->add_option("--out-ckpt", o.out_ckpt)->required();
  train->add_option("--out-curve", o.out_curve)->required();

  auto* abl = app.add_subcommand("ablate-selection", "Compare token selection strategies");
  abl->add_option("--ckpt", o.ckpt)->required();
  abl->add_option("--manifest", o.manifest)->required();
  abl->add_option("--strategies", o.strategies, "adaptive[:u],topk:<k>,fixed:<tau>");
  abl->add_option("--reattention", o.reattention, "on, off or on,off");
  abl->add_option("--theta", o.theta, "value or grid:start:stop:step");
  abl->add_option("--out-table", o.out_table)->required();

  auto* heat = app.add_subcommand("heatmap", "Render a map over an image as PPM");
  heat->add_option("--map", o.map)->required();
  heat->add_option("--image", o.image)->required();
  heat->add_option("--alpha", o.alpha);
  heat->add_option("--out", o.out)->required();

  auto* make = app.add_subcommand("make-toy-set", "Write synthetic images and a manifest");
  make->add_option("--toy-config", o.toy_config)->required();
  make->add_option("--count", o.count);
  make->add_option("--seed", o.seed);
  make->add_option("--out-dir", o.out_dir)->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error[usage]: " << e.what() << '\n' << app.help();
    return kExitUsage;
  }

  try {
    if (infer->parsed()) cmd_infer(o, out);
    else if (loc->parsed()) cmd_localize(o, out);
    else if (eval->parsed()) cmd_eval(o, out);
    else if (cal->parsed()) cmd_calibrate(o, out);
    else if (train->parsed()) cmd_train_toy(o, out);
    else if (abl->parsed()) cmd_ablate(o, out);
    else if (heat->parsed()) cmd_heatmap(o, out);
    else if (make->parsed()) cmd_make_toy_set(o, out);
  } catch (const Error& e) {
    err << "error[" << error_tag(e.kind()) << "]: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error[io]: " << e.what() << '\n';
    return kExitFormat;
  } catch (const std::exception& e) {
    err << "error[internal]: " << e.what() << '\n';
    return kExitContract;
  }
  return kExitOk;
}

}  // namespace trt::cli
