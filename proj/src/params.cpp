#include "trt/params.hpp"

#include <random>
#include <sstream>

namespace trt {

namespace {

void add_block(std::map<std::string, Dims>& out, const std::string& p, std::size_t d, std::size_t hidden) {
  out[p + "norm1.weight"] = {d};
  out[p + "norm1.bias"] = {d};
  for (const char* proj : {"q", "k", "v", "proj"}) {
    out[p + "attn." + proj + ".weight"] = {d, d};
    out[p + "attn." + proj + ".bias"] = {d};
  }
  out[p + "norm2.weight"] = {d};
  out[p + "norm2.bias"] = {d};
  out[p + "mlp.fc1.weight"] = {d, hidden};
  out[p + "mlp.fc1.bias"] = {hidden};
  out[p + "mlp.fc2.weight"] = {hidden, d};
  out[p + "mlp.fc2.bias"] = {d};
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::string block_prefix(std::size_t index) { return "blocks." + std::to_string(index) + "."; }

std::map<std::string, Dims> parameter_shapes(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.embed_dim, k = c.num_classes;
  std::map<std::string, Dims> out;
  out["patch_embed.weight"] = {c.patch_dim(), d};
  out["cls_token"] = {1, d};
  out["pos_embed"] = {c.num_tokens(), d};
  for (std::size_t i = 0; i < c.backbone_blocks(); ++i) add_block(out, block_prefix(i), d, c.mlp_hidden());
  add_block(out, kMaskBlockPrefix, d, c.mlp_hidden());
  out["tpsm.score.weight"] = {d, 1};
  out["tpsm.score.bias"] = {1};
  add_block(out, kFinalBlockPrefix, d, c.mlp_hidden());
  out["tpsm.head.weight"] = {d, k};
  out["tpsm.head.bias"] = {k};
  out["cam.conv.weight"] = {k, d, 3, 3};
  out["cam.conv.bias"] = {k};
  return out;
}

void check_parameters(const ModelConfig& config, const ParamStore& params) {
  const auto shapes = parameter_shapes(config);
  std::vector<std::string> missing;
  for (const auto& [name, dims] : shapes) {
    auto it = params.find(name);
    if (it == params.end()) {
      missing.push_back(name);
      continue;
    }
    if (it->second.dims() != dims) {
      throw FormatError("parameter '" + name + "' has dims " + dims_to_string(it->second.dims()) +
                        ", config requires " + dims_to_string(dims));
    }
  }
  if (!missing.empty()) {
    std::ostringstream os;
    os << "missing parameters:";
    for (const auto& m : missing) os << ' ' << m;
    throw FormatError(os.str());
  }
  for (const auto& [name, _] : params) {
    if (!shapes.count(name)) throw FormatError("unexpected parameter '" + name + "'");
  }
}

ParamStore init_parameters(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto trunc_normal = [&]() {
    for (;;) {
      const double z = normal(rng);
      if (std::abs(z) <= 2.0) return 0.02 * z;
    }
  };
  ParamStore out;
  // std::map iteration keeps the draw order fixed for a given config.
  for (const auto& [name, dims] : parameter_shapes(config)) {
    Tensor t(dims);
    if (name == "pos_embed") {
      for (auto& v : t.storage()) v = float(0.02 * normal(rng));
    } else if (ends_with(name, "norm1.weight") || ends_with(name, "norm2.weight")) {
      for (auto& v : t.storage()) v = 1.0f;
    } else if (name == "cls_token" || ends_with(name, ".bias")) {
      // zeros
    } else {
      for (auto& v : t.storage()) v = float(trunc_normal());
    }
    out.emplace(name, std::move(t));
  }
  return out;
}

bool is_cam_parameter(const std::string& name) { return name.rfind("cam.", 0) == 0; }

bool is_backbone_or_tpsm_parameter(const std::string& name) { return !is_cam_parameter(name); }

}  // namespace trt
