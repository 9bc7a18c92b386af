#include "trt/ablation.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace trt {

namespace {

double parse_number(const std::string& text, const std::string& whole) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw UsageError("malformed strategy '" + whole + "'");
  return v;
}

}  // namespace

StrategySpec StrategySpec::parse(const std::string& text, double default_u) {
  StrategySpec s;
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const bool has_param = colon != std::string::npos;
  if (kind == "adaptive") {
    s.kind = Kind::adaptive;
    s.param = has_param ? parse_number(text.substr(colon + 1), text) : default_u;
  } else if (kind == "topk" && has_param) {
    s.kind = Kind::topk;
    s.param = parse_number(text.substr(colon + 1), text);
    if (s.param != std::floor(s.param)) throw UsageError("topk needs an integer k, got '" + text + "'");
  } else if (kind == "fixed" && has_param) {
    s.kind = Kind::fixed;
    s.param = parse_number(text.substr(colon + 1), text);
  } else {
    throw UsageError("unknown selection strategy '" + text + "'");
  }
  return s;
}

std::string StrategySpec::label() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::adaptive: os << "adaptive:" << param; break;
    case Kind::topk: os << "topk:" << std::size_t(param); break;
    case Kind::fixed: os << "fixed:" << param; break;
  }
  return os.str();
}

void StrategySpec::validate(std::size_t num_tokens) const {
  switch (kind) {
    case Kind::adaptive:
      if (!(param > 0.0 && param <= 1.0)) throw ContractError("adaptive strategy needs u in (0, 1]");
      break;
    case Kind::topk:
      if (param < 1.0 || param > double(num_tokens)) {
        throw ContractError("topk strategy needs 1 <= k <= " + std::to_string(num_tokens));
      }
      break;
    case Kind::fixed:
      if (!(param >= 0.0)) throw ContractError("fixed strategy needs tau >= 0");
      break;
  }
}

Selection select_with_strategy(const std::vector<double>& m, const StrategySpec& spec) {
  spec.validate(m.size());
  switch (spec.kind) {
    case StrategySpec::Kind::adaptive:
      return adaptive_select_or_argmax(m, spec.param);
    case StrategySpec::Kind::topk: {
      std::vector<std::size_t> order(m.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return m[a] > m[b]; });
      const auto k = std::size_t(spec.param);
      Selection s;
      s.b.assign(m.size(), 0);
      for (std::size_t i = 0; i < k; ++i) s.b[order[i]] = 1;
      s.tau = m[order[k - 1]];
      return s;
    }
    case StrategySpec::Kind::fixed: {
      Selection s;
      s.tau = spec.param;
      s.b.assign(m.size(), 0);
      bool any = false;
      for (std::size_t i = 0; i < m.size(); ++i) {
        s.b[i] = m[i] >= spec.param ? 1 : 0;
        any = any || s.b[i];
      }
      if (!any) {
        const auto best = std::size_t(std::max_element(m.begin(), m.end()) - m.begin());
        s.b[best] = 1;
        s.tau = m[best];
      }
      return s;
    }
  }
  throw ContractError("unknown strategy kind");
}

Selector make_selector(const StrategySpec& spec) {
  return [spec](const std::vector<double>& m) { return select_with_strategy(m, spec); };
}

std::vector<AblationRow> run_ablation(const ParamStore& params, const ModelConfig& config,
                                      const std::vector<Sample>& samples, const std::vector<StrategySpec>& strategies,
                                      const std::vector<bool>& reattention_modes, const ThetaSpec& theta) {
  if (samples.empty()) throw ContractError("ablation: empty manifest");
  for (const auto& s : strategies) s.validate(config.num_patches());
  std::vector<AblationRow> rows;
  for (const auto& s : strategies) {
    for (bool re : reattention_modes) {
      const auto maps = compute_maps(params, config, samples, make_selector(s), re);
      AblationRow row{s.label(), re, summarize(maps, theta), {}};
      for (const auto& m : maps) row.selected_tokens.push_back(m.selected_tokens);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace trt
