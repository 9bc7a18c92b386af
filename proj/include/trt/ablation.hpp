#pragma once

#include <string>
#include <vector>

#include "trt/localization.hpp"

namespace trt {

/// How tokens are picked for re-attention.
struct StrategySpec {
  enum class Kind { adaptive, topk, fixed };
  Kind kind = Kind::adaptive;
  double param = 0.65;  // u, k or tau

  /// "adaptive" (u from the checkpoint), "adaptive:<u>", "topk:<k>", "fixed:<tau>".
  static StrategySpec parse(const std::string& text, double default_u);
  std::string label() const;
  void validate(std::size_t num_tokens) const;
};

/// adaptive -> adaptive_select; topk -> k largest (ties to the lower index);
/// fixed -> m >= tau, falling back to the argmax when nothing passes.
Selection select_with_strategy(const std::vector<double>& m, const StrategySpec& spec);

Selector make_selector(const StrategySpec& spec);

struct AblationRow {
  std::string strategy;
  bool reattention = true;
  EvalSummary summary;
  std::vector<std::size_t> selected_tokens;  // per image, manifest order
};

/// Inference-time comparison on a fixed checkpoint: every strategy with each
/// requested re-attention setting.
std::vector<AblationRow> run_ablation(const ParamStore& params, const ModelConfig& config,
                                      const std::vector<Sample>& samples, const std::vector<StrategySpec>& strategies,
                                      const std::vector<bool>& reattention_modes, const ThetaSpec& theta);

}  // namespace trt
