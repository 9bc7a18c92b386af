#include "trt/tpsm.hpp"

#include <algorithm>
#include <numeric>

namespace trt {

std::size_t exact_sqrt(std::size_t n) {
  auto s = static_cast<std::size_t>(std::llround(std::sqrt(double(n))));
  if (s * s != n) throw DimensionError(std::to_string(n) + " tokens do not form a square grid");
  return s;
}

Selection adaptive_select(const std::vector<double>& m, double u) {
  if (m.empty()) throw DimensionError("adaptive_select: empty attention vector");
  if (!(u > 0.0 && u <= 1.0)) throw ContractError("adaptive_select: u must lie in (0, 1]");
  for (double v : m) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ContractError("adaptive_select: m must be finite and nonnegative");
  }
  std::vector<std::size_t> order(m.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return m[a] > m[b]; });

  // Total accumulated in the same order as the prefix sums, so the last
  // prefix equals it exactly and u = 1 is always reachable.
  double total = 0.0;
  for (auto i : order) total += m[i];
  if (total <= 0.0) throw ContractError("adaptive_select: attention vector sums to zero");

  const double target = u * total;
  double cum = 0.0;
  std::size_t k = 0;
  for (; k < order.size(); ++k) {
    cum += m[order[k]];
    if (cum >= target) break;
  }
  k = std::min(k, order.size() - 1);

  Selection s;
  s.tau = m[order[k]];
  s.b.resize(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) s.b[i] = m[i] >= s.tau ? 1 : 0;
  return s;
}

Selection adaptive_select_or_argmax(const std::vector<double>& m, double u) {
  try {
    return adaptive_select(m, u);
  } catch (const ContractError&) {
    if (m.empty()) throw;
    const auto best = std::size_t(std::max_element(m.begin(), m.end()) - m.begin());
    Selection s;
    s.tau = m[best];
    s.b.assign(m.size(), 0);
    s.b[best] = 1;
    return s;
  }
}

Mask selection_matrix(const Mask& b) {
  const std::size_t n = b.size();
  Mask B(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) B[i * n + j] = i == j ? 1 : (b[j] ? 1 : 0);
  return B;
}

std::vector<double> reattention(const std::vector<double>& m, const Mask& b, const std::vector<double>& lambda) {
  if (b.size() != m.size() || lambda.size() != m.size()) {
    throw DimensionError("reattention: m, b and lambda lengths differ");
  }
  double selected_mass = 0.0, lambda_mass = 0.0;
  bool any = false;
  for (std::size_t k = 0; k < m.size(); ++k) {
    if (b[k]) {
      selected_mass += m[k];
      any = true;
    }
    lambda_mass += lambda[k];
  }
  if (!any) return m;
  if (lambda_mass == 0.0) throw ContractError("reattention: importance weights sum to zero");
  const double r = selected_mass / lambda_mass;
  std::vector<double> out(m.size());
  for (std::size_t k = 0; k < m.size(); ++k) out[k] = (b[k] ? 0.0 : m[k]) + lambda[k] * r;
  return out;
}

Tensor tpsm_map(const std::vector<double>& m_refined) {
  const std::size_t side = exact_sqrt(m_refined.size());
  Tensor out({side, side});
  for (std::size_t i = 0; i < m_refined.size(); ++i) out[i] = float(m_refined[i]);
  return out;
}

}  // namespace trt
