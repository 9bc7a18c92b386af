#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "trt/kernels.hpp"
#include "trt/tensor.hpp"

namespace trt {

/// Binary mask, one byte per entry (0 or 1). Matrices are stored row-major.
using Mask = std::vector<std::uint8_t>;

inline constexpr double kLayerNormEps = 1e-6;

template <std::floating_point T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  a.require_matrix();
  b.require_matrix();
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents disagree for " + dims_to_string(a.dims()) + " and " +
                         dims_to_string(b.dims()));
  }
  BasicTensor<T> c({a.rows(), b.cols()});
  kernels::matmul<T>(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
  return c;
}

// a * b^T
template <std::floating_point T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  a.require_matrix();
  b.require_matrix();
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner extents disagree for " + dims_to_string(a.dims()) +
                         " and " + dims_to_string(b.dims()));
  }
  BasicTensor<T> c({a.rows(), b.rows()});
  kernels::matmul_nt<T>(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.rows());
  return c;
}

// a^T * b
template <std::floating_point T>
BasicTensor<T> matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  a.require_matrix();
  b.require_matrix();
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: inner extents disagree for " + dims_to_string(a.dims()) +
                         " and " + dims_to_string(b.dims()));
  }
  BasicTensor<T> c({a.cols(), b.cols()});
  kernels::matmul_tn<T>(a.data(), b.data(), c.data(), a.cols(), a.rows(), b.cols());
  return c;
}

namespace detail {

// Softmax of one row restricted to entries whose mask byte is set (all entries
// when mask is empty). Masked outputs are exactly zero.
template <typename T>
void softmax_row(std::span<const T> in, std::span<T> out, std::span<const std::uint8_t> mask) {
  const bool masked = !mask.empty();
  double mx = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t j = 0; j < in.size(); ++j) {
    if (masked && !mask[j]) continue;
    mx = std::max(mx, double(in[j]));
    any = true;
  }
  if (!any) throw ContractError("masked_softmax: mask selects no entries");
  double sum = 0.0;
  std::vector<double> e(in.size(), 0.0);
  for (std::size_t j = 0; j < in.size(); ++j) {
    if (masked && !mask[j]) continue;
    e[j] = std::exp(double(in[j]) - mx);
    sum += e[j];
  }
  for (std::size_t j = 0; j < in.size(); ++j) out[j] = T(e[j] / sum);
}

}  // namespace detail

/// Softmax over all entries, treating the tensor as a flat vector.
template <std::floating_point T>
BasicTensor<T> softmax(const BasicTensor<T>& v) {
  BasicTensor<T> out(v.dims());
  detail::softmax_row<T>(v.data(), out.data(), {});
  return out;
}

template <std::floating_point T>
BasicTensor<T> masked_softmax(const BasicTensor<T>& scores, const Mask& mask) {
  if (mask.size() != scores.size()) {
    throw DimensionError("masked_softmax: mask length " + std::to_string(mask.size()) +
                         " vs scores " + dims_to_string(scores.dims()));
  }
  BasicTensor<T> out(scores.dims());
  detail::softmax_row<T>(scores.data(), out.data(), mask);
  return out;
}

/// Row-wise softmax of a matrix. `mask` is empty, one row (broadcast), or a
/// full rows x cols matrix.
template <std::floating_point T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x, const Mask& mask = {}) {
  x.require_matrix();
  const std::size_t r = x.rows(), c = x.cols();
  if (!mask.empty() && mask.size() != c && mask.size() != r * c) {
    throw DimensionError("softmax_rows: mask length " + std::to_string(mask.size()) +
                         " does not fit " + dims_to_string(x.dims()));
  }
  BasicTensor<T> out(x.dims());
  for (std::size_t i = 0; i < r; ++i) {
    std::span<const std::uint8_t> m;
    if (mask.size() == c) m = std::span<const std::uint8_t>(mask);
    else if (!mask.empty()) m = std::span<const std::uint8_t>(mask).subspan(i * c, c);
    detail::softmax_row<T>(x.row(i), out.row(i), m);
  }
  return out;
}

/// Layer normalization over the last axis of every row, population variance.
template <std::floating_point T>
BasicTensor<T> layer_norm_rows(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                               const BasicTensor<T>& beta, double eps = kLayerNormEps) {
  const std::size_t d = x.dims().back();
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm: gamma/beta " + dims_to_string(gamma.dims()) + "/" +
                         dims_to_string(beta.dims()) + " vs input " + dims_to_string(x.dims()));
  }
  BasicTensor<T> out(x.dims());
  const std::size_t rows = x.size() / d;
  for (std::size_t i = 0; i < rows; ++i) {
    const T* in = x.data().data() + i * d;
    T* o = out.data().data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= double(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= double(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) o[j] = T((in[j] - mean) * inv * gamma[j] + beta[j]);
  }
  return out;
}

template <std::floating_point T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps = kLayerNormEps) {
  return layer_norm_rows(x, gamma, beta, eps);
}

// Exact-erf GELU: x * Phi(x).
template <std::floating_point T>
T gelu(T x) {
  const double xd = x;
  return T(0.5 * xd * (1.0 + std::erf(xd / std::sqrt(2.0))));
}

template <std::floating_point T>
T gelu_derivative(T x) {
  const double xd = x;
  const double cdf = 0.5 * (1.0 + std::erf(xd / std::sqrt(2.0)));
  const double pdf = std::exp(-0.5 * xd * xd) / std::sqrt(2.0 * 3.14159265358979323846);
  return T(cdf + xd * pdf);
}

template <std::floating_point T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu(x[i]);
  return out;
}

/// Bilinear resize with half-pixel centers and edge clamping.
template <std::floating_point T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& m, std::size_t out_h, std::size_t out_w) {
  m.require_matrix();
  if (out_h == 0 || out_w == 0) throw DimensionError("bilinear_resize: output extents must be positive");
  const std::size_t h = m.rows(), w = m.cols();
  BasicTensor<T> out({out_h, out_w});
  const double sy = double(h) / double(out_h), sx = double(w) / double(out_w);
  auto coord = [](double src, std::size_t extent, std::size_t& i0, std::size_t& i1, double& frac) {
    src = std::clamp(src, 0.0, double(extent - 1));
    i0 = std::size_t(std::floor(src));
    i1 = std::min(i0 + 1, extent - 1);
    frac = src - double(i0);
  };
#pragma omp parallel for schedule(static) if (out_h * out_w >= kernels::kParallelWork)
  for (long i = 0; i < long(out_h); ++i) {
    std::size_t y0, y1;
    double fy;
    coord((double(i) + 0.5) * sy - 0.5, h, y0, y1, fy);
    for (std::size_t j = 0; j < out_w; ++j) {
      std::size_t x0, x1;
      double fx;
      coord((double(j) + 0.5) * sx - 0.5, w, x0, x1, fx);
      const double top = (1.0 - fx) * m(y0, x0) + fx * m(y0, x1);
      const double bot = (1.0 - fx) * m(y1, x0) + fx * m(y1, x1);
      out(std::size_t(i), j) = T((1.0 - fy) * top + fy * bot);
    }
  }
  return out;
}

/// Central-difference gradient of a scalar function, one coordinate at a time.
template <std::floating_point T>
BasicTensor<T> finite_diff_grad(const std::function<double(const BasicTensor<T>&)>& f,
                                const BasicTensor<T>& x, double h) {
  BasicTensor<T> g(x.dims());
  BasicTensor<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    const T up = T(double(orig) + h);
    const T down = T(double(orig) - h);
    probe[i] = up;
    const double fp = f(probe);
    probe[i] = down;
    const double fm = f(probe);
    probe[i] = orig;
    // Divide by the representable step, not the requested one.
    g[i] = T((fp - fm) / (double(up) - double(down)));
  }
  return g;
}

}  // namespace trt
