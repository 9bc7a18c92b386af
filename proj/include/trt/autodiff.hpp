#pragma once

// Minimal tensor-level reverse-mode differentiation.
//
// A Tape owns every intermediate value of one forward pass. Operations append
// a node holding the output value plus a closure that, given d(loss)/d(out),
// accumulates into the gradients of the node's inputs. backward() replays the
// closures in reverse recording order. A tape is single-use and
// single-threaded.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "trt/numerics.hpp"

namespace trt::ad {

template <std::floating_point T>
class Tape;

template <std::floating_point T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const BasicTensor<T>& value() const { return tape->value(*this); }
};

template <std::floating_point T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(BasicTensor<T> value) { return push(std::move(value), false, nullptr); }
  Var<T> parameter(BasicTensor<T> value) { return push(std::move(value), true, nullptr); }

  Var<T> record(BasicTensor<T> value, std::initializer_list<Var<T>> inputs, Backward fn) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : Backward{});
  }

  Var<T> record(BasicTensor<T> value, const std::vector<Var<T>>& inputs, Backward fn) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : Backward{});
  }

  const BasicTensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  const BasicTensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of the last backward() target with respect to v. Nodes the loss
  /// does not depend on get exact zeros.
  BasicTensor<T> grad(Var<T> v) const {
    const auto& n = nodes_.at(v.id);
    if (n.grad.empty()) return BasicTensor<T>(n.value.dims());
    return n.grad;
  }

  void backward(Var<T> loss) {
    if (consumed_) throw ContractError("tape already consumed by a previous backward pass");
    consumed_ = true;
    auto& root = nodes_.at(loss.id);
    if (root.value.size() != 1) {
      throw ContractError("backward target must be a scalar, got " + dims_to_string(root.value.dims()));
    }
    root.grad = BasicTensor<T>(root.value.dims(), T(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
      n.backward(*this, i);
    }
  }

  // Used by backward rules.
  const BasicTensor<T>& grad_of(std::size_t id) const { return nodes_[id].grad; }
  bool needs(std::size_t id) const { return nodes_[id].requires_grad; }

  void accumulate(std::size_t id, const BasicTensor<T>& g) {
    auto& n = nodes_[id];
    if (!n.requires_grad) return;
    if (g.dims() != n.value.dims()) {
      throw DimensionError("gradient dims " + dims_to_string(g.dims()) + " vs value " +
                           dims_to_string(n.value.dims()));
    }
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }

 private:
  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var<T> push(BasicTensor<T> value, bool requires_grad, Backward fn) {
    if (consumed_) throw ContractError("cannot record on a tape after backward()");
    nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(fn)});
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Operations

template <std::floating_point T>
Var<T> matmul(Var<T> a, Var<T> b) {
  auto& tape = *a.tape;
  return tape.record(trt::matmul(a.value(), b.value()), {a, b}, [a = a.id, b = b.id](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    if (t.needs(a)) t.accumulate(a, matmul_nt(g, t.value(b)));
    if (t.needs(b)) t.accumulate(b, matmul_tn(t.value(a), g));
  });
}

template <std::floating_point T>
Var<T> transpose(Var<T> x) {
  const auto& v = x.value();
  v.require_matrix();
  auto flip = [](const BasicTensor<T>& m) {
    BasicTensor<T> out({m.cols(), m.rows()});
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
    return out;
  };
  return x.tape->record(flip(v), {x}, [x = x.id, flip](Tape<T>& t, std::size_t self) {
    t.accumulate(x, flip(t.grad_of(self)));
  });
}

template <std::floating_point T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_dims(a.value(), b.value(), "add");
  BasicTensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape->record(std::move(out), {a, b}, [a = a.id, b = b.id](Tape<T>& t, std::size_t self) {
    t.accumulate(a, t.grad_of(self));
    t.accumulate(b, t.grad_of(self));
  });
}

/// x (rows x cols) plus a bias of cols entries broadcast over rows.
template <std::floating_point T>
Var<T> add_row(Var<T> x, Var<T> bias) {
  const auto& xv = x.value();
  xv.require_matrix();
  if (bias.value().size() != xv.cols()) {
    throw DimensionError("add_row: bias " + dims_to_string(bias.value().dims()) + " vs " +
                         dims_to_string(xv.dims()));
  }
  BasicTensor<T> out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bias.value()[j];
  return x.tape->record(std::move(out), {x, bias}, [x = x.id, b = bias.id](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    t.accumulate(x, g);
    if (t.needs(b)) {
      BasicTensor<T> gb(t.value(b).dims());
      for (std::size_t j = 0; j < g.cols(); ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g.rows(); ++i) acc += g(i, j);
        gb[j] = T(acc);
      }
      t.accumulate(b, gb);
    }
  });
}

template <std::floating_point T>
Var<T> scale(Var<T> x, double s) {
  BasicTensor<T> out = x.value();
  for (auto& v : out.storage()) v = T(double(v) * s);
  return x.tape->record(std::move(out), {x}, [x = x.id, s](Tape<T>& t, std::size_t self) {
    BasicTensor<T> g = t.grad_of(self);
    for (auto& v : g.storage()) v = T(double(v) * s);
    t.accumulate(x, g);
  });
}

template <std::floating_point T>
Var<T> gelu(Var<T> x) {
  return x.tape->record(trt::gelu(x.value()), {x}, [x = x.id](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    const auto& xv = t.value(x);
    BasicTensor<T> gx(xv.dims());
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] = T(double(g[i]) * double(gelu_derivative(xv[i])));
    t.accumulate(x, gx);
  });
}

template <std::floating_point T>
Var<T> layer_norm_rows(Var<T> x, Var<T> gamma, Var<T> beta, double eps = kLayerNormEps) {
  auto out = trt::layer_norm_rows(x.value(), gamma.value(), beta.value(), eps);
  return x.tape->record(std::move(out), {x, gamma, beta},
                        [x = x.id, ga = gamma.id, be = beta.id, eps](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    const auto& xv = t.value(x);
    const auto& gv = t.value(ga);
    const std::size_t d = xv.dims().back();
    const std::size_t rows = xv.size() / d;
    BasicTensor<T> gx(xv.dims());
    std::vector<double> ggamma(d, 0.0), gbeta(d, 0.0);
    std::vector<double> xhat(d), dxhat(d);
    for (std::size_t i = 0; i < rows; ++i) {
      const T* in = xv.data().data() + i * d;
      const T* gy = g.data().data() + i * d;
      double mean = 0.0;
      for (std::size_t j = 0; j < d; ++j) mean += in[j];
      mean /= double(d);
      double var = 0.0;
      for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
      var /= double(d);
      const double inv = 1.0 / std::sqrt(var + eps);
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        xhat[j] = (in[j] - mean) * inv;
        dxhat[j] = double(gy[j]) * double(gv[j]);
        sum_dxhat += dxhat[j];
        sum_dxhat_xhat += dxhat[j] * xhat[j];
        ggamma[j] += double(gy[j]) * xhat[j];
        gbeta[j] += gy[j];
      }
      for (std::size_t j = 0; j < d; ++j) {
        gx[i * d + j] = T(inv / double(d) * (double(d) * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat));
      }
    }
    t.accumulate(x, gx);
    if (t.needs(ga)) {
      BasicTensor<T> gg(t.value(ga).dims());
      for (std::size_t j = 0; j < d; ++j) gg[j] = T(ggamma[j]);
      t.accumulate(ga, gg);
    }
    if (t.needs(be)) {
      BasicTensor<T> gb(t.value(be).dims());
      for (std::size_t j = 0; j < d; ++j) gb[j] = T(gbeta[j]);
      t.accumulate(be, gb);
    }
  });
}

/// Row-wise (masked) softmax. The mask is not differentiated.
template <std::floating_point T>
Var<T> softmax_rows(Var<T> x, Mask mask = {}) {
  auto out = trt::softmax_rows(x.value(), mask);
  return x.tape->record(std::move(out), {x}, [x = x.id](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    const auto& y = t.value(self);
    BasicTensor<T> gx(y.dims());
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += double(y(i, j)) * double(g(i, j));
      for (std::size_t j = 0; j < y.cols(); ++j) gx(i, j) = T(double(y(i, j)) * (double(g(i, j)) - dot));
    }
    t.accumulate(x, gx);
  });
}

template <std::floating_point T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t end) {
  const auto& v = x.value();
  v.require_matrix();
  if (begin >= end || end > v.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of " + dims_to_string(v.dims()));
  }
  const std::size_t c = v.cols();
  std::vector<T> data(v.data().begin() + std::ptrdiff_t(begin * c), v.data().begin() + std::ptrdiff_t(end * c));
  return x.tape->record(BasicTensor<T>({end - begin, c}, std::move(data)), {x},
                        [x = x.id, begin, c](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    BasicTensor<T> gx(t.value(x).dims());
    std::copy(g.data().begin(), g.data().end(), gx.data().begin() + std::ptrdiff_t(begin * c));
    t.accumulate(x, gx);
  });
}

template <std::floating_point T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t end) {
  const auto& v = x.value();
  v.require_matrix();
  if (begin >= end || end > v.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of " + dims_to_string(v.dims()));
  }
  BasicTensor<T> out({v.rows(), end - begin});
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = begin; j < end; ++j) out(i, j - begin) = v(i, j);
  return x.tape->record(std::move(out), {x}, [x = x.id, begin](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    BasicTensor<T> gx(t.value(x).dims());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) gx(i, j + begin) = g(i, j);
    t.accumulate(x, gx);
  });
}

template <std::floating_point T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const std::size_t c = parts.front().value().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.value().cols() != c) throw DimensionError("concat_rows: column count mismatch");
    rows += p.value().rows();
  }
  std::vector<T> data;
  data.reserve(rows * c);
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    ids.push_back(p.id);
  }
  return parts.front().tape->record(BasicTensor<T>({rows, c}, std::move(data)), parts,
                                    [ids](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    std::size_t offset = 0;
    for (auto id : ids) {
      const auto& d = t.value(id).dims();
      const std::size_t n = d[0] * d[1];
      std::vector<T> part(g.data().begin() + std::ptrdiff_t(offset), g.data().begin() + std::ptrdiff_t(offset + n));
      t.accumulate(id, BasicTensor<T>(d, std::move(part)));
      offset += n;
    }
  });
}

template <std::floating_point T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t r = parts.front().value().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.value().rows() != r) throw DimensionError("concat_cols: row count mismatch");
    cols += p.value().cols();
  }
  BasicTensor<T> out({r, cols});
  std::vector<std::size_t> ids;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) out(i, offset + j) = v(i, j);
    offset += v.cols();
    ids.push_back(p.id);
  }
  return parts.front().tape->record(std::move(out), parts, [ids](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    std::size_t off = 0;
    for (auto id : ids) {
      const auto& d = t.value(id).dims();
      BasicTensor<T> part(d);
      for (std::size_t i = 0; i < d[0]; ++i)
        for (std::size_t j = 0; j < d[1]; ++j) part(i, j) = g(i, off + j);
      t.accumulate(id, part);
      off += d[1];
    }
  });
}

/// 3x3 zero-padded convolution over tokens arranged as a side x side raster.
/// x: (side*side) x C_in, weight: {C_out, C_in, 3, 3}, bias: {C_out}.
/// Output: (side*side) x C_out.
template <std::floating_point T>
Var<T> conv3x3(Var<T> x, Var<T> weight, Var<T> bias, std::size_t side) {
  const auto& xv = x.value();
  const auto& wv = weight.value();
  xv.require_matrix();
  if (wv.ndim() != 4 || wv.dim(2) != 3 || wv.dim(3) != 3 || wv.dim(1) != xv.cols() ||
      xv.rows() != side * side || bias.value().size() != wv.dim(0)) {
    throw DimensionError("conv3x3: input " + dims_to_string(xv.dims()) + ", weight " +
                         dims_to_string(wv.dims()) + ", bias " + dims_to_string(bias.value().dims()) +
                         ", side " + std::to_string(side));
  }
  const kernels::ConvShape s{side, xv.cols(), wv.dim(0)};
  BasicTensor<T> out({s.positions(), s.out_channels});
  kernels::conv3x3<T>(xv.data(), wv.data(), bias.value().data(), out.data(), s);
  return x.tape->record(std::move(out), {x, weight, bias},
                        [x = x.id, w = weight.id, b = bias.id, s](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    if (t.needs(x)) {
      BasicTensor<T> gx(t.value(x).dims());
      kernels::conv3x3_grad_input<T>(g.data(), t.value(w).data(), gx.data(), s);
      t.accumulate(x, gx);
    }
    if (t.needs(w) || t.needs(b)) {
      BasicTensor<T> gw(t.value(w).dims());
      BasicTensor<T> gb(t.value(b).dims());
      kernels::conv3x3_grad_params<T>(t.value(x).data(), g.data(), gw.data(), gb.data(), s);
      t.accumulate(w, gw);
      t.accumulate(b, gb);
    }
  });
}

/// Column means: rows x cols -> 1 x cols.
template <std::floating_point T>
Var<T> mean_rows(Var<T> x) {
  const auto& v = x.value();
  v.require_matrix();
  BasicTensor<T> out({1, v.cols()});
  for (std::size_t j = 0; j < v.cols(); ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < v.rows(); ++i) acc += v(i, j);
    out[j] = T(acc / double(v.rows()));
  }
  return x.tape->record(std::move(out), {x}, [x = x.id](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad_of(self);
    const auto& d = t.value(x).dims();
    BasicTensor<T> gx(d);
    const double inv = 1.0 / double(d[0]);
    for (std::size_t i = 0; i < d[0]; ++i)
      for (std::size_t j = 0; j < d[1]; ++j) gx(i, j) = T(double(g[j]) * inv);
    t.accumulate(x, gx);
  });
}

template <std::floating_point T>
Var<T> sum(Var<T> x) {
  double acc = 0.0;
  for (auto v : x.value().data()) acc += v;
  return x.tape->record(BasicTensor<T>({1, 1}, T(acc)), {x}, [x = x.id](Tape<T>& t, std::size_t self) {
    t.accumulate(x, BasicTensor<T>(t.value(x).dims(), t.grad_of(self)[0]));
  });
}

/// -log(max(p[index], floor)) as a 1x1 value.
template <std::floating_point T>
Var<T> neg_log_pick(Var<T> p, std::size_t index, double floor) {
  const auto& v = p.value();
  if (index >= v.size()) {
    throw ContractError("class id " + std::to_string(index) + " out of range for " +
                        std::to_string(v.size()) + " classes");
  }
  const double pv = std::max(double(v[index]), floor);
  return p.tape->record(BasicTensor<T>({1, 1}, T(-std::log(pv))), {p},
                        [p = p.id, index, floor](Tape<T>& t, std::size_t self) {
    const auto& pv = t.value(p);
    BasicTensor<T> gp(pv.dims());
    if (double(pv[index]) > floor) gp[index] = T(-double(t.grad_of(self)[0]) / double(pv[index]));
    t.accumulate(p, gp);
  });
}

}  // namespace trt::ad
