#pragma once

// Hot loops of the model. Every parallel kernel has a serial twin in
// `trt::kernels::serial` that performs the same floating-point operations in
// the same order, so the two agree bit-for-bit; tests hold them to that.

#include <cstddef>
#include <span>

#include "trt/tensor.hpp"

namespace trt::kernels {

// Below this many multiply-adds the thread fork costs more than it saves.
inline constexpr std::size_t kParallelWork = 1u << 15;

/// Geometry of a 3x3, stride-1, zero-padded convolution applied to tokens
/// laid out as a side x side raster (row p = r * side + c).
struct ConvShape {
  std::size_t side = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t positions() const { return side * side; }
};

namespace serial {

// c[m x n] = a[m x k] * b[k x n]
template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
            std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += double(a[i * k + t]) * double(b[t * n + j]);
      c[i * n + j] = T(acc);
    }
  }
}

// c[m x n] = a[m x k] * b[n x k]^T
template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += double(a[i * k + t]) * double(b[j * k + t]);
      c[i * n + j] = T(acc);
    }
  }
}

// c[m x n] = a[k x m]^T * b[k x n]
template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += double(a[t * m + i]) * double(b[t * n + j]);
      c[i * n + j] = T(acc);
    }
  }
}

// out[p][o] = bias[o] + sum_{i,dr,dc} w[o][i][dr][dc] * in[p + (dr-1, dc-1)][i]
template <typename T>
void conv3x3(std::span<const T> in, std::span<const T> w, std::span<const T> bias, std::span<T> out,
             const ConvShape& s) {
  const auto side = static_cast<long>(s.side);
  for (long r = 0; r < side; ++r) {
    for (long c = 0; c < side; ++c) {
      const std::size_t p = std::size_t(r * side + c);
      for (std::size_t o = 0; o < s.out_channels; ++o) {
        double acc = double(bias[o]);
        for (std::size_t i = 0; i < s.in_channels; ++i) {
          for (long dr = 0; dr < 3; ++dr) {
            const long rr = r + dr - 1;
            if (rr < 0 || rr >= side) continue;
            for (long dc = 0; dc < 3; ++dc) {
              const long cc = c + dc - 1;
              if (cc < 0 || cc >= side) continue;
              const std::size_t q = std::size_t(rr * side + cc);
              acc += double(w[((o * s.in_channels + i) * 3 + std::size_t(dr)) * 3 + std::size_t(dc)]) *
                     double(in[q * s.in_channels + i]);
            }
          }
        }
        out[p * s.out_channels + o] = T(acc);
      }
    }
  }
}

// Gradient of conv3x3 with respect to its input, given d(out).
template <typename T>
void conv3x3_grad_input(std::span<const T> grad_out, std::span<const T> w, std::span<T> grad_in,
                        const ConvShape& s) {
  const auto side = static_cast<long>(s.side);
  for (long r = 0; r < side; ++r) {
    for (long c = 0; c < side; ++c) {
      const std::size_t q = std::size_t(r * side + c);
      for (std::size_t i = 0; i < s.in_channels; ++i) {
        double acc = 0.0;
        // in[q] feeds out[p] with p = q - (dr-1, dc-1)
        for (long dr = 0; dr < 3; ++dr) {
          const long pr = r - dr + 1;
          if (pr < 0 || pr >= side) continue;
          for (long dc = 0; dc < 3; ++dc) {
            const long pc = c - dc + 1;
            if (pc < 0 || pc >= side) continue;
            const std::size_t p = std::size_t(pr * side + pc);
            for (std::size_t o = 0; o < s.out_channels; ++o) {
              acc += double(w[((o * s.in_channels + i) * 3 + std::size_t(dr)) * 3 + std::size_t(dc)]) *
                     double(grad_out[p * s.out_channels + o]);
            }
          }
        }
        grad_in[q * s.in_channels + i] = T(acc);
      }
    }
  }
}

// Gradient of conv3x3 with respect to weights and bias, given d(out).
template <typename T>
void conv3x3_grad_params(std::span<const T> in, std::span<const T> grad_out, std::span<T> grad_w,
                         std::span<T> grad_b, const ConvShape& s) {
  const auto side = static_cast<long>(s.side);
  for (std::size_t o = 0; o < s.out_channels; ++o) {
    double bacc = 0.0;
    for (std::size_t p = 0; p < s.positions(); ++p) bacc += double(grad_out[p * s.out_channels + o]);
    grad_b[o] = T(bacc);
    for (std::size_t i = 0; i < s.in_channels; ++i) {
      for (long dr = 0; dr < 3; ++dr) {
        for (long dc = 0; dc < 3; ++dc) {
          double acc = 0.0;
          for (long r = 0; r < side; ++r) {
            const long rr = r + dr - 1;
            if (rr < 0 || rr >= side) continue;
            for (long c = 0; c < side; ++c) {
              const long cc = c + dc - 1;
              if (cc < 0 || cc >= side) continue;
              acc += double(grad_out[std::size_t(r * side + c) * s.out_channels + o]) *
                     double(in[std::size_t(rr * side + cc) * s.in_channels + i]);
            }
          }
          grad_w[((o * s.in_channels + i) * 3 + std::size_t(dr)) * 3 + std::size_t(dc)] = T(acc);
        }
      }
    }
  }
}

}  // namespace serial

// Parallel kernels. Same contracts as the serial twins above.

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
            std::size_t k, std::size_t n) {
  const bool par = m * k * n >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (long i = 0; i < long(m); ++i) {
    std::vector<double> acc(n, 0.0);
    const T* arow = a.data() + std::size_t(i) * k;
    // i-t-j order; per output the sum still runs over t ascending.
    for (std::size_t t = 0; t < k; ++t) {
      const double av = double(arow[t]);
      const T* brow = b.data() + t * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * double(brow[j]);
    }
    T* crow = c.data() + std::size_t(i) * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = T(acc[j]);
  }
}

template <typename T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n) {
  const bool par = m * k * n >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (long i = 0; i < long(m); ++i) {
    const T* arow = a.data() + std::size_t(i) * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b.data() + j * k;
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += double(arow[t]) * double(brow[t]);
      c[std::size_t(i) * n + j] = T(acc);
    }
  }
}

template <typename T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n) {
  const bool par = m * k * n >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (long i = 0; i < long(m); ++i) {
    std::vector<double> acc(n, 0.0);
    for (std::size_t t = 0; t < k; ++t) {
      const double av = double(a[t * m + std::size_t(i)]);
      const T* brow = b.data() + t * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * double(brow[j]);
    }
    for (std::size_t j = 0; j < n; ++j) c[std::size_t(i) * n + j] = T(acc[j]);
  }
}

template <typename T>
void conv3x3(std::span<const T> in, std::span<const T> w, std::span<const T> bias, std::span<T> out,
             const ConvShape& s) {
  const auto side = static_cast<long>(s.side);
  const bool par = s.positions() * s.out_channels * s.in_channels * 9 >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (long p = 0; p < side * side; ++p) {
    const long r = p / side, c = p % side;
    for (std::size_t o = 0; o < s.out_channels; ++o) {
      double acc = double(bias[o]);
      for (std::size_t i = 0; i < s.in_channels; ++i) {
        const T* wk = w.data() + (o * s.in_channels + i) * 9;
        for (long dr = 0; dr < 3; ++dr) {
          const long rr = r + dr - 1;
          if (rr < 0 || rr >= side) continue;
          for (long dc = 0; dc < 3; ++dc) {
            const long cc = c + dc - 1;
            if (cc < 0 || cc >= side) continue;
            acc += double(wk[dr * 3 + dc]) * double(in[std::size_t(rr * side + cc) * s.in_channels + i]);
          }
        }
      }
      out[std::size_t(p) * s.out_channels + o] = T(acc);
    }
  }
}

template <typename T>
void conv3x3_grad_input(std::span<const T> grad_out, std::span<const T> w, std::span<T> grad_in,
                        const ConvShape& s) {
  const auto side = static_cast<long>(s.side);
  const bool par = s.positions() * s.out_channels * s.in_channels * 9 >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (long q = 0; q < side * side; ++q) {
    const long r = q / side, c = q % side;
    for (std::size_t i = 0; i < s.in_channels; ++i) {
      double acc = 0.0;
      for (long dr = 0; dr < 3; ++dr) {
        const long pr = r - dr + 1;
        if (pr < 0 || pr >= side) continue;
        for (long dc = 0; dc < 3; ++dc) {
          const long pc = c - dc + 1;
          if (pc < 0 || pc >= side) continue;
          const T* g = grad_out.data() + std::size_t(pr * side + pc) * s.out_channels;
          for (std::size_t o = 0; o < s.out_channels; ++o) {
            acc += double(w[(o * s.in_channels + i) * 9 + std::size_t(dr * 3 + dc)]) * double(g[o]);
          }
        }
      }
      grad_in[std::size_t(q) * s.in_channels + i] = T(acc);
    }
  }
}

template <typename T>
void conv3x3_grad_params(std::span<const T> in, std::span<const T> grad_out, std::span<T> grad_w,
                         std::span<T> grad_b, const ConvShape& s) {
  const auto side = static_cast<long>(s.side);
  const bool par = s.positions() * s.out_channels * s.in_channels * 9 >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (long oi = 0; oi < long(s.out_channels * s.in_channels); ++oi) {
    const std::size_t o = std::size_t(oi) / s.in_channels;
    const std::size_t i = std::size_t(oi) % s.in_channels;
    if (i == 0) {
      double bacc = 0.0;
      for (std::size_t p = 0; p < s.positions(); ++p) bacc += double(grad_out[p * s.out_channels + o]);
      grad_b[o] = T(bacc);
    }
    for (long dr = 0; dr < 3; ++dr) {
      for (long dc = 0; dc < 3; ++dc) {
        double acc = 0.0;
        for (long r = 0; r < side; ++r) {
          const long rr = r + dr - 1;
          if (rr < 0 || rr >= side) continue;
          for (long c = 0; c < side; ++c) {
            const long cc = c + dc - 1;
            if (cc < 0 || cc >= side) continue;
            acc += double(grad_out[std::size_t(r * side + c) * s.out_channels + o]) *
                   double(in[std::size_t(rr * side + cc) * s.in_channels + i]);
          }
        }
        grad_w[(o * s.in_channels + i) * 9 + std::size_t(dr * 3 + dc)] = T(acc);
      }
    }
  }
}

}  // namespace trt::kernels
