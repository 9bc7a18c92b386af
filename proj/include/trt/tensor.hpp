#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "trt/errors.hpp"

namespace trt {

using Dims = std::vector<std::size_t>;

inline std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << 'x';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t dims_volume(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array. Storage type is a template parameter so that the
/// whole differentiable stack can be instantiated in double for gradient
/// checking; everything persisted or shipped uses `Tensor` (float).
template <std::floating_point T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Dims dims, T fill = T(0)) : dims_(std::move(dims)) {
    check_dims(dims_);
    data_.assign(dims_volume(dims_), fill);
  }

  BasicTensor(Dims dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    check_dims(dims_);
    if (data_.size() != dims_volume(dims_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match dims " + dims_to_string(dims_));
    }
  }

  static BasicTensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<T> values) {
    return BasicTensor({rows, cols}, std::vector<T>(values));
  }

  static BasicTensor vector(std::initializer_list<T> values) {
    return BasicTensor({values.size()}, std::vector<T>(values));
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t ndim() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const {
    require_matrix();
    return dims_[0];
  }
  std::size_t cols() const {
    require_matrix();
    return dims_[1];
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * dims_[1] + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * dims_[1] + c]; }

  std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * dims_[1], dims_[1]); }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * dims_[1], dims_[1]);
  }

  BasicTensor reshaped(Dims dims) const {
    if (dims_volume(dims) != data_.size()) {
      throw DimensionError("cannot reshape " + dims_to_string(dims_) + " to " +
                           dims_to_string(dims));
    }
    return BasicTensor(std::move(dims), data_);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <std::floating_point U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(dims_, std::move(out));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

  void require_matrix() const {
    if (dims_.size() != 2) {
      throw DimensionError("expected a matrix, got dims " + dims_to_string(dims_));
    }
  }

 private:
  static void check_dims(const Dims& dims) {
    if (dims.empty()) throw DimensionError("tensor needs at least one dimension");
    for (auto d : dims) {
      if (d == 0) throw DimensionError("tensor extents must be positive, got " + dims_to_string(dims));
    }
  }

  Dims dims_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

template <std::floating_point T>
void require_same_dims(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* what) {
  if (a.dims() != b.dims()) {
    throw DimensionError(std::string(what) + ": dims " + dims_to_string(a.dims()) + " vs " +
                         dims_to_string(b.dims()));
  }
}

}  // namespace trt
