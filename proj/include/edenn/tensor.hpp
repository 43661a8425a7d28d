#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace edenn {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes are incompatible.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major tensor. The last axis is the fastest varying one, so a
/// 4-D event volume laid out as (W, H, C, T) stores the time bins of one
/// (x, y, c) cell contiguously, and a 3-D slice (W, H, C) stores the channels
/// of one pixel contiguously.
template <typename T = double>
class Tensor {
 public:
  using value_type = T;

  Tensor() : shape_{1}, data_(1, T{}) {}

  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + edenn::to_string(shape_));
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  T& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data, new shape with the same element count.
  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  void check_shape() const {
    if (shape_.empty()) throw ShapeError("tensor shape must have at least one axis");
    for (auto d : shape_) {
      if (d == 0) throw ShapeError("tensor shape " + edenn::to_string(shape_) + " has a zero extent");
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  T m{};
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<T>(std::abs(a[i] - b[i])));
  return m;
}

/// Extracts time bin `t` of a (W, H, C, T) volume as a (W, H, C) slice.
template <typename T>
Tensor<T> time_slice(const Tensor<T>& volume, std::size_t t) {
  if (volume.rank() != 4) throw ShapeError("time_slice expects a 4-D volume, got " + to_string(volume.shape()));
  const auto W = volume.dim(0), H = volume.dim(1), C = volume.dim(2), TT = volume.dim(3);
  if (t >= TT) throw std::out_of_range("time_slice: bin " + std::to_string(t) + " out of range");
  Tensor<T> out({W, H, C});
  for (std::size_t i = 0, n = W * H * C; i < n; ++i) out[i] = volume[i * TT + t];
  return out;
}

/// Extracts time bin `t` of a (W, H, T) mask volume as a (W, H) slice.
template <typename T>
Tensor<T> mask_slice(const Tensor<T>& masks, std::size_t t) {
  if (masks.rank() != 3) throw ShapeError("mask_slice expects (W,H,T), got " + to_string(masks.shape()));
  const auto W = masks.dim(0), H = masks.dim(1), TT = masks.dim(2);
  if (t >= TT) throw std::out_of_range("mask_slice: bin " + std::to_string(t) + " out of range");
  Tensor<T> out({W, H});
  for (std::size_t i = 0, n = W * H; i < n; ++i) out[i] = masks[i * TT + t];
  return out;
}

/// Stacks equally shaped slices along a new trailing time axis.
template <typename T>
Tensor<T> stack_time(const std::vector<Tensor<T>>& slices) {
  if (slices.empty()) throw ShapeError("stack_time: no slices");
  Shape shape = slices.front().shape();
  const std::size_t n = slices.front().size();
  const std::size_t TT = slices.size();
  shape.push_back(TT);
  Tensor<T> out(shape);
  for (std::size_t t = 0; t < TT; ++t) {
    if (slices[t].shape() != slices.front().shape()) throw ShapeError("stack_time: ragged slices");
    for (std::size_t i = 0; i < n; ++i) out[i * TT + t] = slices[t][i];
  }
  return out;
}

}  // namespace edenn
