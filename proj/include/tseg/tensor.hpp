#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "tseg/common.hpp"

namespace tseg {

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

inline std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

// Dense n-dimensional array, row-major. Used for images, feature maps,
// parameters and gradients alike.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), T{}) {}

  Tensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_arg(static_cast<std::int64_t>(data_.size()) == shape_numel(shape_),
              cat("tensor: data length ", data_.size(),
                  " does not match shape ", shape_str(shape_)));
  }

  static Tensor full(std::vector<int> shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const {
    return data_[static_cast<std::size_t>(i)];
  }

  // NCHW accessors.
  T& at(int n, int c, int h, int w) {
    return data_[flat4(n, c, h, w)];
  }
  const T& at(int n, int c, int h, int w) const {
    return data_[flat4(n, c, h, w)];
  }
  T& at(int h, int w) {
    return data_[static_cast<std::size_t>(h) * dim(1) + w];
  }
  const T& at(int h, int w) const {
    return data_[static_cast<std::size_t>(h) * dim(1) + w];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i)
      out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  std::size_t flat4(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) +
           w;
  }

  static std::size_t checked_numel(const std::vector<int>& shape) {
    for (int d : shape)
      check_arg(d > 0, cat("tensor: non-positive dimension in shape ",
                           shape_str(shape)));
    return static_cast<std::size_t>(shape_numel(shape));
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Class-index segmentation grid, shape (H, W).
using MaskGrid = Tensor<std::uint8_t>;

}  // namespace tseg
