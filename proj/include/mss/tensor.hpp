#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "mss/common.hpp"

namespace mss {

inline std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense rank-N array of 32-bit floats, row-major. Rank-4 tensors are
/// ordered (batch N, channels C, height H, width W).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, float fill = 0.0f)
      : shape_(std::move(shape)) {
    data_.assign(checked_size(shape_), fill);
  }

  static Tensor from_data(std::vector<int> shape, std::vector<float> data) {
    Tensor t;
    const std::size_t want = checked_size(shape);
    if (data.size() != want)
      throw shape_error("tensor data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_string(shape));
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }

  int extent(int axis) const {
    if (axis < 0 || axis >= rank())
      throw shape_error("tensor axis " + std::to_string(axis) +
                        " out of range for rank " + std::to_string(rank()));
    return shape_[static_cast<std::size_t>(axis)];
  }

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& values() { return data_; }
  const std::vector<float>& values() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  /// Rank-4 accessor (n, c, y, x); unchecked in release builds.
  float& at(int n, int c, int y, int x) {
    return data_[flat(n, c, y, x)];
  }
  float at(int n, int c, int y, int x) const {
    return data_[flat(n, c, y, x)];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  std::size_t flat(int n, int c, int y, int x) const {
    const std::size_t C = static_cast<std::size_t>(shape_[1]);
    const std::size_t H = static_cast<std::size_t>(shape_[2]);
    const std::size_t W = static_cast<std::size_t>(shape_[3]);
    return ((static_cast<std::size_t>(n) * C + static_cast<std::size_t>(c)) *
                H +
            static_cast<std::size_t>(y)) *
               W +
           static_cast<std::size_t>(x);
  }

  static std::size_t checked_size(const std::vector<int>& shape) {
    std::size_t total = 1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (shape[i] < 1)
        throw shape_error("tensor extent at axis " + std::to_string(i) +
                          " must be >= 1, got " + std::to_string(shape[i]));
      total *= static_cast<std::size_t>(shape[i]);
    }
    return total;
  }

  std::vector<int> shape_;
  std::vector<float> data_;
};

inline void require_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank)
    throw shape_error(std::string(what) + ": expected rank " +
                      std::to_string(rank) + ", got " +
                      shape_string(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* what) {
  if (!a.same_shape(b))
    throw shape_error(std::string(what) + ": shape " + shape_string(a.shape()) +
                      " does not match " + shape_string(b.shape()));
}

inline bool all_finite(const Tensor& t) {
  for (float v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace mss
