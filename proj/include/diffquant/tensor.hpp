// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace diffquant {

/// Dense row-major tensor of doubles. Kept deliberately small: the project
/// works on 2-D points, per-layer activation pools and small weight
/// matrices, so there is no need for strides or broadcasting.
class Tensor {
public:
  Tensor() = default;

  /// Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  /// 1-D tensor from values.
  static Tensor of(std::initializer_list<double> values);
  static Tensor from_vector(std::vector<double> values);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }
  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  bool all_finite() const noexcept;

  /// Throws std::invalid_argument naming `what` if any value is non-finite.
  void require_finite(const char* what) const;

  bool same_shape(const Tensor& other) const noexcept {
    return shape_ == other.shape_;
  }

private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

double l2_norm(std::span<const double> v);
double l2_distance(std::span<const double> a, std::span<const double> b);

} // namespace diffquant
