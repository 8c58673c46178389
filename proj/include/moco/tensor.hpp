// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace moco {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major array of doubles. Value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Views into a temporary would dangle; rvalue access is deleted.
  double* ptr() & { return data_.data(); }
  const double* ptr() const& { return data_.data(); }
  std::span<double> data() & { return data_; }
  std::span<const double> data() const& { return data_; }
  std::vector<double>& storage() & { return data_; }
  const std::vector<double>& storage() const& { return data_; }
  const double* ptr() const&& = delete;
  std::span<const double> data() const&& = delete;
  const std::vector<double>& storage() const&& = delete;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Value of a single-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;
  void fill(double v);

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  /// Exact byte-level comparison of shape and contents.
  bool bitwise_equal(const Tensor& other) const;
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Throws ShapeError naming `what` when the shapes differ.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace moco
