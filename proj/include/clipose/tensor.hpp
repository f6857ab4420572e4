#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace clipose {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

/// Dense row-major array of doubles. Every dimension is positive and every
/// value finite; both are checked on construction.
class Tensor {
 public:
  Tensor();  // 1-element zero scalar
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor identity(std::size_t n);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  /// First dimension, and the product of the remaining ones.
  std::size_t rows() const noexcept { return shape_.front(); }
  std::size_t cols() const noexcept { return rows() == 0 ? 0 : values_.size() / rows(); }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> mutable_values() noexcept { return values_; }
  std::span<const double> row(std::size_t r) const;
  std::span<double> mutable_row(std::size_t r);

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }

  /// The single value of a one-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);

inline constexpr double kNormFloor = 1e-12;

/// row / max(||row||, 1e-12); all-zero rows stay zero.
Tensor l2_normalize_rows(const Tensor& x);

/// Mean over rows of -log softmax(row)[target].
double cross_entropy_mean(const Tensor& logits, std::span<const std::size_t> targets);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace clipose
