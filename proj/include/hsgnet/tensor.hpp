#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hsg {

using Shape = std::vector<std::size_t>;

/// Raised for malformed shapes, invalid arguments and violated preconditions.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& shape);
std::size_t numel(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Every extent is >= 1 and the flat buffer always holds exactly
/// product(shape) values. Tensors produced by operations are never mutated
/// afterwards; the mutable accessors exist for construction and for the
/// optimizer, which owns its parameter buffers.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor ones_like(const Tensor& t) { return Tensor(t.shape(), 1.0); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape(), 0.0); }
  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }
  /// 1-d tensor from a list of values.
  static Tensor vector(std::initializer_list<double> values);
  /// 2-d tensor from nested rows; all rows must have equal length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const double> data() const { return data_; }
  std::span<double> mutable_data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  const double& operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at(std::initializer_list<std::size_t> index) const;
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  /// Same data, new shape of equal element count.
  Tensor reshaped(Shape shape) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  /// Bitwise equality of shape and every element.
  bool bit_equal(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace hsg
