#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pimms {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Raised whenever a NaN or Inf reaches an operation boundary.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// Images are stored as [H, W] or [H, W, C] (channels innermost); convolution
/// kernels as [kh, kw, Cin, Cout].
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor from(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // [H, W, C] accessors; rank-2 tensors are treated as C == 1.
  double& at(std::size_t y, std::size_t x, std::size_t c = 0);
  double at(std::size_t y, std::size_t x, std::size_t c = 0) const;

  double item() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on);
  bool has_grad() const { return !grad_.empty(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }
  /// Allocates (zeroed) if absent.
  std::span<double> ensure_grad();
  void zero_grad();
  void clear_grad() { grad_.clear(); }

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;
  bool all_zero() const;
  /// Throws NonFiniteError naming `what` when any element is NaN/Inf.
  void check_finite(std::string_view what) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
  bool requires_grad_ = false;
};

/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace pimms
