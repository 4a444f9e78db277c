#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ctrl {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer of the
/// same length. Every dimension is strictly positive.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  const double& operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  const double& at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }
  double& at(std::size_t a, std::size_t b, std::size_t c) noexcept {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }
  const double& at(std::size_t a, std::size_t b, std::size_t c) const noexcept {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }

  /// Reinterprets the data under a new shape with the same element count.
  void reshape(Shape shape);

  bool has_grad() const noexcept { return !grad_.empty(); }
  /// Allocates a zero gradient buffer if none exists and returns it.
  std::span<double> ensure_grad();
  std::span<double> grad() noexcept { return grad_; }
  std::span<const double> grad() const noexcept { return grad_; }
  void zero_grad();
  void drop_grad() noexcept { grad_.clear(); }

  /// True iff every value (and gradient, when present) is finite.
  bool all_finite() const noexcept;

  /// Value equality on shape and data; gradients are ignored.
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

/// Throws ShapeError unless `t` has the expected rank.
void require_rank(const Tensor& t, std::size_t rank, const char* what);

}  // namespace ctrl
