#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecgadv {

/// Thrown when tensor extents do not line up with what an operation expects.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// Rank 1 is [length], rank 2 is [batch, features] or [length, channels],
/// rank 3 is [batch, length, channels]. Channels are the fastest-varying axis.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t b, std::size_t l, std::size_t c) {
    return data_[(b * shape_[1] + l) * shape_[2] + c];
  }
  double at(std::size_t b, std::size_t l, std::size_t c) const {
    return data_[(b * shape_[1] + l) * shape_[2] + c];
  }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  bool has_grad() const { return !grad_.empty(); }
  /// Allocates (or clears) the gradient buffer.
  void zero_grad();
  void drop_grad() { grad_.clear(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }

  /// Same data, new extents; the element count must be preserved.
  Tensor reshaped(Shape shape) const;
  void reshape(Shape shape);

  bool all_finite() const;
  void fill(double v);

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

std::size_t element_count(const Shape& shape);

/// Throws ShapeError naming `what` unless `t` has the expected rank.
void require_rank(const Tensor& t, std::size_t rank, const char* what);

/// Named handle on a learnable (or stateful) tensor owned by a layer.
struct ParamRef {
  std::string name;
  Tensor* tensor = nullptr;
};

}  // namespace ecgadv
