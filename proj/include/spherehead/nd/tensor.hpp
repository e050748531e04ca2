#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spherehead/errors.hpp"

namespace spherehead::nd {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// A rank-0 tensor (empty shape) holds exactly one element. There are no
/// views or strides: every tensor owns its contiguous storage.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : shape_(std::move(shape)), data_(std::move(data)), requires_grad_(requires_grad) {
    if (element_count(shape_) != data_.size()) {
      throw DimensionError("tensor shape " + to_string(shape_) + " needs " +
                           std::to_string(element_count(shape_)) + " elements, got " +
                           std::to_string(data_.size()));
    }
  }

  static Tensor scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

  static Tensor vector(std::vector<double> values) {
    Shape shape{values.size()};
    return Tensor(std::move(shape), std::move(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }

  /// Extent of axis 0 of a matrix.
  std::size_t rows() const {
    require_matrix();
    return shape_[0];
  }
  std::size_t cols() const {
    require_matrix();
    return shape_[1];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<const double> row(std::size_t r) const {
    require_matrix();
    return std::span<const double>(data_).subspan(r * shape_[1], shape_[1]);
  }
  std::span<double> row(std::size_t r) {
    require_matrix();
    return std::span<double>(data_).subspan(r * shape_[1], shape_[1]);
  }

  double item() const {
    if (data_.size() != 1) {
      throw DimensionError("item() on tensor of shape " + to_string(shape_));
    }
    return data_[0];
  }

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

  bool has_grad() const noexcept { return grad_.has_value(); }
  const std::optional<std::vector<double>>& grad() const noexcept { return grad_; }

  /// Adds `g` into the gradient buffer, allocating it zeroed on first use.
  void accumulate_grad(std::span<const double> g) {
    if (g.size() != data_.size()) {
      throw DimensionError("gradient of size " + std::to_string(g.size()) +
                           " for tensor of shape " + to_string(shape_));
    }
    if (!grad_) grad_.emplace(data_.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) (*grad_)[i] += g[i];
  }

  void clear_grad() noexcept { grad_.reset(); }

  bool all_finite() const noexcept {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void require_matrix() const {
    if (shape_.size() != 2) throw DimensionError("expected a matrix, got " + to_string(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::optional<std::vector<double>> grad_;
};

}  // namespace spherehead::nd
