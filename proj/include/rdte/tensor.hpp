// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace rdte {

#ifdef RDTE_DOUBLE
using real = double;
#else
using real = float;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array. 4-D tensors are laid out N,H,W,C.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, real fill = real(0));
  Tensor(Shape shape, std::vector<real> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, real v) { return Tensor(std::move(shape), v); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const real> data() const { return data_; }
  std::span<real> data() { return data_; }
  const real* ptr() const { return data_.data(); }
  real* ptr() { return data_.data(); }

  real operator[](std::size_t i) const { return data_[i]; }
  real& operator[](std::size_t i) { return data_[i]; }

  std::size_t offset(std::span<const std::size_t> coords) const;
  std::size_t offset(std::initializer_list<std::size_t> coords) const {
    return offset(std::span<const std::size_t>(coords.begin(), coords.size()));
  }
  std::vector<std::size_t> coords(std::size_t flat) const;

  real at(std::initializer_list<std::size_t> coords) const { return data_[offset(coords)]; }
  real& at(std::initializer_list<std::size_t> coords) { return data_[offset(coords)]; }

  /// Same data, new extents of equal total size.
  Tensor reshaped(Shape shape) const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<real> data_;
};

bool bit_equal(const Tensor& a, const Tensor& b);
real max_abs_diff(const Tensor& a, const Tensor& b);
double dot(const Tensor& a, const Tensor& b);
double l2_norm(const Tensor& a);

}  // namespace rdte
