// SPDX-License-Identifier: Apache-2.0
#include "rdte/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "rdte/errors.hpp"

namespace rdte {

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor rank must be at least 1");
  for (auto e : shape)
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, real fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<real> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != shape_size(shape_))
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
}

std::size_t Tensor::offset(std::span<const std::size_t> coords) const {
  if (coords.size() != shape_.size())
    throw ShapeError("expected " + std::to_string(shape_.size()) + " coordinates, got " +
                     std::to_string(coords.size()));
  std::size_t off = 0;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (coords[i] >= shape_[i]) throw ShapeError("coordinate out of range for " + shape_str(shape_));
    off = off * shape_[i] + coords[i];
  }
  return off;
}

std::vector<std::size_t> Tensor::coords(std::size_t flat) const {
  if (flat >= data_.size()) throw ShapeError("flat index out of range");
  std::vector<std::size_t> c(shape_.size());
  for (std::size_t i = shape_.size(); i-- > 0;) {
    c[i] = flat % shape_[i];
    flat /= shape_[i];
  }
  return c;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  for (auto v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(real)) == 0;
}

real max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
  real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("dot: size mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
  return s;
}

double l2_norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

}  // namespace rdte
