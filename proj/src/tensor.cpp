#include "dcav/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dcav {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, Real fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor: shape " + shape_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
}

template <typename Real>
Tensor<Real> Tensor<Real>::matrix(std::size_t rows, std::size_t cols,
                                  std::initializer_list<Real> values) {
  return Tensor({rows, cols}, std::vector<Real>(values));
}

template <typename Real>
Tensor<Real> Tensor<Real>::row(std::initializer_list<Real> values) {
  return Tensor({1, values.size()}, std::vector<Real>(values));
}

template <typename Real>
Tensor<Real> Tensor<Real>::row(std::span<const Real> values) {
  return Tensor({1, values.size()}, std::vector<Real>(values.begin(), values.end()));
}

template <typename Real>
std::size_t Tensor<Real>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " +
                     shape_string(shape_));
  }
  return shape_[axis];
}

template <typename Real>
std::size_t Tensor<Real>::rows() const {
  if (shape_.size() != 2) throw ShapeError("tensor: rows() on " + shape_string(shape_));
  return shape_[0];
}

template <typename Real>
std::size_t Tensor<Real>::cols() const {
  if (shape_.size() != 2) throw ShapeError("tensor: cols() on " + shape_string(shape_));
  return shape_[1];
}

template <typename Real>
void Tensor<Real>::fill(Real v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename Real>
bool Tensor<Real>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
}

template <typename Real>
Tensor<Real> Tensor<Real>::row_at(std::size_t r) const {
  const std::size_t c = cols();
  if (r >= rows()) throw ShapeError("tensor: row index out of range");
  return Tensor({1, c}, std::vector<Real>(data_.begin() + r * c, data_.begin() + (r + 1) * c));
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace dcav
