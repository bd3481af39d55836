#include "timefilter/ndgrad/array.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace timefilter::ndgrad {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("array: zero extent in shape " + shape_string(shape));
  }
}

}  // namespace

Array::Array(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  values_.assign(shape_size(shape_), fill);
}

Array::Array(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_extents(shape_);
  if (values_.size() != shape_size(shape_)) {
    throw ShapeError("array: " + std::to_string(values_.size()) + " values for shape " +
                     shape_string(shape_));
  }
}

Array Array::from(std::initializer_list<double> values) {
  return Array(Shape{values.size()}, std::vector<double>(values));
}

std::size_t Array::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError("array.at: index rank " + std::to_string(index.size()) +
                     " for shape " + shape_string(shape_));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw std::out_of_range("array.at: index out of range");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& Array::at(std::initializer_list<std::size_t> index) { return values_[offset(index)]; }
double Array::at(std::initializer_list<std::size_t> index) const { return values_[offset(index)]; }

double Array::item() const {
  if (!is_scalar()) throw ShapeError("array.item: shape " + shape_string(shape_) + " is not scalar");
  return values_[0];
}

Array Array::reshaped(Shape shape) const {
  if (shape_size(shape) != values_.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(shape_) + " as " + shape_string(shape));
  }
  return Array(std::move(shape), values_);
}

void Array::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

bool Array::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

bool Array::bitwise_equal(const Array& other) const {
  return shape_ == other.shape_ &&
         std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(double)) == 0;
}

double max_abs_difference(const Array& a, const Array& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_difference: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace timefilter::ndgrad
