#include "psl/tensor.hpp"

#include <cstring>
#include <sstream>
#include <stdexcept>

namespace psl {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index extent : shape) {
    if (extent < 0) throw std::invalid_argument("negative extent in shape " + shape_string(shape));
    n *= extent;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(Vector::Constant(numel(shape_), fill)) {}

Tensor::Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel(shape_) != data_.size()) {
    throw std::invalid_argument("tensor shape " + shape_string(shape_) + " does not hold " +
                                std::to_string(data_.size()) + " elements");
  }
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values) {
  Vector v(static_cast<Index>(values.size()));
  Index i = 0;
  for (double x : values) v[i++] = x;
  return Tensor(std::move(shape), std::move(v));
}

const Vector& Tensor::grad() const {
  if (!grad_) throw std::logic_error("tensor has no gradient");
  return *grad_;
}

Vector& Tensor::grad_or_zeros() {
  if (!grad_) grad_ = Vector::Zero(data_.size());
  return *grad_;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != size()) {
    throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice(Index begin, Index end) const {
  if (shape_.empty() || begin < 0 || end > shape_[0] || begin > end) {
    throw std::out_of_range("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                            shape_string(shape_));
  }
  const Index row = shape_[0] == 0 ? 0 : size() / shape_[0];
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(std::move(s), data_.segment(begin * row, (end - begin) * row));
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  return shape_ == other.shape_ &&
         std::memcmp(data_.data(), other.data_.data(), sizeof(double) * static_cast<std::size_t>(size())) == 0;
}

Tensor sign(const Tensor& t) {
  Tensor out(t.shape());
  for (Index i = 0; i < t.size(); ++i) out[i] = static_cast<double>((t[i] > 0.0) - (t[i] < 0.0));
  return out;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
  Shape s{static_cast<Index>(rows.size())};
  s.insert(s.end(), rows[0].shape().begin(), rows[0].shape().end());
  Vector data(numel(s));
  const Index row = rows[0].size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].shape() != rows[0].shape()) throw std::invalid_argument("stack_rows: ragged shapes");
    data.segment(static_cast<Index>(i) * row, row) = rows[i].data();
  }
  return Tensor(std::move(s), std::move(data));
}

}  // namespace psl
