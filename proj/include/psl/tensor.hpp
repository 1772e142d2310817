#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

namespace psl {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

Index numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// The element count always equals the product of the extents. When a
/// gradient is present it has exactly the same shape as the data.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, Vector data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor from(Shape shape, std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  Index dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  Index size() const { return data_.size(); }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }
  double& operator[](Index i) { return data_[i]; }
  double operator[](Index i) const { return data_[i]; }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool flag) {
    requires_grad_ = flag;
    return *this;
  }

  bool has_grad() const { return grad_.has_value(); }
  const Vector& grad() const;
  Vector& grad_or_zeros();
  void zero_grad() { grad_.reset(); }

  /// Same data viewed under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  /// Copy of rows [begin, end) along the leading axis.
  Tensor slice(Index begin, Index end) const;

  bool bitwise_equal(const Tensor& other) const;

 private:
  Shape shape_;
  Vector data_;
  bool requires_grad_ = false;
  std::optional<Vector> grad_;
};

/// Elementwise sign with sign(0) == 0.
Tensor sign(const Tensor& t);

/// Stacks equally shaped tensors along a new leading axis.
Tensor stack_rows(const std::vector<Tensor>& rows);

}  // namespace psl
