#pragma once

#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "csdp/error.hpp"
#include "csdp/types.hpp"

namespace csdp {

using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

/// Dense 64-bit real array with a shape. Rank 0 is a scalar (numel 1),
/// rank 2 maps onto a row-major Eigen matrix. Storage is always flat and
/// row-major, so reshapes are metadata-only.
class Tensor {
 public:
  Tensor() : shape_{} { data_.resize(1); data_.setZero(); }
  Tensor(Array data, Shape shape) : data_(std::move(data)), shape_(std::move(shape)) {
    require(data_.size() == shape_numel(shape_), "tensor data length ", data_.size(),
            " does not match shape ", shape_str(shape_));
  }

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = Array::Zero(shape_numel(t.shape_));
    return t;
  }
  static Tensor full(Shape shape, double v) {
    Tensor t = zeros(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }
  static Tensor scalar(double v) {
    Tensor t;
    t.data_(0) = v;
    return t;
  }
  static Tensor from_matrix(const Matrix& m) {
    Tensor t;
    t.shape_ = {m.rows(), m.cols()};
    t.data_ = Eigen::Map<const Array>(m.data(), m.size());
    return t;
  }
  static Tensor from_vector(const Vector& v) {
    Tensor t;
    t.shape_ = {v.size()};
    t.data_ = v.array();
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index numel() const { return data_.size(); }
  Index dim(int i) const { return shape_.at(static_cast<size_t>(i)); }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  double& operator[](Index i) { return data_(i); }
  double operator[](Index i) const { return data_(i); }

  double value() const {
    require(numel() == 1, "expected scalar tensor, got shape ", shape_str(shape_));
    return data_(0);
  }

  /// Rank-2 view. Errors on other ranks.
  Eigen::Map<const Matrix> mat() const {
    require(rank() == 2, "expected rank-2 tensor, got shape ", shape_str(shape_));
    return Eigen::Map<const Matrix>(data_.data(), shape_[0], shape_[1]);
  }
  Eigen::Map<Matrix> mat() {
    require(rank() == 2, "expected rank-2 tensor, got shape ", shape_str(shape_));
    return Eigen::Map<Matrix>(data_.data(), shape_[0], shape_[1]);
  }

  /// View the flat buffer as rows x cols (any rank, product must match).
  Eigen::Map<const Matrix> as_mat(Index rows, Index cols) const {
    require(rows * cols == numel(), "cannot view ", shape_str(shape_), " as ", rows,
            "x", cols);
    return Eigen::Map<const Matrix>(data_.data(), rows, cols);
  }
  Eigen::Map<Matrix> as_mat(Index rows, Index cols) {
    require(rows * cols == numel(), "cannot view ", shape_str(shape_), " as ", rows,
            "x", cols);
    return Eigen::Map<Matrix>(data_.data(), rows, cols);
  }

  Eigen::Map<const Vector> vec() const {
    require(rank() <= 1, "expected rank-<=1 tensor, got shape ", shape_str(shape_));
    return Eigen::Map<const Vector>(data_.data(), data_.size());
  }

  Tensor reshaped(Shape shape) const {
    require(shape_numel(shape) == numel(), "cannot reshape ", shape_str(shape_), " to ",
            shape_str(shape));
    return Tensor(data_, std::move(shape));
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const { return data_.isFinite().all(); }

 private:
  Array data_;
  Shape shape_;
};

}  // namespace csdp
