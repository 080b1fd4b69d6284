#pragma once

#include <Eigen/Dense>

namespace csdp {

// Row-major storage throughout: a series is (channels x time), a DTW
// sequence is (length x features), and flat buffers reshape without copies.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Array = Eigen::ArrayXd;
using Index = Eigen::Index;

}  // namespace csdp
