#pragma once

#include <Eigen/Dense>

namespace slimlm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// Pools keep each sub-vector contiguous in memory.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace slimlm
