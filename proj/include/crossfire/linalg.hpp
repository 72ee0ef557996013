#pragma once

#include <Eigen/Dense>

namespace crossfire {

// Row-major so that per-node rows and per-neuron weight rows are contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

}  // namespace crossfire
