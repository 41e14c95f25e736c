#pragma once

#include <Eigen/Dense>

namespace dfw {

// Batches are stored column-wise: one sample per column.
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

}  // namespace dfw
