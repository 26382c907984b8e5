// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

namespace genclip {

using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

}  // namespace genclip
