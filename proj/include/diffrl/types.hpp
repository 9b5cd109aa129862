#pragma once

#include <Eigen/Dense>

namespace diffrl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Library version embedded in output artifacts and checkpoints.
inline constexpr const char* kVersion = "0.1.0";

}  // namespace diffrl
