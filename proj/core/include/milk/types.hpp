#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace milk {

using UserId = std::uint32_t;
using ItemId = std::uint32_t;

// Row-major so that per-item feature rows and per-user embedding rows are
// contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

}  // namespace milk
