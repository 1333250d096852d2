#pragma once

#include <string>

#include <Eigen/Dense>

namespace editlab {

/// Shortest representation that round-trips to the same double.
std::string format_double(double v);

/// Comma-joined shortest round-trip values.
std::string join_csv(const Eigen::VectorXd& v);

}  // namespace editlab
