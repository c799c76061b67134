#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace progscore {

inline constexpr const char* kVersion = "0.1.0";

using Vec  = Eigen::VectorXd;
using Mat  = Eigen::MatrixXd;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;

/// Malformed input files, invariant violations, or parameters outside
/// their documented domain. A CLI run exits with code 2 on these.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure: factorization breakdown, degenerate update, or a
/// hard non-convergence. A CLI run exits with code 3 on these.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace progscore
