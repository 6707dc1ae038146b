#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace sma {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Raised when a caller violates an operation's preconditions (shapes,
// ranges, ordering).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when a computation produces or receives non-finite values.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

inline std::string shape_str(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace sma
