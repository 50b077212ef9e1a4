#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace geoflow {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Flat vector of all trainable parameters; the coordinate chart of the loss manifold.
using ParamVector = Eigen::VectorXd;

/// Points are stored column-wise: a point set in R^D with n members is a D x n matrix.
using PointSet = Eigen::MatrixXd;

class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, Index offending_index = -1)
      : std::runtime_error(what), index_(offending_index) {}

  Index offending_index() const noexcept { return index_; }

 private:
  Index index_;
};

class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateCurvatureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an ODE state becomes non-finite; carries the last time at which the state was valid.
class BlowUpError : public NumericalError {
 public:
  BlowUpError(const std::string& what, double last_valid_time)
      : NumericalError(what), last_valid_time_(last_valid_time) {}

  double last_valid_time() const noexcept { return last_valid_time_; }

 private:
  double last_valid_time_;
};

/// Throws NumericalError naming the first non-finite entry of `v`.
void require_finite(const Eigen::Ref<const Vector>& v, const char* what);

}  // namespace geoflow
