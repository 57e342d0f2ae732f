#pragma once

#include <vector>

#include <Eigen/Dense>

namespace jmstate {

/// Matrix-valued right-continuous step function: `increments[l]` is the jump
/// at `jump_times[l]`. For cumulative intensities each increment row sums to
/// zero (the diagonal is minus the sum of the off-diagonals).
class StepFunctionMatrix {
 public:
  StepFunctionMatrix() = default;
  explicit StepFunctionMatrix(int dimension) : dim_(dimension) {}

  int dimension() const { return dim_; }
  std::size_t size() const { return times_.size(); }
  const std::vector<double>& jump_times() const { return times_; }
  const std::vector<Eigen::MatrixXd>& increments() const { return increments_; }

  /// Appends a jump; times must be strictly increasing.
  void push_back(double time, Eigen::MatrixXd increment);

  /// Sum of the increments at jump times <= t.
  Eigen::MatrixXd cumulative(double t) const;

 private:
  int dim_ = 0;
  std::vector<double> times_;
  std::vector<Eigen::MatrixXd> increments_;
};

/// Ordered product of (I + dA) over the jumps in (s, t]. Throws
/// NumericalError when a diagonal increment is below -1.
Eigen::MatrixXd product_integral(const StepFunctionMatrix& steps, double s, double t);

/// exp(A) for a small square matrix (scaling and squaring on a Taylor series).
Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& A);

}  // namespace jmstate
