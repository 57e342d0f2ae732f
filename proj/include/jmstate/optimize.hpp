#pragma once

#include <functional>
#include <string>

#include <Eigen/Dense>

namespace jmstate {

/// Objective returning f(x) and, when `grad` is non-null, its gradient.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct BfgsOptions {
  int max_iter = 200;
  double grad_tol = 1e-5;     // max-norm of the gradient
  double rel_f_tol = 1e-14;   // stall detection on relative objective change
  double max_step = 5.0;      // cap on the max-norm of a single step
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd inverse_hessian;  // of the minimised function -f
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
};

/// Maximises `f` by BFGS with a strong-Wolfe line search. `inverse_hessian0`
/// (of -f) seeds the quasi-Newton matrix when given.
BfgsResult maximize_bfgs(const Objective& f, Eigen::VectorXd x0, const BfgsOptions& options = {},
                         const Eigen::MatrixXd* inverse_hessian0 = nullptr);

/// Central-difference gradient of a scalar function.
Eigen::VectorXd central_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x, double rel_step = 1e-5);

/// Wraps a value-only function into an Objective with central differences.
Objective with_numeric_gradient(std::function<double(const Eigen::VectorXd&)> f,
                                double rel_step = 1e-5);

/// Per-coordinate finite-difference step max(floor, rel * |x_j|).
inline double fd_step(double x, double floor = 1e-4, double rel = 1e-4) {
  const double s = rel * std::abs(x);
  return s > floor ? s : floor;
}

/// Hessian by central differences of an analytic gradient, symmetrised.
/// Columns are evaluated in parallel when `parallel` is set.
Eigen::MatrixXd hessian_from_gradient(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& gradient, const Eigen::VectorXd& x,
    bool parallel = false);

/// Hessian by central second differences of a scalar function, symmetrised.
Eigen::MatrixXd hessian_from_values(const std::function<double(const Eigen::VectorXd&)>& f,
                                    const Eigen::VectorXd& x);

/// Symmetric matrix with negative eigenvalues clipped to `floor`.
Eigen::MatrixXd nearest_psd(const Eigen::MatrixXd& A, double floor = 0.0);

}  // namespace jmstate
