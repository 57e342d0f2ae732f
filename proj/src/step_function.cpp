#include "jmstate/step_function.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "jmstate/domain.hpp"

namespace jmstate {

void StepFunctionMatrix::push_back(double time, Eigen::MatrixXd increment) {
  if (increment.rows() != dim_ || increment.cols() != dim_)
    throw ValidationError("step increment has the wrong dimension");
  if (!times_.empty() && !(time > times_.back()))
    throw ValidationError("step jump times must be strictly increasing");
  times_.push_back(time);
  increments_.push_back(std::move(increment));
}

Eigen::MatrixXd StepFunctionMatrix::cumulative(double t) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dim_, dim_);
  for (std::size_t l = 0; l < times_.size() && times_[l] <= t; ++l) out += increments_[l];
  return out;
}

Eigen::MatrixXd product_integral(const StepFunctionMatrix& steps, double s, double t) {
  if (s > t) throw ValidationError("product_integral needs s <= t");
  const int M = steps.dimension();
  Eigen::MatrixXd P = Eigen::MatrixXd::Identity(M, M);
  const auto& times = steps.jump_times();
  auto it = std::upper_bound(times.begin(), times.end(), s);
  for (auto l = static_cast<std::size_t>(it - times.begin()); l < times.size() && times[l] <= t; ++l) {
    const auto& dA = steps.increments()[l];
    for (int h = 0; h < M; ++h)
      if (dA(h, h) < -1.0 - 1e-12)
        throw NumericalError("diagonal increment below -1 at time " + std::to_string(times[l]));
    P = P * (Eigen::MatrixXd::Identity(M, M) + dA);
  }
  return P;
}

Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& A) {
  const double norm = A.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const Eigen::MatrixXd B = A / std::ldexp(1.0, squarings);
  const int n = static_cast<int>(A.rows());
  Eigen::MatrixXd result = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd term = Eigen::MatrixXd::Identity(n, n);
  for (int k = 1; k <= 14; ++k) {
    term = term * B / static_cast<double>(k);
    result += term;
    if (term.cwiseAbs().maxCoeff() < 1e-18) break;
  }
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result;
}

}  // namespace jmstate
