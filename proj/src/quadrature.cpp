#include "jmstate/quadrature.hpp"

#include <numbers>

#include <Eigen/Eigenvalues>

namespace jmstate {

QuadratureRule gauss_hermite(int n) {
  if (n < 1) throw ValidationError("Gauss-Hermite order must be >= 1");
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(0.5 * k);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(J);
  QuadratureRule rule;
  rule.kind = RuleKind::hermite;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const double mass = std::sqrt(std::numbers::pi);
  for (int i = 0; i < n; ++i) {
    const double v0 = eig.eigenvectors()(0, i);
    rule.nodes[i] = eig.eigenvalues()[i];
    rule.weights[i] = mass * v0 * v0;
  }
  // exact symmetry: average mirrored pairs
  for (int i = 0; i < n / 2; ++i) {
    const int j = n - 1 - i;
    const double x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
    const double w = 0.5 * (rule.weights[i] + rule.weights[j]);
    rule.nodes[i] = -x;
    rule.nodes[j] = x;
    rule.weights[i] = rule.weights[j] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

AdaptiveGrid pseudo_adaptive_nodes(const QuadratureRule& rule, const Eigen::VectorXd& mode,
                                   const Eigen::MatrixXd& scale) {
  const int q = static_cast<int>(mode.size());
  if (scale.rows() != q || scale.cols() != q) throw ValidationError("scale must be q x q");
  const double det = scale.diagonal().prod();
  if (!(std::abs(det) > 0.0) || !std::isfinite(det))
    throw NumericalError("singular scale for adaptive quadrature");
  const int n = rule.size();
  int total = 1;
  for (int d = 0; d < q; ++d) total *= n;
  AdaptiveGrid grid;
  grid.nodes.resize(q, total);
  grid.log_weights.resize(total);
  const double base = 0.5 * q * std::log(2.0) + std::log(std::abs(det));
  std::vector<int> digit(q, 0);
  Eigen::VectorXd x(q);
  for (int g = 0; g < total; ++g) {
    double lw = base;
    for (int d = 0; d < q; ++d) {
      x[d] = rule.nodes[digit[d]];
      lw += std::log(rule.weights[digit[d]]) + x[d] * x[d];
    }
    Eigen::VectorXd lx = scale.triangularView<Eigen::Lower>() * x;
    grid.nodes.col(g) = mode + std::numbers::sqrt2 * lx;
    grid.log_weights[g] = lw;
    for (int d = q - 1; d >= 0; --d) {
      if (++digit[d] < n) break;
      digit[d] = 0;
    }
  }
  return grid;
}

QuadratureRule kronrod15_rule(double a, double b) {
  QuadratureRule rule;
  rule.kind = RuleKind::kronrod15;
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  using namespace kronrod15;
  for (int j = 0; j < 7; ++j) {
    rule.nodes.push_back(c - h * xgk[j]);
    rule.weights.push_back(h * wgk[j]);
  }
  rule.nodes.push_back(c);
  rule.weights.push_back(h * wgk[7]);
  for (int j = 6; j >= 0; --j) {
    rule.nodes.push_back(c + h * xgk[j]);
    rule.weights.push_back(h * wgk[j]);
  }
  return rule;
}

}  // namespace jmstate
