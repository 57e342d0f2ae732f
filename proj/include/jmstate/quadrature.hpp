#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jmstate/domain.hpp"

namespace jmstate {

enum class RuleKind { hermite, kronrod15 };

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  RuleKind kind = RuleKind::hermite;
  int size() const { return static_cast<int>(nodes.size()); }
};

/// Gauss-Hermite rule for weight exp(-x^2) (physicists' convention), by
/// eigen-decomposition of the Jacobi matrix. Nodes ascending.
QuadratureRule gauss_hermite(int n);

/// Tensor grid of a Hermite rule recentred at `mode` and rescaled by the
/// lower-triangular `scale`: b = mode + sqrt(2) * scale * x. Log-weights
/// include exp(|x|^2) 2^(q/2) det(scale), so that sum_j w_j g(b_j)
/// approximates the plain integral of g over R^q.
struct AdaptiveGrid {
  Eigen::MatrixXd nodes;        // q x G
  Eigen::VectorXd log_weights;  // G
  int size() const { return static_cast<int>(log_weights.size()); }
};

AdaptiveGrid pseudo_adaptive_nodes(const QuadratureRule& rule, const Eigen::VectorXd& mode,
                                   const Eigen::MatrixXd& scale);

/// Kronrod 15-point abscissae on [-1, 1] (non-negative half, descending) and
/// weights, with the embedded 7-point Gauss weights.
namespace kronrod15 {
inline constexpr std::array<double, 8> xgk = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> wgk = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr std::array<double, 4> wg = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};
}  // namespace kronrod15

/// The 15 Kronrod points and weights mapped to [a, b].
QuadratureRule kronrod15_rule(double a, double b);

struct KronrodResult {
  double value = 0.0;
  double error = 0.0;
};

/// One 15-point Kronrod panel on [a, b]; the error estimate is the distance
/// to the embedded 7-point Gauss value.
template <class F>
KronrodResult gauss_kronrod_15(F&& f, double a, double b) {
  if (!(a <= b)) throw NumericalError("gauss_kronrod_15 needs a <= b");
  if (a == b) return {};
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  using namespace kronrod15;
  auto eval = [&](double x) {
    const double v = f(x);
    if (!std::isfinite(v)) throw NumericalError("non-finite integrand at " + std::to_string(x));
    return v;
  };
  const double fc = eval(c);
  double kron = fc * wgk[7];
  double gauss = fc * wg[3];
  for (int j = 0; j < 7; ++j) {
    const double dx = h * xgk[j];
    const double s = eval(c - dx) + eval(c + dx);
    kron += wgk[j] * s;
    if (j % 2 == 1) gauss += wg[j / 2] * s;
  }
  return {kron * h, std::abs((kron - gauss) * h)};
}

/// Composite 15-point Kronrod sum over `panels` equal sub-intervals.
template <class F>
KronrodResult gauss_kronrod_composite(F&& f, double a, double b, int panels) {
  KronrodResult total;
  const double width = (b - a) / panels;
  for (int i = 0; i < panels; ++i) {
    const double lo = a + i * width;
    const double hi = i + 1 == panels ? b : lo + width;
    const auto r = gauss_kronrod_15(f, lo, hi);
    total.value += r.value;
    total.error += r.error;
  }
  return total;
}

}  // namespace jmstate
