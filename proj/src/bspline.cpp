#include "jmstate/bspline.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "jmstate/domain.hpp"

namespace jmstate {

BSplineBasis::BSplineBasis(int degree, std::vector<double> knots)
    : degree_(degree), knots_(std::move(knots)) {
  if (degree_ < 0 || degree_ + 1 > kMaxSplineOrder)
    throw ValidationError("unsupported spline degree " + std::to_string(degree_));
  if (static_cast<int>(knots_.size()) < 2 * (degree_ + 1))
    throw ValidationError("knot vector too short for degree " + std::to_string(degree_));
  if (!std::is_sorted(knots_.begin(), knots_.end()))
    throw ValidationError("knots must be non-decreasing");
  if (!(lower() < upper())) throw ValidationError("knot span is empty");
}

BSplineBasis BSplineBasis::clamped(double lower, double upper, const std::vector<double>& internal,
                                   int degree) {
  std::vector<double> kv(degree + 1, lower);
  for (double k : internal) {
    if (!(k > lower && k < upper)) throw ValidationError("internal knot outside the boundary knots");
    kv.push_back(k);
  }
  kv.insert(kv.end(), degree + 1, upper);
  return BSplineBasis(degree, std::move(kv));
}

BasisWindow BSplineBasis::window(double t) const {
  if (!(t >= lower() && t <= upper()))
    throw NumericalError("time " + std::to_string(t) + " outside the spline knot range");
  const int p = degree_;
  const int n = size();
  // span index s with knots[s] <= t < knots[s+1]; the right end uses the last span
  int s;
  if (t >= upper()) {
    s = n - 1;
    while (s > p && knots_[s] >= knots_[s + 1]) --s;
  } else {
    s = static_cast<int>(std::upper_bound(knots_.begin(), knots_.end(), t) - knots_.begin()) - 1;
    s = std::clamp(s, p, n - 1);
  }
  BasisWindow w;
  w.first = s - p;
  w.order = p + 1;
  std::array<double, kMaxSplineOrder> left{}, right{};
  auto& N = w.values;
  N[0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = t - knots_[s + 1 - j];
    right[j] = knots_[s + j] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom = right[r + 1] + left[j - r];
      const double temp = denom > 0.0 ? N[r] / denom : 0.0;
      N[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    N[j] = saved;
  }
  return w;
}

Eigen::VectorXd BSplineBasis::eval(double t) const {
  const auto w = window(t);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(size());
  for (int j = 0; j < w.order; ++j) out[w.first + j] = w.values[j];
  return out;
}

double quantile_sorted(const std::vector<double>& sorted, double prob) {
  if (sorted.empty()) throw ValidationError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace jmstate
