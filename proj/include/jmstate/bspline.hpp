#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>

namespace jmstate {

inline constexpr int kMaxSplineOrder = 8;

/// Non-zero window of a B-spline basis at one point: values of basis
/// functions first .. first+order-1.
struct BasisWindow {
  int first = 0;
  int order = 0;
  std::array<double, kMaxSplineOrder> values{};

  double dot(const Eigen::VectorXd& coefs) const {
    double s = 0.0;
    for (int j = 0; j < order; ++j) s += values[j] * coefs[first + j];
    return s;
  }
};

/// Clamped B-spline basis of a given degree on a full knot vector
/// (boundary knots repeated degree+1 times).
class BSplineBasis {
 public:
  BSplineBasis() = default;
  BSplineBasis(int degree, std::vector<double> knots);

  /// Boundary knots repeated degree+1 times around the internal ones.
  static BSplineBasis clamped(double lower, double upper, const std::vector<double>& internal,
                              int degree = 3);

  int degree() const { return degree_; }
  int size() const { return static_cast<int>(knots_.size()) - degree_ - 1; }
  double lower() const { return knots_[degree_]; }
  double upper() const { return knots_[knots_.size() - degree_ - 1]; }
  const std::vector<double>& knots() const { return knots_; }
  bool contains(double t) const { return t >= lower() && t <= upper(); }
  double clamp(double t) const { return t < lower() ? lower() : (t > upper() ? upper() : t); }

  /// All basis values at t; throws NumericalError outside [lower, upper].
  Eigen::VectorXd eval(double t) const;
  /// Non-zero basis values at t (t must be inside the knot span).
  BasisWindow window(double t) const;

 private:
  int degree_ = 3;
  std::vector<double> knots_;
};

/// Quantiles with linear interpolation between order statistics (the usual
/// "type 7" definition). `sorted` must be ascending and non-empty.
double quantile_sorted(const std::vector<double>& sorted, double prob);

}  // namespace jmstate
