#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jmstate/domain.hpp"

namespace jmstate {

enum class TimeBasisKind {
  identity,    // t
  power_drop,  // (1+t)^alpha - 1
  power_rise,  // t^(1+nu) / (1+t)^nu
};

/// Named function of time usable inside design columns.
struct TimeBasis {
  std::string name;
  TimeBasisKind kind = TimeBasisKind::identity;
  double exponent = 0.0;  // alpha for power_drop, nu for power_rise

  double value(double t) const;
  double derivative(double t) const;
};

/// Product of subject-level covariates, optionally times one time basis.
/// An empty product is the intercept.
struct DesignColumn {
  std::string label;
  std::vector<int> covariates;  // indices into ModelSpec::covariate_names
  int basis = -1;               // index into ModelSpec::time_bases, -1 = none

  bool time_varying() const { return basis >= 0; }
};

struct Design {
  std::vector<DesignColumn> columns;
  int size() const { return static_cast<int>(columns.size()); }
};

/// Columns of a design with a non-zero time derivative. Derived from the
/// column expressions: d/dt (c * f(t)) = c * f'(t).
struct DerivativeDesign {
  std::vector<int> fixed_index;
  std::vector<int> random_index;
  bool empty() const { return fixed_index.empty() && random_index.empty(); }
};

enum class Dependence { none, level, slope, both };

const char* to_string(Dependence d);
Dependence parse_dependence(const std::string& s);
inline bool uses_level(Dependence d) { return d == Dependence::level || d == Dependence::both; }
inline bool uses_slope(Dependence d) { return d == Dependence::slope || d == Dependence::both; }

/// One coefficient gamma, shared by every transition listed.
struct TransitionEffect {
  int covariate = 0;
  std::vector<int> transitions;
};

/// Transitions sharing one B-spline log-baseline; transitions[0] is the
/// reference, the others carry a log-proportionality offset zeta.
struct BaselineGroup {
  std::vector<int> transitions;
};

struct SplineSettings {
  int degree = 3;
  int internal_knots = 3;
};

struct QuadratureSettings {
  int gh_order = 9;
  int gk_order = 15;
  int gk_panels = 1;
};

struct ModelSpec {
  TransitionTopology topology;
  std::vector<std::string> covariate_names;
  std::vector<TimeBasis> time_bases;
  Design fixed;
  Design random;
  std::vector<TransitionEffect> transition_effects;
  std::vector<Dependence> dependence;  // one per transition
  std::vector<BaselineGroup> baseline_groups;
  SplineSettings spline;
  QuadratureSettings quadrature;
  /// Full knot vector per baseline group; empty until placed from data.
  std::vector<std::vector<double>> knots;

  int p() const { return fixed.size(); }
  int q() const { return random.size(); }
  DerivativeDesign derivative_design() const;
  int group_of(int transition) const;
  bool has_knots() const { return knots.size() == baseline_groups.size() && !knots.empty(); }

  /// Adds (or reuses) a covariate name and returns its index.
  int covariate(const std::string& name);
  /// Parses "1", "X", "t", "X*t", "X:f1" into a column. Names resolve to
  /// time bases first, then covariates (added on demand).
  DesignColumn parse_column(const std::string& expression);

  /// Throws ValidationError when an invariant does not hold.
  void check() const;
};

/// The model of the simulation study: 3-state illness-death process, marker
/// with random intercept and slope, covariate X everywhere, dependence
/// through both current level and slope, one baseline per transition.
ModelSpec reference_model_spec();

/// Locations of each parameter block inside the flat vector.
class ParameterLayout {
 public:
  ParameterLayout() = default;
  explicit ParameterLayout(const ModelSpec& spec);

  int size() const { return size_; }
  int beta() const { return beta_; }
  int log_sigma() const { return log_sigma_; }
  int chol() const { return chol_; }
  int n_chol() const { return q_ * (q_ + 1) / 2; }
  int gamma() const { return gamma_; }
  int n_gamma() const { return n_gamma_; }
  int zeta() const { return zeta_; }
  int n_zeta() const { return n_zeta_; }
  int eta() const { return eta_; }
  int n_eta() const { return n_eta_; }
  int spline() const { return spline_; }
  int n_spline() const { return n_spline_; }
  int p() const { return p_; }
  int q() const { return q_; }

  /// -1 when the transition has no such term.
  int zeta_index(int transition) const { return zeta_index_.at(transition); }
  int eta_level_index(int transition) const { return eta_level_.at(transition); }
  int eta_slope_index(int transition) const { return eta_slope_.at(transition); }
  int spline_offset(int group) const { return spline_offset_.at(group); }
  int spline_size(int group) const { return spline_size_.at(group); }
  /// Packed index of the (row, col) lower-triangular Cholesky entry.
  int chol_index(int row, int col) const { return chol_ + row * (row + 1) / 2 + col; }

  const std::vector<std::string>& names() const { return names_; }
  int index_of(const std::string& name) const;

 private:
  int size_ = 0, p_ = 0, q_ = 0;
  int beta_ = 0, log_sigma_ = 0, chol_ = 0, gamma_ = 0, zeta_ = 0, eta_ = 0, spline_ = 0;
  int n_gamma_ = 0, n_zeta_ = 0, n_eta_ = 0, n_spline_ = 0;
  std::vector<int> zeta_index_, eta_level_, eta_slope_, spline_offset_, spline_size_;
  std::vector<std::string> names_;
};

/// Flat named parameter vector, the optimizer's view of theta.
struct ParameterVector {
  Eigen::VectorXd values;
  std::vector<std::string> names;
};

/// Structured parameters. The random-effects covariance is carried in its
/// unconstrained form: lower Cholesky factor entries, row-major, with the
/// diagonal on the log scale, so that D = L L^T is positive definite.
struct ModelParameters {
  Eigen::VectorXd beta;
  double log_sigma = 0.0;
  Eigen::VectorXd d_cholesky;
  Eigen::VectorXd gamma;
  Eigen::VectorXd zeta;        // one per non-reference transition, layout order
  Eigen::VectorXd eta_level;   // one per transition; ignored where unused
  Eigen::VectorXd eta_slope;
  std::vector<Eigen::VectorXd> spline;  // one per baseline group

  double sigma() const;
  Eigen::MatrixXd cholesky_factor() const;
  Eigen::MatrixXd covariance() const;
};

/// Unconstrained Cholesky parameters of a positive definite matrix.
Eigen::VectorXd cholesky_parameters(const Eigen::MatrixXd& covariance);
/// L from the unconstrained parameters.
Eigen::MatrixXd cholesky_from_parameters(const Eigen::VectorXd& params, int q);

/// Zero-initialised structured parameters of the right shapes.
ModelParameters zero_parameters(const ModelSpec& spec);

ParameterVector pack(const ModelParameters& params, const ModelSpec& spec);
ModelParameters unpack(const ParameterVector& vector, const ModelSpec& spec);
ModelParameters unpack(const Eigen::VectorXd& values, const ModelSpec& spec);

/// Parameters of the simulation study (true values of the recovery table).
ModelParameters reference_true_parameters();

}  // namespace jmstate
