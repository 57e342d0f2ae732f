#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "jmstate/domain.hpp"
#include "jmstate/likelihood.hpp"
#include "jmstate/msprep.hpp"
#include "jmstate/step_function.hpp"

namespace jmstate {

/// Risk sets and transition counts at the distinct observed transition times.
struct CountingProcessPanel {
  int n_states = 0;
  std::vector<double> times;
  std::vector<Eigen::MatrixXd> dN;  // counts of h -> k at each time
  std::vector<Eigen::VectorXd> Y;   // number in h just before each time

  /// Number at risk in h just before t (any t, not only event times).
  int at_risk(int state, double t) const;

  std::vector<std::vector<double>> entries_, exits_;  // sorted per state
};

CountingProcessPanel counting_panel(const std::vector<TransitionRow>& rows, const TransitionTopology& topology);

/// Cumulative transition intensities: off-diagonal dN/Y, diagonal minus the
/// row sum.
StepFunctionMatrix nelson_aalen(const CountingProcessPanel& panel);

/// Product integral of (I + dLambda) over (s, t].
Eigen::MatrixXd aalen_johansen(const StepFunctionMatrix& steps, double s, double t);

/// Covariance of the increments at one event time, indexed by the
/// column-major vec of an M x M matrix.
Eigen::MatrixXd increment_covariance(const CountingProcessPanel& panel, std::size_t l);

/// Greenwood-type covariance of vec(P(s, t)) (column-major vec).
Eigen::MatrixXd greenwood_cov(const CountingProcessPanel& panel, const StepFunctionMatrix& steps, double s,
                              double t);

/// Variance of P_hk within the vec covariance.
inline double vec_variance(const Eigen::MatrixXd& cov, int M, int h, int k) { return cov(h + k * M, h + k * M); }

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// 95% interval on the log scale; empty when p = 0.
std::optional<Interval> aj_confidence_interval(double p, double variance);

/// Aalen-Johansen estimates and Greenwood covariances at each time of
/// `grid` (non-decreasing, >= s) from a single pass over the event times.
struct AalenJohansenPath {
  std::vector<double> times;
  std::vector<Eigen::MatrixXd> P;
  std::vector<Eigen::MatrixXd> cov;
};
AalenJohansenPath aalen_johansen_path(const CountingProcessPanel& panel, double s, const std::vector<double>& grid);

/// Parametric transition probabilities of one subject on the uniform grid
/// s + j (t - s) / n, j = 1..n. Each step multiplies by exp(Q h) with the
/// intensities of the step midpoint.
struct ProbabilityPath {
  double start = 0.0;
  std::vector<double> times;
  std::vector<Eigen::MatrixXd> P;

  /// Linear interpolation between grid points, identity at `start`, the
  /// last matrix beyond the grid.
  Eigen::MatrixXd at(double t) const;
};

ProbabilityPath parametric_path(const IntensityEvaluator& model, const std::vector<double>& covariates,
                                const Eigen::VectorXd& b, double s, double t, int grid_size = 1000);

Eigen::MatrixXd parametric_transprob_individual(const IntensityEvaluator& model,
                                                const std::vector<double>& covariates, const Eigen::VectorXd& b,
                                                double s, double t, int grid_size = 1000);

enum class RandomEffectSource { mode, zero };

struct SubjectProfile {
  std::vector<double> covariates;
  Eigen::VectorXd b;
};

/// Mean of the individual paths (OpenMP over subjects).
ProbabilityPath parametric_transprob_average(const IntensityEvaluator& model,
                                             const std::vector<SubjectProfile>& subjects, double s, double t,
                                             int grid_size = 1000);
/// Plain loop reference of parametric_transprob_average.
ProbabilityPath parametric_transprob_average_serial(const IntensityEvaluator& model,
                                                    const std::vector<SubjectProfile>& subjects, double s,
                                                    double t, int grid_size = 1000);

}  // namespace jmstate
