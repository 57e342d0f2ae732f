#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jmstate/bspline.hpp"
#include "jmstate/domain.hpp"
#include "jmstate/model.hpp"
#include "jmstate/quadrature.hpp"

namespace jmstate {

/// Parameters decoded once per evaluation.
struct ThetaView {
  ModelParameters params;
  Eigen::MatrixXd L, D, Dinv;
  double log_det_D = 0.0;
  double sigma2 = 1.0;
  Eigen::VectorXd zeta;  // per transition, 0 for references

  ThetaView() = default;
  ThetaView(const Eigen::VectorXd& theta, const ModelSpec& spec);
};

/// Log-proportionality offsets indexed by transition.
Eigen::VectorXd zeta_by_transition(const ModelParameters& params, const ModelSpec& spec);

/// Row of a design at time t for subject-level covariates `covs` (aligned
/// with spec.covariate_names), and its time derivative.
Eigen::VectorXd design_row(const Design& design, const ModelSpec& spec,
                           const std::vector<double>& covs, double t);
Eigen::VectorXd design_row_derivative(const Design& design, const ModelSpec& spec,
                                      const std::vector<double>& covs, double t);

class IntensityEvaluator;

/// Intensities of one subject with covariates and random effects fixed:
/// the marker trajectory is reduced to a constant plus one coefficient per
/// time basis, so evaluations do not allocate.
class BoundIntensity {
 public:
  BoundIntensity(const IntensityEvaluator& model, const std::vector<double>& covs, const Eigen::VectorXd& b);

  double level(double t) const;
  double slope(double t) const;
  double log_intensity(int transition, double t) const;
  double intensity(int transition, double t) const { return std::exp(log_intensity(transition, t)); }
  /// Integral over [a, t] with one Kronrod panel per piece of the cut grid
  /// (knots of the transition's group and multiples of `piece`).
  double cumulative(int transition, double a, double t) const;
  /// Cut points of the integration grid strictly inside (a, t).
  std::vector<double> cuts(int transition, double a, double t) const;

  double piece = 2.0;

 private:
  const IntensityEvaluator* model_;
  double level_const_ = 0.0;
  std::vector<std::pair<int, double>> level_terms_;  // (time basis, coefficient)
  Eigen::VectorXd fixed_lp_;                          // covariate effect + zeta per transition
};

/// Evaluates marker trajectories and transition intensities for one
/// parameter value. Times outside a group's knot span are clamped.
class IntensityEvaluator {
 public:
  IntensityEvaluator(const ModelSpec& spec, const ModelParameters& params);

  double true_level(const Eigen::VectorXd& b, double t, const std::vector<double>& covs) const;
  double true_slope(const Eigen::VectorXd& b, double t, const std::vector<double>& covs) const;
  double log_baseline(int transition, double t) const;
  /// Covariate part X^S' gamma for one transition.
  double covariate_effect(int transition, const std::vector<double>& covs) const;
  double log_intensity(int transition, double t, const Eigen::VectorXd& b,
                       const std::vector<double>& covs) const;
  double intensity(int transition, double t, const Eigen::VectorXd& b,
                   const std::vector<double>& covs) const;
  /// Integral of the intensity over [a, t]; see BoundIntensity::cumulative.
  double cumulative(int transition, double a, double t, const Eigen::VectorXd& b,
                    const std::vector<double>& covs, double max_piece = 2.0) const;

  const ModelSpec& spec() const { return *spec_; }
  const ModelParameters& params() const { return params_; }
  const BSplineBasis& basis(int group) const { return bases_.at(group); }
  double zeta(int transition) const { return zeta_[transition]; }

  BoundIntensity bind(const std::vector<double>& covs, const Eigen::VectorXd& b) const {
    return BoundIntensity(*this, covs, b);
  }

 private:
  const ModelSpec* spec_;
  ModelParameters params_;
  std::vector<BSplineBasis> bases_;
  Eigen::VectorXd zeta_;
};

double true_level(const Eigen::VectorXd& b, const ModelParameters& params, double t,
                  const std::vector<double>& covs, const ModelSpec& spec);
double true_slope(const Eigen::VectorXd& b, const ModelParameters& params, double t,
                  const std::vector<double>& covs, const ModelSpec& spec);
/// Intensity of the allowed transition h -> k; throws ValidationError otherwise.
double transition_intensity(int from, int to, double t, const Eigen::VectorXd& b,
                            const ModelParameters& params, const std::vector<double>& covs,
                            const ModelSpec& spec);

struct Sojourn {
  int from = 0;
  double t_start = 0.0;
  double t_stop = 0.0;
  int to = -1;  // -1 when censored
};

/// Intensity evaluation points of one subject: Kronrod nodes of each
/// sojourn for every transition at risk (weighted) or observed event times.
struct PointSet {
  std::vector<int> transition;
  std::vector<int> group;
  std::vector<BasisWindow> basis;
  Eigen::VectorXd weight;  // Kronrod weight times half-width; 0 for events
  Eigen::VectorXd time;
  Eigen::MatrixXd x, dx;   // p x T fixed design and its time derivative
  Eigen::MatrixXd z, dz;   // q x T random design and its time derivative

  int size() const { return static_cast<int>(transition.size()); }
};

/// Everything the likelihood needs about one subject, built once.
struct SubjectWorkspace {
  std::string id;
  std::vector<double> covariates;  // aligned with spec.covariate_names
  int n_obs = 0;
  std::vector<double> obs_times;
  Eigen::MatrixXd X, Z;
  Eigen::VectorXd y;
  Eigen::MatrixXd XtX, XtZ, ZtZ;
  Eigen::VectorXd Xty, Zty;
  double yty = 0.0;
  std::vector<Sojourn> sojourns;
  Eigen::MatrixXd transition_covariates;  // K x n_gamma
  PointSet cumulative;  // integrated intensity points
  PointSet events;      // observed transitions
  int clamped_points = 0;

  Eigen::VectorXd mode;
  Eigen::MatrixXd scale;
  bool mode_fallback = false;
};

/// Builds the workspace of one subject. spec must have knots.
SubjectWorkspace build_workspace(const SubjectData& subject, const JointDataset& data,
                                 const ModelSpec& spec);

double conditional_longit_logdensity(const Eigen::VectorXd& b, const ThetaView& theta,
                                     const SubjectWorkspace& ws);
double conditional_mstate_logdensity(const Eigen::VectorXd& b, const ThetaView& theta,
                                     const SubjectWorkspace& ws);
double random_effects_logdensity(const Eigen::VectorXd& b, const ThetaView& theta);

struct ModeResult {
  Eigen::VectorXd mode;
  Eigen::MatrixXd scale;  // Cholesky factor of the inverse negative Hessian
  double gradient_norm = 0.0;
  bool fallback = false;  // Newton did not converge; mode is the last iterate (or 0 with the prior scale)
};

/// Posterior mode of b by damped Newton on the log joint density.
ModeResult empirical_bayes_mode(const ThetaView& theta, const SubjectWorkspace& ws);

/// Posterior summaries of one subject at fixed nodes.
struct SubjectMoments {
  double loglik = 0.0;
  Eigen::VectorXd weights;   // posterior node weights pi_n
  Eigen::VectorXd mean;      // E[b]
  Eigen::MatrixXd second;    // E[b b']
  Eigen::VectorXd s0;        // per cumulative point: E[lambda]
  Eigen::MatrixXd s1;        // q x T: E[lambda b]
  std::vector<Eigen::MatrixXd> s2;  // per cumulative point: E[lambda b b'] (optional)
};

/// Log of the pseudo-adaptive Gauss-Hermite approximation of the subject's
/// marginal likelihood on the given node grid.
double subject_loglik(const ThetaView& theta, const SubjectWorkspace& ws, const AdaptiveGrid& grid);
SubjectMoments subject_moments(const ThetaView& theta, const SubjectWorkspace& ws,
                               const AdaptiveGrid& grid, bool second_order_points = false);
/// Gradient of subject_loglik in the packed parameters.
Eigen::VectorXd subject_gradient(const ThetaView& theta, const SubjectWorkspace& ws,
                                 const SubjectMoments& m, const ParameterLayout& layout,
                                 const ModelSpec& spec);

/// Joint model bound to a dataset: workspaces, adaptation state, and the
/// parallel and serial log-likelihood evaluators.
class JointModel {
 public:
  JointModel(ModelSpec spec, const JointDataset& data);

  const ModelSpec& spec() const { return spec_; }
  const ParameterLayout& layout() const { return layout_; }
  int n_subjects() const { return static_cast<int>(ws_.size()); }
  const std::vector<SubjectWorkspace>& workspaces() const { return ws_; }
  const SubjectWorkspace& workspace(int i) const { return ws_.at(i); }
  int clamped_points() const;

  int gh_order() const { return rule_.size(); }
  void set_gh_order(int n);
  /// Recomputes empirical-Bayes modes and curvatures at theta, rebuilding
  /// the node grids. Returns the number of fallback subjects.
  int update_modes(const Eigen::VectorXd& theta);
  const AdaptiveGrid& grid(int i) const { return grids_.at(i); }

  double subject_loglik(const Eigen::VectorXd& theta, int i) const;
  std::vector<double> subject_logliks(const Eigen::VectorXd& theta) const;
  /// Sum of subject contributions in subject order (OpenMP over subjects).
  double total_loglik(const Eigen::VectorXd& theta) const;
  /// Plain loop reference of total_loglik.
  double total_loglik_serial(const Eigen::VectorXd& theta) const;
  /// Log-likelihood and its analytic gradient.
  double loglik_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& gradient) const;
  double loglik_gradient_serial(const Eigen::VectorXd& theta, Eigen::VectorXd& gradient) const;
  /// Expected complete-data log-likelihood with the posterior node weights
  /// of `m` held fixed (the EM objective).
  double expected_complete_loglik(const Eigen::VectorXd& theta, const std::vector<SubjectMoments>& m) const;
  /// Posterior summaries for every subject.
  std::vector<SubjectMoments> moments(const Eigen::VectorXd& theta, bool second_order_points) const;

 private:
  ModelSpec spec_;
  ParameterLayout layout_;
  std::vector<SubjectWorkspace> ws_;
  QuadratureRule rule_;
  std::vector<AdaptiveGrid> grids_;

  void rebuild_grids();
};

/// Places boundary knots at the range of sojourn endpoints and internal knots
/// at quantiles of observed transition times pooled per baseline group.
std::vector<std::vector<double>> place_knots(const JointDataset& data, const ModelSpec& spec);

/// Sojourns of one history.
std::vector<Sojourn> sojourns_of(const SubjectHistory& h);

}  // namespace jmstate
