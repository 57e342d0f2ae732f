#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "jmstate/domain.hpp"
#include "jmstate/likelihood.hpp"
#include "jmstate/lmm.hpp"
#include "jmstate/model.hpp"

namespace jmstate {

/// When empirical-Bayes modes and node grids are recomputed during a fit.
/// every_step: after each EM iteration and between BFGS rounds; after_em:
/// at the start and once when EM ends; never: only at the start.
enum class ModeRefresh { every_step, after_em, never };

struct FitControl {
  int gh_order = 9;
  int em_max = 30;
  double em_tol = 1e-6;   // relative log-likelihood change
  int qn_max = 300;
  double qn_tol = 1e-5;   // max-norm of the score
  ModeRefresh mode_refresh = ModeRefresh::after_em;
  bool compute_vcov = true;
};

struct PhaseStep {
  std::string phase;  // "init", "em", "qn"
  int iteration = 0;
  double loglik = 0.0;
};

struct Convergence {
  bool converged = false;
  int em_iterations = 0;
  int qn_iterations = 0;
  double gradient_norm = 0.0;
  std::string message;
  std::vector<PhaseStep> log;
};

/// Entry of the random-effects covariance with a delta-method SE.
struct CovarianceEntry {
  std::string name;  // D[r,c], 1-based
  double estimate = 0.0;
  double se = 0.0;
};

struct FitResult {
  ModelSpec spec;  // with the knots used
  ParameterVector theta_hat;
  Eigen::MatrixXd vcov;
  double loglik = 0.0;
  Eigen::VectorXd se;
  Eigen::VectorXd p_values;
  std::vector<CovarianceEntry> random_effects;
  Convergence convergence;
  FitControl control;
  std::vector<std::string> flags;
  std::vector<std::string> subject_ids;
  Eigen::MatrixXd modes;  // q x N empirical-Bayes modes at theta_hat

  double estimate(const std::string& name) const;
  double standard_error(const std::string& name) const;
};

/// Starting values for the multi-state block (gamma, zeta, spline) with
/// eta = 0, by Newton's method on the multi-state likelihood alone.
struct MultistateInit {
  Eigen::VectorXd gamma, zeta;
  std::vector<Eigen::VectorXd> spline;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
};
MultistateInit fit_multistate_only(const JointModel& model, int max_iter = 100);

/// Multi-state log-likelihood alone with eta ignored (b plays no role).
double multistate_loglik(const JointModel& model, const ModelParameters& params);

struct EmStep {
  double loglik_before = 0.0;
  double q_gain = 0.0;
  int halvings = 0;
};

/// One ECM iteration on the fixed-node quadrature mixture: Newton step for
/// (beta, gamma, zeta, eta, spline) on the expected complete-data
/// log-likelihood, then closed-form sigma^2 and D.
Eigen::VectorXd em_iteration(const JointModel& model, const Eigen::VectorXd& theta, EmStep* info = nullptr);

/// Negative Hessian of the log-likelihood by central differences of the
/// analytic score, step max(1e-4, 1e-4 |theta_j|), symmetrised.
Eigen::MatrixXd observed_information(const JointModel& model, const Eigen::VectorXd& theta);

/// Places knots if needed, initialises, runs EM then BFGS and computes
/// standard errors.
FitResult fit(const JointDataset& data, ModelSpec spec, const FitControl& control = {});

/// Fit continuing from given parameters (no initialisation phase), on an
/// existing model whose modes are refreshed at theta0.
FitResult fit_from(JointModel& model, const Eigen::VectorXd& theta0, const FitControl& control);

struct WaldResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
};

/// (L theta - null)' (L V L')^-1 (L theta - null) against chi^2(rank L).
/// Rows of L that are identically zero are dropped.
WaldResult wald_test(const FitResult& fit, const Eigen::MatrixXd& L, const Eigen::VectorXd& null);

/// Contrast row over the packed parameters from (name, weight) terms. Names
/// are parameter names or per-transition effects "gamma[X@h->k]", which
/// resolve to the coefficient shared by that transition.
Eigen::RowVectorXd contrast_row(const ModelSpec& spec,
                                const std::vector<std::pair<std::string, double>>& terms);

/// Two-sided normal p-value of estimate / se.
double wald_p_value(double estimate, double se);

}  // namespace jmstate
