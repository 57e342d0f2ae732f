#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jmstate/domain.hpp"
#include "jmstate/model.hpp"
#include "jmstate/optimize.hpp"

namespace jmstate {

struct SubjectWorkspace;

/// Cross-products of one subject's longitudinal design.
struct LmmSubject {
  int n = 0;
  Eigen::MatrixXd XtX, XtZ, ZtZ;
  Eigen::VectorXd Xty, Zty;
  double yty = 0.0;
};

std::vector<LmmSubject> lmm_subjects(const JointDataset& data, const ModelSpec& spec);
std::vector<LmmSubject> lmm_subjects(const std::vector<SubjectWorkspace>& workspaces);

/// Closed-form Gaussian marginal log-likelihood
/// sum_i log N(Y_i; X_i beta, Z_i D Z_i' + sigma^2 I).
double lmm_marginal_loglik(const Eigen::VectorXd& beta, double log_sigma, const Eigen::VectorXd& d_cholesky,
                           const std::vector<LmmSubject>& subjects);
double lmm_marginal_loglik(const Eigen::VectorXd& beta, double log_sigma, const Eigen::VectorXd& d_cholesky,
                           const JointDataset& data, const ModelSpec& spec);

/// Marginal log-likelihood and its gradient in (beta, log sigma, Cholesky
/// parameters), in that order.
double lmm_marginal_score(const Eigen::VectorXd& beta, double log_sigma, const Eigen::VectorXd& d_cholesky,
                          const std::vector<LmmSubject>& subjects, Eigen::VectorXd& gradient);
/// Generalised least squares beta given the variance parameters.
Eigen::VectorXd lmm_gls_beta(double log_sigma, const Eigen::VectorXd& d_cholesky,
                             const std::vector<LmmSubject>& subjects);

struct LmmFit {
  Eigen::VectorXd beta;
  double log_sigma = 0.0;
  Eigen::VectorXd d_cholesky;
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  bool sigma_boundary = false;
  bool d_boundary = false;
  std::string message;
};

/// Maximum likelihood fit with beta profiled out; BFGS over (log sigma,
/// Cholesky parameters) with the analytic score.
LmmFit fit_lmm(const std::vector<LmmSubject>& subjects, int q, const BfgsOptions& options = {});
LmmFit fit_lmm(const JointDataset& data, const ModelSpec& spec, const BfgsOptions& options = {});

}  // namespace jmstate
