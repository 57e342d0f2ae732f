#include "jmstate/lmm.hpp"

#include <cmath>
#include <limits>

#include "jmstate/likelihood.hpp"

namespace jmstate {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kMinLogChol = -20.0;

// Per-subject pieces of the marginal likelihood with V = Z L L'Z' + s2 I,
// handled through A = L'Z'ZL + s2 I so that singular D is allowed.
struct Marginal {
  double log_det = 0.0;
  Eigen::MatrixXd XtViX;
  Eigen::VectorXd XtViy;
  double ytViy = 0.0;
};

Marginal marginal(const LmmSubject& s, double s2, const Eigen::MatrixXd& L) {
  const int q = static_cast<int>(L.rows());
  Marginal m;
  const Eigen::MatrixXd LtZtZL = L.transpose() * s.ZtZ * L;
  const Eigen::MatrixXd A = LtZtZL + s2 * Eigen::MatrixXd::Identity(q, q);
  const Eigen::LLT<Eigen::MatrixXd> llt(A);
  double log_det_A = 0.0;
  for (int j = 0; j < q; ++j) log_det_A += 2.0 * std::log(llt.matrixL()(j, j));
  m.log_det = (s.n - q) * std::log(s2) + log_det_A;
  const Eigen::MatrixXd LtZtX = L.transpose() * s.XtZ.transpose();
  const Eigen::VectorXd LtZty = L.transpose() * s.Zty;
  const Eigen::MatrixXd AiLtZtX = llt.solve(LtZtX);
  m.XtViX = (s.XtX - LtZtX.transpose() * AiLtZtX) / s2;
  m.XtViy = (s.Xty - AiLtZtX.transpose() * LtZty) / s2;
  m.ytViy = (s.yty - LtZty.dot(llt.solve(LtZty))) / s2;
  return m;
}

LmmSubject subject_from(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z, const Eigen::VectorXd& y) {
  LmmSubject s;
  s.n = static_cast<int>(y.size());
  s.XtX = X.transpose() * X;
  s.XtZ = X.transpose() * Z;
  s.ZtZ = Z.transpose() * Z;
  s.Xty = X.transpose() * y;
  s.Zty = Z.transpose() * y;
  s.yty = y.squaredNorm();
  return s;
}

}  // namespace

std::vector<LmmSubject> lmm_subjects(const JointDataset& data, const ModelSpec& spec) {
  std::vector<LmmSubject> out;
  out.reserve(data.subjects.size());
  std::vector<int> cov_index;
  for (const auto& name : spec.covariate_names) cov_index.push_back(data.covariate_index(name));
  for (const auto& subj : data.subjects) {
    std::vector<double> covs;
    for (int j : cov_index) covs.push_back(subj.covariates.at(j));
    const int n = static_cast<int>(subj.y.size());
    Eigen::MatrixXd X(n, spec.p()), Z(n, spec.q());
    for (int j = 0; j < n; ++j) {
      X.row(j) = design_row(spec.fixed, spec, covs, subj.times[j]).transpose();
      Z.row(j) = design_row(spec.random, spec, covs, subj.times[j]).transpose();
    }
    out.push_back(subject_from(X, Z, Eigen::Map<const Eigen::VectorXd>(subj.y.data(), n)));
  }
  return out;
}

std::vector<LmmSubject> lmm_subjects(const std::vector<SubjectWorkspace>& workspaces) {
  std::vector<LmmSubject> out;
  out.reserve(workspaces.size());
  for (const auto& ws : workspaces) out.push_back(subject_from(ws.X, ws.Z, ws.y));
  return out;
}

double lmm_marginal_loglik(const Eigen::VectorXd& beta, double log_sigma, const Eigen::VectorXd& d_cholesky,
                           const std::vector<LmmSubject>& subjects) {
  const double s2 = std::exp(2.0 * log_sigma);
  const int q = subjects.empty() ? 0 : static_cast<int>(subjects.front().ZtZ.rows());
  const Eigen::MatrixXd L = cholesky_from_parameters(d_cholesky, q);
  const int N = static_cast<int>(subjects.size());
  std::vector<double> parts(N);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < N; ++i) {
    const Marginal m = marginal(subjects[i], s2, L);
    const double quad = m.ytViy - 2.0 * beta.dot(m.XtViy) + beta.dot(m.XtViX * beta);
    parts[i] = -0.5 * (subjects[i].n * kLog2Pi + m.log_det + quad);
  }
  double total = 0.0;
  for (double v : parts) total += v;
  return total;
}

double lmm_marginal_loglik(const Eigen::VectorXd& beta, double log_sigma, const Eigen::VectorXd& d_cholesky,
                           const JointDataset& data, const ModelSpec& spec) {
  return lmm_marginal_loglik(beta, log_sigma, d_cholesky, lmm_subjects(data, spec));
}

double lmm_marginal_score(const Eigen::VectorXd& beta, double log_sigma, const Eigen::VectorXd& d_cholesky,
                          const std::vector<LmmSubject>& subjects, Eigen::VectorXd& gradient) {
  const double s2 = std::exp(2.0 * log_sigma);
  const int q = subjects.empty() ? 0 : static_cast<int>(subjects.front().ZtZ.rows());
  const int p = static_cast<int>(beta.size());
  const int nc = q * (q + 1) / 2;
  const Eigen::MatrixXd L = cholesky_from_parameters(d_cholesky, q);
  const int N = static_cast<int>(subjects.size());
  std::vector<double> parts(N);
  std::vector<Eigen::VectorXd> grads(N);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < N; ++i) {
    const LmmSubject& s = subjects[i];
    const Marginal m = marginal(s, s2, L);
    const double quad = m.ytViy - 2.0 * beta.dot(m.XtViy) + beta.dot(m.XtViX * beta);
    parts[i] = -0.5 * (s.n * kLog2Pi + m.log_det + quad);
    // V^-1 = (I - Z W Z') / s2 with W = L (L'Z'ZL + s2 I)^-1 L'
    const Eigen::MatrixXd A = L.transpose() * s.ZtZ * L + s2 * Eigen::MatrixXd::Identity(q, q);
    const Eigen::MatrixXd W = L * A.llt().solve(L.transpose());
    const Eigen::MatrixXd& B = s.ZtZ;
    const Eigen::VectorXd w = s.Zty - s.XtZ.transpose() * beta;
    const double rr = s.yty - 2.0 * beta.dot(s.Xty) + beta.dot(s.XtX * beta);
    const Eigen::VectorXd Ww = W * w;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(p + 1 + nc);
    g.head(p) = (s.Xty - s.XtX * beta - s.XtZ * Ww) / s2;
    const double tr_Vi = (s.n - (W * B).trace()) / s2;
    const double Vir2 = (rr - 2.0 * w.dot(Ww) + Ww.dot(B * Ww)) / (s2 * s2);
    g[p] = 2.0 * s2 * (-0.5 * tr_Vi + 0.5 * Vir2);
    if (q > 0) {
      const Eigen::MatrixXd ZViZ = (B - B * W * B) / s2;
      const Eigen::VectorXd ZVir = (w - B * Ww) / s2;
      const Eigen::MatrixXd G = -0.5 * ZViZ + 0.5 * ZVir * ZVir.transpose();
      const Eigen::MatrixXd GL = 2.0 * G * L;
      for (int r = 0; r < q; ++r)
        for (int c = 0; c <= r; ++c) g[p + 1 + r * (r + 1) / 2 + c] = r == c ? GL(r, c) * L(r, r) : GL(r, c);
    }
    grads[i] = std::move(g);
  }
  double total = 0.0;
  gradient = Eigen::VectorXd::Zero(p + 1 + nc);
  for (int i = 0; i < N; ++i) {
    total += parts[i];
    gradient += grads[i];
  }
  return total;
}

Eigen::VectorXd lmm_gls_beta(double log_sigma, const Eigen::VectorXd& d_cholesky,
                             const std::vector<LmmSubject>& subjects) {
  if (subjects.empty()) throw ValidationError("no subjects");
  const double s2 = std::exp(2.0 * log_sigma);
  const int q = static_cast<int>(subjects.front().ZtZ.rows());
  const int p = static_cast<int>(subjects.front().XtX.rows());
  const Eigen::MatrixXd L = cholesky_from_parameters(d_cholesky, q);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(p);
  for (const auto& s : subjects) {
    const Marginal m = marginal(s, s2, L);
    A += m.XtViX;
    c += m.XtViy;
  }
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  if (ldlt.info() != Eigen::Success) throw NumericalError("singular GLS normal equations");
  return ldlt.solve(c);
}

LmmFit fit_lmm(const std::vector<LmmSubject>& subjects, int q, const BfgsOptions& options) {
  if (subjects.empty()) throw ValidationError("no subjects");
  const int p = static_cast<int>(subjects.front().XtX.rows());
  const int nc = q * (q + 1) / 2;
  int n_total = 0;
  Eigen::MatrixXd XtX = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd Xty = Eigen::VectorXd::Zero(p);
  double yty = 0.0;
  for (const auto& s : subjects) {
    n_total += s.n;
    XtX += s.XtX;
    Xty += s.Xty;
    yty += s.yty;
  }
  if (n_total < p + nc + 1) throw ValidationError("too few observations for the mixed model");

  // Ordinary least squares start.
  const Eigen::VectorXd beta_ols = XtX.ldlt().solve(Xty);
  const double rss = std::max(yty - beta_ols.dot(Xty), 0.0);
  const double sd = std::sqrt(rss / std::max(1, n_total - p));
  // sigma is bounded below relative to the scale of the data; much smaller
  // values make the cross-product formulas lose all precision
  const double min_log_sigma = std::log(1e-5 * std::sqrt(std::max(yty / n_total, 1e-300)));
  Eigen::VectorXd x0(1 + nc);
  x0[0] = std::max(std::log(std::max(sd, 1e-300)), min_log_sigma + 1.0);
  x0.tail(nc) = cholesky_parameters(0.1 * Eigen::MatrixXd::Identity(q, q));

  auto in_domain = [&](const Eigen::VectorXd& x) {
    if (x[0] < min_log_sigma) return false;
    for (int r = 0; r < q; ++r)
      if (x[1 + r * (r + 1) / 2 + r] < kMinLogChol) return false;
    return true;
  };
  auto profile = [&](const Eigen::VectorXd& x) {
    if (!in_domain(x)) return -std::numeric_limits<double>::infinity();
    const Eigen::VectorXd ch = x.tail(nc);
    const Eigen::VectorXd beta = lmm_gls_beta(x[0], ch, subjects);
    return lmm_marginal_loglik(beta, x[0], ch, subjects);
  };
  // beta is profiled out, so the partial score at the GLS beta is the
  // gradient of the profile likelihood
  Objective objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    if (!grad) return profile(x);
    if (!in_domain(x)) return -std::numeric_limits<double>::infinity();
    const Eigen::VectorXd ch = x.tail(nc);
    const Eigen::VectorXd beta = lmm_gls_beta(x[0], ch, subjects);
    Eigen::VectorXd full;
    const double v = lmm_marginal_score(beta, x[0], ch, subjects, full);
    *grad = full.tail(1 + nc);
    return v;
  };
  const BfgsResult r = maximize_bfgs(objective, x0, options);
  LmmFit fit;
  fit.log_sigma = r.x[0];
  fit.d_cholesky = r.x.tail(nc);
  fit.beta = lmm_gls_beta(fit.log_sigma, fit.d_cholesky, subjects);
  fit.loglik = r.value;
  fit.converged = r.converged;
  fit.iterations = r.iterations;
  fit.gradient_norm = r.gradient.size() ? r.gradient.cwiseAbs().maxCoeff() : 0.0;
  fit.message = r.message;
  fit.sigma_boundary = fit.log_sigma < min_log_sigma + 2.0;
  if (q > 0) {
    const Eigen::MatrixXd L = cholesky_from_parameters(fit.d_cholesky, q);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(L * L.transpose());
    fit.d_boundary = es.eigenvalues().minCoeff() < 1e-8;
  }
  return fit;
}

LmmFit fit_lmm(const JointDataset& data, const ModelSpec& spec, const BfgsOptions& options) {
  return fit_lmm(lmm_subjects(data, spec), spec.q(), options);
}

}  // namespace jmstate
