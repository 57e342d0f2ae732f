#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "helpers.hpp"
#include "jmstate/likelihood.hpp"
#include "jmstate/lmm.hpp"
#include "jmstate/optimize.hpp"
#include "jmstate/quadrature.hpp"

using namespace jmstate;
using namespace testing_support;

namespace {

ModelSpec intercept_only(bool random_intercept) {
  Json j = Json::parse(R"({"states": 2, "transitions": ["0->1"], "fixed": ["1", "t"],
                           "spline": {"degree": 1, "internal_knots": 1}, "knots": [[0, 0, 5, 10, 10]]})");
  j["random"] = random_intercept ? Json::array({"1"}) : Json::array();
  return spec_from_json(j);
}

}  // namespace

TEST_CASE("single observation without random effects") {
  const ModelSpec spec = intercept_only(false);
  const auto ev = events({{"a", 0, 0}, {"a", 5, 0}});
  const auto ds = dataset(spec.topology, ev, marker({{"a", 0, 2.5}}));
  Eigen::VectorXd beta(2);
  beta << 2.5, 0.0;
  const double ll = lmm_marginal_loglik(beta, 0.0, Eigen::VectorXd(), ds, spec);
  CHECK(std::abs(ll + 0.5 * std::log(2 * std::numbers::pi)) < 1e-14);
}

TEST_CASE("closed form equals quadrature over the random effects") {
  const SimulatedData sim = reference_data(25, 5);
  const ModelSpec spec = reference_model_spec();
  const ThetaView theta(reference_theta(), spec);
  const auto subjects = lmm_subjects(sim.dataset, spec);
  const auto rule = gauss_hermite(9);
  const ModelParameters& p = theta.params;
  for (std::size_t i = 0; i < sim.dataset.subjects.size(); ++i) {
    const SubjectWorkspace ws = build_workspace(sim.dataset.subjects[i], sim.dataset, spec);
    // adapt the rule to the exact Gaussian posterior of b
    const Eigen::MatrixXd prec = theta.Dinv + ws.ZtZ / theta.sigma2;
    const Eigen::VectorXd mode = prec.llt().solve(ws.Z.transpose() * (ws.y - ws.X * p.beta) / theta.sigma2);
    const Eigen::MatrixXd scale = Eigen::MatrixXd(prec.inverse().llt().matrixL());
    const AdaptiveGrid g = pseudo_adaptive_nodes(rule, mode, scale);
    double mx = -INFINITY;
    std::vector<double> terms(g.size());
    for (int j = 0; j < g.size(); ++j) {
      terms[j] = g.log_weights[j] + conditional_longit_logdensity(g.nodes.col(j), theta, ws) +
                 random_effects_logdensity(g.nodes.col(j), theta);
      mx = std::max(mx, terms[j]);
    }
    double s = 0.0;
    for (double t : terms) s += std::exp(t - mx);
    const double quad = mx + std::log(s);
    const double closed = lmm_marginal_loglik(p.beta, p.log_sigma, p.d_cholesky, {subjects[i]});
    CHECK(std::abs(quad - closed) < 1e-6);
  }
}

TEST_CASE("truth dominates a perturbed fixed effect") {
  const ModelSpec spec = reference_model_spec();
  const ModelParameters p = reference_true_parameters();
  int wins = 0;
  const int reps = 20;
  for (int r = 0; r < reps; ++r) {
    const auto subjects = lmm_subjects(reference_data(200, 100 + r).dataset, spec);
    Eigen::VectorXd shifted = p.beta;
    shifted.array() += 0.5;
    wins += lmm_marginal_loglik(p.beta, p.log_sigma, p.d_cholesky, subjects) >
            lmm_marginal_loglik(shifted, p.log_sigma, p.d_cholesky, subjects);
  }
  CHECK(wins >= 19);
}

TEST_CASE("maximum likelihood fit") {
  const ModelSpec spec = reference_model_spec();
  const SimulatedData sim = reference_data(1500, 21);
  const auto subjects = lmm_subjects(sim.dataset, spec);
  const LmmFit fit = fit_lmm(subjects, spec.q());
  CHECK(fit.converged);
  CHECK(std::abs(fit.beta[0] + 0.793) < 0.1);
  CHECK(fit.gradient_norm <= 1e-5);

  SUBCASE("beta solves the GLS equations") {
    const Eigen::VectorXd gls = lmm_gls_beta(fit.log_sigma, fit.d_cholesky, subjects);
    CHECK((gls - fit.beta).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("subject order does not matter") {
    auto reversed = subjects;
    std::reverse(reversed.begin(), reversed.end());
    const LmmFit other = fit_lmm(reversed, spec.q());
    CHECK((other.beta - fit.beta).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(std::abs(other.log_sigma - fit.log_sigma) < 1e-10);
    CHECK(std::abs(lmm_marginal_loglik(fit.beta, fit.log_sigma, fit.d_cholesky, reversed) - fit.loglik) <
          1e-8 * std::abs(fit.loglik));
  }
  SUBCASE("numerical gradients agree at two step sizes") {
    Eigen::VectorXd x(4 + 1 + 3);
    x << fit.beta, fit.log_sigma + 0.1, fit.d_cholesky.array() + 0.05;
    auto f = [&](const Eigen::VectorXd& v) {
      return lmm_marginal_loglik(v.head(4), v[4], v.tail(3), subjects);
    };
    for (int j = 0; j < x.size(); ++j) {
      auto diff = [&](double h) {
        Eigen::VectorXd a = x, b = x;
        a[j] += h;
        b[j] -= h;
        return (f(a) - f(b)) / (2 * h);
      };
      const double g1 = diff(1e-4), g2 = diff(5e-5);
      CHECK(std::abs(g1 - g2) <= 1e-5 * std::max(1.0, std::abs(g1)));
    }
  }
}

TEST_CASE("analytic score matches central differences") {
  const ModelSpec spec = reference_model_spec();
  const auto subjects = lmm_subjects(reference_data(80, 9).dataset, spec);
  Eigen::VectorXd x(8);
  x << -0.7, 0.5, -0.1, 0.03, -0.6, -0.4, -0.1, -1.2;
  Eigen::VectorXd g;
  lmm_marginal_score(x.head(4), x[4], x.tail(3), subjects, g);
  auto f = [&](const Eigen::VectorXd& v) { return lmm_marginal_loglik(v.head(4), v[4], v.tail(3), subjects); };
  const Eigen::VectorXd fd = central_gradient(f, x, 1e-5);
  for (int j = 0; j < 8; ++j) CHECK(std::abs(g[j] - fd[j]) < 1e-5 * std::max(1.0, std::abs(g[j])));
}

TEST_CASE("noise-free data without random variation") {
  const ModelSpec spec = intercept_only(true);
  std::vector<std::tuple<std::string, double, double>> rows;
  std::vector<std::tuple<std::string, double, int>> ev;
  for (int i = 0; i < 30; ++i) {
    const std::string id = std::to_string(i);
    ev.push_back({id, 0, 0});
    ev.push_back({id, 8, 0});
    for (int k = 0; k < 4; ++k) rows.push_back({id, 2.0 * k + 0.1 * (i % 3), 1.0 + 0.5 * (2.0 * k + 0.1 * (i % 3))});
  }
  const auto ds = dataset(spec.topology, events(ev), marker(rows));
  const LmmFit fit = fit_lmm(ds, spec);
  CHECK(std::abs(fit.beta[0] - 1.0) < 1e-6);
  CHECK(std::abs(fit.beta[1] - 0.5) < 1e-6);
  CHECK(fit.sigma_boundary);
}
