#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "jmstate/bspline.hpp"
#include "jmstate/optimize.hpp"
#include "jmstate/quadrature.hpp"
#include "jmstate/roots.hpp"
#include "jmstate/step_function.hpp"

using namespace jmstate;
using testing_support::cox_de_boor;

namespace {

const std::vector<double> kPaperKnots = {0.004, 0.004, 0.004, 0.004, 4.120, 7.455,
                                         10.908, 18.201, 18.201, 18.201, 18.201};

}  // namespace

TEST_CASE("degree-0 basis is an indicator") {
  const BSplineBasis b(0, {0, 1, 2});
  const Eigen::VectorXd v = b.eval(0.5);
  REQUIRE(v.size() == 2);
  CHECK(v[0] == 1.0);
  CHECK(v[1] == 0.0);
}

TEST_CASE("cubic basis: partition of unity, non-negativity and de Boor oracle") {
  const BSplineBasis b(3, kPaperKnots);
  CHECK(b.size() == 7);
  for (int j = 0; j <= 400; ++j) {
    const double t = 0.004 + (18.201 - 0.004) * j / 400.0;
    const Eigen::VectorXd v = b.eval(t);
    CHECK(std::abs(v.sum() - 1.0) < 1e-12);
    CHECK(v.minCoeff() >= 0.0);
    CHECK((v.array() != 0.0).count() <= 4);
    for (int i = 0; i < b.size(); ++i) CHECK(std::abs(v[i] - cox_de_boor(kPaperKnots, i, 3, t)) < 1e-12);
    const BasisWindow w = b.window(t);
    for (int i = 0; i < w.order; ++i) CHECK(std::abs(w.values[i] - v[w.first + i]) < 1e-14);
  }
  const Eigen::VectorXd at = b.eval(7.455);
  for (int i = 0; i < b.size(); ++i) CHECK(std::abs(at[i] - cox_de_boor(kPaperKnots, i, 3, 7.455)) < 1e-12);
  CHECK_THROWS_AS(b.eval(20.0), NumericalError);
  CHECK(b.clamp(20.0) == 18.201);
}

TEST_CASE("quantiles interpolate order statistics") {
  const std::vector<double> x = {1, 2, 3, 4};
  CHECK(quantile_sorted(x, 0.0) == 1.0);
  CHECK(quantile_sorted(x, 1.0) == 4.0);
  CHECK(quantile_sorted(x, 0.5) == doctest::Approx(2.5));
  CHECK(quantile_sorted(x, 1.0 / 3.0) == doctest::Approx(2.0));
}

TEST_CASE("Gauss-Hermite rules") {
  const double rpi = std::sqrt(std::numbers::pi);
  const auto r1 = gauss_hermite(1);
  CHECK(r1.nodes[0] == doctest::Approx(0.0));
  CHECK(r1.weights[0] == doctest::Approx(rpi).epsilon(1e-14));
  const auto r2 = gauss_hermite(2);
  CHECK(r2.nodes[0] == doctest::Approx(-1 / std::sqrt(2.0)).epsilon(1e-14));
  CHECK(r2.nodes[1] == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-14));
  CHECK(r2.weights[0] == doctest::Approx(rpi / 2).epsilon(1e-14));
  const auto r9 = gauss_hermite(9);
  double m4 = 0.0;
  for (int i = 0; i < 9; ++i) m4 += r9.weights[i] * std::pow(r9.nodes[i], 4);
  CHECK(std::abs(m4 - 0.75 * rpi) < 1e-10);

  for (int n : {1, 3, 5, 9, 15}) {
    const auto r = gauss_hermite(n);
    double wsum = 0.0;
    for (double w : r.weights) wsum += w;
    CHECK(std::abs(wsum - rpi) < 1e-12);
    for (int k = 0; k <= 2 * n - 1; ++k) {
      double s = 0.0, scale = 0.0;
      for (int i = 0; i < n; ++i) {
        s += r.weights[i] * std::pow(r.nodes[i], k);
        scale += r.weights[i] * std::abs(std::pow(r.nodes[i], k));
      }
      // int x^k e^{-x^2} = Gamma((k+1)/2) for even k, 0 for odd k
      const double exact = k % 2 ? 0.0 : std::tgamma((k + 1) / 2.0);
      CHECK(std::abs(s - exact) < 1e-10 * std::max(1.0, scale));
    }
  }
}

TEST_CASE("pseudo-adaptive nodes integrate normal densities") {
  const auto rule = gauss_hermite(9);
  auto integrate = [&](const Eigen::VectorXd& mode, const Eigen::MatrixXd& scale, const Eigen::VectorXd& mean,
                       const Eigen::MatrixXd& cov) {
    const AdaptiveGrid g = pseudo_adaptive_nodes(rule, mode, scale);
    const Eigen::LLT<Eigen::MatrixXd> llt(cov);
    const int q = static_cast<int>(mean.size());
    const double logdet = 2 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    double s = 0.0;
    for (int j = 0; j < g.size(); ++j) {
      const Eigen::VectorXd d = g.nodes.col(j) - mean;
      const double lp = -0.5 * q * std::log(2 * std::numbers::pi) - 0.5 * logdet - 0.5 * d.dot(llt.solve(d));
      s += std::exp(g.log_weights[j] + lp);
    }
    return s;
  };
  Eigen::VectorXd z1 = Eigen::VectorXd::Zero(1);
  Eigen::MatrixXd I1 = Eigen::MatrixXd::Identity(1, 1);
  CHECK(std::abs(integrate(z1, I1, z1, I1) - 1.0) < 1e-8);
  // a normal with mean 3 and sd 2 through the rule adapted to it
  Eigen::VectorXd m3(1);
  m3 << 3.0;
  CHECK(std::abs(integrate(m3, 2.0 * I1, m3, 4.0 * I1) - 1.0) < 1e-6);
  Eigen::MatrixXd C(2, 2);
  C << 0.35, -0.04, -0.04, 0.06;
  const Eigen::MatrixXd L = C.llt().matrixL();
  CHECK(std::abs(integrate(Eigen::VectorXd::Zero(2), L, Eigen::VectorXd::Zero(2), C) - 1.0) < 1e-6);
  CHECK(pseudo_adaptive_nodes(rule, Eigen::VectorXd::Zero(2), L).size() == 81);
  CHECK_THROWS_AS(pseudo_adaptive_nodes(rule, z1, Eigen::MatrixXd::Zero(1, 1)), NumericalError);
}

TEST_CASE("Gauss-Kronrod 15") {
  const auto sq = gauss_kronrod_15([](double x) { return x * x; }, 0.0, 1.0);
  CHECK(std::abs(sq.value - 1.0 / 3.0) < 1e-15);
  const auto zero = gauss_kronrod_15([](double x) { return x; }, 2.0, 2.0);
  CHECK(zero.value == 0.0);
  CHECK(zero.error == 0.0);
  const auto e = gauss_kronrod_15([](double x) { return std::exp(x); }, 0.0, 1.0);
  CHECK(std::abs(e.value - (std::exp(1.0) - 1.0)) < 1e-12);
  // the 15-point Kronrod extension of Gauss-7 is exact up to degree 23
  const double a = -0.7, b = 1.9;
  for (int k : {0, 7, 18, 22, 23}) {
    const auto r = gauss_kronrod_15([k](double x) { return std::pow(x, k); }, a, b);
    const double exact = (std::pow(b, k + 1) - std::pow(a, k + 1)) / (k + 1);
    CHECK(std::abs(r.value - exact) < 1e-12 * std::max(1.0, std::abs(exact)));
  }
  const auto rule = kronrod15_rule(1.0, 3.0);
  for (int i = 0; i < 15; ++i) CHECK(std::abs((rule.nodes[i] - 2.0) + (rule.nodes[14 - i] - 2.0)) < 1e-14);
  CHECK_THROWS_AS(gauss_kronrod_15([](double) { return NAN; }, 0.0, 1.0), NumericalError);
  CHECK_THROWS_AS(gauss_kronrod_15([](double x) { return x; }, 1.0, 0.0), NumericalError);
}

TEST_CASE("Brent root finding") {
  CHECK(std::abs(brent_root([](double x) { return x * x - 2; }, 1, 2).root - std::sqrt(2.0)) < 1e-7);
  CHECK(std::abs(brent_root([](double x) { return x; }, -1, 1).root) < 1e-8);
  const double u0 = 0.3;
  const auto r = brent_root([&](double T) { return 0.5 * T + std::log(u0); }, 0.0, 20.0, 1e-12);
  CHECK(std::abs(r.root - (-std::log(0.3) / 0.5)) < 1e-10);
  CHECK(std::abs(r.root - 2.4079) < 1e-4);
  CHECK_THROWS_AS(brent_root([](double x) { return x * x + 1; }, -1, 1), NumericalError);
}

TEST_CASE("product integral") {
  StepFunctionMatrix s(2);
  CHECK(product_integral(s, 0, 5).isIdentity());
  Eigen::MatrixXd d(2, 2);
  d << -0.5, 0.5, 0, 0;
  s.push_back(1.0, d);
  Eigen::MatrixXd P = product_integral(s, 0, 2);
  Eigen::MatrixXd want(2, 2);
  want << 0.5, 0.5, 0, 1;
  CHECK(P.isApprox(want, 1e-15));
  CHECK(product_integral(s, 1, 2).isIdentity());  // (s, t] excludes s

  StepFunctionMatrix three(3);
  Eigen::MatrixXd a(3, 3), b(3, 3);
  a << -0.3, 0.2, 0.1, 0, -0.4, 0.4, 0, 0, 0;
  b << -0.1, 0.05, 0.05, 0, -0.5, 0.5, 0, 0, 0;
  three.push_back(1.0, a);
  three.push_back(2.0, b);
  const Eigen::MatrixXd full = product_integral(three, 0, 3);
  CHECK((full - product_integral(three, 0, 1.5) * product_integral(three, 1.5, 3)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((full.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK(full.minCoeff() >= 0.0);

  // zero-increment refinement changes nothing
  StepFunctionMatrix refined(3);
  refined.push_back(0.5, Eigen::MatrixXd::Zero(3, 3));
  refined.push_back(1.0, a);
  refined.push_back(1.7, Eigen::MatrixXd::Zero(3, 3));
  refined.push_back(2.0, b);
  CHECK((product_integral(refined, 0, 3) - full).cwiseAbs().maxCoeff() == 0.0);

  StepFunctionMatrix bad(2);
  Eigen::MatrixXd c(2, 2);
  c << -1.5, 1.5, 0, 0;
  bad.push_back(1.0, c);
  CHECK_THROWS_AS(product_integral(bad, 0, 2), NumericalError);
  CHECK_THROWS_AS(s.push_back(0.5, d), std::exception);
}

TEST_CASE("matrix exponential") {
  Eigen::MatrixXd Q(2, 2);
  Q << -0.7, 0.7, 0, 0;
  const Eigen::MatrixXd E = matrix_exponential(Q);
  CHECK(std::abs(E(0, 0) - std::exp(-0.7)) < 1e-14);
  CHECK(std::abs(E(0, 1) - (1 - std::exp(-0.7))) < 1e-14);
  CHECK(E(1, 1) == doctest::Approx(1.0));
}

TEST_CASE("BFGS and finite-difference helpers") {
  Eigen::MatrixXd A(3, 3);
  A << 4, 1, 0.5, 1, 3, 0.2, 0.5, 0.2, 2;
  Eigen::VectorXd c(3);
  c << 1, -2, 0.5;
  auto f = [&](const Eigen::VectorXd& x) { return -0.5 * (x - c).dot(A * (x - c)); };
  const auto r = maximize_bfgs(with_numeric_gradient(f), Eigen::VectorXd::Zero(3));
  CHECK(r.converged);
  CHECK((r.x - c).cwiseAbs().maxCoeff() < 1e-5);
  const Eigen::MatrixXd H = hessian_from_values(f, Eigen::VectorXd::Zero(3));
  CHECK((-H - A).cwiseAbs().maxCoeff() < 1e-6);
  const Eigen::MatrixXd H2 = hessian_from_gradient([&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return -A * (x - c); },
                                                   Eigen::VectorXd::Ones(3), true);
  CHECK((-H2 - A).cwiseAbs().maxCoeff() < 1e-9);
  Eigen::MatrixXd N(2, 2);
  N << 1, 2, 2, 1;
  const Eigen::MatrixXd P = nearest_psd(N);
  CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(P).eigenvalues().minCoeff() >= -1e-12);
}
