#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "jmstate/estimate.hpp"
#include "jmstate/likelihood.hpp"
#include "jmstate/lmm.hpp"
#include "jmstate/optimize.hpp"

using namespace jmstate;
using namespace testing_support;

namespace {

const double kLog2Pi = std::log(2 * std::numbers::pi);

// Survival model with a flat log-baseline c and no link to the marker.
struct FlatModel {
  ModelSpec spec = two_state_spec("none");
  Eigen::VectorXd theta;
  explicit FlatModel(double c) {
    ModelParameters p = zero_parameters(spec);
    p.spline[0].setConstant(c);
    theta = pack(p, spec).values;
  }
};

SubjectWorkspace one_subject(const ModelSpec& spec, const std::vector<std::tuple<std::string, double, int>>& ev,
                             const std::vector<std::tuple<std::string, double, double>>& y) {
  const auto ds = dataset(spec.topology, events(ev), marker(y));
  return build_workspace(ds.subjects[0], ds, spec);
}

double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const Eigen::MatrixXd L = llt.matrixL();
  const Eigen::VectorXd d = x - mean;
  return -0.5 * x.size() * kLog2Pi - L.diagonal().array().log().sum() - 0.5 * d.dot(llt.solve(d));
}

}  // namespace

TEST_CASE("true level and slope of the reference model") {
  const ModelSpec spec = reference_model_spec();
  const ModelParameters p = reference_true_parameters();
  const std::vector<double> X = {2.04};
  const Eigen::VectorXd b0 = Eigen::VectorXd::Zero(2);
  CHECK(std::abs(true_level(b0, p, 0.0, X, spec) - (-0.793 + 0.543 * 2.04)) < 1e-14);
  CHECK(std::abs(true_level(b0, p, 0.0, X, spec) - 0.3147) < 1e-4);
  ModelParameters zero = p;
  zero.beta.setZero();
  for (double t : {0.0, 1.5, 9.0}) CHECK(true_level(b0, zero, t, X, spec) == 0.0);

  Eigen::VectorXd b(2);
  b << 0.3, -0.1;
  const double slope = -0.096 + 0.027 * 2.04 - 0.1;
  for (double t : {0.5, 3.0, 12.0}) {
    CHECK(std::abs(true_slope(b, p, t, X, spec) - slope) < 1e-14);
    const double h = 1e-6;
    const double fd = (true_level(b, p, t + h, X, spec) - true_level(b, p, t - h, X, spec)) / (2 * h);
    CHECK(std::abs(fd - slope) < 1e-6 * std::abs(slope));
    Eigen::VectorXd shifted = b;
    shifted[0] += 0.7;
    CHECK(std::abs(true_level(shifted, p, t, X, spec) - true_level(b, p, t, X, spec) - 0.7) < 1e-12);
  }
  Eigen::VectorXd flat(2);
  flat << 0.0, -(-0.096 + 0.027 * 2.04);
  CHECK(std::abs(true_slope(flat, p, 4.0, X, spec)) < 1e-15);
}

TEST_CASE("transition intensity against an independent recomputation") {
  const ModelSpec spec = reference_model_spec();
  const ModelParameters p = reference_true_parameters();
  const std::vector<double> X = {2.04};
  const Eigen::VectorXd b = Eigen::VectorXd::Zero(2);
  const double t = 0.004;
  double log_base = 0.0;
  for (int i = 0; i < 7; ++i) log_base += cox_de_boor(spec.knots[0], i, 3, t) * p.spline[0][i];
  const double level = -0.793 + 0.543 * 2.04 + (-0.096 + 0.027 * 2.04) * t;
  const double slope = -0.096 + 0.027 * 2.04;
  const double expected = log_base + 0.281 * 2.04 + 0.925 * level + 1.344 * slope;
  CHECK(std::abs(std::log(transition_intensity(0, 1, t, b, p, X, spec)) - expected) < 1e-10);
  CHECK_THROWS_AS(transition_intensity(2, 1, t, b, p, X, spec), ValidationError);

  const IntensityEvaluator ev(spec, p);
  for (double s : {0.5, 6.0, 15.0}) {
    double lb = 0.0;
    for (int i = 0; i < 7; ++i) lb += cox_de_boor(spec.knots[2], i, 3, s) * p.spline[2][i];
    CHECK(std::abs(ev.log_baseline(2, s) - lb) < 1e-12);
  }
}

TEST_CASE("zero parameters give unit intensity and pure baseline without a link") {
  const ModelSpec spec = two_state_spec("level");
  ModelParameters p = zero_parameters(spec);
  const Eigen::VectorXd b = Eigen::VectorXd::Constant(1, 0.4);
  for (double t : {0.0, 2.5, 9.9}) CHECK(transition_intensity(0, 1, t, b, p, {}, spec) == doctest::Approx(1.0));
  p.spline[0] << 0.1, -0.3, 0.2;
  p.beta << 1.0, 0.5;
  const IntensityEvaluator ev(spec, p);
  for (double t : {0.0, 2.5, 9.9}) {
    const double base = std::exp(ev.log_baseline(0, t));
    CHECK(transition_intensity(0, 1, t, b, p, {}, spec) == doctest::Approx(base).epsilon(1e-14));
  }
}

TEST_CASE("increasing the level coefficient raises the intensity where the level is positive") {
  const ModelSpec spec = reference_model_spec();
  ModelParameters p = reference_true_parameters();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 15.0);
  std::normal_distribution<double> n(0.0, 0.5);
  for (int r = 0; r < 50; ++r) {
    Eigen::VectorXd b(2);
    b << n(rng), n(rng);
    const double t = u(rng);
    const std::vector<double> X = {2.0 + n(rng)};
    if (true_level(b, p, t, X, spec) <= 0.0) continue;
    ModelParameters more = p;
    more.eta_level[0] += 0.1;
    CHECK(transition_intensity(0, 1, t, b, more, X, spec) > transition_intensity(0, 1, t, b, p, X, spec));
  }
}

TEST_CASE("conditional longitudinal density") {
  const ModelSpec spec = two_state_spec("none");
  const auto ws = one_subject(spec, {{"a", 0, 0}, {"a", 4, 0}}, {{"a", 1.0, 0.0}});
  ModelParameters p = zero_parameters(spec);
  const Eigen::VectorXd b = Eigen::VectorXd::Zero(1);
  CHECK(std::abs(conditional_longit_logdensity(b, ThetaView(pack(p, spec).values, spec), ws) + 0.5 * kLog2Pi) < 1e-14);

  const auto ws3 = one_subject(spec, {{"a", 0, 0}, {"a", 4, 0}}, {{"a", 0.0, 0.0}, {"a", 1.0, 0.0}, {"a", 2.0, 0.0}});
  const double base = conditional_longit_logdensity(b, ThetaView(pack(p, spec).values, spec), ws3);
  p.log_sigma = std::log(2.0);
  const double doubled = conditional_longit_logdensity(b, ThetaView(pack(p, spec).values, spec), ws3);
  CHECK(std::abs(base - doubled - 3 * std::log(2.0)) < 1e-13);

  // random inputs against a generic Gaussian density
  const SimulatedData sim = reference_data(10, 8);
  const ModelSpec ref = reference_model_spec();
  const ThetaView th(reference_theta(), ref);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 0.5);
  for (const auto& subj : sim.dataset.subjects) {
    const SubjectWorkspace w = build_workspace(subj, sim.dataset, ref);
    Eigen::VectorXd bb(2);
    bb << n(rng), n(rng);
    const Eigen::VectorXd mean = w.X * th.params.beta + w.Z * bb;
    const Eigen::MatrixXd cov = th.sigma2 * Eigen::MatrixXd::Identity(w.n_obs, w.n_obs);
    CHECK(std::abs(conditional_longit_logdensity(bb, th, w) - mvn_logpdf(w.y, mean, cov)) < 1e-12 * w.n_obs);
  }
}

TEST_CASE("conditional multi-state density with constant intensities") {
  const double c = std::log(0.3);
  const FlatModel m(c);
  const ThetaView th(m.theta, m.spec);
  const Eigen::VectorXd b = Eigen::VectorXd::Zero(1);
  const auto censored = one_subject(m.spec, {{"a", 0, 0}, {"a", 4, 0}}, {{"a", 0.0, 0.0}});
  CHECK(std::abs(conditional_mstate_logdensity(b, th, censored) - (-4 * 0.3)) < 1e-10);
  const auto event = one_subject(m.spec, {{"a", 0, 0}, {"a", 4, 1}}, {{"a", 0.0, 0.0}});
  CHECK(std::abs(conditional_mstate_logdensity(b, th, event) - (-4 * 0.3 + c)) < 1e-10);

  const FlatModel zero(-800.0);
  const ThetaView th0(zero.theta, zero.spec);
  CHECK(conditional_mstate_logdensity(b, th0, censored) == 0.0);
}

TEST_CASE("illness-death density matches a direct integral") {
  const ModelSpec spec = reference_model_spec();
  const ModelParameters p = reference_true_parameters();
  const ThetaView th(reference_theta(), spec);
  const auto ds = dataset(spec.topology, events({{"a", 0, 0}, {"a", 3.2, 1}, {"a", 7.5, 2}}),
                          marker({{"a", 0.0, 0.1}, {"a", 1.0, 0.2}}, {"X"}, {{2.0}, {2.0}}), {"X"});
  const SubjectWorkspace ws = build_workspace(ds.subjects[0], ds, spec);
  Eigen::VectorXd b(2);
  b << 0.2, -0.05;
  const std::vector<double> X = {2.0};
  // composite Simpson with many panels as the oracle
  auto integral = [&](int h, int k, double a, double z) {
    const int n = 20000;
    const double w = (z - a) / n;
    double s = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double f = transition_intensity(h, k, a + i * w, b, p, X, spec);
      s += f * (i == 0 || i == n ? 1 : (i % 2 ? 4 : 2));
    }
    return s * w / 3;
  };
  const double expected = -integral(0, 1, 0, 3.2) - integral(0, 2, 0, 3.2) +
                          std::log(transition_intensity(0, 1, 3.2, b, p, X, spec)) - integral(1, 2, 3.2, 7.5) +
                          std::log(transition_intensity(1, 2, 7.5, b, p, X, spec));
  CHECK(std::abs(conditional_mstate_logdensity(b, th, ws) - expected) < 1e-6);
}

TEST_CASE("random-effects density") {
  ModelSpec spec = reference_model_spec();
  ModelParameters p = reference_true_parameters();
  p.d_cholesky = cholesky_parameters(Eigen::MatrixXd::Identity(2, 2));
  const ThetaView th(pack(p, spec).values, spec);
  CHECK(std::abs(random_effects_logdensity(Eigen::VectorXd::Zero(2), th) + kLog2Pi) < 1e-14);

  const ModelSpec one = two_state_spec("none");
  ModelParameters q1 = zero_parameters(one);
  q1.d_cholesky = cholesky_parameters(Eigen::MatrixXd::Constant(1, 1, 4.0));
  const ThetaView th1(pack(q1, one).values, one);
  CHECK(std::abs(random_effects_logdensity(Eigen::VectorXd::Constant(1, 2.0), th1) -
                 (-0.5 * kLog2Pi - 0.5 * std::log(4.0) - 0.5)) < 1e-14);

  std::mt19937_64 rng(11);
  std::normal_distribution<double> n;
  for (int r = 0; r < 10; ++r) {
    Eigen::MatrixXd A(2, 2);
    A << n(rng), n(rng), n(rng), n(rng);
    const Eigen::MatrixXd D = A * A.transpose() + 0.1 * Eigen::MatrixXd::Identity(2, 2);
    p.d_cholesky = cholesky_parameters(D);
    const ThetaView t(pack(p, spec).values, spec);
    Eigen::VectorXd b(2);
    b << n(rng), n(rng);
    CHECK(std::abs(random_effects_logdensity(b, t) - mvn_logpdf(b, Eigen::VectorXd::Zero(2), D)) < 1e-12);
  }
}

TEST_CASE("empirical-Bayes modes") {
  const ModelSpec spec = reference_model_spec();
  const ThetaView th(reference_theta(), spec);
  SUBCASE("no information gives the prior") {
    const SimulatedData sim = reference_data(1, 2);
    SubjectWorkspace ws = build_workspace(sim.dataset.subjects[0], sim.dataset, spec);
    ws.n_obs = 0;
    ws.obs_times.clear();
    ws.X.resize(0, spec.p());
    ws.Z.resize(0, spec.q());
    ws.y.resize(0);
    ws.XtX.setZero();
    ws.XtZ.setZero();
    ws.ZtZ.setZero();
    ws.Xty.setZero();
    ws.Zty.setZero();
    ws.yty = 0.0;
    ws.sojourns.clear();
    ws.cumulative = PointSet{};
    ws.events = PointSet{};
    const ModeResult m = empirical_bayes_mode(th, ws);
    CHECK(m.mode.cwiseAbs().maxCoeff() < 1e-12);
    const Eigen::MatrixXd chol = th.D.llt().matrixL();
    CHECK((m.scale - chol).cwiseAbs().maxCoeff() < 1e-10);
    CHECK_FALSE(m.fallback);
  }
  SUBCASE("rich noise-free marker recovers b") {
    SimulationDesign d = reference_simulation_design(60, 4);
    d.truth.log_sigma = std::log(1e-4);
    const SimulatedData sim = simulate_dataset(d);
    const ThetaView tt(pack(d.truth, spec).values, spec);
    int checked = 0;
    for (std::size_t i = 0; i < sim.subjects.size(); ++i) {
      if (sim.dataset.subjects[i].times.size() < 10) continue;
      const SubjectWorkspace ws = build_workspace(sim.dataset.subjects[i], sim.dataset, spec);
      const ModeResult m = empirical_bayes_mode(tt, ws);
      CHECK((m.mode - sim.subjects[i].b).cwiseAbs().maxCoeff() < 1e-3);
      ++checked;
    }
    CHECK(checked >= 10);
  }
  SUBCASE("stationarity") {
    const SimulatedData sim = reference_data(40, 6);
    for (const auto& subj : sim.dataset.subjects) {
      const SubjectWorkspace ws = build_workspace(subj, sim.dataset, spec);
      const ModeResult m = empirical_bayes_mode(th, ws);
      CHECK_FALSE(m.fallback);
      CHECK(m.gradient_norm <= 1e-6);
    }
  }
}

TEST_CASE("subject and total log-likelihood") {
  const SimulatedData sim = reference_data(120, 13);
  const ModelSpec spec = reference_model_spec();
  const Eigen::VectorXd theta = reference_theta();
  JointModel model(spec, sim.dataset);
  CHECK(model.update_modes(theta) == 0);
  const double total = model.total_loglik(theta);
  CHECK(std::isfinite(total));

  SUBCASE("serial and parallel agree exactly") { CHECK(model.total_loglik_serial(theta) == total); }
  SUBCASE("sum of subject terms and halves") {
    const auto parts = model.subject_logliks(theta);
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < parts.size(); ++i) (i < parts.size() / 2 ? a : b) += parts[i];
    CHECK(std::abs(a + b - total) < 1e-12 * std::abs(total));
    CHECK(parts[3] == model.subject_loglik(theta, 3));
  }
  SUBCASE("one-subject dataset") {
    JointDataset one;
    one.covariate_names = sim.dataset.covariate_names;
    one.subjects = {sim.dataset.subjects[5]};
    JointModel m1(spec, one);
    m1.update_modes(theta);
    CHECK(std::abs(m1.total_loglik(theta) - model.subject_loglik(theta, 5)) < 1e-12);
  }
  SUBCASE("Gauss-Hermite order 9 against 15") {
    JointModel m15(spec, sim.dataset);
    m15.set_gh_order(15);
    m15.update_modes(theta);
    for (int i = 0; i < model.n_subjects(); ++i)
      CHECK(std::abs(m15.subject_loglik(theta, i) - model.subject_loglik(theta, i)) < 1e-4);
    CHECK(std::abs(m15.total_loglik(theta) - total) / std::abs(total) < 1e-5);
  }
  SUBCASE("analytic gradient against central differences") {
    ModelParameters p = reference_true_parameters();
    p.beta[0] += 0.05;
    p.eta_slope[0] -= 0.2;
    p.spline[1].array() += 0.1;
    const Eigen::VectorXd x = pack(p, spec).values;
    Eigen::VectorXd g;
    model.loglik_gradient(x, g);
    Eigen::VectorXd gs;
    model.loglik_gradient_serial(x, gs);
    CHECK((g - gs).cwiseAbs().maxCoeff() == 0.0);
    const Eigen::VectorXd fd = central_gradient([&](const Eigen::VectorXd& v) { return model.total_loglik(v); }, x, 1e-6);
    for (int j = 0; j < x.size(); ++j) CHECK(std::abs(g[j] - fd[j]) < 1e-4 * std::max(1.0, std::abs(fd[j])));
  }
  SUBCASE("truth beats a shifted fixed effect") {
    ModelParameters p = reference_true_parameters();
    p.beta.array() += 0.5;
    const Eigen::VectorXd shifted = pack(p, spec).values;
    CHECK(total > model.total_loglik(shifted));
  }
}

TEST_CASE("factorisation without dependence") {
  Json j = spec_to_json(reference_model_spec());
  j["dependence"] = "none";
  const ModelSpec spec = spec_from_json(j);
  const SimulatedData sim = reference_data(60, 17);
  JointModel model(spec, sim.dataset);
  ModelParameters p = unpack(Eigen::VectorXd::Zero(ParameterLayout(spec).size()), spec);
  const ModelParameters truth = reference_true_parameters();
  p.beta = truth.beta;
  p.log_sigma = truth.log_sigma;
  p.d_cholesky = truth.d_cholesky;
  p.gamma = truth.gamma;
  p.spline = truth.spline;
  const Eigen::VectorXd theta = pack(p, spec).values;
  model.update_modes(theta);
  const double joint = model.total_loglik(theta);
  const double lmm = lmm_marginal_loglik(p.beta, p.log_sigma, p.d_cholesky, sim.dataset, spec);
  const double ms = multistate_loglik(model, p);
  CHECK(std::abs(joint - (lmm + ms)) / std::abs(joint) < 1e-8);
}
