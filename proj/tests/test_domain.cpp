#include <random>

#include "doctest.h"
#include "helpers.hpp"

using namespace jmstate;
using namespace testing_support;

TEST_CASE("topology indexes allowed transitions") {
  const auto topo = TransitionTopology::illness_death();
  CHECK(topo.n_states() == 3);
  CHECK(topo.n_transitions() == 3);
  CHECK(topo.index_of(0, 1) == 0);
  CHECK(topo.index_of(1, 2) == 2);
  CHECK_FALSE(topo.index_of(2, 1).has_value());
  CHECK(topo.is_absorbing(2));
  CHECK(topo.absorbing_states() == std::vector<int>{2});
  CHECK(topo.label(1) == "0->2");
  CHECK(topo.parse_label("1->2") == 2);
  CHECK_THROWS_AS(topo.parse_label("2->1"), ValidationError);
  CHECK_THROWS_AS(TransitionTopology(2, {{0, 0}}), ValidationError);
  CHECK_THROWS_AS(TransitionTopology(2, {{0, 2}}), ValidationError);
  CHECK_THROWS_AS(TransitionTopology(2, {{0, 1}, {0, 1}}), ValidationError);
}

TEST_CASE("validate_dataset derives transition indicators") {
  const auto topo = TransitionTopology::illness_death();
  const auto ev = events({{"a", 0, 0}, {"a", 2, 1}, {"a", 5, 1}});
  const auto ds = dataset(topo, ev, marker({{"a", 0, 1.0}, {"a", 1, 1.5}}));
  REQUIRE(ds.subjects.size() == 1);
  const auto& h = ds.subjects[0].history;
  CHECK(h.times == std::vector<double>{2, 5});
  CHECK(h.delta == std::vector<int>{1, 0});
  CHECK(h.censor_time == 5.0);
  CHECK(transition_indicators(h.initial_state, h.states) == h.delta);
}

TEST_CASE("validate_dataset rejects a marker time after follow-up") {
  const auto topo = TransitionTopology::illness_death();
  const auto ev = events({{"a", 0, 0}, {"a", 5, 0}});
  try {
    dataset(topo, ev, marker({{"a", 0, 1.0}, {"a", 6, 1.5}}));
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("longitudinal time after last event time") != std::string::npos);
  }
}

TEST_CASE("validate_dataset rejects a transition outside the topology") {
  const auto topo = TransitionTopology::illness_death();
  const auto ev = events({{"a", 0, 0}, {"a", 2, 2}, {"a", 3, 1}});
  try {
    dataset(topo, ev, marker({{"a", 0, 1.0}}));
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("not allowed") != std::string::npos);
  }
}

TEST_CASE("validate_dataset error cases") {
  const auto topo = TransitionTopology::illness_death();
  SUBCASE("subject without marker") {
    const auto ev = events({{"a", 0, 0}, {"a", 5, 0}, {"b", 0, 0}, {"b", 4, 0}});
    CHECK_THROWS_AS(dataset(topo, ev, marker({{"a", 0, 1.0}})), ValidationError);
  }
  SUBCASE("non-increasing history times") {
    const auto ev = events({{"a", 0, 0}, {"a", 3, 1}, {"a", 3, 2}});
    CHECK_THROWS_AS(dataset(topo, ev, marker({{"a", 0, 1.0}})), ValidationError);
  }
  SUBCASE("unknown covariate") {
    const auto ev = events({{"a", 0, 0}, {"a", 5, 0}});
    CHECK_THROWS_AS(dataset(topo, ev, marker({{"a", 0, 1.0}}), {"X"}), ValidationError);
  }
  SUBCASE("covariate varying within a subject") {
    const auto ev = events({{"a", 0, 0}, {"a", 5, 0}});
    CHECK_THROWS_AS(dataset(topo, ev, marker({{"a", 0, 1.0}, {"a", 1, 1.0}}, {"X"}, {{1.0}, {2.0}}), {"X"}),
                    ValidationError);
  }
  SUBCASE("marker without history") {
    const auto ev = events({{"a", 0, 0}, {"a", 5, 0}});
    CHECK_THROWS_AS(dataset(topo, ev, marker({{"a", 0, 1.0}, {"z", 0, 1.0}})), ValidationError);
  }
}

TEST_CASE("validate_dataset is idempotent") {
  const auto sim = reference_data(40, 3);
  const auto topo = TransitionTopology::illness_death();
  const auto again = validate_dataset(sim.dataset, topo);
  REQUIRE(again.subjects.size() == sim.dataset.subjects.size());
  for (std::size_t i = 0; i < again.subjects.size(); ++i) {
    CHECK(again.subjects[i].id == sim.dataset.subjects[i].id);
    CHECK(again.subjects[i].times == sim.dataset.subjects[i].times);
    CHECK(again.subjects[i].y == sim.dataset.subjects[i].y);
    CHECK(again.subjects[i].history.delta == sim.dataset.subjects[i].history.delta);
  }
}

TEST_CASE("pack and unpack round-trip") {
  const ModelSpec spec = reference_model_spec();
  SUBCASE("identity D and zeros") {
    ModelParameters p = zero_parameters(spec);
    p.d_cholesky = cholesky_parameters(Eigen::MatrixXd::Identity(2, 2));
    const ModelParameters back = unpack(pack(p, spec), spec);
    CHECK(back.covariance().isApprox(Eigen::MatrixXd::Identity(2, 2), 1e-15));
    CHECK(pack(back, spec).values == pack(p, spec).values);
  }
  SUBCASE("reference D reconstructs") {
    Eigen::MatrixXd D(2, 2);
    D << 0.349, -0.041, -0.041, 0.062;
    ModelParameters p = zero_parameters(spec);
    p.d_cholesky = cholesky_parameters(D);
    CHECK((p.covariance() - D).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("random vector bit-for-bit") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n;
    const ParameterLayout layout(spec);
    Eigen::VectorXd v(layout.size());
    for (int i = 0; i < v.size(); ++i) v[i] = n(rng);
    const ParameterVector packed = pack(unpack(v, spec), spec);
    CHECK(packed.values == v);
    CHECK(packed.names == layout.names());
    CHECK(unpack(v, spec).covariance().selfadjointView<Eigen::Lower>().eigenvalues().minCoeff() >= 0.0);
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(unpack(Eigen::VectorXd::Zero(3), spec), ValidationError);
  }
}

TEST_CASE("parameter names are stable") {
  const ParameterLayout layout(reference_model_spec());
  const auto& n = layout.names();
  CHECK(n.front() == "beta[1]");
  CHECK(layout.index_of("log_sigma") == layout.log_sigma());
  CHECK(layout.index_of("eta_slope[1->2]") >= layout.eta());
  CHECK_THROWS_AS(layout.index_of("nope"), ValidationError);
}

TEST_CASE("time bases") {
  const TimeBasis f1{"f1", TimeBasisKind::power_drop, 0.2};
  const TimeBasis f2{"f2", TimeBasisKind::power_rise, 1.5};
  for (double t : {0.1, 1.0, 4.0}) {
    CHECK(f1.value(t) == doctest::Approx(std::pow(1 + t, 0.2) - 1).epsilon(1e-14));
    CHECK(f2.value(t) == doctest::Approx(std::pow(t, 2.5) / std::pow(1 + t, 1.5)).epsilon(1e-14));
    const double h = 1e-6;
    CHECK(f1.derivative(t) == doctest::Approx((f1.value(t + h) - f1.value(t - h)) / (2 * h)).epsilon(1e-7));
    CHECK(f2.derivative(t) == doctest::Approx((f2.value(t + h) - f2.value(t - h)) / (2 * h)).epsilon(1e-7));
  }
}

TEST_CASE("model spec checks") {
  ModelSpec spec = reference_model_spec();
  CHECK_NOTHROW(spec.check());
  CHECK(spec.derivative_design().fixed_index.size() == 2);
  spec.baseline_groups.pop_back();
  CHECK_THROWS_AS(spec.check(), ValidationError);
  CHECK_THROWS_AS(parse_dependence("sometimes"), ValidationError);
}
