#include "doctest.h"
#include "helpers.hpp"
#include "jmstate/msprep.hpp"

using namespace jmstate;
using namespace testing_support;

TEST_CASE("censored subject expands to one row per outgoing transition") {
  const auto topo = TransitionTopology::illness_death();
  const auto ds = dataset(topo, events({{"a", 0, 0}, {"a", 5, 0}}), marker({{"a", 0, 1.0}}));
  const auto rows = expand_transitions(ds, topo);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].trans == 1);
  CHECK(rows[1].trans == 2);
  for (const auto& r : rows) {
    CHECK(r.t_start == 0.0);
    CHECK(r.t_stop == 5.0);
    CHECK(r.status == 0);
  }
}

TEST_CASE("illness then death expands to three rows") {
  const auto topo = TransitionTopology::illness_death();
  const auto ds = dataset(topo, events({{"a", 0, 0}, {"a", 2, 1}, {"a", 4, 2}}), marker({{"a", 0, 1.0}}));
  const auto rows = expand_transitions(ds, topo);
  REQUIRE(rows.size() == 3);
  CHECK((rows[0].from == 0 && rows[0].to == 1 && rows[0].t_start == 0 && rows[0].t_stop == 2 && rows[0].status == 1));
  CHECK((rows[1].from == 0 && rows[1].to == 2 && rows[1].t_start == 0 && rows[1].t_stop == 2 && rows[1].status == 0));
  CHECK((rows[2].from == 1 && rows[2].to == 2 && rows[2].t_start == 2 && rows[2].t_stop == 4 && rows[2].status == 1));
}

TEST_CASE("per-transition covariate columns") {
  const auto topo = TransitionTopology::illness_death();
  const auto ds = dataset(topo, events({{"a", 0, 0}, {"a", 2, 1}, {"a", 4, 2}}),
                          marker({{"a", 0, 1.0}}, {"X"}, {{2.0}}), {"X"});
  const auto rows = expand_transitions(ds, topo);
  SUBCASE("one transition") {
    ModelSpec spec = reference_model_spec();
    spec.transition_effects = {{0, {0}}};
    const auto d = expand_covariates(rows, spec, ds.covariate_names);
    REQUIRE(d.values.cols() == 1);
    CHECK(d.values(0, 0) == 2.0);
    CHECK(d.values(1, 0) == 0.0);
    CHECK(d.values(2, 0) == 0.0);
  }
  SUBCASE("shared column") {
    ModelSpec spec = reference_model_spec();
    spec.transition_effects = {{0, {1, 2}}};
    const auto d = expand_covariates(rows, spec, ds.covariate_names);
    REQUIRE(d.values.cols() == 1);
    CHECK(d.names[0] == "X@0->2,1->2");
    CHECK(d.values(0, 0) == 0.0);
    CHECK(d.values(1, 0) == 2.0);
    CHECK(d.values(2, 0) == 2.0);
  }
  SUBCASE("no effects") {
    ModelSpec spec = reference_model_spec();
    spec.transition_effects.clear();
    CHECK(expand_covariates(rows, spec, ds.covariate_names).values.cols() == 0);
  }
  SUBCASE("missing covariate") {
    ModelSpec spec = reference_model_spec();
    CHECK_THROWS_AS(expand_covariates(rows, spec, {}), ValidationError);
  }
}

TEST_CASE("expanded rows reconcile with the count matrix") {
  const auto sim = reference_data(300, 11);
  const auto topo = TransitionTopology::illness_death();
  const auto rows = expand_transitions(sim.dataset, topo);
  const auto U = transition_count_matrix(sim.dataset, 3);
  const auto counts = status_counts(rows, 3);
  CHECK(counts[0] == U(0, 1));
  CHECK(counts[1] == U(0, 2));
  CHECK(counts[2] == U(1, 2));
  CHECK(U.diagonal().sum() == 300);

  std::size_t expected = 0;
  for (const auto& s : sim.dataset.subjects) {
    int state = s.history.initial_state;
    for (std::size_t r = 0; r < s.history.times.size(); ++r) {
      expected += topo.outgoing(state).size();
      state = s.history.states[r];
      if (!s.history.delta[r]) break;
    }
  }
  CHECK(rows.size() == expected);

  // sojourns tile the follow-up and rows are sorted
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].t_start < rows[i].t_stop);
    if (rows[i].id == rows[i - 1].id) {
      const bool same = rows[i].t_start == rows[i - 1].t_start;
      CHECK((same ? rows[i].trans > rows[i - 1].trans : rows[i].t_start == rows[i - 1].t_stop));
    }
  }
  const auto again = expand_transitions(sim.dataset, topo);
  REQUIRE(again.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(again[i].t_stop == rows[i].t_stop);
}
