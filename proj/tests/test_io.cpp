#include <charconv>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "jmstate/io.hpp"
#include "jmstate/msprep.hpp"

using namespace jmstate;
using namespace testing_support;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("number formatting round-trips") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int i = 0; i < 2000; ++i) {
    const double v = std::exp(u(rng)) * (i % 2 ? -1.0 : 1.0);
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(3.0) == "3");
  const std::string tiny = format_double(std::numeric_limits<double>::denorm_min());
  double parsed = 0.0;
  std::from_chars(tiny.data(), tiny.data() + tiny.size(), parsed);
  CHECK(parsed == std::numeric_limits<double>::denorm_min());
}

TEST_CASE("longitudinal CSV") {
  std::istringstream in("id,time,y,X\n1,0,1.5,2.0\r\n\n\"1\",0.5,1.75,2.0\n2, 0 ,-0.25,1.0\n");
  const LongitudinalTable t = read_longitudinal_csv(in);
  REQUIRE(t.rows.size() == 3);
  CHECK(t.covariate_names == std::vector<std::string>{"X"});
  CHECK(t.rows[1].id == "1");
  CHECK(t.rows[1].t == 0.5);
  CHECK(t.rows[2].y == -0.25);
  CHECK(t.rows[2].covariates[0] == 1.0);
  CHECK(t.rows[2].line == 5);

  std::ostringstream out;
  write_longitudinal_csv(out, t);
  std::istringstream back(out.str());
  const LongitudinalTable t2 = read_longitudinal_csv(back);
  REQUIRE(t2.rows.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(t2.rows[i].id == t.rows[i].id);
    CHECK(t2.rows[i].y == t.rows[i].y);
    CHECK(t2.rows[i].covariates == t.rows[i].covariates);
  }
}

TEST_CASE("CSV errors name the line") {
  auto lon = [](const std::string& s) {
    return error_of([&] {
      std::istringstream in(s);
      read_longitudinal_csv(in);
    });
  };
  const std::string bad = lon("id,time,y\n1,0,1\n1,1,abc\n");
  CHECK(bad.find("line 3") != std::string::npos);
  CHECK(bad.find("abc") != std::string::npos);
  CHECK(bad.find("'y'") != std::string::npos);
  CHECK(lon("id,time,y\n1,0\n").find("line 2") != std::string::npos);
  CHECK(lon("id,y\n1,0\n").find("time") != std::string::npos);
  CHECK(lon("id,time,y\n1,0,1.5x\n").find("line 2") != std::string::npos);

  const std::string hist = error_of([] {
    std::istringstream in("id,time,state\na,0,0\na,2,one\n");
    read_history_csv(in);
  });
  CHECK(hist.find("line 3") != std::string::npos);
  CHECK(error_of([] { read_history_csv("/nonexistent/history.csv"); }).find("/nonexistent/history.csv") !=
        std::string::npos);
}

TEST_CASE("history CSV") {
  std::istringstream in("id,time,state\na,0,0\na,2.5,1\nb,0,0\nb,4,0\n");
  const auto ev = read_history_csv(in);
  REQUIRE(ev.size() == 4);
  CHECK(ev[1].time == 2.5);
  CHECK(ev[1].state == 1);
  std::ostringstream out;
  write_history_csv(out, ev);
  std::istringstream back(out.str());
  const auto ev2 = read_history_csv(back);
  REQUIRE(ev2.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(ev2[i].id == ev[i].id);
    CHECK(ev2[i].time == ev[i].time);
    CHECK(ev2[i].state == ev[i].state);
  }
}

TEST_CASE("transition rows CSV") {
  const SimulatedData sim = reference_data(5, 3);
  const auto rows = expand_transitions(sim.dataset, reference_model_spec().topology);
  std::ostringstream out;
  write_transition_rows_csv(out, rows, {"X"});
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  CHECK(header == "id,from,to,trans,Tstart,Tstop,status,X");
  int n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  CHECK(n == static_cast<int>(rows.size()));
}

TEST_CASE("spec JSON") {
  const ModelSpec ref = reference_model_spec();
  const ModelSpec back = spec_from_json(spec_to_json(ref));
  CHECK(spec_to_json(back) == spec_to_json(ref));
  CHECK(back.p() == ref.p());
  CHECK(back.q() == ref.q());
  CHECK(ParameterLayout(back).names() == ParameterLayout(ref).names());
  const ModelSpec preset = spec_from_json(Json::parse(R"({"preset": "illness_death_reference"})"));
  CHECK(spec_to_json(preset) == spec_to_json(ref));
  CHECK_THROWS_AS(spec_from_json(Json::parse(R"({"preset": "nope"})")), ValidationError);
  CHECK_THROWS_AS(spec_from_json(Json::parse(R"({"states": 2, "transitions": ["0->5"]})")), ValidationError);
}

TEST_CASE("parameters and control JSON") {
  const ModelSpec spec = reference_model_spec();
  const ModelParameters p = reference_true_parameters();
  const Json j = parameters_to_json(p, spec);
  CHECK(j.contains("beta[1]"));
  const ModelParameters q = parameters_from_json(j, spec);
  CHECK(pack(q, spec).values == pack(p, spec).values);
  CHECK(pack(parameters_from_json(Json("reference"), spec), spec).values == pack(p, spec).values);

  FitControl c;
  c.gh_order = 5;
  c.qn_tol = 3e-6;
  c.em_max = 7;
  c.mode_refresh = ModeRefresh::never;
  const FitControl c2 = control_from_json(control_to_json(c));
  CHECK(c2.gh_order == 5);
  CHECK(c2.qn_tol == 3e-6);
  CHECK(c2.em_max == 7);
  CHECK(c2.mode_refresh == ModeRefresh::never);
  CHECK(control_from_json(Json::parse(R"({"mode_refresh": "every_step"})")).mode_refresh == ModeRefresh::every_step);
  CHECK(control_from_json(Json::object()).mode_refresh == ModeRefresh::after_em);
  CHECK_THROWS_AS(control_from_json(Json::parse(R"({"mode_refresh": "sometimes"})")), ValidationError);
}

TEST_CASE("configuration") {
  const Config c = parse_config(Json::parse(R"({"seed": 12, "control": {"gh_order": 7}, "grid_size": 200,
                                                "b_source": "zero"})"));
  CHECK(c.seed == 12);
  CHECK(c.control.gh_order == 7);
  CHECK(c.grid_size == 200);
  CHECK(c.b_source == RandomEffectSource::zero);
  CHECK_FALSE(c.simulation);
  const Config again = parse_config(c.resolved());
  CHECK(again.resolved() == c.resolved());

  const Config sim = parse_config(Json::parse(R"({"seed": 5, "simulation": {"n_subjects": 40, "truth": "reference",
      "covariates": [{"name": "X", "mean": 2.04, "variance": 0.5}], "schedule": {"start": 0, "step": 0.5, "count": 10},
      "censoring": [1, 25]}})"));
  REQUIRE(sim.simulation);
  CHECK(sim.simulation->n_subjects == 40);
  CHECK(sim.simulation->schedule.size() == 10);
  CHECK(sim.simulation->schedule[3] == 1.5);
  CHECK(parse_config(sim.resolved()).resolved() == sim.resolved());
  CHECK_THROWS_AS(parse_config(Json::parse(R"({"b_source": "mean"})")), ValidationError);
}

TEST_CASE("fit JSON round trip") {
  const SimulatedData sim = reference_data(80, 8);
  FitControl c;
  c.em_max = 3;
  c.qn_max = 5;
  const FitResult f = jmstate::fit(sim.dataset, reference_model_spec(), c);
  const Json j = fit_to_json(f, Json::object());
  const FitResult g = fit_from_json(Json::parse(j.dump()));
  CHECK(g.theta_hat.values == f.theta_hat.values);
  CHECK(g.vcov == f.vcov);
  CHECK(g.loglik == f.loglik);
  CHECK(g.modes == f.modes);
  CHECK(g.subject_ids == f.subject_ids);
  CHECK(g.flags == f.flags);
  CHECK(g.convergence.converged == f.convergence.converged);
  CHECK(spec_to_json(g.spec) == spec_to_json(f.spec));
  CHECK(g.estimate("gamma[X@0->1]") == f.estimate("gamma[X@0->1]"));
  CHECK(j["parameters"].size() == f.theta_hat.values.size());
}
