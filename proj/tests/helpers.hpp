#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "jmstate/domain.hpp"
#include "jmstate/io.hpp"
#include "jmstate/model.hpp"
#include "jmstate/simulate.hpp"

namespace testing_support {

using namespace jmstate;

// One history row per (id, time, state), entry row first.
inline std::vector<HistoryEvent> events(const std::vector<std::tuple<std::string, double, int>>& rows) {
  std::vector<HistoryEvent> out;
  for (const auto& [id, t, s] : rows) out.push_back({id, t, s, 0});
  return out;
}

inline LongitudinalTable marker(const std::vector<std::tuple<std::string, double, double>>& rows,
                                const std::vector<std::string>& covariates = {},
                                const std::vector<std::vector<double>>& values = {}) {
  LongitudinalTable t;
  t.covariate_names = covariates;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& [id, time, y] = rows[i];
    LongitudinalRecord r{id, time, y, values.empty() ? std::vector<double>{} : values[i], 0};
    t.rows.push_back(r);
  }
  return t;
}

// One marker value at time 0 per subject of the history rows.
inline LongitudinalTable baseline_marker(const std::vector<HistoryEvent>& ev) {
  LongitudinalTable t;
  std::string last;
  for (const auto& e : ev)
    if (e.id != last) {
      t.rows.push_back({e.id, e.time, 0.0, {}, 0});
      last = e.id;
    }
  return t;
}

inline JointDataset dataset(const TransitionTopology& topo, const std::vector<HistoryEvent>& ev,
                            const LongitudinalTable& table, const std::vector<std::string>& covariates = {}) {
  return validate_dataset(table, histories_from_events(ev, topo), topo, covariates);
}

inline ModelSpec spec_from(const char* json) { return spec_from_json(Json::parse(json)); }

// Survival model: 0 -> 1, random intercept, flat knots on [0, 10].
inline ModelSpec two_state_spec(const char* dependence = "level") {
  Json j = Json::parse(R"({
    "states": 2, "transitions": ["0->1"], "fixed": ["1", "t"], "random": ["1"],
    "spline": {"degree": 1, "internal_knots": 1}, "knots": [[0, 0, 5, 10, 10]]})");
  j["dependence"] = dependence;
  return spec_from_json(j);
}

// Reference illness-death study with a given number of subjects.
inline SimulatedData reference_data(int n, std::uint64_t seed) {
  return simulate_dataset(reference_simulation_design(n, seed));
}

inline Eigen::VectorXd reference_theta() {
  return pack(reference_true_parameters(), reference_model_spec()).values;
}

// Survival fixtures given as (time, event) pairs for a two-state process.
inline JointDataset survival_dataset(const std::vector<std::pair<double, int>>& data) {
  const TransitionTopology topo(2, {{0, 1}});
  std::vector<HistoryEvent> ev;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string id = std::to_string(i + 1);
    ev.push_back({id, 0.0, 0, 0});
    ev.push_back({id, data[i].first, data[i].second ? 1 : 0, 0});
  }
  return dataset(topo, ev, baseline_marker(ev));
}

using Fixture = std::vector<std::pair<double, int>>;

inline const std::vector<Fixture>& survival_fixtures() {
  static const std::vector<Fixture> f = {
      {{1, 1}, {2, 0}, {3, 1}, {4, 1}, {5, 0}},
      {{2, 1}, {2, 1}, {2, 0}, {3, 1}, {5, 0}, {6, 0}},
      {{1, 0}, {1.5, 1}, {2.5, 1}, {2.5, 0}, {4, 1}, {7, 0}, {8, 0}},
      {{1, 0}, {2, 1}, {3, 0}},
      {{0.7, 1}, {1.1, 0}, {1.9, 1}, {2.3, 1}, {2.3, 1}, {3.8, 0}, {4.4, 1}, {5.0, 1}, {6.2, 0}, {9.5, 0}},
  };
  return f;
}

struct KaplanMeier {
  double S = 1.0, greenwood = 0.0, nelson_aalen = 0.0;
};

// Classical estimators evaluated at t by a direct scan.
inline KaplanMeier classical(const Fixture& data, double t) {
  std::vector<double> times;
  for (auto [u, e] : data)
    if (e && u <= t) times.push_back(u);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  KaplanMeier km;
  double sum = 0.0;
  for (double u : times) {
    double n = 0, d = 0;
    for (auto [v, e] : data) {
      if (v >= u) ++n;
      if (v == u && e) ++d;
    }
    km.S *= 1.0 - d / n;
    km.nelson_aalen += d / n;
    sum += d / (n * (n - d));
  }
  km.greenwood = km.S * km.S * sum;
  return km;
}

// Plain recursive Cox-de Boor, used as an independent oracle.
inline double cox_de_boor(const std::vector<double>& k, int i, int d, double t) {
  if (d == 0) {
    const double last = k.back();
    if (t == last) return (k[i] < last && k[i + 1] == last) ? 1.0 : 0.0;
    return (k[i] <= t && t < k[i + 1]) ? 1.0 : 0.0;
  }
  double v = 0.0;
  if (k[i + d] > k[i]) v += (t - k[i]) / (k[i + d] - k[i]) * cox_de_boor(k, i, d - 1, t);
  if (k[i + d + 1] > k[i + 1]) v += (k[i + d + 1] - t) / (k[i + d + 1] - k[i + 1]) * cox_de_boor(k, i + 1, d - 1, t);
  return v;
}

}  // namespace testing_support
