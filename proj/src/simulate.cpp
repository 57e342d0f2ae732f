#include "jmstate/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>

#include "jmstate/quadrature.hpp"
#include "jmstate/roots.hpp"

namespace jmstate {

void SimulationDesign::check() const {
  spec.check();
  if (!spec.has_knots()) throw ValidationError("simulation design needs knots");
  if (covariates.size() != spec.covariate_names.size())
    throw ValidationError("one covariate law per model covariate is required");
  for (std::size_t j = 0; j < covariates.size(); ++j) {
    if (covariates[j].name != spec.covariate_names[j])
      throw ValidationError("covariate law '" + covariates[j].name + "' does not match model covariate '" +
                            spec.covariate_names[j] + "'");
    if (covariates[j].variance < 0.0) throw ValidationError("negative covariate variance");
  }
  if (!std::is_sorted(schedule.begin(), schedule.end()))
    throw ValidationError("measurement schedule must be non-decreasing");
  if (!(censor_lo > t_entry) || !(censor_hi >= censor_lo))
    throw ValidationError("censoring support must lie after entry");
  if (n_subjects < 0) throw ValidationError("negative subject count");
  if (initial_state < 0 || initial_state >= spec.topology.n_states())
    throw ValidationError("unknown initial state");
  pack(truth, spec);  // dimension check
}

SimulationDesign reference_simulation_design(int n_subjects, std::uint64_t seed) {
  SimulationDesign d;
  d.spec = reference_model_spec();
  d.truth = reference_true_parameters();
  d.covariates = {CovariateLaw{"X", 2.04, 0.5}};
  for (int j = 0; j < 50; ++j) d.schedule.push_back(j / 3.0);
  d.n_subjects = n_subjects;
  d.seed = seed;
  return d;
}

std::mt19937_64 subject_stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x6a6du};
  return std::mt19937_64(seq);
}

namespace {

struct Draw {
  double time = std::numeric_limits<double>::infinity();
  double residual = 0.0;
  bool resolved = false;
};

// Solves Lambda(t0, T) = -log(u) piece by piece on the integration grid.
Draw invert(const BoundIntensity& bound, int k, double t0, double horizon, double u, double tol) {
  Draw d;
  const double target = -std::log(u);
  auto f = [&](double x) { return bound.intensity(k, x); };
  std::vector<double> grid = bound.cuts(k, t0, horizon);
  grid.push_back(horizon);
  double acc = 0.0, lo = t0;
  for (double hi : grid) {
    const double piece = gauss_kronrod_15(f, lo, hi).value;
    if (acc + piece >= target) {
      const double base = acc;
      const double from = lo;
      auto g = [&](double x) { return base + gauss_kronrod_15(f, from, x).value - target; };
      const double left = std::max(from, t0 + 1e-10);
      const RootResult r = brent_root(g, left, hi, tol);
      d.time = r.root;
      d.residual = std::abs(bound.cumulative(k, t0, r.root) + std::log(u));
      d.resolved = true;
      return d;
    }
    acc += piece;
    lo = hi;
  }
  return d;
}

}  // namespace

SimulatedSubject simulate_subject(const SimulationDesign& design, const IntensityEvaluator& model,
                                  std::mt19937_64& rng, const std::string& id) {
  const ModelSpec& spec = model.spec();
  SimulatedSubject s;
  s.id = id;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (const auto& law : design.covariates) s.covariates.push_back(law.mean + std::sqrt(law.variance) * normal(rng));
  const int q = spec.q();
  Eigen::VectorXd z(q);
  for (int j = 0; j < q; ++j) z[j] = normal(rng);
  s.b = design.truth.cholesky_factor() * z;
  const double censor = design.censor_lo + (design.censor_hi - design.censor_lo) * unif(rng);

  const BoundIntensity bound = model.bind(s.covariates, s.b);
  int state = design.initial_state;
  double t = design.t_entry;
  s.events.push_back({id, t, state, 0});
  double first_exit = -1.0;
  while (!spec.topology.is_absorbing(state)) {
    Draw best;
    int best_k = -1;
    for (int k : spec.topology.outgoing(state)) {
      double u = unif(rng);
      while (u <= 0.0) u = unif(rng);
      const Draw d = invert(bound, k, t, design.horizon(), u, design.root_tol);
      if (!d.resolved) {
        ++s.unresolved;
        continue;
      }
      s.inversion_residuals.push_back(d.residual);
      if (d.time < best.time) {
        best = d;
        best_k = k;
      }
    }
    if (best_k < 0 || best.time > censor) {
      s.events.push_back({id, censor, state, 0});
      if (first_exit < 0.0) first_exit = censor;
      break;
    }
    t = best.time;
    state = spec.topology.transition(best_k).to;
    s.events.push_back({id, t, state, 0});
    if (first_exit < 0.0) first_exit = t;
  }

  const double sigma = design.truth.sigma();
  for (double tj : design.schedule) {
    if (tj > first_exit || tj < design.t_entry) continue;
    LongitudinalRecord r;
    r.id = id;
    r.t = tj;
    r.y = bound.level(tj) + sigma * normal(rng);
    r.covariates = s.covariates;
    s.longitudinal.push_back(std::move(r));
  }
  return s;
}

SimulatedData simulate_dataset(const SimulationDesign& design) {
  design.check();
  const IntensityEvaluator model(design.spec, design.truth);
  const int N = design.n_subjects;
  SimulatedData out;
  out.subjects.resize(N);
  std::exception_ptr err;
#pragma omp parallel for schedule(dynamic, 4)
  for (int i = 0; i < N; ++i) {
    try {
      auto rng = subject_stream(design.seed, static_cast<std::uint64_t>(i));
      out.subjects[i] = simulate_subject(design, model, rng, std::to_string(i + 1));
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  out.longitudinal.covariate_names = design.spec.covariate_names;
  for (const auto& s : out.subjects) {
    out.longitudinal.rows.insert(out.longitudinal.rows.end(), s.longitudinal.begin(), s.longitudinal.end());
    out.events.insert(out.events.end(), s.events.begin(), s.events.end());
  }
  const auto histories = histories_from_events(out.events, design.spec.topology);
  out.dataset = validate_dataset(out.longitudinal, histories, design.spec.topology, design.spec.covariate_names);
  return out;
}

}  // namespace jmstate
