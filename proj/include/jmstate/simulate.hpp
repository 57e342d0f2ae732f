#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jmstate/domain.hpp"
#include "jmstate/likelihood.hpp"
#include "jmstate/model.hpp"

namespace jmstate {

/// Subject-level covariate drawn from Normal(mean, variance).
struct CovariateLaw {
  std::string name;
  double mean = 0.0;
  double variance = 1.0;
};

struct SimulationDesign {
  ModelSpec spec;  // with the generating knots
  ModelParameters truth;
  std::vector<CovariateLaw> covariates;  // one per spec covariate, same order
  std::vector<double> schedule;          // measurement times
  double censor_lo = 1.0;
  double censor_hi = 25.0;
  double t_entry = 0.0;
  int initial_state = 0;
  int n_subjects = 1500;
  std::uint64_t seed = 1;
  double root_tol = 1e-10;

  double horizon() const { return 2.0 * censor_hi; }
  void check() const;
};

/// The simulation study: illness-death model at the published truths,
/// X ~ Normal(2.04, 0.5), visits every third of a time unit up to 16.33,
/// censoring Uniform[1, 25].
SimulationDesign reference_simulation_design(int n_subjects, std::uint64_t seed);

struct SimulatedSubject {
  std::string id;
  std::vector<LongitudinalRecord> longitudinal;
  std::vector<HistoryEvent> events;
  Eigen::VectorXd b;
  std::vector<double> covariates;
  std::vector<double> inversion_residuals;  // |Lambda(T) + log u| per generated event
  int unresolved = 0;                        // transitions with no event before the horizon
};

/// Independent generator of subject `index`: seeded from (seed, index) so
/// that subjects do not share draws.
std::mt19937_64 subject_stream(std::uint64_t seed, std::uint64_t index);

SimulatedSubject simulate_subject(const SimulationDesign& design, const IntensityEvaluator& model,
                                  std::mt19937_64& rng, const std::string& id);

struct SimulatedData {
  LongitudinalTable longitudinal;
  std::vector<HistoryEvent> events;
  JointDataset dataset;
  std::vector<SimulatedSubject> subjects;
};

/// N subjects generated in parallel; identical output for a given seed.
SimulatedData simulate_dataset(const SimulationDesign& design);

}  // namespace jmstate
