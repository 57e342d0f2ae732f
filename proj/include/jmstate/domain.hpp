#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace jmstate {

/// Input data violates a documented invariant (bad CSV, disallowed transition, ...).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical routine could not produce a finite answer.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Transition {
  int from = 0;
  int to = 0;
};

/// Finite state space {0, ..., n_states-1} and the directed transitions allowed
/// between states. Transitions are indexed 0..K-1 internally in the order
/// given; file formats use the 1-based index.
class TransitionTopology {
 public:
  TransitionTopology() = default;
  TransitionTopology(int n_states, std::vector<Transition> allowed);

  /// States 0,1,2 with transitions 0->1, 0->2, 1->2.
  static TransitionTopology illness_death();

  int n_states() const { return n_states_; }
  int n_transitions() const { return static_cast<int>(allowed_.size()); }
  const Transition& transition(int index) const { return allowed_.at(index); }
  const std::vector<Transition>& transitions() const { return allowed_; }
  std::optional<int> index_of(int from, int to) const;
  const std::vector<int>& outgoing(int state) const { return outgoing_.at(state); }
  bool is_absorbing(int state) const { return outgoing_.at(state).empty(); }
  std::vector<int> absorbing_states() const;

  /// "h->k" label of a transition.
  std::string label(int index) const;
  /// Parses "h->k" and returns the transition index; throws on unknown pairs.
  int parse_label(const std::string& label) const;

 private:
  int n_states_ = 0;
  std::vector<Transition> allowed_;
  std::vector<std::vector<int>> outgoing_;
};

/// Observed event history of one subject, clock-forward from the study origin.
struct SubjectHistory {
  std::string id;
  double t_entry = 0.0;
  int initial_state = 0;
  std::vector<double> times;  // T_1 < ... < T_m
  std::vector<int> states;    // state occupied from times[r] on
  std::vector<int> delta;     // 1 iff the state changes at times[r]
  std::optional<double> censor_time;

  int final_state() const { return states.empty() ? initial_state : states.back(); }
  double last_time() const { return times.empty() ? t_entry : times.back(); }
  /// State occupied just before times[r].
  int state_before(std::size_t r) const { return r == 0 ? initial_state : states[r - 1]; }
};

/// One (id, time, state) row of the long event-format history file.
struct HistoryEvent {
  std::string id;
  double time = 0.0;
  int state = 0;
  int line = 0;  // source line, 0 when not read from a file
};

struct LongitudinalRecord {
  std::string id;
  double t = 0.0;
  double y = 0.0;
  std::vector<double> covariates;  // aligned with the table's covariate names
  int line = 0;
};

struct LongitudinalTable {
  std::vector<std::string> covariate_names;
  std::vector<LongitudinalRecord> rows;
};

struct SubjectData {
  std::string id;
  SubjectHistory history;
  std::vector<double> times;      // measurement times, non-decreasing
  std::vector<double> y;          // marker values
  std::vector<double> covariates; // subject-level values, aligned with JointDataset::covariate_names
};

/// Validated joint longitudinal + multi-state data. Subjects keep the order of
/// their first appearance in the history table.
struct JointDataset {
  std::vector<std::string> covariate_names;
  std::vector<SubjectData> subjects;

  int covariate_index(const std::string& name) const;
  std::size_t n_observations() const;
};

/// Builds subject histories from long event-format rows (grouped by id, in
/// order of first appearance). The first row of a subject is its entry.
std::vector<SubjectHistory> histories_from_events(const std::vector<HistoryEvent>& events,
                                                  const TransitionTopology& topology);

/// Checks every dataset invariant and joins the two tables. `required_covariates`
/// lists the covariate columns the model refers to; they must exist and be
/// constant within each subject.
JointDataset validate_dataset(const LongitudinalTable& longitudinal,
                              const std::vector<SubjectHistory>& histories,
                              const TransitionTopology& topology,
                              const std::vector<std::string>& required_covariates = {});

/// Re-validates an assembled dataset; returns it unchanged when valid.
JointDataset validate_dataset(const JointDataset& dataset, const TransitionTopology& topology);

/// delta vector implied by a state sequence.
std::vector<int> transition_indicators(int initial_state, const std::vector<int>& states);

}  // namespace jmstate
