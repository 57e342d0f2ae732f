#include "jmstate/msprep.hpp"

#include <algorithm>

namespace jmstate {

std::vector<TransitionRow> expand_transitions(const JointDataset& data, const TransitionTopology& topology) {
  std::vector<TransitionRow> out;
  for (const auto& s : data.subjects) {
    const auto& h = s.history;
    const std::size_t first = out.size();
    double start = h.t_entry;
    for (std::size_t r = 0; r < h.times.size(); ++r) {
      const int from = h.state_before(r);
      const double stop = h.times[r];
      if (!(stop > start)) throw ValidationError("subject '" + s.id + "' has a zero-length sojourn at time " +
                                                 std::to_string(stop));
      for (int k : topology.outgoing(from)) {
        TransitionRow row;
        row.id = s.id;
        row.trans = k + 1;
        row.from = from;
        row.to = topology.transition(k).to;
        row.t_start = start;
        row.t_stop = stop;
        row.status = h.delta[r] && h.states[r] == row.to ? 1 : 0;
        row.covariates = s.covariates;
        out.push_back(std::move(row));
      }
      start = stop;
    }
    std::stable_sort(out.begin() + static_cast<std::ptrdiff_t>(first), out.end(),
                     [](const TransitionRow& a, const TransitionRow& b) {
                       if (a.t_start != b.t_start) return a.t_start < b.t_start;
                       return a.trans < b.trans;
                     });
  }
  return out;
}

TransitionDesign expand_covariates(const std::vector<TransitionRow>& rows, const ModelSpec& spec,
                                   const std::vector<std::string>& data_covariates) {
  TransitionDesign d;
  const int E = static_cast<int>(spec.transition_effects.size());
  std::vector<int> column(E);
  for (int e = 0; e < E; ++e) {
    const auto& eff = spec.transition_effects[e];
    const std::string& name = spec.covariate_names.at(eff.covariate);
    const auto it = std::find(data_covariates.begin(), data_covariates.end(), name);
    if (it == data_covariates.end()) throw ValidationError("covariate '" + name + "' is not in the data");
    column[e] = static_cast<int>(it - data_covariates.begin());
    std::string label = name + "@";
    for (std::size_t j = 0; j < eff.transitions.size(); ++j)
      label += (j ? "," : "") + spec.topology.label(eff.transitions[j]);
    d.names.push_back(label);
  }
  d.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), E);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int e = 0; e < E; ++e) {
      const auto& tr = spec.transition_effects[e].transitions;
      if (std::find(tr.begin(), tr.end(), rows[r].trans - 1) == tr.end()) continue;
      if (static_cast<std::size_t>(column[e]) >= rows[r].covariates.size())
        throw ValidationError("row of subject '" + rows[r].id + "' lacks covariate '" +
                              spec.covariate_names[spec.transition_effects[e].covariate] + "'");
      d.values(static_cast<Eigen::Index>(r), e) = rows[r].covariates[column[e]];
    }
  }
  return d;
}

Eigen::MatrixXi transition_count_matrix(const JointDataset& data, int n_states) {
  Eigen::MatrixXi U = Eigen::MatrixXi::Zero(n_states, n_states);
  for (const auto& s : data.subjects) {
    const auto& h = s.history;
    for (std::size_t r = 0; r < h.times.size(); ++r)
      if (h.delta[r]) ++U(h.state_before(r), h.states[r]);
    ++U(h.final_state(), h.final_state());
  }
  return U;
}

std::vector<int> status_counts(const std::vector<TransitionRow>& rows, int n_transitions) {
  std::vector<int> c(n_transitions, 0);
  for (const auto& r : rows) c.at(r.trans - 1) += r.status;
  return c;
}

}  // namespace jmstate
