#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jmstate/domain.hpp"
#include "jmstate/model.hpp"

namespace jmstate {

/// One transition at risk during one sojourn.
struct TransitionRow {
  std::string id;
  int trans = 0;  // 1-based transition index
  int from = 0;
  int to = 0;
  double t_start = 0.0;
  double t_stop = 0.0;
  int status = 0;
  std::vector<double> covariates;  // aligned with JointDataset::covariate_names
};

/// One row per transition allowed out of the current state, per sojourn,
/// sorted by (subject order, t_start, trans).
std::vector<TransitionRow> expand_transitions(const JointDataset& data, const TransitionTopology& topology);

/// Per-transition covariate columns: one column per TransitionEffect of the
/// spec, equal to the covariate on rows of its transitions and 0 elsewhere.
struct TransitionDesign {
  std::vector<std::string> names;
  Eigen::MatrixXd values;  // rows x effects
};
TransitionDesign expand_covariates(const std::vector<TransitionRow>& rows, const ModelSpec& spec,
                                   const std::vector<std::string>& data_covariates);

/// Upsilon matrix: off-diagonal (h, k) counts observed direct transitions,
/// diagonal h counts subjects whose follow-up ends in h.
Eigen::MatrixXi transition_count_matrix(const JointDataset& data, int n_states);

/// Direct-transition counts per transition index from expanded rows.
std::vector<int> status_counts(const std::vector<TransitionRow>& rows, int n_transitions);

}  // namespace jmstate
