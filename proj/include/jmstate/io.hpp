#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "jmstate/diagnostics.hpp"
#include "jmstate/domain.hpp"
#include "jmstate/estimate.hpp"
#include "jmstate/model.hpp"
#include "jmstate/msprep.hpp"
#include "jmstate/simulate.hpp"
#include "jmstate/transprob.hpp"

namespace jmstate {

using Json = nlohmann::ordered_json;

inline constexpr const char* kVersion = "0.1.0";

/// Shortest text that reads back to the same double.
std::string format_double(double v);

/// Longitudinal CSV: id,time,y,<covariates...>.
LongitudinalTable read_longitudinal_csv(std::istream& in);
LongitudinalTable read_longitudinal_csv(const std::string& path);
/// History CSV: id,time,state.
std::vector<HistoryEvent> read_history_csv(std::istream& in);
std::vector<HistoryEvent> read_history_csv(const std::string& path);

void write_longitudinal_csv(std::ostream& out, const LongitudinalTable& table);
void write_history_csv(std::ostream& out, const std::vector<HistoryEvent>& events);
void write_transition_rows_csv(std::ostream& out, const std::vector<TransitionRow>& rows,
                               const std::vector<std::string>& covariate_names);

/// Reads both files and validates the joined dataset against the spec.
JointDataset load_dataset(const std::string& longitudinal_csv, const std::string& history_csv,
                          const ModelSpec& spec);

Json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const Json& j);

Json control_to_json(const FitControl& c);
FitControl control_from_json(const Json& j, FitControl base = {});

/// Parameters as {name: value} over the packed layout.
Json parameters_to_json(const ModelParameters& params, const ModelSpec& spec);
ModelParameters parameters_from_json(const Json& j, const ModelSpec& spec);

Json design_to_json(const SimulationDesign& d);
SimulationDesign design_from_json(const Json& j, const ModelSpec& spec, std::uint64_t seed);

/// Parsed run configuration.
struct Config {
  ModelSpec spec;
  FitControl control;
  std::uint64_t seed = 1;
  int grid_size = 1000;
  RandomEffectSource b_source = RandomEffectSource::mode;
  bool place_knots = false;  // knots from the data rather than from the config
  std::optional<SimulationDesign> simulation;

  /// Resolved configuration echoed into every output document.
  Json resolved() const;
};

Config parse_config(const Json& j);
Config load_config(const std::string& path);
Json read_json(const std::string& path);

Json fit_to_json(const FitResult& fit, const Json& config);
FitResult fit_from_json(const Json& j);

void write_probability_csv(std::ostream& out, double s, const ProbabilityPath& path,
                           const TransitionTopology& topology, bool all_pairs = false);
void write_aj_csv(std::ostream& out, double s, const AalenJohansenPath& path, const TransitionTopology& topology);
void write_residuals_csv(std::ostream& out, const std::vector<Residual>& residuals);
void write_bins_csv(std::ostream& out, const std::vector<MarkerBin>& bins);
void write_gof_csv(std::ostream& out, const GofResult& gof);

}  // namespace jmstate
