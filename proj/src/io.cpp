#include "jmstate/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace jmstate {

std::string format_double(double v) {
  if (std::isnan(v)) return "NaN";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  std::string out = s.substr(a, b - a);
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') quoted = !quoted;
    if (c == ',' && !quoted) {
      out.push_back(trim(cell));
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  out.push_back(trim(cell));
  return out;
}

double parse_number(const std::string& s, int line, const std::string& column) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, v);
  if (s.empty() || r.ec != std::errc() || r.ptr != end || !std::isfinite(v))
    throw ValidationError("line " + std::to_string(line) + ": cannot read '" + s + "' as a number in column '" +
                          column + "'");
  return v;
}

int parse_int(const std::string& s, int line, const std::string& column) {
  int v = 0;
  const char* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, v);
  if (s.empty() || r.ec != std::errc() || r.ptr != end)
    throw ValidationError("line " + std::to_string(line) + ": cannot read '" + s + "' as an integer in column '" +
                          column + "'");
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::pair<int, std::vector<std::string>>> rows;  // (line, cells)

  int column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ValidationError("line 1: missing column '" + name + "'");
    return static_cast<int>(it - header.begin());
  }
};

CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto cells = split(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size())
      throw ValidationError("line " + std::to_string(n) + ": expected " + std::to_string(t.header.size()) +
                            " fields, found " + std::to_string(cells.size()));
    t.rows.emplace_back(n, std::move(cells));
  }
  if (t.header.empty()) throw ValidationError("empty CSV input");
  return t;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open '" + path + "'");
  return f;
}

}  // namespace

LongitudinalTable read_longitudinal_csv(std::istream& in) {
  const CsvTable t = read_csv(in);
  const int ci = t.column("id"), ct = t.column("time"), cy = t.column("y");
  LongitudinalTable out;
  std::vector<int> cov_cols;
  for (int j = 0; j < static_cast<int>(t.header.size()); ++j)
    if (j != ci && j != ct && j != cy) {
      cov_cols.push_back(j);
      out.covariate_names.push_back(t.header[j]);
    }
  for (const auto& [line, cells] : t.rows) {
    LongitudinalRecord r;
    r.id = cells[ci];
    if (r.id.empty()) throw ValidationError("line " + std::to_string(line) + ": empty id");
    r.t = parse_number(cells[ct], line, "time");
    r.y = parse_number(cells[cy], line, "y");
    for (std::size_t j = 0; j < cov_cols.size(); ++j)
      r.covariates.push_back(parse_number(cells[cov_cols[j]], line, out.covariate_names[j]));
    r.line = line;
    out.rows.push_back(std::move(r));
  }
  return out;
}

LongitudinalTable read_longitudinal_csv(const std::string& path) {
  auto f = open_in(path);
  try {
    return read_longitudinal_csv(f);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

std::vector<HistoryEvent> read_history_csv(std::istream& in) {
  const CsvTable t = read_csv(in);
  const int ci = t.column("id"), ct = t.column("time"), cs = t.column("state");
  std::vector<HistoryEvent> out;
  for (const auto& [line, cells] : t.rows) {
    HistoryEvent e;
    e.id = cells[ci];
    if (e.id.empty()) throw ValidationError("line " + std::to_string(line) + ": empty id");
    e.time = parse_number(cells[ct], line, "time");
    e.state = parse_int(cells[cs], line, "state");
    e.line = line;
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<HistoryEvent> read_history_csv(const std::string& path) {
  auto f = open_in(path);
  try {
    return read_history_csv(f);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

void write_longitudinal_csv(std::ostream& out, const LongitudinalTable& table) {
  out << "id,time,y";
  for (const auto& c : table.covariate_names) out << ',' << c;
  out << '\n';
  for (const auto& r : table.rows) {
    out << r.id << ',' << format_double(r.t) << ',' << format_double(r.y);
    for (double v : r.covariates) out << ',' << format_double(v);
    out << '\n';
  }
}

void write_history_csv(std::ostream& out, const std::vector<HistoryEvent>& events) {
  out << "id,time,state\n";
  for (const auto& e : events) out << e.id << ',' << format_double(e.time) << ',' << e.state << '\n';
}

void write_transition_rows_csv(std::ostream& out, const std::vector<TransitionRow>& rows,
                               const std::vector<std::string>& covariate_names) {
  out << "id,from,to,trans,Tstart,Tstop,status";
  for (const auto& c : covariate_names) out << ',' << c;
  out << '\n';
  for (const auto& r : rows) {
    out << r.id << ',' << r.from << ',' << r.to << ',' << r.trans << ',' << format_double(r.t_start) << ','
        << format_double(r.t_stop) << ',' << r.status;
    for (double v : r.covariates) out << ',' << format_double(v);
    out << '\n';
  }
}

JointDataset load_dataset(const std::string& longitudinal_csv, const std::string& history_csv,
                          const ModelSpec& spec) {
  const LongitudinalTable table = read_longitudinal_csv(longitudinal_csv);
  const auto events = read_history_csv(history_csv);
  const auto histories = histories_from_events(events, spec.topology);
  return validate_dataset(table, histories, spec.topology, spec.covariate_names);
}

namespace {

const char* kind_name(TimeBasisKind k) {
  switch (k) {
    case TimeBasisKind::identity: return "identity";
    case TimeBasisKind::power_drop: return "power_drop";
    case TimeBasisKind::power_rise: return "power_rise";
  }
  return "identity";
}

TimeBasisKind parse_kind(const std::string& s) {
  if (s == "identity") return TimeBasisKind::identity;
  if (s == "power_drop" || s == "f1") return TimeBasisKind::power_drop;
  if (s == "power_rise" || s == "f2") return TimeBasisKind::power_rise;
  throw ValidationError("unknown time basis kind '" + s + "'");
}

template <class T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config key '") + key + "': " + e.what());
  }
}

std::vector<int> parse_transitions(const Json& arr, const TransitionTopology& topo) {
  std::vector<int> out;
  if (arr.is_string()) return {topo.parse_label(arr.get<std::string>())};
  for (const auto& t : arr) {
    if (t.is_string())
      out.push_back(topo.parse_label(t.get<std::string>()));
    else if (t.is_number_integer())
      out.push_back(t.get<int>() - 1);
    else
      throw ValidationError("transitions are given as \"h->k\" labels or 1-based indices");
  }
  return out;
}

}  // namespace

Json spec_to_json(const ModelSpec& spec) {
  Json j;
  const auto& topo = spec.topology;
  j["states"] = topo.n_states();
  Json tr = Json::array();
  for (int k = 0; k < topo.n_transitions(); ++k) tr.push_back(topo.label(k));
  j["transitions"] = tr;
  j["covariates"] = spec.covariate_names;
  Json tb = Json::array();
  for (const auto& b : spec.time_bases) {
    Json e{{"name", b.name}, {"kind", kind_name(b.kind)}};
    if (b.kind != TimeBasisKind::identity) e["exponent"] = b.exponent;
    tb.push_back(e);
  }
  j["time_bases"] = tb;
  Json fx = Json::array(), rd = Json::array();
  for (const auto& c : spec.fixed.columns) fx.push_back(c.label);
  for (const auto& c : spec.random.columns) rd.push_back(c.label);
  j["fixed"] = fx;
  j["random"] = rd;
  Json eff = Json::array();
  for (const auto& e : spec.transition_effects) {
    Json t = Json::array();
    for (int k : e.transitions) t.push_back(topo.label(k));
    eff.push_back({{"covariate", spec.covariate_names[e.covariate]}, {"transitions", t}});
  }
  j["effects"] = eff;
  Json dep = Json::object();
  for (int k = 0; k < topo.n_transitions(); ++k) dep[topo.label(k)] = to_string(spec.dependence[k]);
  j["dependence"] = dep;
  Json groups = Json::array();
  for (const auto& g : spec.baseline_groups) {
    Json t = Json::array();
    for (int k : g.transitions) t.push_back(topo.label(k));
    groups.push_back(t);
  }
  j["baseline_groups"] = groups;
  j["spline"] = {{"degree", spec.spline.degree}, {"internal_knots", spec.spline.internal_knots}};
  if (spec.has_knots()) j["knots"] = spec.knots;
  j["quadrature"] = {{"gh_order", spec.quadrature.gh_order},
                     {"gk_order", spec.quadrature.gk_order},
                     {"gk_panels", spec.quadrature.gk_panels}};
  return j;
}

ModelSpec spec_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("model must be a JSON object");
  ModelSpec spec;
  if (get_or<std::string>(j, "preset", "") == "illness_death_reference") {
    spec = reference_model_spec();
  } else {
    const int n_states = get_or<int>(j, "states", 0);
    if (n_states < 1) throw ValidationError("model needs a positive number of states");
    std::vector<Transition> allowed;
    if (!j.contains("transitions")) throw ValidationError("model needs a transitions list");
    for (const auto& t : j.at("transitions")) {
      Transition x;
      if (t.is_string()) {
        const std::string s = t.get<std::string>();
        const auto pos = s.find("->");
        if (pos == std::string::npos) throw ValidationError("cannot parse transition '" + s + "'");
        try {
          x.from = std::stoi(s.substr(0, pos));
          x.to = std::stoi(s.substr(pos + 2));
        } catch (const std::exception&) {
          throw ValidationError("cannot parse transition '" + s + "'");
        }
      } else if (t.is_array() && t.size() == 2) {
        x.from = t[0].get<int>();
        x.to = t[1].get<int>();
      } else {
        throw ValidationError("transitions are \"h->k\" strings or [h, k] pairs");
      }
      allowed.push_back(x);
    }
    spec.topology = TransitionTopology(n_states, allowed);
    if (j.contains("covariates"))
      for (const auto& c : j.at("covariates")) spec.covariate(c.get<std::string>());
    if (j.contains("time_bases")) {
      for (const auto& b : j.at("time_bases"))
        spec.time_bases.push_back(TimeBasis{b.at("name").get<std::string>(),
                                            parse_kind(get_or<std::string>(b, "kind", "identity")),
                                            get_or<double>(b, "exponent", 0.0)});
    } else {
      spec.time_bases.push_back(TimeBasis{"t", TimeBasisKind::identity, 0.0});
    }
    for (const auto& c : j.value("fixed", Json::array())) spec.fixed.columns.push_back(spec.parse_column(c.get<std::string>()));
    for (const auto& c : j.value("random", Json::array())) spec.random.columns.push_back(spec.parse_column(c.get<std::string>()));
    for (const auto& e : j.value("effects", Json::array())) {
      TransitionEffect te;
      te.covariate = spec.covariate(e.at("covariate").get<std::string>());
      te.transitions = parse_transitions(e.at("transitions"), spec.topology);
      spec.transition_effects.push_back(te);
    }
    const int K = spec.topology.n_transitions();
    spec.dependence.assign(K, Dependence::none);
    if (j.contains("dependence")) {
      const auto& d = j.at("dependence");
      if (d.is_string()) {
        spec.dependence.assign(K, parse_dependence(d.get<std::string>()));
      } else if (d.is_array()) {
        if (static_cast<int>(d.size()) != K) throw ValidationError("one dependence form per transition is required");
        for (int k = 0; k < K; ++k) spec.dependence[k] = parse_dependence(d[k].get<std::string>());
      } else {
        for (const auto& [label, form] : d.items())
          spec.dependence[spec.topology.parse_label(label)] = parse_dependence(form.get<std::string>());
      }
    }
    if (j.contains("baseline_groups")) {
      for (const auto& g : j.at("baseline_groups")) spec.baseline_groups.push_back({parse_transitions(g, spec.topology)});
    } else {
      for (int k = 0; k < K; ++k) spec.baseline_groups.push_back({{k}});
    }
    spec.knots.clear();
  }
  if (j.contains("spline")) {
    spec.spline.degree = get_or<int>(j.at("spline"), "degree", spec.spline.degree);
    spec.spline.internal_knots = get_or<int>(j.at("spline"), "internal_knots", spec.spline.internal_knots);
  }
  if (j.contains("knots")) {
    const auto& k = j.at("knots");
    if (k.is_string() && k.get<std::string>() == "data")
      spec.knots.clear();
    else
      spec.knots = k.get<std::vector<std::vector<double>>>();
  }
  if (j.contains("quadrature")) {
    const auto& q = j.at("quadrature");
    spec.quadrature.gh_order = get_or<int>(q, "gh_order", spec.quadrature.gh_order);
    spec.quadrature.gk_order = get_or<int>(q, "gk_order", spec.quadrature.gk_order);
    spec.quadrature.gk_panels = get_or<int>(q, "gk_panels", spec.quadrature.gk_panels);
  }
  spec.check();
  return spec;
}

namespace {

const char* mode_refresh_name(ModeRefresh m) {
  switch (m) {
    case ModeRefresh::every_step: return "every_step";
    case ModeRefresh::after_em: return "after_em";
    case ModeRefresh::never: return "never";
  }
  return "after_em";
}

ModeRefresh parse_mode_refresh(const std::string& s) {
  if (s == "every_step") return ModeRefresh::every_step;
  if (s == "after_em") return ModeRefresh::after_em;
  if (s == "never") return ModeRefresh::never;
  throw ValidationError("unknown mode_refresh '" + s + "' (every_step, after_em, never)");
}

}  // namespace

Json control_to_json(const FitControl& c) {
  return {{"gh_order", c.gh_order}, {"em_max", c.em_max},   {"em_tol", c.em_tol},
          {"qn_max", c.qn_max},     {"qn_tol", c.qn_tol},   {"mode_refresh", mode_refresh_name(c.mode_refresh)},
          {"compute_vcov", c.compute_vcov}};
}

FitControl control_from_json(const Json& j, FitControl c) {
  c.gh_order = get_or<int>(j, "gh_order", c.gh_order);
  c.em_max = get_or<int>(j, "em_max", c.em_max);
  c.em_tol = get_or<double>(j, "em_tol", c.em_tol);
  c.qn_max = get_or<int>(j, "qn_max", c.qn_max);
  c.qn_tol = get_or<double>(j, "qn_tol", c.qn_tol);
  if (j.contains("mode_refresh")) c.mode_refresh = parse_mode_refresh(j.at("mode_refresh").get<std::string>());
  c.compute_vcov = get_or<bool>(j, "compute_vcov", c.compute_vcov);
  if (c.gh_order < 1) throw ValidationError("gh_order must be >= 1");
  if (c.em_max < 0 || c.qn_max < 0) throw ValidationError("iteration limits must be non-negative");
  return c;
}

Json parameters_to_json(const ModelParameters& params, const ModelSpec& spec) {
  const ParameterVector v = pack(params, spec);
  Json j = Json::object();
  for (std::size_t i = 0; i < v.names.size(); ++i) j[v.names[i]] = v.values[static_cast<Eigen::Index>(i)];
  return j;
}

ModelParameters parameters_from_json(const Json& j, const ModelSpec& spec) {
  if (j.is_string() && j.get<std::string>() == "reference") return reference_true_parameters();
  const ParameterLayout layout(spec);
  ParameterVector v;
  v.names = layout.names();
  v.values = Eigen::VectorXd::Zero(layout.size());
  for (const auto& [name, value] : j.items()) v.values[layout.index_of(name)] = value.get<double>();
  return unpack(v, spec);
}

Json design_to_json(const SimulationDesign& d) {
  Json covs = Json::array();
  for (const auto& c : d.covariates) covs.push_back({{"name", c.name}, {"mean", c.mean}, {"variance", c.variance}});
  return {{"n_subjects", d.n_subjects},
          {"seed", d.seed},
          {"covariates", covs},
          {"schedule", d.schedule},
          {"censoring", {d.censor_lo, d.censor_hi}},
          {"t_entry", d.t_entry},
          {"initial_state", d.initial_state},
          {"root_tol", d.root_tol},
          {"truth", parameters_to_json(d.truth, d.spec)}};
}

SimulationDesign design_from_json(const Json& j, const ModelSpec& spec, std::uint64_t seed) {
  SimulationDesign d;
  d.spec = spec;
  d.seed = seed;
  d.n_subjects = get_or<int>(j, "n_subjects", d.n_subjects);
  d.truth = j.contains("truth") ? parameters_from_json(j.at("truth"), spec) : zero_parameters(spec);
  if (j.contains("covariates")) {
    for (const auto& c : j.at("covariates"))
      d.covariates.push_back({c.at("name").get<std::string>(), get_or<double>(c, "mean", 0.0),
                              get_or<double>(c, "variance", 1.0)});
  }
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    if (s.is_array()) {
      d.schedule = s.get<std::vector<double>>();
    } else {
      const double start = get_or<double>(s, "start", 0.0);
      const double step = get_or<double>(s, "step", 1.0);
      const int count = get_or<int>(s, "count", 0);
      for (int i = 0; i < count; ++i) d.schedule.push_back(start + step * i);
    }
  } else {
    for (int i = 0; i < 50; ++i) d.schedule.push_back(i / 3.0);
  }
  if (j.contains("censoring")) {
    const auto c = j.at("censoring").get<std::vector<double>>();
    if (c.size() != 2) throw ValidationError("censoring is [lo, hi]");
    d.censor_lo = c[0];
    d.censor_hi = c[1];
  }
  d.t_entry = get_or<double>(j, "t_entry", d.t_entry);
  d.initial_state = get_or<int>(j, "initial_state", d.initial_state);
  d.root_tol = get_or<double>(j, "root_tol", d.root_tol);
  d.check();
  return d;
}

Json Config::resolved() const {
  Json j;
  j["version"] = kVersion;
  j["model"] = spec_to_json(spec);
  if (place_knots && !spec.has_knots()) j["model"]["knots"] = "data";
  j["control"] = control_to_json(control);
  j["seed"] = seed;
  j["grid_size"] = grid_size;
  j["b_source"] = b_source == RandomEffectSource::mode ? "mode" : "zero";
  if (simulation) j["simulation"] = design_to_json(*simulation);
  return j;
}

Config parse_config(const Json& j) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  Config c;
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  c.spec = spec_from_json(j.contains("model") ? j.at("model") : Json{{"preset", "illness_death_reference"}});
  if (j.contains("model") && j.at("model").contains("knots") && j.at("model").at("knots").is_string())
    c.place_knots = true;
  c.control.gh_order = c.spec.quadrature.gh_order;
  if (j.contains("control")) c.control = control_from_json(j.at("control"), c.control);
  c.spec.quadrature.gh_order = c.control.gh_order;
  c.grid_size = get_or<int>(j, "grid_size", c.grid_size);
  if (c.grid_size < 1) throw ValidationError("grid_size must be positive");
  const std::string b = get_or<std::string>(j, "b_source", "mode");
  if (b == "mode")
    c.b_source = RandomEffectSource::mode;
  else if (b == "zero")
    c.b_source = RandomEffectSource::zero;
  else
    throw ValidationError("b_source must be 'mode' or 'zero'");
  if (j.contains("simulation")) {
    if (!c.spec.has_knots()) throw ValidationError("simulation needs explicit knots in the model");
    c.simulation = design_from_json(j.at("simulation"), c.spec, c.seed);
  }
  return c;
}

Json read_json(const std::string& path) {
  auto f = open_in(path);
  try {
    return Json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

Config load_config(const std::string& path) {
  try {
    return parse_config(read_json(path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

namespace {

Json number(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

double number_from(const Json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

}  // namespace

Json fit_to_json(const FitResult& fit, const Json& config) {
  Json j;
  Json cfg = config;
  cfg["model"] = spec_to_json(fit.spec);
  j["config"] = cfg;
  j["version"] = kVersion;
  j["loglik"] = number(fit.loglik);
  Json log = Json::array();
  for (const auto& s : fit.convergence.log) log.push_back({{"phase", s.phase}, {"iteration", s.iteration}, {"loglik", number(s.loglik)}});
  j["convergence"] = {{"converged", fit.convergence.converged},
                      {"em_iterations", fit.convergence.em_iterations},
                      {"qn_iterations", fit.convergence.qn_iterations},
                      {"gradient_norm", number(fit.convergence.gradient_norm)},
                      {"message", fit.convergence.message},
                      {"log", log}};
  Json params = Json::array();
  for (Eigen::Index i = 0; i < fit.theta_hat.values.size(); ++i) {
    const double se = fit.se.size() > i ? fit.se[i] : std::nan("");
    const double p = fit.p_values.size() > i ? fit.p_values[i] : std::nan("");
    params.push_back({{"name", fit.theta_hat.names[static_cast<std::size_t>(i)]},
                      {"estimate", fit.theta_hat.values[i]},
                      {"se", number(se)},
                      {"p", number(p)}});
  }
  j["parameters"] = params;
  Json re = Json::array();
  for (const auto& e : fit.random_effects) re.push_back({{"name", e.name}, {"estimate", e.estimate}, {"se", number(e.se)}});
  j["random_effects"] = re;
  Json vc = Json::array();
  for (Eigen::Index r = 0; r < fit.vcov.rows(); ++r)
    for (Eigen::Index c = 0; c < fit.vcov.cols(); ++c) vc.push_back(number(fit.vcov(r, c)));
  j["vcov"] = vc;
  j["flags"] = fit.flags;
  Json modes = Json::array();
  for (std::size_t i = 0; i < fit.subject_ids.size(); ++i) {
    std::vector<double> b(fit.modes.rows());
    for (Eigen::Index r = 0; r < fit.modes.rows(); ++r) b[r] = fit.modes(r, static_cast<Eigen::Index>(i));
    modes.push_back({{"id", fit.subject_ids[i]}, {"b", b}});
  }
  j["modes"] = modes;
  return j;
}

FitResult fit_from_json(const Json& j) {
  try {
    FitResult fit;
    const Config cfg = parse_config(j.at("config"));
    fit.spec = cfg.spec;
    if (!fit.spec.has_knots()) throw ValidationError("fit document has no knots");
    fit.control = cfg.control;
    fit.loglik = number_from(j.at("loglik"));
    const auto& params = j.at("parameters");
    const int P = static_cast<int>(params.size());
    const ParameterLayout layout(fit.spec);
    if (P != layout.size()) throw ValidationError("fit document does not match its model");
    fit.theta_hat.values.resize(P);
    fit.se.resize(P);
    fit.p_values.resize(P);
    for (int i = 0; i < P; ++i) {
      const auto& p = params[i];
      fit.theta_hat.names.push_back(p.at("name").get<std::string>());
      if (fit.theta_hat.names.back() != layout.names()[i]) throw ValidationError("parameter order does not match the model");
      fit.theta_hat.values[i] = p.at("estimate").get<double>();
      fit.se[i] = number_from(p.at("se"));
      fit.p_values[i] = number_from(p.at("p"));
    }
    const auto& vc = j.at("vcov");
    if (vc.size() == static_cast<std::size_t>(P) * P) {
      fit.vcov.resize(P, P);
      for (int r = 0; r < P; ++r)
        for (int c = 0; c < P; ++c) fit.vcov(r, c) = number_from(vc[static_cast<std::size_t>(r) * P + c]);
    }
    for (const auto& e : j.value("random_effects", Json::array()))
      fit.random_effects.push_back({e.at("name").get<std::string>(), e.at("estimate").get<double>(), number_from(e.at("se"))});
    const auto& conv = j.at("convergence");
    fit.convergence.converged = conv.at("converged").get<bool>();
    fit.convergence.em_iterations = conv.at("em_iterations").get<int>();
    fit.convergence.qn_iterations = conv.at("qn_iterations").get<int>();
    fit.convergence.gradient_norm = number_from(conv.at("gradient_norm"));
    fit.convergence.message = conv.at("message").get<std::string>();
    fit.flags = j.value("flags", std::vector<std::string>{});
    const auto modes = j.value("modes", Json::array());
    fit.modes.resize(fit.spec.q(), static_cast<Eigen::Index>(modes.size()));
    for (std::size_t i = 0; i < modes.size(); ++i) {
      fit.subject_ids.push_back(modes[i].at("id").get<std::string>());
      const auto b = modes[i].at("b").get<std::vector<double>>();
      for (int r = 0; r < fit.spec.q(); ++r) fit.modes(r, static_cast<Eigen::Index>(i)) = b.at(r);
    }
    return fit;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed fit document: ") + e.what());
  }
}

void write_probability_csv(std::ostream& out, double s, const ProbabilityPath& path,
                           const TransitionTopology& topology, bool all_pairs) {
  out << "s,t,from,to,estimate\n";
  const int M = topology.n_states();
  for (std::size_t j = 0; j < path.times.size(); ++j)
    for (int h = 0; h < M; ++h)
      for (int k = 0; k < M; ++k) {
        if (!all_pairs && h != k && !topology.index_of(h, k)) continue;
        out << format_double(s) << ',' << format_double(path.times[j]) << ',' << h << ',' << k << ','
            << format_double(path.P[j](h, k)) << '\n';
      }
}

void write_aj_csv(std::ostream& out, double s, const AalenJohansenPath& path, const TransitionTopology& topology) {
  out << "s,t,from,to,estimate,lo95,hi95\n";
  const int M = topology.n_states();
  for (std::size_t j = 0; j < path.times.size(); ++j)
    for (int h = 0; h < M; ++h)
      for (int k = 0; k < M; ++k) {
        if (h != k && !topology.index_of(h, k)) continue;
        const double p = path.P[j](h, k);
        const auto ci = aj_confidence_interval(p, vec_variance(path.cov[j], M, h, k));
        out << format_double(s) << ',' << format_double(path.times[j]) << ',' << h << ',' << k << ','
            << format_double(p) << ',' << (ci ? format_double(ci->lo) : "NA") << ','
            << (ci ? format_double(ci->hi) : "NA") << '\n';
      }
}

void write_residuals_csv(std::ostream& out, const std::vector<Residual>& residuals) {
  out << "id,time,observed,fitted,residual,standardized\n";
  for (const auto& r : residuals)
    out << r.id << ',' << format_double(r.time) << ',' << format_double(r.observed) << ',' << format_double(r.fitted)
        << ',' << format_double(r.residual) << ',' << format_double(r.standardized) << '\n';
}

void write_bins_csv(std::ostream& out, const std::vector<MarkerBin>& bins) {
  out << "lo,hi,n,observed,predicted,ci_lo,ci_hi\n";
  for (const auto& b : bins) {
    out << format_double(b.lo) << ',' << format_double(b.hi) << ',' << b.n << ',';
    if (b.n > 0)
      out << format_double(b.observed) << ',' << format_double(b.predicted);
    else
      out << "NA,NA";
    if (b.ci_defined)
      out << ',' << format_double(b.ci_lo) << ',' << format_double(b.ci_hi) << '\n';
    else
      out << ",NA,NA\n";
  }
}

void write_gof_csv(std::ostream& out, const GofResult& gof) {
  out << "s,t,from,to,parametric,estimate,lo95,hi95,inside\n";
  for (const auto& g : gof.points) {
    out << format_double(g.s) << ',' << format_double(g.t) << ',' << g.from << ',' << g.to << ','
        << format_double(g.parametric) << ',' << format_double(g.aalen_johansen) << ',';
    if (g.band_defined)
      out << format_double(g.lo) << ',' << format_double(g.hi) << ',' << (g.inside ? 1 : 0) << '\n';
    else
      out << "NA,NA,NA\n";
  }
}

}  // namespace jmstate
