#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <omp.h>

#include "CLI11.hpp"
#include "jmstate/diagnostics.hpp"
#include "jmstate/estimate.hpp"
#include "jmstate/io.hpp"
#include "jmstate/likelihood.hpp"
#include "jmstate/msprep.hpp"
#include "jmstate/simulate.hpp"
#include "jmstate/transprob.hpp"

namespace fs = std::filesystem;
using namespace jmstate;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> gh_order;
  std::optional<int> threads;
  std::optional<int> grid_size;
  std::string longitudinal;
  std::string history;
};

Config resolve(const Common& c) {
  Config cfg = c.config.empty() ? parse_config(Json::object()) : load_config(c.config);
  if (c.seed) {
    cfg.seed = *c.seed;
    if (cfg.simulation) cfg.simulation->seed = *c.seed;
  }
  if (c.gh_order) {
    if (*c.gh_order < 1) throw ValidationError("--gh-order must be >= 1");
    cfg.control.gh_order = *c.gh_order;
    cfg.spec.quadrature.gh_order = *c.gh_order;
  }
  if (c.grid_size) {
    if (*c.grid_size < 1) throw ValidationError("--grid-size must be positive");
    cfg.grid_size = *c.grid_size;
  }
  return cfg;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f) throw ValidationError("cannot write '" + p.string() + "'");
  f.precision(17);
  return f;
}

void write_json(const fs::path& p, const Json& j) {
  auto f = open_out(p);
  f << j.dump(2) << '\n';
}

Json matrix_json(const Eigen::MatrixXi& m) {
  Json j = Json::array();
  for (int r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    j.push_back(row);
  }
  return j;
}

// Evenly spaced points in (s, t_max].
std::vector<double> time_grid(double s, double t_max, int n) {
  std::vector<double> g;
  if (n <= 0 || !(t_max > s)) return g;
  for (int j = 1; j <= n; ++j) g.push_back(s + (t_max - s) * j / n);
  return g;
}

double last_event_time(const JointDataset& data) {
  double t = 0.0;
  for (const auto& s : data.subjects)
    for (std::size_t r = 0; r < s.history.times.size(); ++r)
      if (s.history.delta[r]) t = std::max(t, s.history.times[r]);
  return t;
}

int cmd_prepare(const Common& c) {
  const Config cfg = resolve(c);
  const JointDataset data = load_dataset(c.longitudinal, c.history, cfg.spec);
  const auto& topo = cfg.spec.topology;
  const auto rows = expand_transitions(data, topo);
  const fs::path out(c.out);
  {
    auto f = open_out(out / "transitions.csv");
    write_transition_rows_csv(f, rows, data.covariate_names);
  }
  const Eigen::MatrixXi U = transition_count_matrix(data, topo.n_states());
  const auto counts = status_counts(rows, topo.n_transitions());
  Json trans = Json::object();
  for (int k = 0; k < topo.n_transitions(); ++k) trans[topo.label(k)] = counts[k];
  Json summary{{"version", kVersion},
               {"config", cfg.resolved()},
               {"subjects", data.subjects.size()},
               {"observations", data.n_observations()},
               {"rows", rows.size()},
               {"transitions", trans},
               {"upsilon", matrix_json(U)}};
  write_json(out / "summary.json", summary);
  std::cout << "subjects " << data.subjects.size() << ", observations " << data.n_observations() << ", rows "
            << rows.size() << '\n';
  for (int h = 0; h < U.rows(); ++h) {
    for (int k = 0; k < U.cols(); ++k) std::cout << (k ? " " : "") << U(h, k);
    std::cout << '\n';
  }
  return 0;
}

void write_gof_bundle(const fs::path& out, const FitResult& fit, const JointDataset& data, const Config& cfg,
                      int points, double s) {
  const auto residuals = conditional_residuals(fit, data);
  {
    auto f = open_out(out / "residuals.csv");
    write_residuals_csv(f, residuals);
  }
  {
    auto f = open_out(out / "bins.csv");
    write_bins_csv(f, observed_vs_predicted(residuals));
  }
  const auto grid = time_grid(s, last_event_time(data), points);
  const GofResult gof = transprob_gof(fit, data, grid, s, cfg.grid_size, cfg.b_source);
  {
    auto f = open_out(out / "gof.csv");
    write_gof_csv(f, gof);
  }
  if (!grid.empty()) {
    const auto rows = expand_transitions(data, fit.spec.topology);
    const auto aj = aalen_johansen_path(counting_panel(rows, fit.spec.topology), s, grid);
    auto f = open_out(out / "aalen_johansen.csv");
    write_aj_csv(f, s, aj, fit.spec.topology);
  }
  std::cout << "coverage";
  for (const auto& cv : gof.coverage)
    std::cout << ' ' << cv.from << "->" << cv.to << ' ' << cv.inside << '/' << cv.points;
  std::cout << '\n';
}

int cmd_fit(const Common& c, int gof_points) {
  const Config cfg = resolve(c);
  const JointDataset data = load_dataset(c.longitudinal, c.history, cfg.spec);
  const FitResult res = fit(data, cfg.spec, cfg.control);
  const fs::path out(c.out);
  write_json(out / "fit.json", fit_to_json(res, cfg.resolved()));
  std::cout << "loglik " << format_double(res.loglik) << ", em " << res.convergence.em_iterations << ", qn "
            << res.convergence.qn_iterations << (res.convergence.converged ? ", converged" : ", NOT converged")
            << '\n';
  if (!res.convergence.converged) std::cerr << "warning: " << res.convergence.message << '\n';
  write_gof_bundle(out, res, data, cfg, gof_points, 0.0);
  return 0;
}

int cmd_simulate(const Common& c, std::optional<int> n) {
  Config cfg = resolve(c);
  if (!cfg.simulation) throw ValidationError("config has no simulation section");
  if (n) {
    if (*n < 0) throw ValidationError("--subjects must be non-negative");
    cfg.simulation->n_subjects = *n;
  }
  const SimulatedData sim = simulate_dataset(*cfg.simulation);
  const fs::path out(c.out);
  {
    auto f = open_out(out / "longitudinal.csv");
    write_longitudinal_csv(f, sim.longitudinal);
  }
  {
    auto f = open_out(out / "history.csv");
    write_history_csv(f, sim.events);
  }
  Json re = Json::array();
  for (const auto& s : sim.subjects) re.push_back({{"id", s.id}, {"b", std::vector<double>(s.b.data(), s.b.data() + s.b.size())}});
  const Eigen::MatrixXi U = transition_count_matrix(sim.dataset, cfg.spec.topology.n_states());
  write_json(out / "truth.json", {{"version", kVersion},
                                  {"config", cfg.resolved()},
                                  {"truth", parameters_to_json(cfg.simulation->truth, cfg.spec)},
                                  {"upsilon", matrix_json(U)},
                                  {"random_effects", re}});
  std::cout << "subjects " << sim.subjects.size() << ", observations " << sim.longitudinal.rows.size() << '\n';
  return 0;
}

struct FitInput {
  FitResult fit;
  Json config;
};

FitInput load_fit(const std::string& path) {
  const Json j = read_json(path);
  return {fit_from_json(j), j.at("config")};
}

int cmd_predict(const Common& c, const std::string& fit_path, double s, double t, int points, bool individual) {
  if (s > t) throw ValidationError("s must not exceed t");
  const FitInput in = load_fit(fit_path);
  Json jcfg = in.config;
  Config cfg = parse_config(jcfg);
  if (c.grid_size) cfg.grid_size = *c.grid_size;
  const JointDataset data = load_dataset(c.longitudinal, c.history, in.fit.spec);
  const auto profiles = subject_profiles(in.fit, data, cfg.b_source);
  const IntensityEvaluator model(in.fit.spec, unpack(in.fit.theta_hat.values, in.fit.spec));
  const auto& topo = in.fit.spec.topology;
  const ProbabilityPath avg = parametric_transprob_average(model, profiles, s, t, cfg.grid_size);
  ProbabilityPath shown = avg;
  if (points > 0) {
    shown.times = time_grid(s, t, points);
    if (shown.times.empty()) shown.times = {t};
    shown.P.clear();
    for (double x : shown.times) shown.P.push_back(avg.at(x));
  }
  const fs::path out(c.out);
  {
    auto f = open_out(out);
    write_probability_csv(f, s, shown, topo, true);
  }
  if (individual) {
    fs::path ind = out;
    ind.replace_filename(out.stem().string() + "_individual.csv");
    auto f = open_out(ind);
    f << "id,s,t,from,to,estimate\n";
    const int M = topo.n_states();
    for (std::size_t i = 0; i < profiles.size(); ++i) {
      const Eigen::MatrixXd P =
          parametric_transprob_individual(model, profiles[i].covariates, profiles[i].b, s, t, cfg.grid_size);
      for (int h = 0; h < M; ++h)
        for (int k = 0; k < M; ++k)
          f << data.subjects[i].id << ',' << format_double(s) << ',' << format_double(t) << ',' << h << ',' << k
            << ',' << format_double(P(h, k)) << '\n';
    }
  }
  return 0;
}

int cmd_gof(const Common& c, const std::string& fit_path, int points, double s) {
  const FitInput in = load_fit(fit_path);
  Config cfg = parse_config(in.config);
  if (c.grid_size) cfg.grid_size = *c.grid_size;
  const JointDataset data = load_dataset(c.longitudinal, c.history, in.fit.spec);
  write_gof_bundle(fs::path(c.out), in.fit, data, cfg, points, s);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint longitudinal and multi-state models"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  Common c;
  int threads = 0;
  auto common = [&](CLI::App* sub, bool data, bool config) {
    if (config) sub->add_option("--config", c.config, "JSON configuration")->check(CLI::ExistingFile);
    sub->add_option("--out", c.out, "output location")->required();
    sub->add_option("--seed", c.seed, "random seed");
    sub->add_option("--gh-order", c.gh_order, "Gauss-Hermite points per dimension");
    sub->add_option("--threads", threads, "OpenMP threads (0 = default)");
    sub->add_option("--grid-size", c.grid_size, "product-integral steps");
    if (data) {
      sub->add_option("--longitudinal", c.longitudinal, "longitudinal CSV")->required()->check(CLI::ExistingFile);
      sub->add_option("--history", c.history, "history CSV")->required()->check(CLI::ExistingFile);
    }
  };

  auto* prepare = app.add_subcommand("prepare", "expand histories into transition rows");
  common(prepare, true, true);

  int fit_gof_points = 0;
  auto* fitc = app.add_subcommand("fit", "fit the joint model");
  common(fitc, true, true);
  fitc->add_option("--gof-points", fit_gof_points, "grid points for the transition-probability check (0 = skip)");

  std::optional<int> n_subjects;
  auto* simc = app.add_subcommand("simulate", "simulate a dataset");
  common(simc, false, true);
  simc->add_option("--subjects", n_subjects, "number of subjects");

  std::string fit_path;
  double s = 0.0, t = 0.0;
  int points = 0;
  bool individual = false;
  auto* pred = app.add_subcommand("predict", "parametric transition probabilities");
  common(pred, true, false);
  pred->add_option("--fit", fit_path, "fit JSON")->required()->check(CLI::ExistingFile);
  pred->add_option("--s", s, "start time");
  pred->add_option("--t", t, "end time")->required();
  pred->add_option("--points", points, "output points (0 = every grid step)");
  pred->add_flag("--individual", individual, "also write per-subject P(s, t)");

  int gof_points = 20;
  double gof_s = 0.0;
  auto* gofc = app.add_subcommand("gof", "goodness-of-fit exports");
  common(gofc, true, false);
  gofc->add_option("--fit", fit_path, "fit JSON")->required()->check(CLI::ExistingFile);
  gofc->add_option("--points", gof_points, "grid points");
  gofc->add_option("--s", gof_s, "start time");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (threads > 0) omp_set_num_threads(threads);

  try {
    if (*prepare) return cmd_prepare(c);
    if (*fitc) return cmd_fit(c, fit_gof_points);
    if (*simc) return cmd_simulate(c, n_subjects);
    if (*pred) return cmd_predict(c, fit_path, s, t, points, individual);
    if (*gofc) return cmd_gof(c, fit_path, gof_points, gof_s);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
