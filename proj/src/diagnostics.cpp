#include "jmstate/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "jmstate/bspline.hpp"

namespace jmstate {

Eigen::MatrixXd empirical_bayes_modes(const FitResult& fit, const JointDataset& data) {
  JointModel model(fit.spec, data);
  model.update_modes(fit.theta_hat.values);
  Eigen::MatrixXd out(fit.spec.q(), model.n_subjects());
  for (int i = 0; i < model.n_subjects(); ++i) out.col(i) = model.workspace(i).mode;
  return out;
}

std::vector<SubjectProfile> subject_profiles(const FitResult& fit, const JointDataset& data,
                                             RandomEffectSource source) {
  const int q = fit.spec.q();
  Eigen::MatrixXd modes;
  if (source == RandomEffectSource::mode) modes = empirical_bayes_modes(fit, data);
  std::vector<SubjectProfile> out;
  for (std::size_t i = 0; i < data.subjects.size(); ++i) {
    SubjectProfile p;
    for (const auto& name : fit.spec.covariate_names)
      p.covariates.push_back(data.subjects[i].covariates.at(data.covariate_index(name)));
    p.b = source == RandomEffectSource::mode ? Eigen::VectorXd(modes.col(static_cast<Eigen::Index>(i)))
                                             : Eigen::VectorXd::Zero(q);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Residual> conditional_residuals(const FitResult& fit, const JointDataset& data) {
  const Eigen::MatrixXd modes = empirical_bayes_modes(fit, data);
  const ModelParameters par = unpack(fit.theta_hat.values, fit.spec);
  const double sigma = par.sigma();
  std::vector<Residual> out;
  for (std::size_t i = 0; i < data.subjects.size(); ++i) {
    const auto& s = data.subjects[i];
    std::vector<double> covs;
    for (const auto& name : fit.spec.covariate_names) covs.push_back(s.covariates.at(data.covariate_index(name)));
    const Eigen::VectorXd b = modes.col(static_cast<Eigen::Index>(i));
    for (std::size_t j = 0; j < s.y.size(); ++j) {
      Residual r;
      r.id = s.id;
      r.time = s.times[j];
      r.observed = s.y[j];
      r.fitted = true_level(b, par, r.time, covs, fit.spec);
      r.residual = r.observed - r.fitted;
      r.standardized = r.residual / sigma;
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<MarkerBin> observed_vs_predicted(const std::vector<Residual>& residuals, int n_bins) {
  if (n_bins < 1) throw ValidationError("number of bins must be positive");
  std::vector<MarkerBin> bins;
  if (residuals.empty()) return bins;
  std::vector<double> times;
  for (const auto& r : residuals) times.push_back(r.time);
  std::sort(times.begin(), times.end());
  std::vector<double> edges{times.front()};
  for (int j = 1; j <= n_bins; ++j) edges.push_back(j == n_bins ? times.back() : quantile_sorted(times, double(j) / n_bins));
  bins.resize(n_bins);
  std::vector<double> sum_y(n_bins, 0.0), sum_y2(n_bins, 0.0), sum_p(n_bins, 0.0);
  for (int j = 0; j < n_bins; ++j) {
    bins[j].lo = edges[j];
    bins[j].hi = edges[j + 1];
  }
  for (const auto& r : residuals) {
    // first bin whose right edge is >= t
    int j = static_cast<int>(std::lower_bound(edges.begin() + 1, edges.end(), r.time) - (edges.begin() + 1));
    j = std::min(j, n_bins - 1);
    ++bins[j].n;
    sum_y[j] += r.observed;
    sum_y2[j] += r.observed * r.observed;
    sum_p[j] += r.fitted;
  }
  for (int j = 0; j < n_bins; ++j) {
    auto& b = bins[j];
    if (b.n == 0) continue;
    b.observed = sum_y[j] / b.n;
    b.predicted = sum_p[j] / b.n;
    if (b.n >= 2) {
      const double var = std::max(0.0, (sum_y2[j] - b.n * b.observed * b.observed) / (b.n - 1));
      const double half = 1.96 * std::sqrt(var / b.n);
      b.ci_lo = b.observed - half;
      b.ci_hi = b.observed + half;
      b.ci_defined = true;
    }
  }
  return bins;
}

std::vector<MarkerBin> observed_vs_predicted(const FitResult& fit, const JointDataset& data, int n_bins) {
  return observed_vs_predicted(conditional_residuals(fit, data), n_bins);
}

GofResult compare_with_aalen_johansen(const TransitionTopology& topology, const AalenJohansenPath& aj,
                                      const std::vector<Eigen::MatrixXd>& parametric) {
  if (parametric.size() != aj.times.size()) throw ValidationError("parametric and AJ grids differ in length");
  const int M = topology.n_states();
  GofResult out;
  for (const auto& tr : topology.transitions()) out.coverage.push_back({tr.from, tr.to, 0, 0});
  for (std::size_t j = 0; j < aj.times.size(); ++j) {
    for (int k = 0; k < topology.n_transitions(); ++k) {
      const auto& tr = topology.transition(k);
      GofPoint g;
      g.t = aj.times[j];
      g.from = tr.from;
      g.to = tr.to;
      g.parametric = parametric[j](tr.from, tr.to);
      g.aalen_johansen = aj.P[j](tr.from, tr.to);
      const auto band = aj_confidence_interval(g.aalen_johansen, vec_variance(aj.cov[j], M, tr.from, tr.to));
      if (band) {
        g.band_defined = true;
        g.lo = band->lo;
        g.hi = band->hi;
        g.inside = g.parametric >= g.lo && g.parametric <= g.hi;
        ++out.coverage[k].points;
        out.coverage[k].inside += g.inside ? 1 : 0;
      }
      out.points.push_back(g);
    }
  }
  return out;
}

GofResult transprob_gof(const FitResult& fit, const JointDataset& data, const std::vector<double>& grid, double s,
                        int grid_size, RandomEffectSource source) {
  const TransitionTopology& topo = fit.spec.topology;
  if (grid.empty()) {
    GofResult empty;
    for (const auto& tr : topo.transitions()) empty.coverage.push_back({tr.from, tr.to, 0, 0});
    return empty;
  }
  const auto rows = expand_transitions(data, topo);
  const CountingProcessPanel panel = counting_panel(rows, topo);
  const ModelParameters par = unpack(fit.theta_hat.values, fit.spec);
  const IntensityEvaluator model(fit.spec, par);
  const auto profiles = subject_profiles(fit, data, source);
  const double t_max = *std::max_element(grid.begin(), grid.end());
  const int M = topo.n_states();

  // composite estimates: row h from the start of state h
  AalenJohansenPath aj;
  aj.times = grid;
  aj.P.assign(grid.size(), Eigen::MatrixXd::Identity(M, M));
  aj.cov.assign(grid.size(), Eigen::MatrixXd::Zero(M * M, M * M));
  std::vector<Eigen::MatrixXd> par_at(grid.size(), Eigen::MatrixXd::Identity(M, M));
  std::vector<double> start(M, std::nan(""));
  for (int h = 0; h < M; ++h) {
    if (topo.outgoing(h).empty() || panel.entries_[h].empty()) continue;
    start[h] = std::max(s, panel.entries_[h].front());
  }
  std::vector<double> done;
  for (int h = 0; h < M; ++h) {
    const double sh = start[h];
    if (std::isnan(sh) || std::find(done.begin(), done.end(), sh) != done.end()) continue;
    done.push_back(sh);
    std::vector<double> sub;
    std::vector<std::size_t> where;
    for (std::size_t j = 0; j < grid.size(); ++j)
      if (grid[j] >= sh) {
        sub.push_back(grid[j]);
        where.push_back(j);
      }
    if (sub.empty()) continue;
    const AalenJohansenPath path = aalen_johansen_path(panel, sh, sub);
    const ProbabilityPath avg = parametric_transprob_average(model, profiles, sh, std::max(t_max, sh), grid_size);
    for (int r = 0; r < M; ++r) {
      if (start[r] != sh) continue;
      for (std::size_t m = 0; m < sub.size(); ++m) {
        const std::size_t j = where[m];
        aj.P[j].row(r) = path.P[m].row(r);
        for (int k = 0; k < M; ++k) aj.cov[j](r + k * M, r + k * M) = path.cov[m](r + k * M, r + k * M);
        par_at[j].row(r) = avg.at(sub[m]).row(r);
      }
    }
  }
  GofResult out = compare_with_aalen_johansen(topo, aj, par_at);
  for (auto& g : out.points) g.s = std::isnan(start[g.from]) ? s : std::max(start[g.from], s);
  return out;
}

}  // namespace jmstate
