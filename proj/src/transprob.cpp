#include "jmstate/transprob.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

namespace jmstate {

int CountingProcessPanel::at_risk(int state, double t) const {
  const auto& in = entries_.at(state);
  const auto& out = exits_.at(state);
  const auto entered = std::lower_bound(in.begin(), in.end(), t) - in.begin();
  const auto left = std::lower_bound(out.begin(), out.end(), t) - out.begin();
  return static_cast<int>(entered - left);
}

CountingProcessPanel counting_panel(const std::vector<TransitionRow>& rows, const TransitionTopology& topology) {
  const int M = topology.n_states();
  CountingProcessPanel panel;
  panel.n_states = M;
  panel.entries_.assign(M, {});
  panel.exits_.assign(M, {});
  std::map<double, Eigen::MatrixXd> counts;
  for (const auto& r : rows) {
    // Every sojourn contributes one row per outgoing transition; count the
    // risk interval on the first of them only.
    if (topology.outgoing(r.from).front() == r.trans - 1) {
      panel.entries_[r.from].push_back(r.t_start);
      panel.exits_[r.from].push_back(r.t_stop);
    }
    if (r.status) {
      auto it = counts.find(r.t_stop);
      if (it == counts.end()) it = counts.emplace(r.t_stop, Eigen::MatrixXd::Zero(M, M)).first;
      it->second(r.from, r.to) += 1.0;
    }
  }
  for (int h = 0; h < M; ++h) {
    std::sort(panel.entries_[h].begin(), panel.entries_[h].end());
    std::sort(panel.exits_[h].begin(), panel.exits_[h].end());
  }
  for (auto& [t, dn] : counts) {
    panel.times.push_back(t);
    Eigen::VectorXd y(M);
    for (int h = 0; h < M; ++h) y[h] = panel.at_risk(h, t);
    panel.Y.push_back(std::move(y));
    panel.dN.push_back(std::move(dn));
  }
  return panel;
}

StepFunctionMatrix nelson_aalen(const CountingProcessPanel& panel) {
  const int M = panel.n_states;
  StepFunctionMatrix steps(M);
  for (std::size_t l = 0; l < panel.times.size(); ++l) {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(M, M);
    for (int h = 0; h < M; ++h) {
      const double out = panel.dN[l].row(h).sum();
      if (out == 0.0) continue;
      if (!(panel.Y[l][h] > 0.0)) throw NumericalError("transitions out of an empty risk set");
      for (int k = 0; k < M; ++k)
        if (k != h) d(h, k) = panel.dN[l](h, k) / panel.Y[l][h];
      d(h, h) = -out / panel.Y[l][h];
    }
    steps.push_back(panel.times[l], std::move(d));
  }
  return steps;
}

Eigen::MatrixXd aalen_johansen(const StepFunctionMatrix& steps, double s, double t) {
  return product_integral(steps, s, t);
}

Eigen::MatrixXd increment_covariance(const CountingProcessPanel& panel, std::size_t l) {
  const int M = panel.n_states;
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(M * M, M * M);
  const auto& dN = panel.dN[l];
  for (int h = 0; h < M; ++h) {
    const double Y = panel.Y[l][h];
    const double out = dN.row(h).sum();
    if (out == 0.0 || Y <= 0.0) continue;
    const double Y3 = Y * Y * Y;
    auto idx = [&](int k) { return h + k * M; };
    C(idx(h), idx(h)) = (Y - out) * out / Y3;
    for (int k = 0; k < M; ++k) {
      if (k == h) continue;
      const double c = -(Y - out) * dN(h, k) / Y3;
      C(idx(h), idx(k)) = c;
      C(idx(k), idx(h)) = c;
      for (int k2 = 0; k2 < M; ++k2) {
        if (k2 == h) continue;
        C(idx(k), idx(k2)) = ((k == k2 ? Y : 0.0) - dN(h, k)) * dN(h, k2) / Y3;
      }
    }
  }
  return C;
}

namespace {

Eigen::MatrixXd kron(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  Eigen::MatrixXd out(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j) out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return out;
}

// Greenwood update across the jump l; P is the estimate just before it.
void greenwood_step(Eigen::MatrixXd& cov, const Eigen::MatrixXd& P, const Eigen::MatrixXd& dA,
                    const CountingProcessPanel& panel, std::size_t l) {
  const int M = panel.n_states;
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(M, M);
  const Eigen::MatrixXd A = kron((I + dA).transpose(), I);
  const Eigen::MatrixXd B = kron(I, P);
  cov = A * cov * A.transpose() + B * increment_covariance(panel, l) * B.transpose();
}

}  // namespace

Eigen::MatrixXd greenwood_cov(const CountingProcessPanel& panel, const StepFunctionMatrix& steps, double s,
                              double t) {
  const int M = panel.n_states;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(M * M, M * M);
  Eigen::MatrixXd P = Eigen::MatrixXd::Identity(M, M);
  const auto& times = steps.jump_times();
  for (std::size_t l = 0; l < times.size(); ++l) {
    if (times[l] <= s) continue;
    if (times[l] > t) break;
    const Eigen::MatrixXd& dA = steps.increments()[l];
    greenwood_step(cov, P, dA, panel, l);
    P = P * (Eigen::MatrixXd::Identity(M, M) + dA);
  }
  return cov;
}

std::optional<Interval> aj_confidence_interval(double p, double variance) {
  if (!(p > 0.0)) return std::nullopt;
  const double half = 1.96 * std::sqrt(std::max(0.0, variance)) / p;
  return Interval{std::exp(std::log(p) - half), std::exp(std::log(p) + half)};
}

AalenJohansenPath aalen_johansen_path(const CountingProcessPanel& panel, double s, const std::vector<double>& grid) {
  if (!std::is_sorted(grid.begin(), grid.end())) throw ValidationError("time grid must be non-decreasing");
  if (!grid.empty() && grid.front() < s) throw ValidationError("time grid starts before s");
  const StepFunctionMatrix steps = nelson_aalen(panel);
  const int M = panel.n_states;
  AalenJohansenPath out;
  Eigen::MatrixXd P = Eigen::MatrixXd::Identity(M, M);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(M * M, M * M);
  const auto& times = steps.jump_times();
  std::size_t l = static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), s) - times.begin());
  for (double t : grid) {
    for (; l < times.size() && times[l] <= t; ++l) {
      const Eigen::MatrixXd& dA = steps.increments()[l];
      greenwood_step(cov, P, dA, panel, l);
      P = P * (Eigen::MatrixXd::Identity(M, M) + dA);
    }
    out.times.push_back(t);
    out.P.push_back(P);
    out.cov.push_back(cov);
  }
  return out;
}

Eigen::MatrixXd ProbabilityPath::at(double t) const {
  if (P.empty()) return {};
  const Eigen::Index M = P.front().rows();
  if (t <= start) return Eigen::MatrixXd::Identity(M, M);
  if (t >= times.back()) return P.back();
  const auto j = static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), t) - times.begin());
  const double t0 = j == 0 ? start : times[j - 1];
  const Eigen::MatrixXd P0 = j == 0 ? Eigen::MatrixXd::Identity(M, M) : P[j - 1];
  const double w = times[j] > t0 ? (t - t0) / (times[j] - t0) : 1.0;
  return (1.0 - w) * P0 + w * P[j];
}

ProbabilityPath parametric_path(const IntensityEvaluator& model, const std::vector<double>& covariates,
                                const Eigen::VectorXd& b, double s, double t, int grid_size) {
  if (s > t) throw ValidationError("prediction needs s <= t");
  if (grid_size < 1) throw ValidationError("grid size must be positive");
  const ModelSpec& spec = model.spec();
  const int M = spec.topology.n_states();
  const int K = spec.topology.n_transitions();
  const BoundIntensity bound = model.bind(covariates, b);
  ProbabilityPath out;
  out.start = s;
  out.times.reserve(grid_size);
  out.P.reserve(grid_size);
  Eigen::MatrixXd P = Eigen::MatrixXd::Identity(M, M);
  const double h = (t - s) / grid_size;
  Eigen::MatrixXd Q(M, M);
  for (int j = 1; j <= grid_size; ++j) {
    if (h > 0.0) {
      const double mid = s + (j - 0.5) * h;
      Q.setZero();
      for (int k = 0; k < K; ++k) {
        const auto& tr = spec.topology.transition(k);
        const double v = bound.intensity(k, mid) * h;
        Q(tr.from, tr.to) += v;
        Q(tr.from, tr.from) -= v;
      }
      P = P * matrix_exponential(Q);
    }
    out.times.push_back(j == grid_size ? t : s + j * h);
    out.P.push_back(P);
  }
  return out;
}

Eigen::MatrixXd parametric_transprob_individual(const IntensityEvaluator& model,
                                                const std::vector<double>& covariates, const Eigen::VectorXd& b,
                                                double s, double t, int grid_size) {
  if (s == t) return Eigen::MatrixXd::Identity(model.spec().topology.n_states(), model.spec().topology.n_states());
  return parametric_path(model, covariates, b, s, t, grid_size).P.back();
}

namespace {

ProbabilityPath empty_average(double s, double t, int grid_size, int M) {
  ProbabilityPath out;
  out.start = s;
  const double h = (t - s) / grid_size;
  for (int j = 1; j <= grid_size; ++j) {
    out.times.push_back(j == grid_size ? t : s + j * h);
    out.P.push_back(Eigen::MatrixXd::Identity(M, M));
  }
  return out;
}

void accumulate(ProbabilityPath& sum, const ProbabilityPath& p) {
  if (sum.P.empty()) {
    sum = p;
    return;
  }
  for (std::size_t j = 0; j < sum.P.size(); ++j) sum.P[j] += p.P[j];
}

}  // namespace

ProbabilityPath parametric_transprob_average(const IntensityEvaluator& model,
                                             const std::vector<SubjectProfile>& subjects, double s, double t,
                                             int grid_size) {
  if (s > t) throw ValidationError("prediction needs s <= t");
  const int N = static_cast<int>(subjects.size());
  const int M = model.spec().topology.n_states();
  if (N == 0) return empty_average(s, t, grid_size, M);
  // Fixed chunks summed in order keep the result independent of the thread count.
  constexpr int chunk = 32;
  const int C = (N + chunk - 1) / chunk;
  std::vector<ProbabilityPath> partial(C);
#pragma omp parallel for schedule(dynamic, 1)
  for (int c = 0; c < C; ++c)
    for (int i = c * chunk; i < std::min(N, (c + 1) * chunk); ++i)
      accumulate(partial[c], parametric_path(model, subjects[i].covariates, subjects[i].b, s, t, grid_size));
  ProbabilityPath out;
  for (const auto& p : partial) accumulate(out, p);
  out.start = s;
  for (auto& m : out.P) m /= static_cast<double>(N);
  return out;
}

ProbabilityPath parametric_transprob_average_serial(const IntensityEvaluator& model,
                                                    const std::vector<SubjectProfile>& subjects, double s,
                                                    double t, int grid_size) {
  if (s > t) throw ValidationError("prediction needs s <= t");
  if (subjects.empty()) return empty_average(s, t, grid_size, model.spec().topology.n_states());
  ProbabilityPath out;
  for (const auto& sp : subjects) accumulate(out, parametric_path(model, sp.covariates, sp.b, s, t, grid_size));
  out.start = s;
  for (auto& m : out.P) m /= static_cast<double>(subjects.size());
  return out;
}

}  // namespace jmstate
