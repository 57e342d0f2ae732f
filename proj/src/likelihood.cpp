#include "jmstate/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>

namespace jmstate {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

double column_value(const DesignColumn& c, const ModelSpec& spec, const std::vector<double>& covs,
                    double t, bool derivative) {
  double v = 1.0;
  for (int j : c.covariates) v *= covs[j];
  if (c.basis >= 0) {
    const auto& basis = spec.time_bases[c.basis];
    v *= derivative ? basis.derivative(t) : basis.value(t);
  } else if (derivative) {
    return 0.0;
  }
  return v;
}

// Per-point linear predictor pieces that do not depend on b.
struct PointPredictor {
  Eigen::VectorXd base;   // T
  Eigen::MatrixXd c;      // q x T
  Eigen::VectorXd level;  // fixed part of the current level, T
  Eigen::VectorXd slope;
};

PointPredictor point_predictor(const ThetaView& th, const SubjectWorkspace& ws, const PointSet& ps) {
  const auto& m = th.params;
  const int T = ps.size();
  PointPredictor out;
  out.level = ps.x.transpose() * m.beta;
  out.slope = ps.dx.transpose() * m.beta;
  out.base.resize(T);
  out.c.resize(ps.z.rows(), T);
  const Eigen::VectorXd cov_effect = ws.transition_covariates * m.gamma;
  for (int t = 0; t < T; ++t) {
    const int k = ps.transition[t];
    const double el = m.eta_level[k], es = m.eta_slope[k];
    out.base[t] = ps.basis[t].dot(m.spline[ps.group[t]]) + th.zeta[k] + cov_effect[k] + el * out.level[t] +
                  es * out.slope[t];
    out.c.col(t) = el * ps.z.col(t) + es * ps.dz.col(t);
  }
  return out;
}

struct Kernel {
  Eigen::VectorXd log_g;   // per node log integrand including weights
  Eigen::MatrixXd lambda;  // T_cum x G
  PointPredictor cum, ev;
};

// Per-subject constants shared by the longitudinal terms.
struct LongitStats {
  double rr = 0.0;
  Eigen::VectorXd zr;
};

LongitStats longit_stats(const ThetaView& th, const SubjectWorkspace& ws) {
  const auto& beta = th.params.beta;
  LongitStats s;
  s.rr = ws.yty - 2.0 * beta.dot(ws.Xty) + beta.dot(ws.XtX * beta);
  s.zr = ws.Zty - ws.XtZ.transpose() * beta;
  return s;
}

}  // namespace

ThetaView::ThetaView(const Eigen::VectorXd& theta, const ModelSpec& spec) : params(unpack(theta, spec)) {
  const int q = spec.q();
  L = cholesky_from_parameters(params.d_cholesky, q);
  D = L * L.transpose();
  const Eigen::MatrixXd Linv = L.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(q, q));
  Dinv = Linv.transpose() * Linv;
  log_det_D = 0.0;
  for (int i = 0; i < q; ++i) log_det_D += 2.0 * std::log(L(i, i));
  sigma2 = std::exp(2.0 * params.log_sigma);
  zeta = zeta_by_transition(params, spec);
}

Eigen::VectorXd zeta_by_transition(const ModelParameters& params, const ModelSpec& spec) {
  const int K = spec.topology.n_transitions();
  Eigen::VectorXd z = Eigen::VectorXd::Zero(K);
  int at = 0;
  for (const auto& g : spec.baseline_groups)
    for (std::size_t j = 1; j < g.transitions.size(); ++j) z[g.transitions[j]] = params.zeta[at++];
  return z;
}

Eigen::VectorXd design_row(const Design& design, const ModelSpec& spec, const std::vector<double>& covs,
                           double t) {
  Eigen::VectorXd row(design.size());
  for (int j = 0; j < design.size(); ++j) row[j] = column_value(design.columns[j], spec, covs, t, false);
  return row;
}

Eigen::VectorXd design_row_derivative(const Design& design, const ModelSpec& spec,
                                      const std::vector<double>& covs, double t) {
  Eigen::VectorXd row(design.size());
  for (int j = 0; j < design.size(); ++j) row[j] = column_value(design.columns[j], spec, covs, t, true);
  return row;
}

IntensityEvaluator::IntensityEvaluator(const ModelSpec& spec, const ModelParameters& params)
    : spec_(&spec), params_(params) {
  if (!spec.has_knots()) throw ValidationError("spline knots have not been placed");
  for (const auto& kv : spec.knots) bases_.emplace_back(spec.spline.degree, kv);
  zeta_ = zeta_by_transition(params, spec);
}

double IntensityEvaluator::true_level(const Eigen::VectorXd& b, double t,
                                      const std::vector<double>& covs) const {
  double v = design_row(spec_->fixed, *spec_, covs, t).dot(params_.beta);
  if (spec_->q() > 0) v += design_row(spec_->random, *spec_, covs, t).dot(b);
  return v;
}

double IntensityEvaluator::true_slope(const Eigen::VectorXd& b, double t,
                                      const std::vector<double>& covs) const {
  if (spec_->derivative_design().empty()) throw ValidationError("model has no time-varying design");
  double v = design_row_derivative(spec_->fixed, *spec_, covs, t).dot(params_.beta);
  if (spec_->q() > 0) v += design_row_derivative(spec_->random, *spec_, covs, t).dot(b);
  return v;
}

double IntensityEvaluator::log_baseline(int transition, double t) const {
  const int g = spec_->group_of(transition);
  const auto& basis = bases_[g];
  return basis.window(basis.clamp(t)).dot(params_.spline[g]) + zeta_[transition];
}

double IntensityEvaluator::covariate_effect(int transition, const std::vector<double>& covs) const {
  double v = 0.0;
  for (std::size_t e = 0; e < spec_->transition_effects.size(); ++e) {
    const auto& eff = spec_->transition_effects[e];
    if (std::find(eff.transitions.begin(), eff.transitions.end(), transition) != eff.transitions.end())
      v += params_.gamma[static_cast<Eigen::Index>(e)] * covs[eff.covariate];
  }
  return v;
}

double IntensityEvaluator::log_intensity(int transition, double t, const Eigen::VectorXd& b,
                                         const std::vector<double>& covs) const {
  double v = log_baseline(transition, t) + covariate_effect(transition, covs);
  const Dependence dep = spec_->dependence[transition];
  if (uses_level(dep)) v += params_.eta_level[transition] * true_level(b, t, covs);
  if (uses_slope(dep)) v += params_.eta_slope[transition] * true_slope(b, t, covs);
  return v;
}

double IntensityEvaluator::intensity(int transition, double t, const Eigen::VectorXd& b,
                                     const std::vector<double>& covs) const {
  return std::exp(log_intensity(transition, t, b, covs));
}

double IntensityEvaluator::cumulative(int transition, double a, double t, const Eigen::VectorXd& b,
                                      const std::vector<double>& covs, double max_piece) const {
  BoundIntensity bound(*this, covs, b);
  bound.piece = max_piece;
  return bound.cumulative(transition, a, t);
}

BoundIntensity::BoundIntensity(const IntensityEvaluator& model, const std::vector<double>& covs,
                               const Eigen::VectorXd& b)
    : model_(&model) {
  const ModelSpec& spec = model.spec();
  const auto& par = model.params();
  std::vector<double> per_basis(spec.time_bases.size(), 0.0);
  auto add = [&](const Design& design, const Eigen::VectorXd& coef) {
    for (int j = 0; j < design.size(); ++j) {
      const auto& c = design.columns[j];
      double v = coef[j];
      for (int cv : c.covariates) v *= covs[cv];
      if (c.basis >= 0)
        per_basis[c.basis] += v;
      else
        level_const_ += v;
    }
  };
  add(spec.fixed, par.beta);
  if (spec.q() > 0) add(spec.random, b);
  for (std::size_t j = 0; j < per_basis.size(); ++j)
    if (per_basis[j] != 0.0) level_terms_.emplace_back(static_cast<int>(j), per_basis[j]);
  const int K = spec.topology.n_transitions();
  fixed_lp_.resize(K);
  for (int k = 0; k < K; ++k) fixed_lp_[k] = model.covariate_effect(k, covs) + model.zeta(k);
}

double BoundIntensity::level(double t) const {
  double v = level_const_;
  for (const auto& [j, c] : level_terms_) v += c * model_->spec().time_bases[j].value(t);
  return v;
}

double BoundIntensity::slope(double t) const {
  double v = 0.0;
  for (const auto& [j, c] : level_terms_) v += c * model_->spec().time_bases[j].derivative(t);
  return v;
}

double BoundIntensity::log_intensity(int k, double t) const {
  const ModelSpec& spec = model_->spec();
  const int g = spec.group_of(k);
  const auto& basis = model_->basis(g);
  double v = basis.window(basis.clamp(t)).dot(model_->params().spline[g]) + fixed_lp_[k];
  const Dependence dep = spec.dependence[k];
  if (uses_level(dep)) v += model_->params().eta_level[k] * level(t);
  if (uses_slope(dep)) v += model_->params().eta_slope[k] * slope(t);
  return v;
}

std::vector<double> BoundIntensity::cuts(int k, double a, double t) const {
  std::vector<double> out;
  for (double x : model_->basis(model_->spec().group_of(k)).knots())
    if (x > a && x < t) out.push_back(x);
  for (double x = std::floor(a / piece + 1.0) * piece; x < t; x += piece)
    if (x > a) out.push_back(x);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

double BoundIntensity::cumulative(int k, double a, double t) const {
  if (t <= a) return 0.0;
  auto f = [&](double u) { return intensity(k, u); };
  double total = 0.0, lo = a;
  for (double c : cuts(k, a, t)) {
    total += gauss_kronrod_15(f, lo, c).value;
    lo = c;
  }
  return total + gauss_kronrod_15(f, lo, t).value;
}

double true_level(const Eigen::VectorXd& b, const ModelParameters& params, double t,
                  const std::vector<double>& covs, const ModelSpec& spec) {
  double v = design_row(spec.fixed, spec, covs, t).dot(params.beta);
  if (spec.q() > 0) v += design_row(spec.random, spec, covs, t).dot(b);
  return v;
}

double true_slope(const Eigen::VectorXd& b, const ModelParameters& params, double t,
                  const std::vector<double>& covs, const ModelSpec& spec) {
  if (spec.derivative_design().empty()) throw ValidationError("model has no time-varying design");
  double v = design_row_derivative(spec.fixed, spec, covs, t).dot(params.beta);
  if (spec.q() > 0) v += design_row_derivative(spec.random, spec, covs, t).dot(b);
  return v;
}

double transition_intensity(int from, int to, double t, const Eigen::VectorXd& b,
                            const ModelParameters& params, const std::vector<double>& covs,
                            const ModelSpec& spec) {
  const auto k = spec.topology.index_of(from, to);
  if (!k) throw ValidationError("transition not allowed " + std::to_string(from) + "->" + std::to_string(to));
  return IntensityEvaluator(spec, params).intensity(*k, t, b, covs);
}

std::vector<Sojourn> sojourns_of(const SubjectHistory& h) {
  std::vector<Sojourn> out;
  double start = h.t_entry;
  for (std::size_t r = 0; r < h.times.size(); ++r) {
    Sojourn s;
    s.from = h.state_before(r);
    s.t_start = start;
    s.t_stop = h.times[r];
    s.to = h.delta[r] ? h.states[r] : -1;
    out.push_back(s);
    start = h.times[r];
  }
  return out;
}

SubjectWorkspace build_workspace(const SubjectData& subject, const JointDataset& data,
                                 const ModelSpec& spec) {
  if (!spec.has_knots()) throw ValidationError("spline knots have not been placed");
  SubjectWorkspace ws;
  ws.id = subject.id;
  ws.covariates.resize(spec.covariate_names.size());
  for (std::size_t j = 0; j < spec.covariate_names.size(); ++j)
    ws.covariates[j] = subject.covariates.at(data.covariate_index(spec.covariate_names[j]));
  const int p = spec.p(), q = spec.q();
  const int K = spec.topology.n_transitions();
  ws.n_obs = static_cast<int>(subject.y.size());
  ws.obs_times = subject.times;
  ws.X.resize(ws.n_obs, p);
  ws.Z.resize(ws.n_obs, q);
  ws.y = Eigen::Map<const Eigen::VectorXd>(subject.y.data(), ws.n_obs);
  for (int j = 0; j < ws.n_obs; ++j) {
    ws.X.row(j) = design_row(spec.fixed, spec, ws.covariates, subject.times[j]).transpose();
    ws.Z.row(j) = design_row(spec.random, spec, ws.covariates, subject.times[j]).transpose();
  }
  ws.XtX = ws.X.transpose() * ws.X;
  ws.XtZ = ws.X.transpose() * ws.Z;
  ws.ZtZ = ws.Z.transpose() * ws.Z;
  ws.Xty = ws.X.transpose() * ws.y;
  ws.Zty = ws.Z.transpose() * ws.y;
  ws.yty = ws.y.squaredNorm();

  ws.transition_covariates = Eigen::MatrixXd::Zero(K, static_cast<Eigen::Index>(spec.transition_effects.size()));
  for (std::size_t e = 0; e < spec.transition_effects.size(); ++e)
    for (int k : spec.transition_effects[e].transitions)
      ws.transition_covariates(k, static_cast<Eigen::Index>(e)) = ws.covariates[spec.transition_effects[e].covariate];

  std::vector<BSplineBasis> bases;
  for (const auto& kv : spec.knots) bases.emplace_back(spec.spline.degree, kv);

  struct RawPoint {
    int k;
    double t, w;
  };
  std::vector<RawPoint> cum, ev;
  ws.sojourns = sojourns_of(subject.history);
  const int panels = spec.quadrature.gk_panels;
  for (const auto& s : ws.sojourns) {
    const double width = (s.t_stop - s.t_start) / panels;
    for (int k : spec.topology.outgoing(s.from))
      for (int pnl = 0; pnl < panels; ++pnl) {
        const double lo = s.t_start + pnl * width;
        const double hi = pnl + 1 == panels ? s.t_stop : lo + width;
        const auto rule = kronrod15_rule(lo, hi);
        for (int j = 0; j < rule.size(); ++j) cum.push_back({k, rule.nodes[j], rule.weights[j]});
      }
    if (s.to >= 0) ev.push_back({*spec.topology.index_of(s.from, s.to), s.t_stop, 0.0});
  }

  auto fill = [&](PointSet& ps, const std::vector<RawPoint>& raw) {
    const int T = static_cast<int>(raw.size());
    ps.transition.resize(T);
    ps.group.resize(T);
    ps.basis.resize(T);
    ps.weight.resize(T);
    ps.time.resize(T);
    ps.x.resize(p, T);
    ps.dx.resize(p, T);
    ps.z.resize(q, T);
    ps.dz.resize(q, T);
    for (int i = 0; i < T; ++i) {
      const auto& r = raw[i];
      const int g = spec.group_of(r.k);
      ps.transition[i] = r.k;
      ps.group[i] = g;
      if (!bases[g].contains(r.t)) ++ws.clamped_points;
      ps.basis[i] = bases[g].window(bases[g].clamp(r.t));
      ps.weight[i] = r.w;
      ps.time[i] = r.t;
      ps.x.col(i) = design_row(spec.fixed, spec, ws.covariates, r.t);
      ps.dx.col(i) = design_row_derivative(spec.fixed, spec, ws.covariates, r.t);
      ps.z.col(i) = design_row(spec.random, spec, ws.covariates, r.t);
      ps.dz.col(i) = design_row_derivative(spec.random, spec, ws.covariates, r.t);
    }
  };
  fill(ws.cumulative, cum);
  fill(ws.events, ev);
  ws.mode = Eigen::VectorXd::Zero(q);
  ws.scale = Eigen::MatrixXd::Identity(q, q);
  return ws;
}

double conditional_longit_logdensity(const Eigen::VectorXd& b, const ThetaView& th,
                                     const SubjectWorkspace& ws) {
  const LongitStats s = longit_stats(th, ws);
  const double rss = s.rr - 2.0 * b.dot(s.zr) + b.dot(ws.ZtZ * b);
  return -0.5 * ws.n_obs * (kLog2Pi + std::log(th.sigma2)) - 0.5 * rss / th.sigma2;
}

double random_effects_logdensity(const Eigen::VectorXd& b, const ThetaView& th) {
  const int q = static_cast<int>(b.size());
  return -0.5 * q * kLog2Pi - 0.5 * th.log_det_D - 0.5 * b.dot(th.Dinv * b);
}

namespace {

struct Predictors {
  PointPredictor cum, ev;
};

struct Context {
  const ThetaView& th;
  const SubjectWorkspace& ws;
  Predictors pred;

  Context(const ThetaView& theta, const SubjectWorkspace& w)
      : th(theta), ws(w), pred{point_predictor(theta, w, w.cumulative), point_predictor(theta, w, w.events)} {}
};

double mstate_logdensity(const Context& ctx, const Eigen::VectorXd& b) {
  const auto& ws = ctx.ws;
  double v = 0.0;
  for (int t = 0; t < ws.cumulative.size(); ++t) {
    const double lp = ctx.pred.cum.base[t] + ctx.pred.cum.c.col(t).dot(b);
    v -= ws.cumulative.weight[t] * std::exp(lp);
  }
  for (int t = 0; t < ws.events.size(); ++t) v += ctx.pred.ev.base[t] + ctx.pred.ev.c.col(t).dot(b);
  return v;
}

Kernel run_kernel(const Context& ctx, const AdaptiveGrid& grid) {
  const auto& th = ctx.th;
  const auto& ws = ctx.ws;
  const int G = grid.size();
  Kernel k;
  const LongitStats ls = longit_stats(th, ws);
  // Longitudinal and prior terms per node.
  Eigen::VectorXd lg = grid.log_weights;
  const double const_y = -0.5 * ws.n_obs * (kLog2Pi + std::log(th.sigma2));
  const int q = static_cast<int>(grid.nodes.rows());
  const double const_b = -0.5 * q * kLog2Pi - 0.5 * th.log_det_D;
  const Eigen::MatrixXd ZtZB = ws.ZtZ * grid.nodes;
  const Eigen::MatrixXd DinvB = th.Dinv * grid.nodes;
  for (int n = 0; n < G; ++n) {
    const auto b = grid.nodes.col(n);
    const double rss = ls.rr - 2.0 * b.dot(ls.zr) + b.dot(ZtZB.col(n));
    lg[n] += const_y - 0.5 * rss / th.sigma2 + const_b - 0.5 * b.dot(DinvB.col(n));
  }
  // Multi-state terms.
  if (ws.cumulative.size() > 0) {
    k.lambda = ctx.pred.cum.c.transpose() * grid.nodes;
    k.lambda.colwise() += ctx.pred.cum.base;
    k.lambda = k.lambda.array().exp();
    lg.noalias() -= k.lambda.transpose() * ws.cumulative.weight;
  } else {
    k.lambda.resize(0, G);
  }
  if (ws.events.size() > 0) {
    lg.noalias() += grid.nodes.transpose() * ctx.pred.ev.c.rowwise().sum();
    lg.array() += ctx.pred.ev.base.sum();
  }
  k.log_g = std::move(lg);
  return k;
}

}  // namespace

double conditional_mstate_logdensity(const Eigen::VectorXd& b, const ThetaView& th,
                                     const SubjectWorkspace& ws) {
  const Context ctx(th, ws);
  return mstate_logdensity(ctx, b);
}

ModeResult empirical_bayes_mode(const ThetaView& th, const SubjectWorkspace& ws) {
  const int q = static_cast<int>(th.D.rows());
  ModeResult res;
  res.mode = Eigen::VectorXd::Zero(q);
  if (q == 0) {
    res.scale.resize(0, 0);
    return res;
  }
  const Context ctx(th, ws);
  const LongitStats ls = longit_stats(th, ws);
  auto objective = [&](const Eigen::VectorXd& b) {
    const double rss = ls.rr - 2.0 * b.dot(ls.zr) + b.dot(ws.ZtZ * b);
    return -0.5 * rss / th.sigma2 + mstate_logdensity(ctx, b) - 0.5 * b.dot(th.Dinv * b);
  };
  auto derivatives = [&](const Eigen::VectorXd& b, Eigen::VectorXd& g, Eigen::MatrixXd& H) {
    g = (ls.zr - ws.ZtZ * b) / th.sigma2 - th.Dinv * b;
    H = -ws.ZtZ / th.sigma2 - th.Dinv;
    for (int t = 0; t < ws.cumulative.size(); ++t) {
      const auto c = ctx.pred.cum.c.col(t);
      const double wl = ws.cumulative.weight[t] * std::exp(ctx.pred.cum.base[t] + c.dot(b));
      g.noalias() -= wl * c;
      H.noalias() -= wl * c * c.transpose();
    }
    g += ctx.pred.ev.c.rowwise().sum();
  };
  Eigen::VectorXd b = Eigen::VectorXd::Zero(q), g;
  Eigen::MatrixXd H;
  double f = objective(b);
  bool ok = std::isfinite(f);
  bool converged = false;
  double decrement = std::numeric_limits<double>::infinity();
  // Stops on the Newton decrement g' (-H)^-1 g, which is invariant to scale.
  for (int it = 0; ok && it < 100; ++it) {
    derivatives(b, g, H);
    Eigen::LLT<Eigen::MatrixXd> neg(-H);
    if (!g.allFinite() || neg.info() != Eigen::Success) {
      ok = false;
      break;
    }
    const Eigen::VectorXd step = neg.solve(g);
    decrement = g.dot(step);
    if ((decrement <= 1e-12 * std::max(1.0, std::abs(f)) && g.norm() <= 1e-8) || decrement <= 1e-24) {
      converged = true;
      break;
    }
    double a = 1.0;
    bool moved = false;
    for (int h = 0; h < 60; ++h, a *= 0.5) {
      const Eigen::VectorXd cand = b + a * step;
      const double fc = objective(cand);
      if (std::isfinite(fc) && fc >= f) {
        b = cand;
        f = fc;
        moved = true;
        break;
      }
    }
    if (!moved) {
      // f is flat at rounding level: take the full step if it shrinks the gradient
      const Eigen::VectorXd cand = b + step;
      Eigen::VectorXd gc;
      Eigen::MatrixXd Hc;
      derivatives(cand, gc, Hc);
      const double fc = objective(cand);
      if (gc.allFinite() && std::isfinite(fc) && gc.norm() < g.norm() && fc >= f - 1e-12 * std::max(1.0, std::abs(f))) {
        b = cand;
        f = fc;
        continue;
      }
      converged = decrement <= 1e-8;
      break;
    }
  }
  if (ok) {
    derivatives(b, g, H);
    ok = g.allFinite() && H.allFinite();
    converged = converged || decrement <= 1e-8;
  }
  if (ok) {
    Eigen::LLT<Eigen::MatrixXd> neg(-H);
    if (neg.info() == Eigen::Success) {
      const Eigen::MatrixXd cov = neg.solve(Eigen::MatrixXd::Identity(q, q));
      Eigen::LLT<Eigen::MatrixXd> cl(cov);
      if (cl.info() == Eigen::Success) {
        res.mode = b;
        res.scale = cl.matrixL();
        res.gradient_norm = g.norm();
        res.fallback = !converged;
        return res;
      }
    }
  }
  res.mode = Eigen::VectorXd::Zero(q);
  res.scale = th.L;
  res.fallback = true;
  res.gradient_norm = ok ? g.norm() : std::numeric_limits<double>::quiet_NaN();
  return res;
}

namespace {

SubjectMoments posterior_moments(const ThetaView& th, const SubjectWorkspace& ws, const AdaptiveGrid& grid,
                                 bool second) {
  const Context ctx(th, ws);
  Kernel k = run_kernel(ctx, grid);
  SubjectMoments m;
  m.loglik = log_sum_exp(k.log_g);
  if (!std::isfinite(m.loglik)) return m;
  m.weights = (k.log_g.array() - m.loglik).exp();
  const Eigen::MatrixXd Bw = grid.nodes * m.weights.asDiagonal();
  m.mean = grid.nodes * m.weights;
  m.second = Bw * grid.nodes.transpose();
  m.s0 = k.lambda * m.weights;
  m.s1 = Bw * k.lambda.transpose();
  if (second) {
    const int T = ws.cumulative.size();
    m.s2.resize(T);
    for (int t = 0; t < T; ++t) {
      const Eigen::VectorXd lw = k.lambda.row(t).transpose().cwiseProduct(m.weights);
      m.s2[t] = grid.nodes * lw.asDiagonal() * grid.nodes.transpose();
    }
  }
  return m;
}

}  // namespace

double subject_loglik(const ThetaView& th, const SubjectWorkspace& ws, const AdaptiveGrid& grid) {
  const Context ctx(th, ws);
  return log_sum_exp(run_kernel(ctx, grid).log_g);
}

SubjectMoments subject_moments(const ThetaView& th, const SubjectWorkspace& ws, const AdaptiveGrid& grid,
                               bool second_order_points) {
  SubjectMoments m = posterior_moments(th, ws, grid, second_order_points);
  if (!std::isfinite(m.loglik)) throw NumericalError("posterior weights underflow for subject '" + ws.id + "'");
  return m;
}

Eigen::VectorXd subject_gradient(const ThetaView& th, const SubjectWorkspace& ws, const SubjectMoments& m,
                                 const ParameterLayout& layout, const ModelSpec& spec) {
  (void)spec;
  const auto& par = th.params;
  const int q = layout.q();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(layout.size());
  const Context ctx(th, ws);
  const LongitStats ls = longit_stats(th, ws);

  // Longitudinal part.
  g.segment(layout.beta(), layout.p()) =
      (ws.Xty - ws.XtX * par.beta - ws.XtZ * m.mean) / th.sigma2;
  const double erss = ls.rr - 2.0 * m.mean.dot(ls.zr) + (ws.ZtZ.cwiseProduct(m.second)).sum();
  g[layout.log_sigma()] = -ws.n_obs + erss / th.sigma2;

  // Random-effects prior.
  if (q > 0) {
    const Eigen::MatrixXd G = -0.5 * th.Dinv + 0.5 * th.Dinv * m.second * th.Dinv;
    const Eigen::MatrixXd dL = 2.0 * G * th.L;
    for (int r = 0; r < q; ++r)
      for (int c = 0; c <= r; ++c)
        g[layout.chol_index(r, c)] = r == c ? dL(r, c) * th.L(r, c) : dL(r, c);
  }

  // Intensity points: coef is the derivative of the log-density with
  // respect to the linear predictor, averaged over the posterior.
  auto accumulate = [&](const PointSet& ps, const PointPredictor& pp, bool cumulative) {
    for (int t = 0; t < ps.size(); ++t) {
      const int k = ps.transition[t];
      double coef, el_term, es_term;
      if (cumulative) {
        const double w = ps.weight[t];
        coef = -w * m.s0[t];
        el_term = q > 0 ? -w * (pp.level[t] * m.s0[t] + ps.z.col(t).dot(m.s1.col(t))) : -w * pp.level[t] * m.s0[t];
        es_term = q > 0 ? -w * (pp.slope[t] * m.s0[t] + ps.dz.col(t).dot(m.s1.col(t))) : -w * pp.slope[t] * m.s0[t];
      } else {
        coef = 1.0;
        el_term = pp.level[t] + (q > 0 ? ps.z.col(t).dot(m.mean) : 0.0);
        es_term = pp.slope[t] + (q > 0 ? ps.dz.col(t).dot(m.mean) : 0.0);
      }
      const double el = par.eta_level[k], es = par.eta_slope[k];
      if (el != 0.0) g.segment(layout.beta(), layout.p()).noalias() += (coef * el) * ps.x.col(t);
      if (es != 0.0) g.segment(layout.beta(), layout.p()).noalias() += (coef * es) * ps.dx.col(t);
      if (layout.n_gamma() > 0)
        g.segment(layout.gamma(), layout.n_gamma()).noalias() += coef * ws.transition_covariates.row(k).transpose();
      if (layout.zeta_index(k) >= 0) g[layout.zeta_index(k)] += coef;
      if (layout.eta_level_index(k) >= 0) g[layout.eta_level_index(k)] += el_term;
      if (layout.eta_slope_index(k) >= 0) g[layout.eta_slope_index(k)] += es_term;
      const auto& bw = ps.basis[t];
      const int off = layout.spline_offset(ps.group[t]) + bw.first;
      for (int j = 0; j < bw.order; ++j) g[off + j] += coef * bw.values[j];
    }
  };
  accumulate(ws.cumulative, ctx.pred.cum, true);
  accumulate(ws.events, ctx.pred.ev, false);
  return g;
}

JointModel::JointModel(ModelSpec spec, const JointDataset& data)
    : spec_(std::move(spec)), layout_(spec_) {
  spec_.check();
  if (!spec_.has_knots()) throw ValidationError("spline knots have not been placed");
  ws_.resize(data.subjects.size());
  std::exception_ptr err;
#pragma omp parallel for schedule(dynamic, 16)
  for (std::size_t i = 0; i < data.subjects.size(); ++i) {
    try {
      ws_[i] = build_workspace(data.subjects[i], data, spec_);
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  rule_ = gauss_hermite(spec_.quadrature.gh_order);
  rebuild_grids();
}

int JointModel::clamped_points() const {
  int n = 0;
  for (const auto& w : ws_) n += w.clamped_points;
  return n;
}

void JointModel::set_gh_order(int n) {
  spec_.quadrature.gh_order = n;
  rule_ = gauss_hermite(n);
  rebuild_grids();
}

void JointModel::rebuild_grids() {
  grids_.resize(ws_.size());
  for (std::size_t i = 0; i < ws_.size(); ++i)
    grids_[i] = pseudo_adaptive_nodes(rule_, ws_[i].mode, ws_[i].scale);
}

int JointModel::update_modes(const Eigen::VectorXd& theta) {
  const ThetaView th(theta, spec_);
  const int N = n_subjects();
#pragma omp parallel for schedule(dynamic, 8)
  for (int i = 0; i < N; ++i) {
    const ModeResult r = empirical_bayes_mode(th, ws_[i]);
    ws_[i].mode = r.mode;
    ws_[i].scale = r.scale;
    ws_[i].mode_fallback = r.fallback;
  }
  int fallbacks = 0;
  for (const auto& w : ws_) fallbacks += w.mode_fallback ? 1 : 0;
  rebuild_grids();
  return fallbacks;
}

double JointModel::subject_loglik(const Eigen::VectorXd& theta, int i) const {
  const ThetaView th(theta, spec_);
  const Context ctx(th, ws_.at(i));
  return log_sum_exp(run_kernel(ctx, grids_[i]).log_g);
}

std::vector<double> JointModel::subject_logliks(const Eigen::VectorXd& theta) const {
  const ThetaView th(theta, spec_);
  const int N = n_subjects();
  std::vector<double> out(N);
#pragma omp parallel for schedule(dynamic, 8)
  for (int i = 0; i < N; ++i) {
    const Context ctx(th, ws_[i]);
    out[i] = log_sum_exp(run_kernel(ctx, grids_[i]).log_g);
  }
  return out;
}

double JointModel::total_loglik(const Eigen::VectorXd& theta) const {
  const auto parts = subject_logliks(theta);
  double s = 0.0;
  for (double v : parts) s += v;
  return s;
}

double JointModel::total_loglik_serial(const Eigen::VectorXd& theta) const {
  const ThetaView th(theta, spec_);
  double s = 0.0;
  for (int i = 0; i < n_subjects(); ++i) {
    const Context ctx(th, ws_[i]);
    s += log_sum_exp(run_kernel(ctx, grids_[i]).log_g);
  }
  return s;
}

double JointModel::loglik_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& gradient) const {
  const ThetaView th(theta, spec_);
  const int N = n_subjects();
  std::vector<double> ll(N);
  std::vector<Eigen::VectorXd> gs(N);
#pragma omp parallel for schedule(dynamic, 8)
  for (int i = 0; i < N; ++i) {
    const SubjectMoments m = posterior_moments(th, ws_[i], grids_[i], false);
    ll[i] = m.loglik;
    if (std::isfinite(m.loglik)) gs[i] = subject_gradient(th, ws_[i], m, layout_, spec_);
  }
  double s = 0.0;
  gradient = Eigen::VectorXd::Zero(layout_.size());
  for (int i = 0; i < N; ++i) {
    s += ll[i];
    if (std::isfinite(ll[i])) gradient += gs[i];
  }
  return s;
}

double JointModel::loglik_gradient_serial(const Eigen::VectorXd& theta, Eigen::VectorXd& gradient) const {
  const ThetaView th(theta, spec_);
  double s = 0.0;
  gradient = Eigen::VectorXd::Zero(layout_.size());
  for (int i = 0; i < n_subjects(); ++i) {
    const SubjectMoments m = posterior_moments(th, ws_[i], grids_[i], false);
    s += m.loglik;
    if (std::isfinite(m.loglik)) gradient += subject_gradient(th, ws_[i], m, layout_, spec_);
  }
  return s;
}

double JointModel::expected_complete_loglik(const Eigen::VectorXd& theta,
                                            const std::vector<SubjectMoments>& m) const {
  const ThetaView th(theta, spec_);
  const int N = n_subjects();
  std::vector<double> parts(N);
#pragma omp parallel for schedule(dynamic, 8)
  for (int i = 0; i < N; ++i) {
    const Context ctx(th, ws_[i]);
    const Kernel k = run_kernel(ctx, grids_[i]);
    double v = 0.0;
    for (int n = 0; n < k.log_g.size(); ++n)
      if (m[i].weights[n] > 0.0) v += m[i].weights[n] * (k.log_g[n] - grids_[i].log_weights[n]);
    parts[i] = v;
  }
  double total = 0.0;
  for (double v : parts) total += v;
  return std::isnan(total) ? -std::numeric_limits<double>::infinity() : total;
}

std::vector<SubjectMoments> JointModel::moments(const Eigen::VectorXd& theta, bool second_order_points) const {
  const ThetaView th(theta, spec_);
  const int N = n_subjects();
  std::vector<SubjectMoments> out(N);
#pragma omp parallel for schedule(dynamic, 8)
  for (int i = 0; i < N; ++i) out[i] = posterior_moments(th, ws_[i], grids_[i], second_order_points);
  for (int i = 0; i < N; ++i)
    if (!std::isfinite(out[i].loglik))
      throw NumericalError("posterior weights underflow for subject '" + ws_[i].id + "'");
  return out;
}

std::vector<std::vector<double>> place_knots(const JointDataset& data, const ModelSpec& spec) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  const int G = static_cast<int>(spec.baseline_groups.size());
  std::vector<std::vector<double>> times(G);
  for (const auto& s : data.subjects) {
    lo = std::min(lo, s.history.t_entry);
    hi = std::max(hi, s.history.last_time());
    for (const auto& soj : sojourns_of(s.history))
      if (soj.to >= 0) {
        const int k = *spec.topology.index_of(soj.from, soj.to);
        times[spec.group_of(k)].push_back(soj.t_stop);
      }
  }
  if (!(hi > lo)) throw ValidationError("cannot place knots: follow-up has zero length");
  const int m = spec.spline.internal_knots, d = spec.spline.degree;
  std::vector<std::vector<double>> out;
  for (int g = 0; g < G; ++g) {
    auto& v = times[g];
    std::sort(v.begin(), v.end());
    std::vector<double> kv(d + 1, lo);
    for (int j = 1; j <= m; ++j) {
      const double prob = static_cast<double>(j) / (m + 1);
      double x = v.empty() ? lo + prob * (hi - lo) : quantile_sorted(v, prob);
      x = std::clamp(x, lo, hi);
      kv.push_back(x);
    }
    for (int j = 0; j <= d; ++j) kv.push_back(hi);
    out.push_back(std::move(kv));
  }
  return out;
}

}  // namespace jmstate
