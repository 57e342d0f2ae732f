#include "jmstate/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/special_functions/gamma.hpp>

#include "jmstate/optimize.hpp"

namespace jmstate {

namespace {

using Sparse = std::vector<std::pair<int, double>>;

// Fixed part of the derivative of one point's log-intensity with respect to
// the packed parameters. The b-dependent part lives in the eta rows only.
struct PointTerms {
  double lp = 0.0;  // log-intensity without the b terms
  Sparse a;
  int il = -1, is = -1;  // eta_level / eta_slope indices
};

PointTerms point_terms(const ParameterLayout& layout, const ModelParameters& par, const Eigen::VectorXd& zeta,
                       const SubjectWorkspace& ws, const PointSet& ps, int t) {
  PointTerms out;
  const int k = ps.transition[t];
  const double el = par.eta_level[k], es = par.eta_slope[k];
  const double level = ps.x.col(t).dot(par.beta);
  const double slope = ps.dx.col(t).dot(par.beta);
  out.lp = ps.basis[t].dot(par.spline[ps.group[t]]) + zeta[k] + el * level + es * slope;
  for (int j = 0; j < layout.p(); ++j) {
    const double v = el * ps.x(j, t) + es * ps.dx(j, t);
    if (v != 0.0) out.a.emplace_back(layout.beta() + j, v);
  }
  for (int e = 0; e < layout.n_gamma(); ++e) {
    const double w = ws.transition_covariates(k, e);
    out.lp += par.gamma[e] * w;
    if (w != 0.0) out.a.emplace_back(layout.gamma() + e, w);
  }
  if (layout.zeta_index(k) >= 0) out.a.emplace_back(layout.zeta_index(k), 1.0);
  out.il = layout.eta_level_index(k);
  out.is = layout.eta_slope_index(k);
  if (out.il >= 0) out.a.emplace_back(out.il, level);
  if (out.is >= 0) out.a.emplace_back(out.is, slope);
  const auto& bw = ps.basis[t];
  const int off = layout.spline_offset(ps.group[t]) + bw.first;
  for (int j = 0; j < bw.order; ++j) out.a.emplace_back(off + j, bw.values[j]);
  return out;
}

// Second derivative of the linear predictor: beta x eta cross terms.
void add_lp_hessian(Eigen::MatrixXd& H, const ParameterLayout& layout, const PointSet& ps, int t,
                    const PointTerms& pt, double coef) {
  for (int j = 0; j < layout.p(); ++j) {
    const int bj = layout.beta() + j;
    if (pt.il >= 0) {
      H(bj, pt.il) += coef * ps.x(j, t);
      H(pt.il, bj) += coef * ps.x(j, t);
    }
    if (pt.is >= 0) {
      H(bj, pt.is) += coef * ps.dx(j, t);
      H(pt.is, bj) += coef * ps.dx(j, t);
    }
  }
}

std::vector<int> survival_block(const ParameterLayout& layout) {
  std::vector<int> S;
  for (int j = 0; j < layout.p(); ++j) S.push_back(layout.beta() + j);
  for (int j = layout.gamma(); j < layout.size(); ++j) S.push_back(j);
  return S;
}

Eigen::MatrixXd sub_matrix(const Eigen::MatrixXd& A, const std::vector<int>& idx) {
  const int n = static_cast<int>(idx.size());
  Eigen::MatrixXd out(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out(i, j) = A(idx[i], idx[j]);
  return out;
}

Eigen::VectorXd sub_vector(const Eigen::VectorXd& v, const std::vector<int>& idx) {
  Eigen::VectorXd out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
  return out;
}

// Newton direction for a concave objective, ridge added until -H is PD.
Eigen::VectorXd newton_direction(const Eigen::MatrixXd& H, const Eigen::VectorXd& g) {
  Eigen::MatrixXd A = -H;
  double tau = 0.0;
  const double scale = std::max(1e-8, A.diagonal().cwiseAbs().maxCoeff());
  for (int attempt = 0; attempt < 60; ++attempt) {
    Eigen::MatrixXd M = A;
    M.diagonal().array() += tau;
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    if (llt.info() == Eigen::Success) {
      Eigen::VectorXd d = llt.solve(g);
      if (d.allFinite()) return d;
    }
    tau = tau == 0.0 ? 1e-8 * scale : tau * 10.0;
  }
  return g / scale;
}

double clip_step(Eigen::VectorXd& d, double cap) {
  const double m = d.cwiseAbs().maxCoeff();
  if (m > cap) d *= cap / m;
  return m;
}

}  // namespace

double FitResult::estimate(const std::string& name) const {
  const auto it = std::find(theta_hat.names.begin(), theta_hat.names.end(), name);
  if (it == theta_hat.names.end()) throw ValidationError("unknown parameter '" + name + "'");
  return theta_hat.values[it - theta_hat.names.begin()];
}

double FitResult::standard_error(const std::string& name) const {
  const auto it = std::find(theta_hat.names.begin(), theta_hat.names.end(), name);
  if (it == theta_hat.names.end()) throw ValidationError("unknown parameter '" + name + "'");
  if (se.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  return se[it - theta_hat.names.begin()];
}

double multistate_loglik(const JointModel& model, const ModelParameters& params) {
  ModelParameters par = params;
  par.eta_level.setZero();
  par.eta_slope.setZero();
  const ParameterLayout& layout = model.layout();
  const Eigen::VectorXd zeta = zeta_by_transition(par, model.spec());
  double total = 0.0;
  for (const auto& ws : model.workspaces()) {
    for (int t = 0; t < ws.cumulative.size(); ++t)
      total -= ws.cumulative.weight[t] * std::exp(point_terms(layout, par, zeta, ws, ws.cumulative, t).lp);
    for (int t = 0; t < ws.events.size(); ++t) total += point_terms(layout, par, zeta, ws, ws.events, t).lp;
  }
  return total;
}

MultistateInit fit_multistate_only(const JointModel& model, int max_iter) {
  const ModelSpec& spec = model.spec();
  const ParameterLayout& layout = model.layout();
  const int P = layout.size();
  ModelParameters par = zero_parameters(spec);

  // Constant hazards per group as the starting point.
  const int G = static_cast<int>(spec.baseline_groups.size());
  std::vector<double> events(G, 0.0), exposure(G, 0.0);
  for (const auto& ws : model.workspaces()) {
    for (const auto& s : ws.sojourns) {
      for (int k : spec.topology.outgoing(s.from))
        if (spec.baseline_groups[spec.group_of(k)].transitions[0] == k)
          exposure[spec.group_of(k)] += s.t_stop - s.t_start;
      if (s.to >= 0) events[spec.group_of(*spec.topology.index_of(s.from, s.to))] += 1.0;
    }
  }
  for (int g = 0; g < G; ++g) {
    const double rate = std::max(events[g], 0.5) / std::max(exposure[g], 1e-8);
    par.spline[g].setConstant(std::log(rate));
  }

  std::vector<int> active;
  for (int j = layout.gamma(); j < layout.eta(); ++j) active.push_back(j);
  for (int j = layout.spline(); j < layout.size(); ++j) active.push_back(j);

  auto evaluate = [&](const ModelParameters& m, Eigen::VectorXd* g, Eigen::MatrixXd* H) {
    const Eigen::VectorXd zeta = zeta_by_transition(m, spec);
    double f = 0.0;
    if (g) g->setZero(P);
    if (H) H->setZero(P, P);
    for (const auto& ws : model.workspaces()) {
      for (int t = 0; t < ws.cumulative.size(); ++t) {
        const PointTerms pt = point_terms(layout, m, zeta, ws, ws.cumulative, t);
        const double wl = ws.cumulative.weight[t] * std::exp(pt.lp);
        f -= wl;
        if (g)
          for (const auto& [i, v] : pt.a) (*g)[i] -= wl * v;
        if (H)
          for (const auto& [i, vi] : pt.a)
            for (const auto& [j, vj] : pt.a) (*H)(i, j) -= wl * vi * vj;
      }
      for (int t = 0; t < ws.events.size(); ++t) {
        const PointTerms pt = point_terms(layout, m, zeta, ws, ws.events, t);
        f += pt.lp;
        if (g)
          for (const auto& [i, v] : pt.a) (*g)[i] += v;
      }
    }
    return f;
  };
  auto with = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd theta = pack(par, spec).values;
    for (std::size_t i = 0; i < active.size(); ++i) theta[active[i]] = x[static_cast<Eigen::Index>(i)];
    return unpack(theta, spec);
  };

  MultistateInit out;
  Eigen::VectorXd x = sub_vector(pack(par, spec).values, active);
  Eigen::VectorXd g;
  Eigen::MatrixXd H;
  double f = evaluate(par, nullptr, nullptr);
  for (int it = 0; it < max_iter; ++it) {
    evaluate(with(x), &g, &H);
    const Eigen::VectorXd gs = sub_vector(g, active);
    out.iterations = it;
    if (gs.cwiseAbs().maxCoeff() < 1e-8) {
      out.converged = true;
      break;
    }
    Eigen::VectorXd d = newton_direction(sub_matrix(H, active), gs);
    clip_step(d, 5.0);
    double a = 1.0;
    bool moved = false;
    for (int h = 0; h < 50; ++h, a *= 0.5) {
      const Eigen::VectorXd cand = x + a * d;
      const double fc = evaluate(with(cand), nullptr, nullptr);
      if (std::isfinite(fc) && fc >= f) {
        moved = fc - f > 1e-12 * std::abs(f) || a == 1.0;
        x = cand;
        f = fc;
        break;
      }
    }
    if (!moved) {
      out.converged = gs.cwiseAbs().maxCoeff() < 1e-4;
      break;
    }
  }
  const ModelParameters fitted = with(x);
  out.gamma = fitted.gamma;
  out.zeta = fitted.zeta;
  out.spline = fitted.spline;
  out.loglik = f;
  return out;
}

Eigen::VectorXd em_iteration(const JointModel& model, const Eigen::VectorXd& theta, EmStep* info) {
  const ModelSpec& spec = model.spec();
  const ParameterLayout& layout = model.layout();
  const int P = layout.size(), N = model.n_subjects(), q = layout.q();
  const std::vector<SubjectMoments> m = model.moments(theta, true);
  const ThetaView th(theta, spec);
  const auto& par = th.params;

  std::vector<Eigen::MatrixXd> Hs(N);
  std::vector<Eigen::VectorXd> gs(N);
#pragma omp parallel for schedule(dynamic, 8)
  for (int i = 0; i < N; ++i) {
    const SubjectWorkspace& ws = model.workspace(i);
    const SubjectMoments& mi = m[i];
    gs[i] = subject_gradient(th, ws, mi, layout, spec);
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(P, P);
    H.block(layout.beta(), layout.beta(), layout.p(), layout.p()) -= ws.XtX / th.sigma2;
    const PointSet& cum = ws.cumulative;
    for (int t = 0; t < cum.size(); ++t) {
      const PointTerms pt = point_terms(layout, par, th.zeta, ws, cum, t);
      const double w = cum.weight[t];
      const double s0 = mi.s0[t];
      for (const auto& [a, va] : pt.a)
        for (const auto& [b, vb] : pt.a) H(a, b) -= w * s0 * va * vb;
      if (q > 0) {
        const double ul = pt.il >= 0 ? cum.z.col(t).dot(mi.s1.col(t)) : 0.0;
        const double us = pt.is >= 0 ? cum.dz.col(t).dot(mi.s1.col(t)) : 0.0;
        for (const auto& [a, va] : pt.a) {
          if (pt.il >= 0) {
            H(a, pt.il) -= w * va * ul;
            H(pt.il, a) -= w * va * ul;
          }
          if (pt.is >= 0) {
            H(a, pt.is) -= w * va * us;
            H(pt.is, a) -= w * va * us;
          }
        }
        const Eigen::MatrixXd& S2 = mi.s2[t];
        if (pt.il >= 0) H(pt.il, pt.il) -= w * cum.z.col(t).dot(S2 * cum.z.col(t));
        if (pt.is >= 0) H(pt.is, pt.is) -= w * cum.dz.col(t).dot(S2 * cum.dz.col(t));
        if (pt.il >= 0 && pt.is >= 0) {
          const double c = w * cum.z.col(t).dot(S2 * cum.dz.col(t));
          H(pt.il, pt.is) -= c;
          H(pt.is, pt.il) -= c;
        }
      }
      add_lp_hessian(H, layout, cum, t, pt, -w * s0);
    }
    for (int t = 0; t < ws.events.size(); ++t) {
      const PointTerms pt = point_terms(layout, par, th.zeta, ws, ws.events, t);
      add_lp_hessian(H, layout, ws.events, t, pt, 1.0);
    }
    Hs[i] = std::move(H);
  }
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(P, P);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(P);
  for (int i = 0; i < N; ++i) {
    H += Hs[i];
    g += gs[i];
  }

  const std::vector<int> S = survival_block(layout);
  Eigen::VectorXd d = newton_direction(sub_matrix(H, S), sub_vector(g, S));
  clip_step(d, 2.0);
  const double q0 = model.expected_complete_loglik(theta, m);
  Eigen::VectorXd next = theta;
  double a = 1.0, q1 = q0;
  int halvings = 0;
  for (; halvings < 40; ++halvings, a *= 0.5) {
    Eigen::VectorXd cand = theta;
    for (std::size_t j = 0; j < S.size(); ++j) cand[S[j]] += a * d[static_cast<Eigen::Index>(j)];
    const double qc = model.expected_complete_loglik(cand, m);
    if (std::isfinite(qc) && qc >= q0) {
      next = cand;
      q1 = qc;
      break;
    }
  }

  // Closed-form variance components at the new beta.
  const Eigen::VectorXd beta = next.segment(layout.beta(), layout.p());
  double rss = 0.0;
  int n_total = 0;
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(q, q);
  for (int i = 0; i < N; ++i) {
    const SubjectWorkspace& ws = model.workspace(i);
    const double rr = ws.yty - 2.0 * beta.dot(ws.Xty) + beta.dot(ws.XtX * beta);
    double e = rr;
    if (q > 0) {
      const Eigen::VectorXd zr = ws.Zty - ws.XtZ.transpose() * beta;
      e += -2.0 * m[i].mean.dot(zr) + ws.ZtZ.cwiseProduct(m[i].second).sum();
      D += m[i].second;
    }
    rss += e;
    n_total += ws.n_obs;
  }
  if (n_total > 0 && rss > 0.0) next[layout.log_sigma()] = 0.5 * std::log(rss / n_total);
  if (q > 0 && N > 0) {
    D /= N;
    Eigen::LLT<Eigen::MatrixXd> llt(D);
    if (llt.info() == Eigen::Success) next.segment(layout.chol(), layout.n_chol()) = cholesky_parameters(D);
  }
  if (info) {
    info->loglik_before = 0.0;
    for (const auto& mi : m) info->loglik_before += mi.loglik;
    info->q_gain = q1 - q0;
    info->halvings = halvings;
  }
  return next;
}

Eigen::MatrixXd observed_information(const JointModel& model, const Eigen::VectorXd& theta) {
  auto grad = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd g;
    model.loglik_gradient(x, g);
    return g;
  };
  return -hessian_from_gradient(grad, theta, false);
}

double wald_p_value(double estimate, double se) {
  if (!(se > 0.0) || !std::isfinite(se)) return std::numeric_limits<double>::quiet_NaN();
  return std::erfc(std::abs(estimate / se) / std::numbers::sqrt2);
}

namespace {

void finish(JointModel& model, FitResult& res, const Eigen::VectorXd& theta) {
  const ModelSpec& spec = model.spec();
  const ParameterLayout& layout = model.layout();
  const int P = layout.size(), q = layout.q();
  res.spec = spec;
  res.theta_hat.values = theta;
  res.theta_hat.names = layout.names();
  res.subject_ids.clear();
  const ThetaView th(theta, spec);
  // Reported modes are taken at theta-hat; the grid centres may be older.
  res.modes.resize(q, model.n_subjects());
  for (int i = 0; i < model.n_subjects(); ++i) {
    res.subject_ids.push_back(model.workspace(i).id);
    res.modes.col(i) = empirical_bayes_mode(th, model.workspace(i)).mode;
  }

  res.random_effects.clear();
  for (int r = 0; r < q; ++r)
    for (int c = 0; c <= r; ++c)
      res.random_effects.push_back(
          {"D[" + std::to_string(r + 1) + "," + std::to_string(c + 1) + "]", th.D(r, c), std::nan("")});

  res.se = Eigen::VectorXd::Constant(P, std::nan(""));
  res.p_values = Eigen::VectorXd::Constant(P, std::nan(""));
  if (!res.control.compute_vcov) return;
  Eigen::MatrixXd info = observed_information(model, theta);
  Eigen::LLT<Eigen::MatrixXd> llt(info);
  if (llt.info() != Eigen::Success) {
    res.flags.push_back("information_not_pd");
    const double floor = 1e-8 * std::max(1.0, info.diagonal().cwiseAbs().maxCoeff());
    info = nearest_psd(info, floor);
    llt.compute(info);
  }
  res.vcov = llt.solve(Eigen::MatrixXd::Identity(P, P));
  res.vcov = (0.5 * (res.vcov + res.vcov.transpose())).eval();
  for (int j = 0; j < P; ++j) {
    res.se[j] = res.vcov(j, j) > 0.0 ? std::sqrt(res.vcov(j, j)) : std::nan("");
    res.p_values[j] = wald_p_value(theta[j], res.se[j]);
  }

  // Delta method for the entries of D = L L'.
  const int nc = layout.n_chol();
  if (nc > 0) {
    const Eigen::VectorXd c0 = theta.segment(layout.chol(), nc);
    auto vech = [&](const Eigen::VectorXd& c) {
      const Eigen::MatrixXd L = cholesky_from_parameters(c, q);
      const Eigen::MatrixXd D = L * L.transpose();
      Eigen::VectorXd v(nc);
      int at = 0;
      for (int r = 0; r < q; ++r)
        for (int cc = 0; cc <= r; ++cc) v[at++] = D(r, cc);
      return v;
    };
    Eigen::MatrixXd J(nc, nc);
    for (int j = 0; j < nc; ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(c0[j]));
      Eigen::VectorXd up = c0, dn = c0;
      up[j] += h;
      dn[j] -= h;
      J.col(j) = (vech(up) - vech(dn)) / (2.0 * h);
    }
    const Eigen::MatrixXd V = J * res.vcov.block(layout.chol(), layout.chol(), nc, nc) * J.transpose();
    for (int j = 0; j < nc; ++j) res.random_effects[j].se = V(j, j) > 0.0 ? std::sqrt(V(j, j)) : std::nan("");
  }
}

}  // namespace

FitResult fit_from(JointModel& model, const Eigen::VectorXd& theta0, const FitControl& control) {
  FitResult res;
  res.control = control;
  if (model.gh_order() != control.gh_order) model.set_gh_order(control.gh_order);
  Eigen::VectorXd theta = theta0;
  int fallbacks = model.update_modes(theta);
  double ll = model.total_loglik(theta);
  if (!std::isfinite(ll)) throw NumericalError("log-likelihood is not finite at the starting values");
  res.convergence.log.push_back({"start", 0, ll});

  for (int it = 1; it <= control.em_max; ++it) {
    Eigen::VectorXd next = em_iteration(model, theta);
    if (control.mode_refresh == ModeRefresh::every_step) fallbacks = model.update_modes(next);
    const double ll_next = model.total_loglik(next);
    if (!std::isfinite(ll_next)) break;
    res.convergence.log.push_back({"em", it, ll_next});
    res.convergence.em_iterations = it;
    const double rel = std::abs(ll_next - ll) / (std::abs(ll) + 1e-10);
    theta = next;
    ll = ll_next;
    if (rel < control.em_tol) break;
  }

  if (control.mode_refresh == ModeRefresh::after_em && res.convergence.em_iterations > 0) {
    fallbacks = model.update_modes(theta);
    ll = model.total_loglik(theta);
  }

  Objective objective = [&model](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g) return model.loglik_gradient(x, *g);
    return model.total_loglik(x);
  };
  BfgsOptions opt;
  opt.max_iter = control.qn_max;
  opt.grad_tol = control.qn_tol;
  opt.max_step = 1.0;
  // The observed information after EM seeds the quasi-Newton matrix.
  Eigen::MatrixXd H0 = observed_information(model, theta);
  {
    const int P = static_cast<int>(theta.size());
    Eigen::LLT<Eigen::MatrixXd> llt(H0);
    if (llt.info() != Eigen::Success) {
      H0 = nearest_psd(H0, 1e-6 * std::max(1.0, H0.diagonal().cwiseAbs().maxCoeff()));
      llt.compute(H0);
    }
    H0 = llt.solve(Eigen::MatrixXd::Identity(P, P));
  }
  BfgsResult qn;
  for (int round = 0; round < 4; ++round) {
    qn = maximize_bfgs(objective, theta, opt, &H0);
    res.convergence.qn_iterations += qn.iterations;
    res.convergence.log.push_back({"qn", res.convergence.qn_iterations, qn.value});
    theta = qn.x;
    ll = qn.value;
    H0 = qn.inverse_hessian;
    if (control.mode_refresh != ModeRefresh::every_step || round == 3) break;
    // Re-centre the nodes; another pass only when the score moved.
    fallbacks = model.update_modes(theta);
    Eigen::VectorXd g;
    model.loglik_gradient(theta, g);
    if (g.cwiseAbs().maxCoeff() <= 10.0 * control.qn_tol) break;
  }
  Eigen::VectorXd g;
  ll = model.loglik_gradient(theta, g);
  res.loglik = ll;
  res.convergence.gradient_norm = g.cwiseAbs().maxCoeff();
  res.convergence.converged = qn.converged || res.convergence.gradient_norm <= 10.0 * control.qn_tol;
  res.convergence.message = qn.message;
  if (!res.convergence.converged) res.flags.push_back("not_converged");
  if (fallbacks > 0) res.flags.push_back("mode_fallback:" + std::to_string(fallbacks));
  if (model.clamped_points() > 0) res.flags.push_back("clamped_points:" + std::to_string(model.clamped_points()));
  finish(model, res, theta);
  return res;
}

FitResult fit(const JointDataset& data, ModelSpec spec, const FitControl& control) {
  spec.check();
  bool placed = false;
  if (!spec.has_knots()) {
    spec.knots = place_knots(data, spec);
    placed = true;
  }
  spec.quadrature.gh_order = control.gh_order;
  JointModel model(spec, data);

  const LmmFit lmm = fit_lmm(lmm_subjects(model.workspaces()), spec.q());
  const MultistateInit ms = fit_multistate_only(model);
  ModelParameters start = zero_parameters(spec);
  start.beta = lmm.beta;
  start.log_sigma = lmm.log_sigma;
  start.d_cholesky = lmm.d_cholesky;
  start.gamma = ms.gamma;
  start.zeta = ms.zeta;
  start.spline = ms.spline;
  // A degenerate marginal fit would pin D at the boundary.
  for (int r = 0, at = 0; r < spec.q(); ++r)
    for (int c = 0; c <= r; ++c, ++at)
      if (r == c) start.d_cholesky[at] = std::max(start.d_cholesky[at], std::log(1e-3));

  FitResult res = fit_from(model, pack(start, spec).values, control);
  res.convergence.log.insert(res.convergence.log.begin(), {"init", ms.iterations, ms.loglik});
  if (lmm.sigma_boundary || lmm.d_boundary) res.flags.push_back("lmm_boundary");
  if (!ms.converged) res.flags.push_back("init_not_converged");
  if (placed) res.flags.push_back("knots_placed");
  return res;
}

Eigen::RowVectorXd contrast_row(const ModelSpec& spec, const std::vector<std::pair<std::string, double>>& terms) {
  const ParameterLayout layout(spec);
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(layout.size());
  for (const auto& [name, weight] : terms) {
    const auto& names = layout.names();
    const auto it = std::find(names.begin(), names.end(), name);
    if (it != names.end()) {
      row[it - names.begin()] += weight;
      continue;
    }
    // gamma[cov@h->k]: the coefficient acting on that transition
    const auto at = name.find('@');
    if (name.rfind("gamma[", 0) != 0 || at == std::string::npos || name.back() != ']')
      throw ValidationError("unknown parameter '" + name + "'");
    const std::string cov = name.substr(6, at - 6);
    const int k = spec.topology.parse_label(name.substr(at + 1, name.size() - at - 2));
    bool found = false;
    for (std::size_t e = 0; e < spec.transition_effects.size() && !found; ++e) {
      const auto& eff = spec.transition_effects[e];
      if (spec.covariate_names.at(eff.covariate) != cov) continue;
      if (std::find(eff.transitions.begin(), eff.transitions.end(), k) == eff.transitions.end()) continue;
      row[layout.gamma() + static_cast<int>(e)] += weight;
      found = true;
    }
    if (!found) throw ValidationError("no effect of '" + cov + "' on transition " + spec.topology.label(k));
  }
  return row;
}

WaldResult wald_test(const FitResult& fit, const Eigen::MatrixXd& L, const Eigen::VectorXd& null) {
  const Eigen::VectorXd& theta = fit.theta_hat.values;
  if (L.cols() != theta.size()) throw ValidationError("contrast matrix has the wrong number of columns");
  if (null.size() != L.rows()) throw ValidationError("null vector length differs from the number of contrasts");
  if (fit.vcov.rows() != theta.size()) throw ValidationError("fit has no covariance matrix");
  std::vector<int> keep;
  for (int r = 0; r < L.rows(); ++r)
    if (L.row(r).cwiseAbs().maxCoeff() > 0.0) keep.push_back(r);
  WaldResult out;
  if (keep.empty()) return out;
  const int m = static_cast<int>(keep.size());
  Eigen::MatrixXd Lk(m, L.cols());
  Eigen::VectorXd nk(m);
  for (int r = 0; r < m; ++r) {
    Lk.row(r) = L.row(keep[r]);
    nk[r] = null[keep[r]];
  }
  const Eigen::VectorXd diff = Lk * theta - nk;
  const Eigen::MatrixXd V = Lk * fit.vcov * Lk.transpose();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(V);
  if (lu.rank() < m) throw NumericalError("contrast covariance is singular");
  out.statistic = diff.dot(lu.solve(diff));
  out.dof = m;
  out.p_value = boost::math::gamma_q(0.5 * m, 0.5 * std::max(0.0, out.statistic));
  return out;
}

}  // namespace jmstate
