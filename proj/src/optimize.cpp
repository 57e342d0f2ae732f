#include "jmstate/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace jmstate {

namespace {

// Internally everything minimises phi(x) = -f(x).
struct Minimand {
  const Objective& f;
  int evaluations = 0;

  double operator()(const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    ++evaluations;
    double v = f(x, g);
    if (g) *g = -*g;
    if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
    return -v;
  }
};

double cubic_min(double a, double fa, double ga, double b, double fb, double gb) {
  // Minimiser of the cubic interpolating (a, fa, ga) and (b, fb, gb).
  const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - ga * gb;
  if (!(disc >= 0.0) || !std::isfinite(fb) || !std::isfinite(gb)) return 0.5 * (a + b);
  const double d2 = std::copysign(std::sqrt(disc), b - a);
  const double t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
  const double lo = std::min(a, b), hi = std::max(a, b);
  const double margin = 0.1 * (hi - lo);
  if (!std::isfinite(t) || t < lo + margin || t > hi - margin) return 0.5 * (a + b);
  return t;
}

struct LineSearchResult {
  double alpha = 0.0;
  double value = 0.0;
  Eigen::VectorXd x, g;
  bool ok = false;
};

LineSearchResult strong_wolfe(Minimand& phi, const Eigen::VectorXd& x, double f0, const Eigen::VectorXd& g0,
                              const Eigen::VectorXd& p, double alpha1) {
  constexpr double c1 = 1e-4, c2 = 0.9;
  const double dphi0 = g0.dot(p);
  LineSearchResult out;
  if (!(dphi0 < 0.0)) return out;

  auto eval = [&](double a, double& fa, double& da, Eigen::VectorXd& xa, Eigen::VectorXd& ga) {
    xa = x + a * p;
    fa = phi(xa, &ga);
    da = std::isfinite(fa) ? ga.dot(p) : std::numeric_limits<double>::quiet_NaN();
  };

  auto zoom = [&](double lo, double flo, double dlo, double hi, double fhi, double dhi) {
    for (int it = 0; it < 30; ++it) {
      const double a = cubic_min(lo, flo, dlo, hi, fhi, dhi);
      double fa, da;
      Eigen::VectorXd xa, ga;
      eval(a, fa, da, xa, ga);
      if (!std::isfinite(fa) || fa > f0 + c1 * a * dphi0 || fa >= flo) {
        hi = a;
        fhi = fa;
        dhi = da;
      } else {
        if (std::abs(da) <= -c2 * dphi0) return LineSearchResult{a, fa, xa, ga, true};
        if (da * (hi - lo) >= 0.0) {
          hi = lo;
          fhi = flo;
          dhi = dlo;
        }
        lo = a;
        flo = fa;
        dlo = da;
      }
      if (std::abs(hi - lo) < 1e-14 * std::max(1.0, std::abs(lo))) break;
    }
    // Accept the best sufficient-decrease point found.
    if (lo > 0.0) {
      LineSearchResult r;
      r.alpha = lo;
      r.x = x + lo * p;
      r.value = phi(r.x, &r.g);
      r.ok = std::isfinite(r.value) && r.value < f0;
      return r;
    }
    return LineSearchResult{};
  };

  double a_prev = 0.0, f_prev = f0, d_prev = dphi0;
  double a = alpha1;
  for (int it = 0; it < 25; ++it) {
    double fa, da;
    Eigen::VectorXd xa, ga;
    eval(a, fa, da, xa, ga);
    if (!std::isfinite(fa)) {
      // Outside the domain: shrink towards the last good point.
      if (it > 0 && a_prev > 0.0) return zoom(a_prev, f_prev, d_prev, a, fa, da);
      a *= 0.2;
      continue;
    }
    if (fa > f0 + c1 * a * dphi0 || (it > 0 && fa >= f_prev))
      return zoom(a_prev, f_prev, d_prev, a, fa, da);
    if (std::abs(da) <= -c2 * dphi0) return LineSearchResult{a, fa, xa, ga, true};
    if (da >= 0.0) return zoom(a, fa, da, a_prev, f_prev, d_prev);
    a_prev = a;
    f_prev = fa;
    d_prev = da;
    a *= 2.0;
  }
  return out;
}

}  // namespace

BfgsResult maximize_bfgs(const Objective& f, Eigen::VectorXd x0, const BfgsOptions& options,
                         const Eigen::MatrixXd* inverse_hessian0) {
  Minimand phi{f};
  const Eigen::Index n = x0.size();
  BfgsResult res;
  Eigen::VectorXd g(n);
  double fx = phi(x0, &g);
  if (!std::isfinite(fx)) {
    res.x = x0;
    res.value = -fx;
    res.gradient = -g;
    res.message = "objective not finite at the starting point";
    res.evaluations = phi.evaluations;
    return res;
  }
  Eigen::MatrixXd H = inverse_hessian0 ? *inverse_hessian0 : Eigen::MatrixXd::Identity(n, n);
  bool scaled = inverse_hessian0 != nullptr;
  Eigen::VectorXd x = std::move(x0);
  int failures = 0;
  int polish = 0;
  int iter = 0;
  for (; iter < options.max_iter; ++iter) {
    if (g.cwiseAbs().maxCoeff() <= options.grad_tol) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      break;
    }
    Eigen::VectorXd p = -H * g;
    if (!(p.dot(g) < 0.0)) {
      H.setIdentity();
      scaled = false;
      p = -g;
    }
    double alpha1 = 1.0;
    const double pmax = p.cwiseAbs().maxCoeff();
    if (pmax > options.max_step) alpha1 = options.max_step / pmax;
    LineSearchResult ls = strong_wolfe(phi, x, fx, g, p, alpha1);
    if (!ls.ok) {
      if (++failures >= 2) {
        res.message = "line search failed";
        break;
      }
      H.setIdentity();
      H *= 1e-2 / std::max(1.0, g.cwiseAbs().maxCoeff());
      scaled = true;
      continue;
    }
    failures = 0;
    const Eigen::VectorXd s = ls.x - x;
    const Eigen::VectorXd y = ls.g - g;
    const double f_old = fx;
    x = ls.x;
    g = ls.g;
    fx = ls.value;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        H.setIdentity();
        H *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd Hy = H * y;
      const double yHy = y.dot(Hy);
      H += ((1.0 + rho * yHy) * rho) * (s * s.transpose()) - rho * (Hy * s.transpose() + s * Hy.transpose());
    }
    if (std::abs(f_old - fx) <= options.rel_f_tol * std::max(1.0, std::abs(fx)) &&
        g.cwiseAbs().maxCoeff() > options.grad_tol) {
      // Objective no longer moves at machine precision: accept quasi-Newton
      // steps while they shrink the gradient.
      if (polish < 10) {
        Eigen::VectorXd g_new(n);
        const Eigen::VectorXd x_new = x - H * g;
        const double f_new = phi(x_new, &g_new);
        if (std::isfinite(f_new) && g_new.cwiseAbs().maxCoeff() < 0.5 * g.cwiseAbs().maxCoeff() &&
            f_new <= fx + 1e-12 * std::max(1.0, std::abs(fx))) {
          ++polish;
          x = x_new;
          g = g_new;
          fx = f_new;
          continue;
        }
      }
      if (g.cwiseAbs().maxCoeff() <= 100.0 * options.grad_tol) {
        res.converged = true;
        res.message = "objective stalled near optimum";
      } else {
        res.message = "objective stalled";
      }
      ++iter;
      break;
    }
  }
  if (iter >= options.max_iter && res.message.empty()) {
    res.converged = g.cwiseAbs().maxCoeff() <= options.grad_tol;
    res.message = res.converged ? "gradient tolerance reached" : "iteration limit reached";
  }
  res.x = x;
  res.value = -fx;
  res.gradient = -g;
  res.inverse_hessian = H;
  res.iterations = iter;
  res.evaluations = phi.evaluations;
  return res;
}

Eigen::VectorXd central_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x, double rel_step) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = rel_step * std::max(1.0, std::abs(x[j]));
    xp[j] = x[j] + h;
    const double fp = f(xp);
    xp[j] = x[j] - h;
    const double fm = f(xp);
    xp[j] = x[j];
    g[j] = (fp - fm) / (2.0 * h);
  }
  return g;
}

Objective with_numeric_gradient(std::function<double(const Eigen::VectorXd&)> f, double rel_step) {
  return [f = std::move(f), rel_step](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    const double v = f(x);
    if (g && std::isfinite(v)) *g = central_gradient(f, x, rel_step);
    return v;
  };
}

Eigen::MatrixXd hessian_from_gradient(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& gradient, const Eigen::VectorXd& x,
    bool parallel) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd H(n, n);
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::VectorXd xp = x;
    const double h = fd_step(x[j]);
    xp[j] = x[j] + h;
    const Eigen::VectorXd gp = gradient(xp);
    xp[j] = x[j] - h;
    const Eigen::VectorXd gm = gradient(xp);
    H.col(j) = (gp - gm) / (2.0 * h);
  }
  return 0.5 * (H + H.transpose());
}

Eigen::MatrixXd hessian_from_values(const std::function<double(const Eigen::VectorXd&)>& f,
                                    const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd H(n, n);
  const double f0 = f(x);
  Eigen::VectorXd h(n);
  for (Eigen::Index j = 0; j < n; ++j) h[j] = 1e-4 * std::max(1.0, std::abs(x[j]));
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    xp[i] = x[i] + h[i];
    const double fp = f(xp);
    xp[i] = x[i] - h[i];
    const double fm = f(xp);
    xp[i] = x[i];
    H(i, i) = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
    for (Eigen::Index j = 0; j < i; ++j) {
      double acc = 0.0;
      for (int si : {1, -1})
        for (int sj : {1, -1}) {
          xp[i] = x[i] + si * h[i];
          xp[j] = x[j] + sj * h[j];
          acc += si * sj * f(xp);
        }
      xp[i] = x[i];
      xp[j] = x[j];
      H(i, j) = H(j, i) = acc / (4.0 * h[i] * h[j]);
    }
  }
  return H;
}

Eigen::MatrixXd nearest_psd(const Eigen::MatrixXd& A, double floor) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (A + A.transpose()));
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace jmstate
