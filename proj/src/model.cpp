#include "jmstate/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

namespace jmstate {

double TimeBasis::value(double t) const {
  switch (kind) {
    case TimeBasisKind::identity:
      return t;
    case TimeBasisKind::power_drop:
      return std::pow(1.0 + t, exponent) - 1.0;
    case TimeBasisKind::power_rise:
      return std::pow(t, 1.0 + exponent) / std::pow(1.0 + t, exponent);
  }
  return 0.0;
}

double TimeBasis::derivative(double t) const {
  switch (kind) {
    case TimeBasisKind::identity:
      return 1.0;
    case TimeBasisKind::power_drop:
      return exponent * std::pow(1.0 + t, exponent - 1.0);
    case TimeBasisKind::power_rise: {
      const double nu = exponent;
      const double a = (1.0 + nu) * std::pow(t, nu) / std::pow(1.0 + t, nu);
      const double b = nu * std::pow(t, 1.0 + nu) / std::pow(1.0 + t, nu + 1.0);
      return a - b;
    }
  }
  return 0.0;
}

const char* to_string(Dependence d) {
  switch (d) {
    case Dependence::none: return "none";
    case Dependence::level: return "level";
    case Dependence::slope: return "slope";
    case Dependence::both: return "both";
  }
  return "none";
}

Dependence parse_dependence(const std::string& s) {
  if (s == "none") return Dependence::none;
  if (s == "level" || s == "value") return Dependence::level;
  if (s == "slope") return Dependence::slope;
  if (s == "both") return Dependence::both;
  throw ValidationError("unknown dependence form '" + s + "'");
}

DerivativeDesign ModelSpec::derivative_design() const {
  DerivativeDesign d;
  for (int j = 0; j < fixed.size(); ++j)
    if (fixed.columns[j].time_varying()) d.fixed_index.push_back(j);
  for (int j = 0; j < random.size(); ++j)
    if (random.columns[j].time_varying()) d.random_index.push_back(j);
  return d;
}

int ModelSpec::group_of(int transition) const {
  for (std::size_t g = 0; g < baseline_groups.size(); ++g)
    for (int t : baseline_groups[g].transitions)
      if (t == transition) return static_cast<int>(g);
  throw ValidationError("transition " + topology.label(transition) + " has no baseline group");
}

int ModelSpec::covariate(const std::string& name) {
  auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
  if (it != covariate_names.end()) return static_cast<int>(it - covariate_names.begin());
  covariate_names.push_back(name);
  return static_cast<int>(covariate_names.size()) - 1;
}

DesignColumn ModelSpec::parse_column(const std::string& expression) {
  DesignColumn col;
  col.label = expression;
  std::string token;
  std::vector<std::string> factors;
  for (char c : expression) {
    if (c == '*' || c == ':') {
      factors.push_back(token);
      token.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      token.push_back(c);
    }
  }
  factors.push_back(token);
  for (const auto& f : factors) {
    if (f.empty()) throw ValidationError("empty factor in design column '" + expression + "'");
    if (f == "1") continue;
    auto it = std::find_if(time_bases.begin(), time_bases.end(),
                           [&](const TimeBasis& b) { return b.name == f; });
    if (it != time_bases.end()) {
      if (col.basis >= 0)
        throw ValidationError("design column '" + expression + "' uses more than one time basis");
      col.basis = static_cast<int>(it - time_bases.begin());
    } else {
      col.covariates.push_back(covariate(f));
    }
  }
  return col;
}

void ModelSpec::check() const {
  const int K = topology.n_transitions();
  if (static_cast<int>(dependence.size()) != K)
    throw ValidationError("dependence form must be given for every transition");
  if (q() == 0) {
    for (auto d : dependence)
      if (d != Dependence::none) throw ValidationError("dependence on the marker needs random effects");
  }
  const auto deriv = derivative_design();
  for (auto d : dependence)
    if (uses_slope(d) && deriv.empty())
      throw ValidationError("slope dependence needs a time-varying design");
  for (const auto* design : {&fixed, &random})
    for (const auto& c : design->columns) {
      for (int v : c.covariates)
        if (v < 0 || v >= static_cast<int>(covariate_names.size()))
          throw ValidationError("design column '" + c.label + "' references an unknown covariate");
      if (c.basis >= static_cast<int>(time_bases.size()))
        throw ValidationError("design column '" + c.label + "' references an unknown time basis");
    }
  std::vector<int> covered(K, 0);
  if (baseline_groups.empty()) throw ValidationError("no baseline groups");
  for (const auto& g : baseline_groups) {
    if (g.transitions.empty()) throw ValidationError("empty baseline group");
    for (int t : g.transitions) {
      if (t < 0 || t >= K) throw ValidationError("baseline group references an unknown transition");
      if (covered[t]++) throw ValidationError("transition " + topology.label(t) + " is in two baseline groups");
    }
  }
  for (int t = 0; t < K; ++t)
    if (!covered[t]) throw ValidationError("transition " + topology.label(t) + " has no baseline group");
  for (const auto& e : transition_effects) {
    if (e.covariate < 0 || e.covariate >= static_cast<int>(covariate_names.size()))
      throw ValidationError("transition effect references an unknown covariate");
    if (e.transitions.empty()) throw ValidationError("transition effect without transitions");
    for (int t : e.transitions)
      if (t < 0 || t >= K) throw ValidationError("transition effect references an unknown transition");
  }
  if (spline.degree < 0 || spline.degree > 7) throw ValidationError("spline degree must be in 0..7");
  if (spline.internal_knots < 0) throw ValidationError("negative internal knot count");
  if (quadrature.gh_order < 1) throw ValidationError("gh_order must be >= 1");
  if (quadrature.gk_panels < 1) throw ValidationError("gk_panels must be >= 1");
  if (quadrature.gk_order != 15) throw ValidationError("only the 15-point Kronrod rule is available");
  if (!knots.empty()) {
    if (knots.size() != baseline_groups.size())
      throw ValidationError("one knot vector per baseline group is required");
    const std::size_t expected = spline.internal_knots + 2 * (spline.degree + 1);
    for (const auto& kv : knots) {
      if (kv.size() != expected) throw ValidationError("knot vector has the wrong length");
      if (!std::is_sorted(kv.begin(), kv.end())) throw ValidationError("knots must be non-decreasing");
    }
  }
}

ModelSpec reference_model_spec() {
  ModelSpec spec;
  spec.topology = TransitionTopology::illness_death();
  spec.time_bases = {TimeBasis{"t", TimeBasisKind::identity, 0.0}};
  for (const char* c : {"1", "X", "t", "X*t"}) spec.fixed.columns.push_back(spec.parse_column(c));
  for (const char* c : {"1", "t"}) spec.random.columns.push_back(spec.parse_column(c));
  const int x = spec.covariate("X");
  for (int k = 0; k < 3; ++k) {
    spec.transition_effects.push_back({x, {k}});
    spec.baseline_groups.push_back({{k}});
  }
  spec.dependence.assign(3, Dependence::both);
  const std::vector<double> kv = {0.004, 0.004, 0.004, 0.004, 4.120, 7.455,
                                  10.908, 18.201, 18.201, 18.201, 18.201};
  spec.knots.assign(3, kv);
  spec.check();
  return spec;
}

ParameterLayout::ParameterLayout(const ModelSpec& spec) {
  const auto& topo = spec.topology;
  const int K = topo.n_transitions();
  p_ = spec.p();
  q_ = spec.q();
  int at = 0;
  beta_ = at;
  for (const auto& c : spec.fixed.columns) names_.push_back("beta[" + c.label + "]");
  at += p_;
  log_sigma_ = at++;
  names_.push_back("log_sigma");
  chol_ = at;
  for (int r = 0; r < q_; ++r)
    for (int c = 0; c <= r; ++c)
      names_.push_back((r == c ? "chol_log[" : "chol[") + std::to_string(r + 1) + "," +
                       std::to_string(c + 1) + "]");
  at += n_chol();
  gamma_ = at;
  n_gamma_ = static_cast<int>(spec.transition_effects.size());
  for (const auto& e : spec.transition_effects) {
    std::string name = "gamma[" + spec.covariate_names.at(e.covariate) + "@";
    for (std::size_t j = 0; j < e.transitions.size(); ++j)
      name += (j ? "," : "") + topo.label(e.transitions[j]);
    names_.push_back(name + "]");
  }
  at += n_gamma_;
  zeta_ = at;
  zeta_index_.assign(K, -1);
  for (const auto& g : spec.baseline_groups)
    for (std::size_t j = 1; j < g.transitions.size(); ++j) {
      zeta_index_[g.transitions[j]] = at++;
      names_.push_back("zeta[" + topo.label(g.transitions[j]) + "]");
    }
  n_zeta_ = at - zeta_;
  eta_ = at;
  eta_level_.assign(K, -1);
  eta_slope_.assign(K, -1);
  for (int k = 0; k < K; ++k)
    if (uses_level(spec.dependence[k])) {
      eta_level_[k] = at++;
      names_.push_back("eta_level[" + topo.label(k) + "]");
    }
  for (int k = 0; k < K; ++k)
    if (uses_slope(spec.dependence[k])) {
      eta_slope_[k] = at++;
      names_.push_back("eta_slope[" + topo.label(k) + "]");
    }
  n_eta_ = at - eta_;
  spline_ = at;
  const int per_group = spec.spline.internal_knots + spec.spline.degree + 1;
  for (const auto& g : spec.baseline_groups) {
    spline_offset_.push_back(at);
    spline_size_.push_back(per_group);
    for (int j = 0; j < per_group; ++j)
      names_.push_back("spline[" + topo.label(g.transitions[0]) + "][" + std::to_string(j + 1) + "]");
    at += per_group;
  }
  n_spline_ = at - spline_;
  size_ = at;
}

int ParameterLayout::index_of(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return static_cast<int>(it - names_.begin());
}

double ModelParameters::sigma() const { return std::exp(log_sigma); }

Eigen::MatrixXd ModelParameters::cholesky_factor() const {
  const int n = static_cast<int>(d_cholesky.size());
  const int q = static_cast<int>((std::sqrt(8.0 * n + 1.0) - 1.0) / 2.0 + 0.5);
  return cholesky_from_parameters(d_cholesky, q);
}

Eigen::MatrixXd ModelParameters::covariance() const {
  const Eigen::MatrixXd L = cholesky_factor();
  return L * L.transpose();
}

Eigen::MatrixXd cholesky_from_parameters(const Eigen::VectorXd& params, int q) {
  if (params.size() != q * (q + 1) / 2) throw ValidationError("Cholesky parameter dimension mismatch");
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(q, q);
  int at = 0;
  for (int r = 0; r < q; ++r)
    for (int c = 0; c <= r; ++c, ++at) L(r, c) = r == c ? std::exp(params[at]) : params[at];
  return L;
}

Eigen::VectorXd cholesky_parameters(const Eigen::MatrixXd& covariance) {
  const int q = static_cast<int>(covariance.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(covariance);
  if (llt.info() != Eigen::Success) throw NumericalError("covariance matrix is not positive definite");
  const Eigen::MatrixXd L = llt.matrixL();
  Eigen::VectorXd out(q * (q + 1) / 2);
  int at = 0;
  for (int r = 0; r < q; ++r)
    for (int c = 0; c <= r; ++c, ++at) out[at] = r == c ? std::log(L(r, c)) : L(r, c);
  return out;
}

ModelParameters zero_parameters(const ModelSpec& spec) {
  const ParameterLayout layout(spec);
  ModelParameters m;
  m.beta = Eigen::VectorXd::Zero(spec.p());
  m.d_cholesky = Eigen::VectorXd::Zero(layout.n_chol());
  m.gamma = Eigen::VectorXd::Zero(layout.n_gamma());
  m.zeta = Eigen::VectorXd::Zero(layout.n_zeta());
  const int K = spec.topology.n_transitions();
  m.eta_level = Eigen::VectorXd::Zero(K);
  m.eta_slope = Eigen::VectorXd::Zero(K);
  for (std::size_t g = 0; g < spec.baseline_groups.size(); ++g)
    m.spline.push_back(Eigen::VectorXd::Zero(layout.spline_size(static_cast<int>(g))));
  return m;
}

ParameterVector pack(const ModelParameters& m, const ModelSpec& spec) {
  const ParameterLayout layout(spec);
  const int K = spec.topology.n_transitions();
  if (m.beta.size() != layout.p() || m.d_cholesky.size() != layout.n_chol() ||
      m.gamma.size() != layout.n_gamma() || m.zeta.size() != layout.n_zeta() ||
      m.eta_level.size() != K || m.eta_slope.size() != K ||
      m.spline.size() != spec.baseline_groups.size())
    throw ValidationError("parameter dimensions do not match the model");
  ParameterVector v;
  v.values.resize(layout.size());
  v.names = layout.names();
  v.values.segment(layout.beta(), layout.p()) = m.beta;
  v.values[layout.log_sigma()] = m.log_sigma;
  v.values.segment(layout.chol(), layout.n_chol()) = m.d_cholesky;
  v.values.segment(layout.gamma(), layout.n_gamma()) = m.gamma;
  v.values.segment(layout.zeta(), layout.n_zeta()) = m.zeta;
  for (int k = 0; k < K; ++k) {
    if (layout.eta_level_index(k) >= 0) v.values[layout.eta_level_index(k)] = m.eta_level[k];
    if (layout.eta_slope_index(k) >= 0) v.values[layout.eta_slope_index(k)] = m.eta_slope[k];
  }
  for (std::size_t g = 0; g < m.spline.size(); ++g) {
    const int gi = static_cast<int>(g);
    if (m.spline[g].size() != layout.spline_size(gi))
      throw ValidationError("spline coefficient dimension mismatch");
    v.values.segment(layout.spline_offset(gi), layout.spline_size(gi)) = m.spline[g];
  }
  return v;
}

ModelParameters unpack(const Eigen::VectorXd& values, const ModelSpec& spec) {
  const ParameterLayout layout(spec);
  if (values.size() != layout.size())
    throw ValidationError("parameter vector has length " + std::to_string(values.size()) +
                          ", model expects " + std::to_string(layout.size()));
  const int K = spec.topology.n_transitions();
  ModelParameters m;
  m.beta = values.segment(layout.beta(), layout.p());
  m.log_sigma = values[layout.log_sigma()];
  m.d_cholesky = values.segment(layout.chol(), layout.n_chol());
  m.gamma = values.segment(layout.gamma(), layout.n_gamma());
  m.zeta = values.segment(layout.zeta(), layout.n_zeta());
  m.eta_level = Eigen::VectorXd::Zero(K);
  m.eta_slope = Eigen::VectorXd::Zero(K);
  for (int k = 0; k < K; ++k) {
    if (layout.eta_level_index(k) >= 0) m.eta_level[k] = values[layout.eta_level_index(k)];
    if (layout.eta_slope_index(k) >= 0) m.eta_slope[k] = values[layout.eta_slope_index(k)];
  }
  for (std::size_t g = 0; g < spec.baseline_groups.size(); ++g) {
    const int gi = static_cast<int>(g);
    m.spline.push_back(values.segment(layout.spline_offset(gi), layout.spline_size(gi)));
  }
  return m;
}

ModelParameters unpack(const ParameterVector& vector, const ModelSpec& spec) {
  return unpack(vector.values, spec);
}

ModelParameters reference_true_parameters() {
  ModelParameters m;
  m.beta = Eigen::Vector4d(-0.793, 0.543, -0.096, 0.027);
  m.log_sigma = -0.737;
  Eigen::Matrix2d D;
  D << 0.349, -0.041, -0.041, 0.062;
  m.d_cholesky = cholesky_parameters(D);
  m.gamma = Eigen::Vector3d(0.281, 0.023, -0.169);
  m.zeta = Eigen::VectorXd(0);
  m.eta_level = Eigen::Vector3d(0.925, 0.297, 0.071);
  m.eta_slope = Eigen::Vector3d(1.344, -1.096, 0.009);
  auto coefs = [](std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    int i = 0;
    for (double x : v) out[i++] = x;
    return out;
  };
  m.spline = {coefs({-9.200, -3.500, -5.000, -3.900, -3.500, -2.500, -2.000}),
              coefs({-9.860, -4.472, -5.128, -3.486, -2.457, -0.989, -0.715}),
              coefs({-2.527, -2.170, -2.492, -2.156, -1.228, -0.955, -0.161})};
  return m;
}

}  // namespace jmstate
