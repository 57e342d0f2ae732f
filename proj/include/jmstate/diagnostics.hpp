#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "jmstate/estimate.hpp"
#include "jmstate/transprob.hpp"

namespace jmstate {

/// Empirical-Bayes modes of every subject of `data` at the fitted parameters
/// (q x N, subject order of `data`).
Eigen::MatrixXd empirical_bayes_modes(const FitResult& fit, const JointDataset& data);

/// Covariates (aligned with the fitted spec) and random effects per subject.
std::vector<SubjectProfile> subject_profiles(const FitResult& fit, const JointDataset& data,
                                             RandomEffectSource source);

struct Residual {
  std::string id;
  double time = 0.0;
  double observed = 0.0;
  double fitted = 0.0;
  double residual = 0.0;
  double standardized = 0.0;
};

/// y - (X beta + Z b_i) with b_i the empirical-Bayes mode; standardised by sigma.
std::vector<Residual> conditional_residuals(const FitResult& fit, const JointDataset& data);

struct MarkerBin {
  double lo = 0.0, hi = 0.0;  // (lo, hi]; the first bin also holds lo
  int n = 0;
  double observed = 0.0;
  double predicted = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;
  bool ci_defined = false;  // false with fewer than two observations
};

/// Observed and predicted marker means in bins at the quantiles of the
/// observation times.
std::vector<MarkerBin> observed_vs_predicted(const std::vector<Residual>& residuals, int n_bins = 10);
std::vector<MarkerBin> observed_vs_predicted(const FitResult& fit, const JointDataset& data, int n_bins = 10);

struct GofPoint {
  double s = 0.0;  // start of the comparison for this row
  double t = 0.0;
  int from = 0, to = 0;
  double parametric = 0.0;
  double aalen_johansen = 0.0;
  double lo = 0.0, hi = 0.0;
  bool band_defined = false;  // false where the AJ estimate is 0
  bool inside = false;
};

struct TransitionCoverage {
  int from = 0, to = 0;
  int points = 0;   // grid points with a defined band
  int inside = 0;
  double fraction() const { return points > 0 ? static_cast<double>(inside) / points : 0.0; }
};

struct GofResult {
  std::vector<GofPoint> points;
  std::vector<TransitionCoverage> coverage;  // one per allowed transition
};

/// Compares P_hk(s, t) of every allowed transition with the AJ band.
GofResult compare_with_aalen_johansen(const TransitionTopology& topology, const AalenJohansenPath& aj,
                                      const std::vector<Eigen::MatrixXd>& parametric);

/// Parametric average (over the subjects of `data`) against Aalen-Johansen
/// on `grid`. Row h of both estimators starts at max(s, first entry into h),
/// since the AJ estimate carries no intensity before anyone is at risk in h.
/// Grid points before that start have no band.
GofResult transprob_gof(const FitResult& fit, const JointDataset& data, const std::vector<double>& grid,
                        double s = 0.0, int grid_size = 1000, RandomEffectSource source = RandomEffectSource::mode);

}  // namespace jmstate
