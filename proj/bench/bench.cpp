// Serial reference kernels against their OpenMP versions.
#include <chrono>
#include <cmath>
#include <cstdio>

#include <omp.h>

#include "CLI11.hpp"
#include "jmstate/likelihood.hpp"
#include "jmstate/simulate.hpp"
#include "jmstate/transprob.hpp"

using namespace jmstate;

namespace {

template <class F>
double seconds(int reps, F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / reps;
}

void report(const char* name, double serial, double parallel, double diff) {
  std::printf("%-22s serial %9.4f s  parallel %9.4f s  speedup %5.2f  max diff %.2e\n", name, serial, parallel,
              serial / parallel, diff);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("jmstate kernels: serial against OpenMP");
  int n = 1500, reps = 3, threads = 0, grid = 1000;
  app.add_option("-n,--subjects", n, "subjects");
  app.add_option("-r,--reps", reps, "repetitions per timing");
  app.add_option("-t,--threads", threads, "OpenMP threads (0 = default)");
  app.add_option("-g,--grid", grid, "product-integral grid size");
  CLI11_PARSE(app, argc, argv);
  if (threads > 0) omp_set_num_threads(threads);
  std::printf("threads %d, subjects %d\n", omp_get_max_threads(), n);

  const SimulationDesign design = reference_simulation_design(n, 2024);
  const SimulatedData sim = simulate_dataset(design);
  const Eigen::VectorXd theta = pack(design.truth, design.spec).values;
  JointModel model(design.spec, sim.dataset);
  model.update_modes(theta);

  double a = 0, b = 0;
  const double ts = seconds(reps, [&] { a = model.total_loglik_serial(theta); });
  const double tp = seconds(reps, [&] { b = model.total_loglik(theta); });
  report("total_loglik", ts, tp, std::abs(a - b));

  Eigen::VectorXd ga, gb;
  const double gs = seconds(reps, [&] { model.loglik_gradient_serial(theta, ga); });
  const double gp = seconds(reps, [&] { model.loglik_gradient(theta, gb); });
  report("loglik_gradient", gs, gp, (ga - gb).cwiseAbs().maxCoeff());

  const IntensityEvaluator intensities(design.spec, design.truth);
  std::vector<SubjectProfile> profiles;
  for (const auto& s : sim.subjects) profiles.push_back({s.covariates, s.b});
  ProbabilityPath pa, pb;
  const double ps = seconds(1, [&] { pa = parametric_transprob_average_serial(intensities, profiles, 0.0, 15.0, grid); });
  const double pp = seconds(1, [&] { pb = parametric_transprob_average(intensities, profiles, 0.0, 15.0, grid); });
  report("transprob_average", ps, pp, (pa.P.back() - pb.P.back()).cwiseAbs().maxCoeff());
  return 0;
}
