#pragma once

// Penalized backward doubly stochastic solver, the reflected-limit ladder,
// a lattice oracle for 1-D problems, and the estimate/Skorohod checks.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rbdsde/problem.hpp"
#include "rbdsde/regression.hpp"
#include "rbdsde/stochastics.hpp"

namespace rbdsde::bdsde {

using stochastics::FlowEnsemble;
using stochastics::NoiseBundle;
using stochastics::TimeGrid;

struct StartLaw {
  enum class Kind { kPoint, kGaussian, kUniformBox };
  Kind kind = Kind::kGaussian;
  Vec x0;              // point / Gaussian center
  double variance = 0; // Gaussian covariance variance·I; <= 0 means one time step
  Vec lower, upper;    // uniform box

  static StartLaw point(Vec x0);
  static StartLaw gaussian(Vec x0, double variance = 0.0);
  static StartLaw uniform_box(Vec lower, Vec upper);
  /// M start points drawn from stream (seed, start-law tag, m).
  Mat draw(std::size_t M, double dt, std::uint64_t seed) const;
  /// Query point for Y₀: x0, or the box center.
  Vec anchor() const;
  double box_volume() const;
};

struct SolverConfig {
  regression::BasisConfig basis;
  int picard_sweeps = 3;  // used when f is nonzero; one sweep otherwise
  StartLaw start;
};

struct Statistic {
  double value = 0.0;
  double se = 0.0;
};

/// Path means over (w, m); sup and integrals run over grid nodes, with the
/// distance quantities restricted to nodes i < N.
struct Diagnostics {
  Statistic sup_y2;          // sup_i |Y_i|²
  Statistic int_z2;          // Σ_{i<N} |Z_i|² Δt
  Statistic k_variation;     // Σ |ΔK_i|
  Statistic int_d2;          // Σ_{i<N} d²(Y_i, D) Δt
  Statistic sup_d4;          // sup_{i<N} d⁴(Y_i, D)
  Statistic n_int_d_sq;      // (n Σ_{i<N} d(Y_i, D) Δt)²
  Statistic data_functional; // |ξ|² + Σ_{i<N} (|f⁰|² + |h⁰|²) Δt

  std::vector<std::pair<std::string, Statistic>> items() const;
};

class PenalizedSolution {
 public:
  double n = 0.0;
  TimeGrid grid;
  std::size_t d = 1, k = 1, M = 0, NW = 0;
  std::shared_ptr<const ProblemSpec> problem;
  std::shared_ptr<const FlowEnsemble> flow;
  Vec query_point;
  StartLaw start_law;
  Diagnostics diagnostics;
  Vec y0, y0_se;  // mean over W paths of y_at(w, 0, query_point)
  Mat z0;

  // Per W path and node i < N: fit of [Y_{i+1} + hΔW, (Y_{i+1} + hΔW)ΔBᵀ/Δt] on X_i.
  std::vector<std::vector<regression::RegressionFn>> node_fns;

  Eigen::Map<const Vec> y(std::size_t w, std::size_t m, std::size_t i) const {
    return Eigen::Map<const Vec>(&y_[index(w, m, i) * k], static_cast<Eigen::Index>(k));
  }
  /// Z_i as a k × d matrix (stored row-major).
  Mat z(std::size_t w, std::size_t m, std::size_t i) const;
  /// Increment of K over [τ_i, τ_{i+1}], i < N.
  Eigen::Map<const Vec> dk(std::size_t w, std::size_t m, std::size_t i) const {
    return Eigen::Map<const Vec>(&dk_[index(w, m, i) * k], static_cast<Eigen::Index>(k));
  }
  /// Accumulated K_i = Σ_{j<i} ΔK_j, with K_0 = 0.
  Vec k_path(std::size_t w, std::size_t m, std::size_t i) const;

  /// Y_i and Z_i at an arbitrary state x for W path w.
  Vec y_at(std::size_t w, std::size_t i, const Vec& x) const;
  Mat z_at(std::size_t w, std::size_t i, const Vec& x) const;
  /// Standard error of y_at per output: leverage of x times the mean square of
  /// the regression residuals accumulated from node i to N.
  Vec y_se_at(std::size_t w, std::size_t i, const Vec& x) const;

  std::vector<double>& raw_y() { return y_; }
  std::vector<double>& raw_z() { return z_; }
  std::vector<double>& raw_dk() { return dk_; }
  std::vector<std::vector<Vec>>& raw_residual_ms() { return residual_ms_; }
  const std::vector<double>& raw_y() const { return y_; }

 private:
  std::size_t index(std::size_t w, std::size_t m, std::size_t i) const { return (w * M + m) * (grid.steps + 1) + i; }
  std::vector<double> y_, z_, dk_;
  std::vector<std::vector<Vec>> residual_ms_;  // [w][i], per output
};

/// Semi-implicit penalized recursion with penalty level n (n = 0 disables the penalty).
PenalizedSolution solve_penalized(const ProblemSpec& problem, double n, const NoiseBundle& bundle,
                                  const SolverConfig& config);
/// Same, reusing a forward flow computed from the bundle.
PenalizedSolution solve_penalized(const ProblemSpec& problem, double n, const NoiseBundle& bundle,
                                  const SolverConfig& config, std::shared_ptr<const FlowEnsemble> flow);

/// Y_N and Z_N = ∇Φ σ by central differences with step √Δt along the σ columns.
Mat terminal_z(const ProblemSpec& problem, const Vec& x, double dt);

struct CauchyRow {
  double n = 0, n_next = 0;
  Statistic value;  // path mean of sup_i |Yⁿ_i − Y^{n'}_i|²
};

struct SkorohodReport {
  double minimality_max = 0.0;  // max over z of the path mean of Σ(Y_i − z)ᵀΔK_i
  double minimality_se = 0.0;   // its standard error
  std::vector<Statistic> minimality;
  double interior_fraction = 0.0;  // K-mass where sd(Y_i) < −ε_int
  double exterior_fraction = 0.0;  // K-mass where sd(Y_i) > ε_int
  double total_mass = 0.0;         // path mean of Σ|ΔK_i|
  double eps_int = 0.0;
  bool minimality_ok() const { return minimality_max <= 2.0 * minimality_se; }
};

struct RBDSDESolution {
  std::vector<PenalizedSolution> ladder;
  std::vector<CauchyRow> cauchy;
  bool converged = false;
  bool cauchy_decreasing = false;
  Vec y0, z0_flat, y0_extrapolated;
  SkorohodReport skorohod;
  double tolerance = 0.0;
  const PenalizedSolution& finest() const { return ladder.back(); }
};

/// Runs solve_penalized over an increasing schedule on common random numbers.
/// Converged iff the last Cauchy entry is below tol and below the first.
RBDSDESolution solve_reflected(const ProblemSpec& problem, const NoiseBundle& bundle, const std::vector<double>& schedule,
                               const SolverConfig& config, double tol = 1e-2);

struct TreeOptions {
  double x0 = 0.0;
  double penalty = 0.0;           // 0: project onto D̄; > 0: resolvent with λ = penalty·Δ
  double max_work = 2e8;          // lattice nodes × W paths
};

struct TreeResult {
  double y0 = 0.0;                 // mean over W paths
  std::vector<double> y0_per_path;  // one entry per enumerated W path (one if h = 0)
  double k_total = 0.0;            // mean accumulated |ΔK| under the lattice law
  bool recombining = false;
};

/// Exact dynamic programming on binomial B and W lattices (d = k = l = 1).
TreeResult tree_oracle(const ProblemSpec& problem, int depth, const TreeOptions& options = {});

SkorohodReport check_skorohod(const PenalizedSolution& solution, double eps_int = -1.0, int z_samples = 20,
                              std::uint64_t seed = 0x5c0ULL);

struct MannKendall {
  double s = 0.0;
  double variance = 0.0;
  double p_increasing = 1.0;  // one-sided p-value for an upward trend
  bool exact = false;
  bool trend_free(double level = 0.05) const { return p_increasing >= level; }
};

MannKendall mann_kendall(const std::vector<double>& series);

struct DecayRow {
  double n = 0;
  Statistic int_d2, sup_d4;
};

struct DecayStudy {
  std::vector<DecayRow> rows;
  double slope = 0.0;  // log-log least-squares slope of E∫d² against n; NaN if any entry is zero
  bool sup_d4_strictly_decreasing = false;
  double sup_d4_ratio = 0.0;  // final / initial
};

DecayStudy penalty_decay_study(const ProblemSpec& problem, const std::vector<double>& n_list, const NoiseBundle& bundle,
                               const SolverConfig& config);
DecayStudy penalty_decay_study(const std::vector<PenalizedSolution>& ladder);

struct EstimateSeries {
  std::string name;
  std::vector<double> values;
  MannKendall trend;
};

struct EstimatesReport {
  std::vector<double> n;
  std::vector<EstimateSeries> series;
  double data_functional = 0.0;
  bool all_trend_free() const;
};

EstimatesReport estimates_report(const std::vector<PenalizedSolution>& ladder);

}  // namespace rbdsde::bdsde
