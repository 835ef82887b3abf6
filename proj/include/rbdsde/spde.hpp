#pragma once

// Feynman-Kac evaluation of the reflected SPDE: the field u(t,x) = Y_t^{t,x},
// the boundary measure ν through K-mass, weighted norms, the equivalence of
// norms under the flow, and the weak-form residual.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rbdsde/bdsde.hpp"

namespace rbdsde::spde {

/// ρ_w(x) = (1 + |x|)^{−p} with p > d + 1 (default p = d + 2).
class WeightedNorm {
 public:
  explicit WeightedNorm(std::size_t d, double p = -1.0);
  std::size_t dim() const { return d_; }
  double exponent() const { return p_; }
  double weight(const Vec& x) const { return std::pow(1.0 + x.norm(), -p_); }
  /// ∫ρ over R^d = S_{d−1} Γ(d) Γ(p−d) / Γ(p).
  double total_mass() const;
  /// Upper bound for ∫_{|x|>R} ρ: S_{d−1} (1+R)^{d−p} / (p−d).
  double tail_bound(double radius) const;

 private:
  std::size_t d_;
  double p_;
};

struct NormResult {
  double value = 0.0;
  double tail_bound = 0.0;
  bool truncation_warning = false;
};

/// Midpoint quadrature of (Σ_c |u_c|² ρ(x_c) vol)^{1/2} on a tensor grid.
/// `points` is G × d, `values` G × k, `cell_volume` the common cell volume.
NormResult weighted_norm(const Mat& points, const Mat& values, double cell_volume, const WeightedNorm& norm,
                         double tail_tolerance = 1e-4);
/// Gauss-Legendre on geometric shells [0,1], [1,2], [2,4], … per axis; the
/// outer radius grows until the tail bound is below `tail_tolerance`.
NormResult weighted_norm(const std::function<Vec(const Vec&)>& u, const WeightedNorm& norm,
                         double tail_tolerance = 1e-4);

struct FieldConfig {
  bdsde::SolverConfig solver;  // start-law kind and variance are reused, centered at each grid point
  std::vector<double> schedule{64.0, 128.0};
  std::size_t steps = 32;
  std::size_t M = 4000;
  std::size_t NW = 1;
  std::uint64_t seed = 1;
  double tolerance = 1e-2;
};

struct FieldPoint {
  double t = 0.0;
  Vec x;
  Vec u, se;
  Mat grad;  // ∇uσ from Z
};

struct FieldEstimate {
  std::vector<FieldPoint> points;
};

/// u(t, x) = Y_t^{t,x} for every (t, x) of times × grid rows; t = T returns Φ exactly.
FieldEstimate evaluate_field(const ProblemSpec& problem, const Mat& grid, const std::vector<double>& times,
                             const FieldConfig& config);

struct TestPair {
  std::string name;
  std::function<double(double, const Vec&)> phi, psi;
};

struct PairEstimate {
  std::string name;
  bdsde::Statistic left, right;
  double combined_se = 0.0;
  bool agree() const { return std::abs(left.value - right.value) <= 3.0 * combined_se; }
};

struct MeasureEstimate {
  std::vector<PairEstimate> pairs;
  double boundary_fraction = 0.0;  // K-mass with sd(u) ≥ −ε_int
  double eps_int = 0.0;
  double weighted_total_mass = 0.0;  // ∫∫ ρ_w d|ν|
};

struct MeasureConfig {
  std::size_t w = 0;          // W path
  std::size_t component = 0;  // component of K
  double eps_int = -1.0;      // default 0.05·domain scale
};

/// Both sides of the K-representation of ν from one penalized solution whose
/// start law is a uniform box (Lebesgue start points with weight = box volume).
MeasureEstimate estimate_measure(const ProblemSpec& problem, const bdsde::PenalizedSolution& solution,
                                 const stochastics::NoiseBundle& bundle, const std::vector<TestPair>& pairs,
                                 const MeasureConfig& config = {});

struct NormEquivalenceReport {
  std::vector<double> s_values;
  // ratio[s][φ] at M and 2M samples.
  std::vector<std::vector<double>> ratio, ratio_doubled;
  double min_ratio = 0.0, max_ratio = 0.0;
  double max_s_variation = 0.0;     // max over φ of max_s/min_s − 1
  double max_doubling_change = 0.0; // max |ratio(2M)/ratio(M) − 1|
};

/// Ratios ∫E|φ(X_{t,s}(x))|ρ dx / ∫|φ|ρ dx with x importance-sampled from ρ.
NormEquivalenceReport norm_equivalence_check(const ProblemSpec& problem,
                                             const std::vector<std::function<double(const Vec&)>>& phis, double t,
                                             const std::vector<double>& s_values, std::size_t M, double dt,
                                             std::uint64_t seed, double p = -1.0);

/// Smooth compactly supported test function with analytic ∂_sφ and L*φ.
struct TestFunction {
  std::function<double(double, const Vec&)> value, dt, adjoint;
  Vec lower, upper;  // spatial support box
};

/// φ(s,x) = g(s)·Π bump((x_i − c_i)/r) with g(s) = 1 + a·s, for b = 0 and
/// constant σ (so L*φ = ½ Σ (σσᵀ)_{ij} ∂_{ij}φ).
TestFunction separable_bump(const ProblemSpec& problem, const Vec& center, double radius, double slope = 0.0);

/// u, ∇uσ and their standard errors on the time nodes of a grid.
struct FieldFunction {
  stochastics::TimeGrid grid;
  std::function<Vec(std::size_t, const Vec&)> u, se;
  std::function<Mat(std::size_t, const Vec&)> grad;
  std::vector<Vec> dw;  // W increments of the path used for the backward integral
};

FieldFunction field_from_solution(const bdsde::PenalizedSolution& solution, const stochastics::NoiseBundle& bundle,
                                  std::size_t w = 0);

struct WeakFormConfig {
  int cells_per_axis = 64;
  std::size_t w = 0;
  std::size_t component = 0;
  double eps_int = -1.0;
};

struct WeakFormResult {
  double transport = 0.0;  // ∫∫u∂_sφ − ∫∫u L*φ
  double boundary = 0.0;   // ∫u_t φ_t − ∫Φ φ_T
  double f_term = 0.0, h_term = 0.0;
  bdsde::Statistic nu_term;
  double field_se = 0.0;  // Σ|weights|·se(u)
  double residual_with = 0.0, se_with = 0.0;
  double residual_without = 0.0, se_without = 0.0;
};

/// Residual of the weak formulation against φ on a midpoint grid over φ's
/// support; ν enters through `measure_source` (nullptr: no ν term data).
WeakFormResult weak_form_residual(const ProblemSpec& problem, const FieldFunction& field,
                                  const bdsde::PenalizedSolution* measure_source, const TestFunction& phi,
                                  const WeakFormConfig& config = {});

}  // namespace rbdsde::spde
