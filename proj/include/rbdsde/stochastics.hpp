#pragma once

// Time grids, forward (B) and backward (W) Brownian increments, the Euler
// forward flow with its variational Jacobian, and the numerical inverse flow.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "rbdsde/problem.hpp"

namespace rbdsde::stochastics {

struct TimeGrid {
  double t0 = 0.0;
  double T = 1.0;
  std::size_t steps = 1;

  static TimeGrid make(double t0, double T, std::size_t steps);
  double dt() const { return (T - t0) / static_cast<double>(steps); }
  double node(std::size_t i) const { return i == steps ? T : t0 + static_cast<double>(i) * dt(); }
};

/// Increments laid out row-major: dB[(m·N + i)·d + j], dW[(w·N + i)·l + j].
struct NoiseBundle {
  TimeGrid grid;
  std::size_t d = 1, l = 1, M = 0, NW = 0;
  std::uint64_t seed = 0;
  std::vector<double> dB;
  std::vector<double> dW;

  const double* b_increment(std::size_t m, std::size_t i) const { return &dB[(m * grid.steps + i) * d]; }
  const double* w_increment(std::size_t w, std::size_t i) const { return &dW[(w * grid.steps + i) * l]; }
  double* w_increment(std::size_t w, std::size_t i) { return &dW[(w * grid.steps + i) * l]; }
};

/// Fresh increments: B from stream (seed, B-tag, m), W from (seed, W-tag, w).
/// Checks mean and variance of the standardized increments when at least
/// 2000 of them are available.
NoiseBundle sample_noise(const TimeGrid& grid, std::size_t d, std::size_t l, std::size_t M, std::size_t NW,
                         std::uint64_t seed);

/// Sums `factor` consecutive increments: the same Brownian paths on a grid
/// with steps / factor intervals.
NoiseBundle coarsen(const NoiseBundle& bundle, std::size_t factor);

struct FlowEnsemble {
  TimeGrid grid;
  std::size_t d = 1, M = 0;
  std::size_t first_step = 0;     // flow starts at grid node first_step
  std::vector<double> states;     // M × (N+1) × d, indices before first_step repeat the start
  std::vector<double> jacobians;  // M × (N+1), det of the variational flow

  const double* state(std::size_t m, std::size_t i) const { return &states[(m * (grid.steps + 1) + i) * d]; }
  Eigen::Map<const Vec> state_vec(std::size_t m, std::size_t i) const {
    return Eigen::Map<const Vec>(state(m, i), static_cast<Eigen::Index>(d));
  }
  double jacobian(std::size_t m, std::size_t i) const { return jacobians[m * (grid.steps + 1) + i]; }
  Mat start_points() const;
};

/// Euler-Maruyama for X_{t,s}(x) using bundle row m for start point m,
/// starting at grid node first_step. Jacobians follow
/// J ← (I + Db Δt + Σ_j ∂σ_{·j} ΔB^j) J.
FlowEnsemble forward_flow(const ProblemSpec& problem, const NoiseBundle& bundle, const Mat& start_points,
                          std::size_t first_step = 0);

/// X_{t,s}^{-1}(y) for grid nodes t = node(t_index) ≤ s = node(s_index),
/// stepping backward with Z ← Z − b̂(Z)Δt − σ(Z)ΔB evaluated at the right endpoint.
Vec inverse_flow(const ProblemSpec& problem, const NoiseBundle& bundle, std::size_t path, const Vec& y,
                 std::size_t t_index, std::size_t s_index);

/// J(X^{-1}) = 1 / det of the forward variational flow; throws PositivityError
/// if the forward determinant is not positive.
double jacobian_det_inverse(const FlowEnsemble& ensemble, std::size_t path, std::size_t step);

// Flat little-endian float64 arrays plus a JSON sidecar {dims, seed, grid}.
void save(const NoiseBundle& bundle, const std::filesystem::path& stem);
NoiseBundle load_noise(const std::filesystem::path& stem);
void save(const FlowEnsemble& ensemble, const std::filesystem::path& stem);
FlowEnsemble load_flow(const std::filesystem::path& stem);

}  // namespace rbdsde::stochastics
