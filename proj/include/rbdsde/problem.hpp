#pragma once

// Problem data for a reflected BDSDE driven by a forward diffusion:
// forward coefficients (b, σ), terminal map Φ, generator f, backward-noise
// coefficient h, the domain D, and Lipschitz metadata.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rbdsde/geometry.hpp"

namespace rbdsde {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// What to do when Φ(x) ∉ D̄ on the validation sample.
enum class TerminalPolicy { kReject, kAllow };

struct ForwardCoefficients {
  std::function<Vec(const Vec&)> b;      // R^d -> R^d
  std::function<Mat(const Vec&)> sigma;  // R^d -> R^{d×d}
  // Optional analytic derivatives: Db(x) is d×d, dsigma(x)[i] = ∂σ/∂x_i.
  std::function<Mat(const Vec&)> db;
  std::function<std::vector<Mat>(const Vec&)> dsigma;
  bool b_zero = false;
  bool sigma_constant = false;
  std::string name;
  nlohmann::json params;
};

struct ProblemSpec {
  explicit ProblemSpec(geometry::ConvexDomain dom) : domain(std::move(dom)) {}

  geometry::ConvexDomain domain;
  double T = 1.0;
  std::size_t d = 1, k = 1, l = 1;

  ForwardCoefficients forward;
  std::function<Vec(const Vec&)> terminal;                                          // Φ: R^d -> R^k
  std::function<Vec(double, const Vec&, const Vec&, const Mat&)> generator;         // f -> R^k
  std::function<Mat(double, const Vec&, const Vec&, const Mat&)> noise_coefficient;  // h -> R^{k×l}
  bool f_zero = true;
  bool h_zero = true;

  // Lipschitz metadata: |f(y,z)-f(y',z')|² ≤ c(|y-y'|²+|z-z'|²),
  // |h(y,z)-h(y',z')|² ≤ c|y-y'|² + α|z-z'|², hhᵀ ≤ c(I+yyᵀ) + β zzᵀ.
  double lipschitz_c = 1.0;
  double alpha = 0.0;
  double beta = 0.0;

  TerminalPolicy terminal_policy = TerminalPolicy::kReject;
  std::string terminal_name, generator_name, noise_name;
  nlohmann::json terminal_params, generator_params, noise_params;

  Vec b(const Vec& x) const { return forward.b(x); }
  Mat sigma(const Vec& x) const { return forward.sigma(x); }
  Vec f(double t, const Vec& x, const Vec& y, const Mat& z) const {
    return f_zero ? Vec(Vec::Zero(static_cast<Eigen::Index>(k))) : generator(t, x, y, z);
  }
  Mat h(double t, const Vec& x, const Vec& y, const Mat& z) const {
    return h_zero ? Mat(Mat::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)))
                  : noise_coefficient(t, x, y, z);
  }
  /// ∂σ/∂x_i for i < d, analytic when supplied, else central differences (h = 1e-5).
  std::vector<Mat> dsigma(const Vec& x) const;
  /// Jacobian of b, analytic when supplied, else central differences.
  Mat db(const Vec& x) const;
  /// Drift of the inverse flow: b̂^k = b^k − Σ_{i,j} ∂_iσ^{kj} σ^{ij}.
  Vec backward_drift(const Vec& x) const;
};

/// Checks dimensions, α < 1, β < 1, a randomized Lipschitz probe of h in z,
/// and (under TerminalPolicy::kReject) Φ(x) ∈ D̄ on 10³ sampled x.
void validate(const ProblemSpec& problem, std::uint64_t seed = 0x7e57ULL);

// Named coefficient catalogue used by configuration files.
ForwardCoefficients make_forward(const std::string& name, std::size_t d, const nlohmann::json& params);
void set_terminal(ProblemSpec& problem, const std::string& name, const nlohmann::json& params);
void set_generator(ProblemSpec& problem, const std::string& name, const nlohmann::json& params);
void set_noise(ProblemSpec& problem, const std::string& name, const nlohmann::json& params);

/// Builds a problem from a JSON object
/// {"domain": {...}, "T", "d", "k", "l", "forward": {"name", ...},
///  "terminal": {...}, "generator": {...}, "noise": {...},
///  "lipschitz_c", "alpha", "beta", "terminal_policy"}.
ProblemSpec problem_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ProblemSpec& problem);

/// D = [0, ∞), Φ(x) = x, f = h = 0, Brownian X, T = 1.
ProblemSpec reflecting_benchmark();

}  // namespace rbdsde
