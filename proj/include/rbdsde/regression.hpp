#pragma once

// Least-squares conditional expectations on Monte Carlo samples: a global
// polynomial basis or a piecewise-affine fit on a hypercube partition.

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace rbdsde::regression {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct BasisConfig {
  enum class Kind { kPolynomial, kLocal };
  Kind kind = Kind::kLocal;
  int degree = 2;             // polynomial: total degree q
  int cells_per_axis = 16;    // local: cap on cells per retained axis
  int samples_per_cell = 400; // local: cells per axis shrink until the average reaches this
  int min_count = 0;          // local: 0 means 4·(affine parameters)
  double lower_quantile = 0.001;
  double upper_quantile = 0.999;
};

/// A fitted least-squares model on one basis. Immutable after fit().
class RegressionFn {
 public:
  std::size_t input_dim() const { return dim_; }
  std::size_t output_dim() const { return outputs_; }
  bool ridge() const { return ridge_; }
  double condition_number() const { return condition_; }
  /// Polynomial: p × k coefficients in the monomial order of monomials().
  /// Local: per-cell affine coefficients stacked cell by cell.
  const Mat& coefficients() const { return coef_; }

  Vec evaluate(const Eigen::Ref<const Vec>& x) const;
  /// Row-wise evaluation of an M × d array; returns M × k.
  Mat evaluate_batch(const Mat& x) const;
  /// OLS prediction variance σ̂²_j φ(x)ᵀ(AᵀA)⁻¹φ(x) per output j.
  Vec prediction_variance(const Eigen::Ref<const Vec>& x) const;
  /// φ(x)ᵀ(AᵀA)⁻¹φ(x) of the block containing x.
  double leverage(const Eigen::Ref<const Vec>& x) const;

  /// Exponent vectors of the polynomial basis (empty for local fits).
  const std::vector<std::vector<int>>& monomials() const { return monomials_; }

 private:
  friend RegressionFn fit(const BasisConfig&, const Mat&, const Mat&);

  struct Cell {
    int target = -1;  // owning fitted cell after merging
    Vec center;       // in retained coordinates
    Vec half_width;
  };

  std::size_t features(const Eigen::Ref<const Vec>& x, Vec& phi) const;  // returns block index

  BasisConfig config_;
  std::size_t dim_ = 0, outputs_ = 0, params_ = 0;
  bool ridge_ = false;
  double condition_ = 1.0;
  Mat coef_;
  std::vector<std::vector<int>> monomials_;
  // Per fitted block (1 for polynomial, one per owning cell for local):
  std::vector<Mat> gram_inverse_;  // (AᵀA)⁻¹, regularized if ridge
  std::vector<Vec> residual_var_;  // σ̂² per output
  // Local partition.
  std::vector<int> axes_;          // retained input axes
  Vec lower_, width_;              // per retained axis
  std::vector<int> cells_per_axis_;
  std::vector<Cell> cells_;
  std::vector<int> block_of_cell_;
};

/// Least-squares fit of targets (M × k) on predictors (M × d). Rank
/// deficiency falls back to ridge with λ = 1e-8·trace(AᵀA)/p and sets ridge().
RegressionFn fit(const BasisConfig& basis, const Mat& predictors, const Mat& targets);

/// Monomial exponents of total degree ≤ q in d variables, graded order.
std::vector<std::vector<int>> monomial_exponents(std::size_t d, int q);

}  // namespace rbdsde::regression
