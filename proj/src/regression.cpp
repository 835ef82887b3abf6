#include "rbdsde/regression.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rbdsde/errors.hpp"

namespace rbdsde::regression {
namespace {

struct BlockFit {
  Mat coef;
  Mat gram_inverse;
  Vec residual_var;
  double condition = 1.0;
  bool ridge = false;
};

BlockFit solve_block(const Mat& a, const Mat& y) {
  const auto p = a.cols();
  BlockFit out;
  Eigen::ColPivHouseholderQR<Mat> qr(a);
  const Vec rdiag = qr.matrixR().diagonal().head(std::min(a.rows(), p)).cwiseAbs();
  const double rmax = rdiag.size() ? rdiag.maxCoeff() : 0.0;
  const double rmin = rdiag.size() == p ? rdiag.minCoeff() : 0.0;
  out.condition = rmin > 0.0 ? rmax / rmin : std::numeric_limits<double>::infinity();
  if (qr.rank() == p) {
    out.coef = qr.solve(y);
    const Mat r = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
    const Mat rinv = r.triangularView<Eigen::Upper>().solve(Mat::Identity(p, p));
    const Mat unpermuted = rinv * rinv.transpose();
    out.gram_inverse = qr.colsPermutation() * unpermuted * qr.colsPermutation().transpose();
  } else {
    const Mat gram = a.transpose() * a;
    const double lambda = std::max(1e-8 * gram.trace() / static_cast<double>(p), 1e-300);
    const Mat reg = gram + lambda * Mat::Identity(p, p);
    const Eigen::LDLT<Mat> ldlt(reg);
    out.coef = ldlt.solve(a.transpose() * y);
    out.gram_inverse = ldlt.solve(Mat::Identity(p, p));
    out.ridge = true;
  }
  const Mat resid = y - a * out.coef;
  const double dof = std::max<double>(1.0, static_cast<double>(a.rows() - p));
  out.residual_var = resid.colwise().squaredNorm().transpose() / dof;
  return out;
}

double quantile(std::vector<double> v, double q) {
  const auto n = v.size();
  const auto pos = static_cast<std::size_t>(std::clamp(q * static_cast<double>(n - 1), 0.0, static_cast<double>(n - 1)));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(pos), v.end());
  return v[pos];
}

}  // namespace

std::vector<std::vector<int>> monomial_exponents(std::size_t d, int q) {
  std::vector<std::vector<int>> out;
  for (int total = 0; total <= q; ++total) {
    std::vector<int> e(d, 0);
    // Enumerate compositions of `total` into d parts, lexicographically descending.
    auto rec = [&](auto&& self, std::size_t axis, int left) -> void {
      if (axis + 1 == d) {
        e[axis] = left;
        out.push_back(e);
        return;
      }
      for (int v = left; v >= 0; --v) {
        e[axis] = v;
        self(self, axis + 1, left - v);
      }
    };
    if (d == 0) {
      if (total == 0) out.push_back({});
    } else {
      rec(rec, 0, total);
    }
  }
  return out;
}

std::size_t RegressionFn::features(const Eigen::Ref<const Vec>& x, Vec& phi) const {
  if (config_.kind == BasisConfig::Kind::kPolynomial) {
    phi.resize(static_cast<Eigen::Index>(params_));
    for (std::size_t c = 0; c < monomials_.size(); ++c) {
      double v = 1.0;
      for (std::size_t i = 0; i < dim_; ++i)
        for (int p = 0; p < monomials_[c][i]; ++p) v *= x(static_cast<Eigen::Index>(i));
      phi(static_cast<Eigen::Index>(c)) = v;
    }
    return 0;
  }
  std::size_t flat = 0, stride = 1;
  for (std::size_t a = 0; a < axes_.size(); ++a) {
    const int c = cells_per_axis_[a];
    const double u = (x(axes_[a]) - lower_(static_cast<Eigen::Index>(a))) / width_(static_cast<Eigen::Index>(a));
    const int idx = std::clamp(static_cast<int>(std::floor(u * c)), 0, c - 1);
    flat += static_cast<std::size_t>(idx) * stride;
    stride *= static_cast<std::size_t>(c);
  }
  const Cell& owner = cells_[static_cast<std::size_t>(cells_[flat].target)];
  phi.resize(static_cast<Eigen::Index>(params_));
  phi(0) = 1.0;
  for (std::size_t a = 0; a < axes_.size(); ++a) {
    const auto ai = static_cast<Eigen::Index>(a);
    phi(ai + 1) = (x(axes_[a]) - owner.center(ai)) / owner.half_width(ai);
  }
  return static_cast<std::size_t>(block_of_cell_[static_cast<std::size_t>(cells_[flat].target)]);
}

Vec RegressionFn::evaluate(const Eigen::Ref<const Vec>& x) const {
  Vec phi;
  const std::size_t block = features(x, phi);
  const auto p = static_cast<Eigen::Index>(params_);
  return coef_.middleRows(static_cast<Eigen::Index>(block) * p, p).transpose() * phi;
}

Mat RegressionFn::evaluate_batch(const Mat& x) const {
  Mat out(x.rows(), static_cast<Eigen::Index>(outputs_));
  Vec phi;
  const auto p = static_cast<Eigen::Index>(params_);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const std::size_t block = features(x.row(r).transpose(), phi);
    out.row(r) = phi.transpose() * coef_.middleRows(static_cast<Eigen::Index>(block) * p, p);
  }
  return out;
}

Vec RegressionFn::prediction_variance(const Eigen::Ref<const Vec>& x) const {
  Vec phi;
  const std::size_t block = features(x, phi);
  return residual_var_[block] * std::max(0.0, phi.dot(gram_inverse_[block] * phi));
}

double RegressionFn::leverage(const Eigen::Ref<const Vec>& x) const {
  Vec phi;
  const std::size_t block = features(x, phi);
  return std::max(0.0, phi.dot(gram_inverse_[block] * phi));
}

RegressionFn fit(const BasisConfig& basis, const Mat& x, const Mat& y) {
  if (x.rows() != y.rows()) throw SetupError("predictors and targets differ in sample count");
  if (x.rows() == 0) throw SetupError("regression needs at least one sample");
  if (!x.allFinite() || !y.allFinite()) throw DivergenceError("non-finite regression input", 0);
  RegressionFn fn;
  fn.config_ = basis;
  fn.dim_ = static_cast<std::size_t>(x.cols());
  fn.outputs_ = static_cast<std::size_t>(y.cols());
  const auto M = x.rows();

  if (basis.kind == BasisConfig::Kind::kPolynomial) {
    fn.monomials_ = monomial_exponents(fn.dim_, basis.degree);
    fn.params_ = fn.monomials_.size();
    if (static_cast<std::size_t>(M) < fn.params_) throw SetupError("fewer samples than basis functions");
    Mat a(M, static_cast<Eigen::Index>(fn.params_));
    Vec phi;
    for (Eigen::Index r = 0; r < M; ++r) {
      fn.features(x.row(r).transpose(), phi);
      a.row(r) = phi.transpose();
    }
    BlockFit b = solve_block(a, y);
    fn.coef_ = std::move(b.coef);
    fn.gram_inverse_.push_back(std::move(b.gram_inverse));
    fn.residual_var_.push_back(std::move(b.residual_var));
    fn.condition_ = b.condition;
    fn.ridge_ = b.ridge;
    return fn;
  }

  // Local partition on the axes with nonzero spread.
  std::vector<double> lo, width;
  for (Eigen::Index a = 0; a < x.cols(); ++a) {
    std::vector<double> col(x.col(a).data(), x.col(a).data() + M);
    const double ql = quantile(col, basis.lower_quantile), qh = quantile(col, basis.upper_quantile);
    if (qh - ql > 1e-12 * (1.0 + std::abs(ql) + std::abs(qh))) {
      fn.axes_.push_back(static_cast<int>(a));
      lo.push_back(ql);
      width.push_back(qh - ql);
    }
  }
  const std::size_t dr = fn.axes_.size();
  fn.params_ = 1 + dr;
  fn.lower_ = Eigen::Map<const Vec>(lo.data(), static_cast<Eigen::Index>(dr));
  fn.width_ = Eigen::Map<const Vec>(width.data(), static_cast<Eigen::Index>(dr));
  int per_axis = 1;
  if (dr > 0) {
    const double target = static_cast<double>(M) / std::max(1, basis.samples_per_cell);
    per_axis = std::clamp(static_cast<int>(std::floor(std::pow(target, 1.0 / static_cast<double>(dr)))), 1,
                          std::max(1, basis.cells_per_axis));
  }
  fn.cells_per_axis_.assign(dr, per_axis);
  std::size_t total = 1;
  for (std::size_t a = 0; a < dr; ++a) total *= static_cast<std::size_t>(per_axis);
  fn.cells_.resize(total);
  for (std::size_t flat = 0; flat < total; ++flat) {
    auto& cell = fn.cells_[flat];
    cell.center.resize(static_cast<Eigen::Index>(dr));
    cell.half_width.resize(static_cast<Eigen::Index>(dr));
    std::size_t rem = flat;
    for (std::size_t a = 0; a < dr; ++a) {
      const auto ai = static_cast<Eigen::Index>(a);
      const double w = fn.width_(ai) / per_axis;
      const auto idx = static_cast<double>(rem % static_cast<std::size_t>(per_axis));
      rem /= static_cast<std::size_t>(per_axis);
      cell.center(ai) = fn.lower_(ai) + (idx + 0.5) * w;
      cell.half_width(ai) = 0.5 * w;
    }
  }
  auto cell_of = [&](Eigen::Index r) {
    std::size_t flat = 0, stride = 1;
    for (std::size_t a = 0; a < dr; ++a) {
      const double u = (x(r, fn.axes_[a]) - fn.lower_(static_cast<Eigen::Index>(a))) / fn.width_(static_cast<Eigen::Index>(a));
      const int idx = std::clamp(static_cast<int>(std::floor(u * per_axis)), 0, per_axis - 1);
      flat += static_cast<std::size_t>(idx) * stride;
      stride *= static_cast<std::size_t>(per_axis);
    }
    return flat;
  };
  std::vector<std::size_t> sample_cell(static_cast<std::size_t>(M));
  std::vector<std::size_t> counts(total, 0);
  for (Eigen::Index r = 0; r < M; ++r) ++counts[sample_cell[static_cast<std::size_t>(r)] = cell_of(r)];

  const std::size_t min_count = basis.min_count > 0 ? static_cast<std::size_t>(basis.min_count) : 4 * fn.params_;
  std::vector<std::size_t> adequate;
  for (std::size_t c = 0; c < total; ++c)
    if (counts[c] >= min_count) adequate.push_back(c);
  if (adequate.empty()) adequate.push_back(static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin()));
  for (std::size_t c = 0; c < total; ++c) {
    std::size_t best = adequate.front();
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t a : adequate) {
      const double dist = ((fn.cells_[c].center - fn.cells_[a].center).array() / fn.width_.array()).matrix().squaredNorm();
      if (dist < best_d) {
        best_d = dist;
        best = a;
      }
    }
    fn.cells_[c].target = static_cast<int>(best);
  }
  fn.block_of_cell_.assign(total, -1);
  for (std::size_t b = 0; b < adequate.size(); ++b) fn.block_of_cell_[adequate[b]] = static_cast<int>(b);

  // Gather rows per block.
  std::vector<std::vector<Eigen::Index>> rows(adequate.size());
  for (Eigen::Index r = 0; r < M; ++r) {
    const auto owner = static_cast<std::size_t>(fn.cells_[sample_cell[static_cast<std::size_t>(r)]].target);
    rows[static_cast<std::size_t>(fn.block_of_cell_[owner])].push_back(r);
  }
  const auto p = static_cast<Eigen::Index>(fn.params_);
  fn.coef_.resize(static_cast<Eigen::Index>(adequate.size()) * p, y.cols());
  fn.condition_ = 1.0;
  Vec phi;
  for (std::size_t b = 0; b < adequate.size(); ++b) {
    const auto& rb = rows[b];
    Mat a(static_cast<Eigen::Index>(rb.size()), p);
    Mat yb(static_cast<Eigen::Index>(rb.size()), y.cols());
    for (std::size_t q = 0; q < rb.size(); ++q) {
      fn.features(x.row(rb[q]).transpose(), phi);
      a.row(static_cast<Eigen::Index>(q)) = phi.transpose();
      yb.row(static_cast<Eigen::Index>(q)) = y.row(rb[q]);
    }
    BlockFit bf = solve_block(a, yb);
    fn.coef_.middleRows(static_cast<Eigen::Index>(b) * p, p) = bf.coef;
    fn.gram_inverse_.push_back(std::move(bf.gram_inverse));
    fn.residual_var_.push_back(std::move(bf.residual_var));
    fn.condition_ = std::max(fn.condition_, bf.condition);
    fn.ridge_ = fn.ridge_ || bf.ridge;
  }
  return fn;
}

}  // namespace rbdsde::regression
