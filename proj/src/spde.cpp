#include "rbdsde/spde.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "rbdsde/errors.hpp"
#include "rbdsde/rng.hpp"

namespace rbdsde::spde {
namespace {

double sphere_area(std::size_t d) {
  const double h = 0.5 * static_cast<double>(d);
  return 2.0 * std::pow(std::numbers::pi, h) / std::tgamma(h);
}

double bump(double u) { return std::abs(u) < 1.0 ? std::exp(-1.0 / (1.0 - u * u)) : 0.0; }
double bump_d1(double u) {
  if (std::abs(u) >= 1.0) return 0.0;
  const double q = 1.0 - u * u;
  return bump(u) * (-2.0 * u / (q * q));
}
double bump_d2(double u) {
  if (std::abs(u) >= 1.0) return 0.0;
  const double q = 1.0 - u * u;
  return bump(u) * (6.0 * u * u * u * u - 2.0) / (q * q * q * q);
}

struct Accumulator {
  double sum = 0.0, sum2 = 0.0;
  std::size_t count = 0;
  void add(double v) {
    sum += v;
    sum2 += v * v;
    ++count;
  }
  bdsde::Statistic stat(double scale = 1.0) const {
    if (count == 0) return {};
    const double n = static_cast<double>(count);
    const double mean = sum / n;
    const double var = count > 1 ? std::max(0.0, (sum2 - n * mean * mean) / (n - 1.0)) : 0.0;
    return {scale * mean, scale * std::sqrt(var / n)};
  }
};

double resolve_eps(const ProblemSpec& p, double eps) { return eps >= 0.0 ? eps : 0.05 * p.domain.scale(); }

}  // namespace

WeightedNorm::WeightedNorm(std::size_t d, double p) : d_(d), p_(p < 0.0 ? static_cast<double>(d) + 2.0 : p) {
  if (d == 0) throw SetupError("weighted norm needs d >= 1");
  if (!(p_ > static_cast<double>(d) + 1.0)) throw SetupError("weight exponent must satisfy p > d + 1");
}

double WeightedNorm::total_mass() const {
  const double d = static_cast<double>(d_);
  return sphere_area(d_) * std::tgamma(d) * std::tgamma(p_ - d) / std::tgamma(p_);
}

double WeightedNorm::tail_bound(double radius) const {
  const double d = static_cast<double>(d_);
  return sphere_area(d_) * std::pow(1.0 + radius, d - p_) / (p_ - d);
}

NormResult weighted_norm(const Mat& points, const Mat& values, double cell_volume, const WeightedNorm& norm,
                         double tail_tolerance) {
  if (points.rows() != values.rows()) throw SetupError("grid points and values differ in count");
  if (static_cast<std::size_t>(points.cols()) != norm.dim()) throw SetupError("grid dimension does not match the weight");
  NormResult r;
  double acc = 0.0;
  for (Eigen::Index c = 0; c < points.rows(); ++c)
    acc += values.row(c).squaredNorm() * norm.weight(points.row(c).transpose()) * cell_volume;
  r.value = std::sqrt(acc);
  double radius = points.rows() ? std::numeric_limits<double>::infinity() : 0.0;
  for (Eigen::Index j = 0; j < points.cols(); ++j)
    radius = std::min(radius, std::min(-points.col(j).minCoeff(), points.col(j).maxCoeff()));
  radius = std::max(0.0, radius);
  r.tail_bound = norm.tail_bound(radius);
  r.truncation_warning = r.tail_bound > tail_tolerance;
  return r;
}

NormResult weighted_norm(const std::function<Vec(const Vec&)>& u, const WeightedNorm& norm, double tail_tolerance) {
  const std::size_t d = norm.dim();
  if (d > 3) throw NumericalIntegrationError("function quadrature supports d <= 3");
  int shells = 0;
  while (norm.tail_bound(std::ldexp(1.0, shells)) > tail_tolerance) {
    if (++shells > 60) throw NumericalIntegrationError("weight tail does not decay fast enough");
  }
  const auto rule = geometry::gauss_legendre(8);
  std::vector<double> nodes, weights;
  for (int sh = 0; sh <= shells; ++sh) {
    const double a = sh == 0 ? 0.0 : std::ldexp(1.0, sh - 1), b = std::ldexp(1.0, sh);
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
      const double x = 0.5 * (a + b) + 0.5 * (b - a) * rule.nodes[q];
      const double w = 0.5 * (b - a) * rule.weights[q];
      nodes.push_back(x);
      weights.push_back(w);
      nodes.push_back(-x);
      weights.push_back(w);
    }
  }
  const std::size_t n = nodes.size();
  std::size_t total = 1;
  for (std::size_t j = 0; j < d; ++j) total *= n;
  double acc = 0.0;
  Vec x(static_cast<Eigen::Index>(d));
  for (std::size_t flat = 0; flat < total; ++flat) {
    double w = 1.0;
    std::size_t rem = flat;
    for (std::size_t j = 0; j < d; ++j) {
      x(static_cast<Eigen::Index>(j)) = nodes[rem % n];
      w *= weights[rem % n];
      rem /= n;
    }
    acc += u(x).squaredNorm() * norm.weight(x) * w;
  }
  NormResult r;
  r.value = std::sqrt(acc);
  r.tail_bound = norm.tail_bound(std::ldexp(1.0, shells));
  r.truncation_warning = r.tail_bound > tail_tolerance;
  return r;
}

FieldEstimate evaluate_field(const ProblemSpec& problem, const Mat& grid, const std::vector<double>& times,
                             const FieldConfig& cfg) {
  if (static_cast<std::size_t>(grid.cols()) != problem.d) throw SetupError("field grid dimension must equal d");
  FieldEstimate out;
  for (double t : times) {
    if (t < 0.0 || t > problem.T) throw SetupError("field time outside [0, T]");
    for (Eigen::Index g = 0; g < grid.rows(); ++g) {
      const Vec x = grid.row(g).transpose();
      FieldPoint fp;
      fp.t = t;
      fp.x = x;
      if (t >= problem.T) {
        fp.u = problem.terminal(x);
        fp.se = Vec::Zero(static_cast<Eigen::Index>(problem.k));
        fp.grad = bdsde::terminal_z(problem, x, problem.T / static_cast<double>(cfg.steps));
        out.points.push_back(std::move(fp));
        continue;
      }
      try {
        const auto tg = stochastics::TimeGrid::make(t, problem.T, cfg.steps);
        const auto bundle = stochastics::sample_noise(tg, problem.d, problem.l, cfg.M, cfg.NW, cfg.seed);
        bdsde::SolverConfig sc = cfg.solver;
        if (sc.start.kind == bdsde::StartLaw::Kind::kUniformBox) {
          const Vec half = 0.5 * (sc.start.upper - sc.start.lower);
          sc.start.lower = x - half;
          sc.start.upper = x + half;
        } else {
          sc.start.x0 = x;
        }
        if (cfg.schedule.size() >= 2) {
          const auto sol = bdsde::solve_reflected(problem, bundle, cfg.schedule, sc, cfg.tolerance);
          fp.u = sol.finest().y0;
          fp.se = sol.finest().y0_se;
          fp.grad = sol.finest().z0;
        } else {
          const double n = cfg.schedule.empty() ? 0.0 : cfg.schedule.front();
          const auto sol = bdsde::solve_penalized(problem, n, bundle, sc);
          fp.u = sol.y0;
          fp.se = sol.y0_se;
          fp.grad = sol.z0;
        }
      } catch (const Error& e) {
        std::string where = "(t=" + std::to_string(t) + ", x=";
        for (Eigen::Index j = 0; j < x.size(); ++j) where += (j ? "," : "") + std::to_string(x(j));
        throw Error(std::string(e.what()) + " at grid point " + where + ")");
      }
      out.points.push_back(std::move(fp));
    }
  }
  return out;
}

MeasureEstimate estimate_measure(const ProblemSpec& problem, const bdsde::PenalizedSolution& s,
                                 const stochastics::NoiseBundle& bundle, const std::vector<TestPair>& pairs,
                                 const MeasureConfig& cfg) {
  if (s.start_law.kind != bdsde::StartLaw::Kind::kUniformBox)
    throw SetupError("measure estimation needs Lebesgue start points (uniform box start law)");
  if (cfg.w >= s.NW || cfg.component >= s.k) throw SetupError("measure path or component out of range");
  const double vol = s.start_law.box_volume();
  const std::size_t N = s.grid.steps;
  const auto comp = static_cast<Eigen::Index>(cfg.component);
  MeasureEstimate est;
  est.eps_int = resolve_eps(problem, cfg.eps_int);
  const WeightedNorm rho(problem.d);

  std::vector<Accumulator> left(pairs.size()), right(pairs.size());
  Accumulator weighted;
  double boundary_mass = 0.0, total_mass = 0.0;
  std::vector<double> lsum(pairs.size()), rsum(pairs.size());
  for (std::size_t m = 0; m < s.M; ++m) {
    std::fill(lsum.begin(), lsum.end(), 0.0);
    std::fill(rsum.begin(), rsum.end(), 0.0);
    double wmass = 0.0;
    const Vec x = s.flow->state_vec(m, 0);
    for (std::size_t i = 0; i < N; ++i) {
      const double dk = s.dk(cfg.w, m, i)(comp);
      if (dk == 0.0) continue;
      const double tau = s.grid.node(i);
      const Vec y = s.flow->state_vec(m, i);
      const double jf = s.flow->jacobian(m, i);
      const double jinv = stochastics::jacobian_det_inverse(*s.flow, m, i);
      const bool on_boundary = problem.domain.signed_distance(s.y(cfg.w, m, i)) >= -est.eps_int;
      total_mass += std::abs(dk);
      if (on_boundary) boundary_mass += std::abs(dk);
      wmass += rho.weight(y) * jf * std::abs(dk);
      Vec back;
      bool have_back = false;
      for (std::size_t q = 0; q < pairs.size(); ++q) {
        const double psi = pairs[q].psi(tau, y);
        if (psi == 0.0) continue;
        rsum[q] += pairs[q].phi(tau, x) * psi * dk;
        if (!on_boundary) continue;
        if (!have_back) {
          back = stochastics::inverse_flow(problem, bundle, m, y, 0, i);
          have_back = true;
        }
        lsum[q] += pairs[q].phi(tau, back) * jinv * psi * jf * dk;
      }
    }
    for (std::size_t q = 0; q < pairs.size(); ++q) {
      left[q].add(lsum[q]);
      right[q].add(rsum[q]);
    }
    weighted.add(wmass);
  }
  for (std::size_t q = 0; q < pairs.size(); ++q) {
    PairEstimate pe;
    pe.name = pairs[q].name;
    pe.left = left[q].stat(vol);
    pe.right = right[q].stat(vol);
    pe.combined_se = std::hypot(pe.left.se, pe.right.se);
    est.pairs.push_back(pe);
  }
  est.boundary_fraction = total_mass > 0.0 ? boundary_mass / total_mass : 0.0;
  est.weighted_total_mass = weighted.stat(vol).value;
  return est;
}

NormEquivalenceReport norm_equivalence_check(const ProblemSpec& problem,
                                             const std::vector<std::function<double(const Vec&)>>& phis, double t,
                                             const std::vector<double>& s_values, std::size_t M, double dt,
                                             std::uint64_t seed, double p) {
  if (phis.empty() || s_values.empty() || M == 0) throw SetupError("norm equivalence check needs φ, s values and M");
  if (!(dt > 0.0)) throw SetupError("time step must be positive");
  const WeightedNorm rho(problem.d, p);
  const auto d = static_cast<Eigen::Index>(problem.d);
  std::vector<std::size_t> steps;
  for (double s : s_values) {
    if (s < t) throw SetupError("norm equivalence needs s >= t");
    steps.push_back(static_cast<std::size_t>(std::llround((s - t) / dt)));
  }
  const std::size_t max_steps = *std::max_element(steps.begin(), steps.end());
  const std::size_t total = 2 * M;
  // numer[s][φ], denom[φ], accumulated separately for the first M and all 2M samples.
  std::vector<std::vector<double>> num_m(s_values.size(), std::vector<double>(phis.size(), 0.0)), num_2m = num_m;
  std::vector<double> den_m(phis.size(), 0.0), den_2m(phis.size(), 0.0);
  for (std::size_t m = 0; m < total; ++m) {
    PhiloxStream rng(seed, StreamTag::kSampling, m);
    const double u = rng.beta(static_cast<double>(problem.d), rho.exponent() - static_cast<double>(problem.d));
    const double r = u / (1.0 - u);
    Vec dir(d);
    if (d == 1) {
      dir(0) = rng.uniform() < 0.5 ? -1.0 : 1.0;
    } else {
      for (auto& v : dir) v = rng.normal();
      dir.normalize();
    }
    Vec x = r * dir;
    for (std::size_t f = 0; f < phis.size(); ++f) {
      const double v = std::abs(phis[f](x));
      den_2m[f] += v;
      if (m < M) den_m[f] += v;
    }
    PhiloxStream brng(seed, StreamTag::kForwardB, m);
    const double sdt = std::sqrt(dt);
    Vec db(d);
    for (std::size_t i = 0; i <= max_steps; ++i) {
      for (std::size_t q = 0; q < s_values.size(); ++q) {
        if (steps[q] != i) continue;
        for (std::size_t f = 0; f < phis.size(); ++f) {
          const double v = std::abs(phis[f](x));
          num_2m[q][f] += v;
          if (m < M) num_m[q][f] += v;
        }
      }
      if (i == max_steps) break;
      for (auto& v : db) v = sdt * brng.normal();
      x = x + problem.b(x) * dt + problem.sigma(x) * db;
      if (!x.allFinite()) throw DivergenceError("norm equivalence flow diverged", i);
    }
  }
  NormEquivalenceReport rep;
  rep.s_values = s_values;
  rep.min_ratio = std::numeric_limits<double>::infinity();
  rep.max_ratio = 0.0;
  for (std::size_t q = 0; q < s_values.size(); ++q) {
    std::vector<double> a, b;
    for (std::size_t f = 0; f < phis.size(); ++f) {
      a.push_back(den_m[f] > 0.0 ? num_m[q][f] / den_m[f] : 0.0);
      b.push_back(den_2m[f] > 0.0 ? num_2m[q][f] / den_2m[f] : 0.0);
      rep.min_ratio = std::min({rep.min_ratio, a.back(), b.back()});
      rep.max_ratio = std::max({rep.max_ratio, a.back(), b.back()});
      if (a.back() > 0.0) rep.max_doubling_change = std::max(rep.max_doubling_change, std::abs(b.back() / a.back() - 1.0));
    }
    rep.ratio.push_back(a);
    rep.ratio_doubled.push_back(b);
  }
  for (std::size_t f = 0; f < phis.size(); ++f) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (std::size_t q = 0; q < s_values.size(); ++q) {
      lo = std::min(lo, rep.ratio_doubled[q][f]);
      hi = std::max(hi, rep.ratio_doubled[q][f]);
    }
    if (lo > 0.0) rep.max_s_variation = std::max(rep.max_s_variation, hi / lo - 1.0);
  }
  return rep;
}

TestFunction separable_bump(const ProblemSpec& problem, const Vec& center, double radius, double slope) {
  if (!problem.forward.b_zero || !problem.forward.sigma_constant)
    throw SetupError("separable_bump supplies L*φ only for b = 0 and constant σ");
  if (!(radius > 0.0)) throw SetupError("bump radius must be positive");
  const auto d = center.size();
  const Mat sigma = problem.sigma(center);
  const Mat a = sigma * sigma.transpose();
  TestFunction tf;
  auto spatial = [center, radius, d](const Vec& x) {
    double v = 1.0;
    for (Eigen::Index i = 0; i < d; ++i) v *= bump((x(i) - center(i)) / radius);
    return v;
  };
  tf.value = [spatial, slope](double s, const Vec& x) { return (1.0 + slope * s) * spatial(x); };
  tf.dt = [spatial, slope](double, const Vec& x) { return slope * spatial(x); };
  tf.adjoint = [center, radius, d, a, slope](double s, const Vec& x) {
    Vec g(d), g1(d), g2(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      const double u = (x(i) - center(i)) / radius;
      g(i) = bump(u);
      g1(i) = bump_d1(u) / radius;
      g2(i) = bump_d2(u) / (radius * radius);
    }
    double acc = 0.0;
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) {
        double term = 1.0;
        for (Eigen::Index q = 0; q < d; ++q) {
          if (i == j && q == i) {
            term *= g2(q);
          } else if (q == i || q == j) {
            term *= g1(q);
          } else {
            term *= g(q);
          }
        }
        acc += 0.5 * a(i, j) * term;
      }
    return (1.0 + slope * s) * acc;
  };
  tf.lower = center.array() - radius;
  tf.upper = center.array() + radius;
  return tf;
}

FieldFunction field_from_solution(const bdsde::PenalizedSolution& s, const stochastics::NoiseBundle& bundle,
                                  std::size_t w) {
  if (w >= s.NW) throw SetupError("W path index out of range");
  FieldFunction f;
  f.grid = s.grid;
  const auto* sp = &s;
  f.u = [sp, w](std::size_t i, const Vec& x) { return sp->y_at(w, i, x); };
  f.se = [sp, w](std::size_t i, const Vec& x) { return sp->y_se_at(w, i, x); };
  f.grad = [sp, w](std::size_t i, const Vec& x) { return sp->z_at(w, i, x); };
  for (std::size_t i = 0; i < s.grid.steps; ++i)
    f.dw.push_back(Eigen::Map<const Vec>(bundle.w_increment(w, i), static_cast<Eigen::Index>(bundle.l)));
  return f;
}

WeakFormResult weak_form_residual(const ProblemSpec& problem, const FieldFunction& field,
                                  const bdsde::PenalizedSolution* nu, const TestFunction& phi,
                                  const WeakFormConfig& cfg) {
  const auto d = static_cast<Eigen::Index>(problem.d);
  if (phi.lower.size() != d || phi.upper.size() != d) throw SetupError("test function support has wrong dimension");
  if (cfg.cells_per_axis < 8) throw ResolutionError("quadrature grid too coarse: need at least 8 cells across the support");
  if (!((phi.upper - phi.lower).array() > 0.0).all()) throw ResolutionError("test function support has zero width");
  const auto comp = static_cast<Eigen::Index>(cfg.component);
  const std::size_t N = field.grid.steps;
  const double dt = field.grid.dt();
  const auto cells = static_cast<std::size_t>(cfg.cells_per_axis);
  std::size_t total = 1;
  for (Eigen::Index j = 0; j < d; ++j) total *= cells;
  const Vec h = (phi.upper - phi.lower) / static_cast<double>(cells);
  const double vol = h.prod();
  std::vector<Vec> xs(total, Vec(d));
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rem = flat;
    for (Eigen::Index j = 0; j < d; ++j) {
      xs[flat](j) = phi.lower(j) + (static_cast<double>(rem % cells) + 0.5) * h(j);
      rem /= cells;
    }
  }
  WeakFormResult r;
  for (const Vec& x : xs) {
    const double phi0 = phi.value(field.grid.node(0), x);
    const double phiT = phi.value(field.grid.node(N), x);
    if (phi0 != 0.0 || phiT != 0.0) {
      r.boundary += (field.u(0, x)(comp) * phi0 - problem.terminal(x)(comp) * phiT) * vol;
      r.field_se += std::abs(phi0 * vol) * field.se(0, x)(comp);
    }
    for (std::size_t i = 0; i < N; ++i) {
      const double tau = field.grid.node(i), tau_next = field.grid.node(i + 1);
      const double coef = (phi.dt(tau, x) - phi.adjoint(tau, x)) * dt * vol;
      const double phi_now = phi.value(tau, x), phi_next = phi.value(tau_next, x);
      if (coef == 0.0 && phi_now == 0.0 && phi_next == 0.0) continue;
      const Vec u_next = field.u(i + 1, x);
      r.transport += u_next(comp) * coef;
      r.field_se += std::abs(coef) * field.se(i + 1, x)(comp);
      if (!problem.f_zero && phi_now != 0.0) {
        const Vec ui = field.u(i, x);
        r.f_term += problem.f(tau, x, ui, field.grad(i, x))(comp) * phi_now * dt * vol;
      }
      if (!problem.h_zero && phi_next != 0.0) {
        const Vec hv = problem.h(tau_next, x, u_next, field.grad(i + 1, x)) * field.dw[i];
        r.h_term += hv(comp) * phi_next * vol;
      }
    }
  }
  if (nu != nullptr) {
    if (nu->start_law.kind != bdsde::StartLaw::Kind::kUniformBox)
      throw SetupError("the ν term needs a solution started from a uniform box");
    const double eps = resolve_eps(problem, cfg.eps_int);
    const double box = nu->start_law.box_volume();
    Accumulator acc;
    for (std::size_t m = 0; m < nu->M; ++m) {
      double sum = 0.0;
      for (std::size_t i = 0; i < nu->grid.steps; ++i) {
        const double dk = nu->dk(cfg.w, m, i)(comp);
        if (dk == 0.0) continue;
        if (problem.domain.signed_distance(nu->y(cfg.w, m, i)) < -eps) continue;
        sum += phi.value(nu->grid.node(i), nu->flow->state_vec(m, i)) * nu->flow->jacobian(m, i) * dk;
      }
      acc.add(sum);
    }
    r.nu_term = acc.stat(box);
  }
  const double base = r.transport + r.boundary - r.f_term - r.h_term;
  r.residual_without = base;
  r.se_without = r.field_se;
  r.residual_with = base - r.nu_term.value;
  r.se_with = std::hypot(r.field_se, r.nu_term.se);
  return r;
}

}  // namespace rbdsde::spde
