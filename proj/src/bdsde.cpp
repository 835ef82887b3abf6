#include "rbdsde/bdsde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rbdsde/errors.hpp"
#include "rbdsde/parallel.hpp"
#include "rbdsde/rng.hpp"

namespace rbdsde::bdsde {
namespace {

struct Accumulator {
  double sum = 0.0, sum2 = 0.0;
  std::size_t count = 0;
  void add(double v) {
    sum += v;
    sum2 += v * v;
    ++count;
  }
  Statistic stat() const {
    if (count == 0) return {};
    const double n = static_cast<double>(count);
    const double mean = sum / n;
    const double var = count > 1 ? std::max(0.0, (sum2 - n * mean * mean) / (n - 1.0)) : 0.0;
    return {mean, std::sqrt(var / n)};
  }
};

/// y with y + λ(y − π(y)) = v; λ = 0 returns v.
Vec penalize(const geometry::ConvexDomain& domain, const Vec& v, double lambda) {
  if (lambda <= 0.0) return v;
  if (std::isinf(lambda)) return domain.project(v).point;
  return geometry::resolvent_step(domain, v, lambda).y;
}

Mat row_major_z(const double* data, std::size_t k, std::size_t d) {
  Mat z(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t j = 0; j < d; ++j) z(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(j)) = data[a * d + j];
  return z;
}

Diagnostics compute_diagnostics(const PenalizedSolution& s) {
  const ProblemSpec& p = *s.problem;
  const std::size_t N = s.grid.steps;
  const double dt = s.grid.dt();
  Accumulator sup_y2, int_z2, kvt, int_d2, sup_d4, nid, data;
  const Vec y0k = Vec::Zero(static_cast<Eigen::Index>(s.k));
  const Mat z0k = Mat::Zero(static_cast<Eigen::Index>(s.k), static_cast<Eigen::Index>(s.d));
  // Data functional depends only on the forward samples.
  std::vector<double> data_m(s.M);
  for (std::size_t m = 0; m < s.M; ++m) {
    double v = p.terminal(s.flow->state_vec(m, N)).squaredNorm();
    if (!p.f_zero || !p.h_zero) {
      for (std::size_t i = 0; i < N; ++i) {
        const Vec x = s.flow->state_vec(m, i);
        v += (p.f(s.grid.node(i), x, y0k, z0k).squaredNorm() + p.h(s.grid.node(i), x, y0k, z0k).squaredNorm()) * dt;
      }
    }
    data_m[m] = v;
  }
  for (std::size_t w = 0; w < s.NW; ++w) {
    for (std::size_t m = 0; m < s.M; ++m) {
      double sy = 0.0, iz = 0.0, kv = 0.0, id2 = 0.0, sd4 = 0.0, id = 0.0;
      for (std::size_t i = 0; i <= N; ++i) sy = std::max(sy, s.y(w, m, i).squaredNorm());
      for (std::size_t i = 0; i < N; ++i) {
        iz += s.z(w, m, i).squaredNorm() * dt;
        kv += s.dk(w, m, i).norm();
        const double dist = p.domain.distance(s.y(w, m, i));
        id2 += dist * dist * dt;
        sd4 = std::max(sd4, dist * dist * dist * dist);
        id += dist * dt;
      }
      sup_y2.add(sy);
      int_z2.add(iz);
      kvt.add(kv);
      int_d2.add(id2);
      sup_d4.add(sd4);
      nid.add((s.n * id) * (s.n * id));
      data.add(data_m[m]);
    }
  }
  return {sup_y2.stat(), int_z2.stat(), kvt.stat(), int_d2.stat(), sup_d4.stat(), nid.stat(), data.stat()};
}

}  // namespace

std::vector<std::pair<std::string, Statistic>> Diagnostics::items() const {
  return {{"sup_y2", sup_y2},         {"int_z2", int_z2}, {"k_variation", k_variation},
          {"int_d2", int_d2},         {"sup_d4", sup_d4}, {"n_int_d_sq", n_int_d_sq},
          {"data_functional", data_functional}};
}

StartLaw StartLaw::point(Vec x0) {
  StartLaw s;
  s.kind = Kind::kPoint;
  s.x0 = std::move(x0);
  return s;
}

StartLaw StartLaw::gaussian(Vec x0, double variance) {
  StartLaw s;
  s.kind = Kind::kGaussian;
  s.x0 = std::move(x0);
  s.variance = variance;
  return s;
}

StartLaw StartLaw::uniform_box(Vec lower, Vec upper) {
  if (lower.size() != upper.size() || !((upper - lower).array() > 0.0).all())
    throw SetupError("uniform start box needs lower < upper");
  StartLaw s;
  s.kind = Kind::kUniformBox;
  s.lower = std::move(lower);
  s.upper = std::move(upper);
  return s;
}

Vec StartLaw::anchor() const { return kind == Kind::kUniformBox ? Vec(0.5 * (lower + upper)) : x0; }

double StartLaw::box_volume() const {
  if (kind != Kind::kUniformBox) throw SetupError("box volume requested for a non-box start law");
  return (upper - lower).prod();
}

Mat StartLaw::draw(std::size_t M, double dt, std::uint64_t seed) const {
  const Eigen::Index d = kind == Kind::kUniformBox ? lower.size() : x0.size();
  if (d == 0) throw SetupError("start law has no dimension");
  Mat out(static_cast<Eigen::Index>(M), d);
  const double sd = std::sqrt(variance > 0.0 ? variance : dt);
  for (std::size_t m = 0; m < M; ++m) {
    PhiloxStream rng(seed, StreamTag::kStartLaw, m);
    const auto r = static_cast<Eigen::Index>(m);
    for (Eigen::Index j = 0; j < d; ++j) {
      switch (kind) {
        case Kind::kPoint: out(r, j) = x0(j); break;
        case Kind::kGaussian: out(r, j) = x0(j) + sd * rng.normal(); break;
        case Kind::kUniformBox: out(r, j) = lower(j) + (upper(j) - lower(j)) * rng.uniform(); break;
      }
    }
  }
  return out;
}

Mat PenalizedSolution::z(std::size_t w, std::size_t m, std::size_t i) const {
  return row_major_z(&z_[index(w, m, i) * k * d], k, d);
}

Vec PenalizedSolution::k_path(std::size_t w, std::size_t m, std::size_t i) const {
  Vec acc = Vec::Zero(static_cast<Eigen::Index>(k));
  for (std::size_t j = 0; j < i; ++j) acc += dk(w, m, j);
  return acc;
}

Vec PenalizedSolution::y_at(std::size_t w, std::size_t i, const Vec& x) const {
  if (i >= grid.steps) return problem->terminal(x);
  const Vec pred = node_fns[w][i].evaluate(x);
  const Vec e = pred.head(static_cast<Eigen::Index>(k));
  const Mat zz = row_major_z(pred.data() + k, k, d);
  const double dt = grid.dt();
  const double lambda = n * dt;
  Vec y = e;
  const int sweeps = problem->f_zero ? 1 : 3;
  for (int s = 0; s < sweeps; ++s) y = penalize(problem->domain, e + problem->f(grid.node(i), x, y, zz) * dt, lambda);
  return y;
}

Mat PenalizedSolution::z_at(std::size_t w, std::size_t i, const Vec& x) const {
  if (i >= grid.steps) return terminal_z(*problem, x, grid.dt());
  const Vec pred = node_fns[w][i].evaluate(x);
  return row_major_z(pred.data() + k, k, d);
}

Vec PenalizedSolution::y_se_at(std::size_t w, std::size_t i, const Vec& x) const {
  if (i >= grid.steps) return Vec::Zero(static_cast<Eigen::Index>(k));
  return (node_fns[w][i].leverage(x) * residual_ms_[w][i]).cwiseSqrt();
}

Mat terminal_z(const ProblemSpec& p, const Vec& x, double dt) {
  const auto k = static_cast<Eigen::Index>(p.k), d = static_cast<Eigen::Index>(p.d);
  const double h = std::sqrt(dt);
  const Mat s = p.sigma(x);
  Mat z(k, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    if (s.col(j).squaredNorm() == 0.0) {
      z.col(j).setZero();
      continue;
    }
    z.col(j) = (p.terminal(x + h * s.col(j)) - p.terminal(x - h * s.col(j))) / (2.0 * h);
  }
  return z;
}

PenalizedSolution solve_penalized(const ProblemSpec& problem, double n, const NoiseBundle& bundle,
                                  const SolverConfig& config) {
  const Mat starts = config.start.draw(bundle.M, bundle.grid.dt(), bundle.seed);
  auto flow = std::make_shared<const FlowEnsemble>(stochastics::forward_flow(problem, bundle, starts));
  return solve_penalized(problem, n, bundle, config, std::move(flow));
}

PenalizedSolution solve_penalized(const ProblemSpec& problem, double n, const NoiseBundle& bundle,
                                  const SolverConfig& config, std::shared_ptr<const FlowEnsemble> flow) {
  if (!(n >= 0.0)) throw SetupError("penalty level n must be nonnegative");
  if (bundle.d != problem.d || bundle.l != problem.l) throw SetupError("noise bundle dimensions do not match the problem");
  if (flow->grid.steps != bundle.grid.steps || flow->first_step != 0) throw SetupError("flow does not match the bundle grid");
  if (std::abs(bundle.grid.T - problem.T) > 1e-12 * (1.0 + problem.T)) throw SetupError("bundle grid must end at T");

  PenalizedSolution s;
  s.n = n;
  s.grid = bundle.grid;
  s.d = problem.d;
  s.k = problem.k;
  s.M = flow->M;
  s.NW = bundle.NW;
  s.problem = std::make_shared<const ProblemSpec>(problem);
  s.flow = flow;
  s.query_point = config.start.anchor();
  s.start_law = config.start;
  const std::size_t N = s.grid.steps, M = s.M, NW = s.NW, k = s.k, d = s.d;
  const auto ki = static_cast<Eigen::Index>(k), di = static_cast<Eigen::Index>(d);
  const double dt = s.grid.dt();
  const double lambda = n * dt;
  const std::size_t cols = k + k * d;

  auto& Y = s.raw_y();
  auto& Z = s.raw_z();
  auto& DK = s.raw_dk();
  Y.assign(NW * M * (N + 1) * k, 0.0);
  Z.assign(NW * M * (N + 1) * k * d, 0.0);
  DK.assign(NW * M * (N + 1) * k, 0.0);
  auto at = [&](std::size_t w, std::size_t m, std::size_t i) { return (w * M + m) * (N + 1) + i; };

  std::vector<Mat> xs(N + 1, Mat(static_cast<Eigen::Index>(M), di));
  for (std::size_t i = 0; i <= N; ++i)
    for (std::size_t m = 0; m < M; ++m) xs[i].row(static_cast<Eigen::Index>(m)) = flow->state_vec(m, i).transpose();

  for (std::size_t m = 0; m < M; ++m) {
    const Vec xN = flow->state_vec(m, N);
    const Vec xi = problem.terminal(xN);
    const Mat zN = terminal_z(problem, xN, dt);
    for (std::size_t w = 0; w < NW; ++w) {
      Eigen::Map<Vec>(&Y[at(w, m, N) * k], ki) = xi;
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t j = 0; j < d; ++j)
          Z[at(w, m, N) * k * d + a * d + j] = zN(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(j));
    }
  }

  const int sweeps = problem.f_zero ? 1 : std::max(1, config.picard_sweeps);
  s.node_fns.assign(NW, std::vector<regression::RegressionFn>(N));
  s.raw_residual_ms().assign(NW, std::vector<Vec>(N + 1, Vec::Zero(ki)));
  parallel_for(NW, [&](std::size_t w) {
    std::vector<double> predictor;
    Mat accumulated = Mat::Zero(static_cast<Eigen::Index>(M), ki);
    Mat targets(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(cols));
    for (int sweep = 0; sweep < sweeps; ++sweep) {
      for (std::size_t i = N; i-- > 0;) {
        const double t_next = s.grid.node(i + 1), t_now = s.grid.node(i);
        const Eigen::Map<const Vec> dw(bundle.w_increment(w, i), static_cast<Eigen::Index>(problem.l));
        for (std::size_t m = 0; m < M; ++m) {
          Vec target = Eigen::Map<const Vec>(&Y[at(w, m, i + 1) * k], ki);
          if (!problem.h_zero) {
            const Mat z_next = row_major_z(&Z[at(w, m, i + 1) * k * d], k, d);
            target += problem.h(t_next, flow->state_vec(m, i + 1), target, z_next) * dw;
          }
          const auto r = static_cast<Eigen::Index>(m);
          targets.row(r).head(ki) = target.transpose();
          const double* db = bundle.b_increment(m, i);
          for (std::size_t a = 0; a < k; ++a)
            for (std::size_t j = 0; j < d; ++j)
              targets(r, static_cast<Eigen::Index>(k + a * d + j)) = target(static_cast<Eigen::Index>(a)) * db[j] / dt;
        }
        regression::RegressionFn fn = regression::fit(config.basis, xs[i], targets);
        const Mat pred = fn.evaluate_batch(xs[i]);
        for (std::size_t m = 0; m < M; ++m) {
          const auto r = static_cast<Eigen::Index>(m);
          const Vec e = pred.row(r).head(ki).transpose();
          for (std::size_t q = 0; q < k * d; ++q) Z[at(w, m, i) * k * d + q] = pred(r, static_cast<Eigen::Index>(k + q));
          Vec v = e;
          if (!problem.f_zero) {
            const Vec yhat = sweep == 0 ? e : Vec(Eigen::Map<const Vec>(&predictor[at(0, m, i) * k], ki));
            const Mat zi = row_major_z(&Z[at(w, m, i) * k * d], k, d);
            v += problem.f(t_now, flow->state_vec(m, i), yhat, zi) * dt;
          }
          Vec y = v;
          Vec dkv = Vec::Zero(ki);
          if (lambda > 0.0) {
            if (std::isinf(lambda)) {
              y = problem.domain.project(v).point;
              dkv = y - v;
            } else {
              auto rs = geometry::resolvent_step(problem.domain, v, lambda);
              y = std::move(rs.y);
              dkv = std::move(rs.dk);
            }
          }
          if (!y.allFinite()) throw DivergenceError("penalized recursion produced a non-finite value", i);
          Eigen::Map<Vec>(&Y[at(w, m, i) * k], ki) = y;
          Eigen::Map<Vec>(&DK[at(w, m, i) * k], ki) = dkv;
          if (sweep + 1 == sweeps) accumulated.row(r) += targets.row(r).head(ki) - e.transpose();
        }
        if (sweep + 1 == sweeps)
          s.raw_residual_ms()[w][i] = accumulated.colwise().squaredNorm().transpose() / static_cast<double>(M);
        if (sweep + 1 == sweeps) s.node_fns[w][i] = std::move(fn);
      }
      if (sweep + 1 < sweeps) {
        predictor.resize(M * (N + 1) * k);
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t i = 0; i <= N; ++i)
            for (std::size_t a = 0; a < k; ++a) predictor[at(0, m, i) * k + a] = Y[at(w, m, i) * k + a];
      }
    }
  });

  s.diagnostics = compute_diagnostics(s);
  Accumulator y0acc;
  std::vector<Accumulator> y0comp(k);
  s.z0 = Mat::Zero(ki, di);
  for (std::size_t w = 0; w < NW; ++w) {
    const Vec yq = s.y_at(w, 0, s.query_point);
    for (std::size_t a = 0; a < k; ++a) y0comp[a].add(yq(static_cast<Eigen::Index>(a)));
    s.z0 += s.z_at(w, 0, s.query_point) / static_cast<double>(NW);
  }
  s.y0.resize(ki);
  s.y0_se.resize(ki);
  const Vec reg_se = s.y_se_at(0, 0, s.query_point);
  for (std::size_t a = 0; a < k; ++a) {
    const auto st = y0comp[a].stat();
    const auto ai = static_cast<Eigen::Index>(a);
    s.y0(ai) = st.value;
    s.y0_se(ai) = NW > 1 ? std::hypot(st.se, reg_se(ai) / std::sqrt(static_cast<double>(NW))) : reg_se(ai);
  }
  return s;
}

RBDSDESolution solve_reflected(const ProblemSpec& problem, const NoiseBundle& bundle, const std::vector<double>& schedule,
                               const SolverConfig& config, double tol) {
  if (schedule.empty()) throw SetupError("penalty schedule is empty");
  for (std::size_t j = 0; j < schedule.size(); ++j) {
    if (!(schedule[j] > 0.0)) throw SetupError("penalty levels must be positive");
    if (j > 0 && !(schedule[j] > schedule[j - 1])) throw SetupError("penalty schedule must be increasing");
  }
  const Mat starts = config.start.draw(bundle.M, bundle.grid.dt(), bundle.seed);
  auto flow = std::make_shared<const FlowEnsemble>(stochastics::forward_flow(problem, bundle, starts));
  RBDSDESolution out;
  out.tolerance = tol;
  for (double n : schedule) out.ladder.push_back(solve_penalized(problem, n, bundle, config, flow));

  const std::size_t N = bundle.grid.steps;
  for (std::size_t j = 0; j + 1 < out.ladder.size(); ++j) {
    const auto& a = out.ladder[j];
    const auto& b = out.ladder[j + 1];
    Accumulator acc;
    for (std::size_t w = 0; w < a.NW; ++w)
      for (std::size_t m = 0; m < a.M; ++m) {
        double sup = 0.0;
        for (std::size_t i = 0; i <= N; ++i) sup = std::max(sup, (a.y(w, m, i) - b.y(w, m, i)).squaredNorm());
        acc.add(sup);
      }
    out.cauchy.push_back({a.n, b.n, acc.stat()});
  }
  if (!out.cauchy.empty()) {
    out.cauchy_decreasing = true;
    for (std::size_t j = 1; j < out.cauchy.size(); ++j)
      out.cauchy_decreasing = out.cauchy_decreasing && out.cauchy[j].value.value < out.cauchy[j - 1].value.value;
    const double last = out.cauchy.back().value.value, first = out.cauchy.front().value.value;
    out.converged = last < tol && (out.cauchy.size() == 1 || last < first);
  }
  const auto& fin = out.finest();
  out.y0 = fin.y0;
  out.z0_flat = Eigen::Map<const Vec>(fin.z0.data(), fin.z0.size());
  out.y0_extrapolated = fin.y0;
  if (out.ladder.size() >= 2) {
    const auto& prev = out.ladder[out.ladder.size() - 2];
    // Richardson step for an O(1/n) penalization error.
    out.y0_extrapolated = fin.y0 + (fin.y0 - prev.y0) * (prev.n / (fin.n - prev.n));
  }
  out.skorohod = check_skorohod(fin);
  return out;
}

TreeResult tree_oracle(const ProblemSpec& p, int depth, const TreeOptions& opt) {
  if (p.d != 1 || p.k != 1 || p.l != 1) throw SetupError("tree oracle is restricted to d = k = l = 1");
  if (depth < 1) throw SetupError("tree depth must be positive");
  const bool recombining = p.forward.b_zero && p.forward.sigma_constant;
  const double paths = p.h_zero ? 1.0 : std::ldexp(1.0, depth);
  const double nodes = recombining ? 0.5 * (depth + 1.0) * (depth + 2.0) : std::ldexp(1.0, depth + 1);
  if (depth > 40 || nodes * paths > opt.max_work)
    throw ResourceError("tree oracle: depth " + std::to_string(depth) + " exceeds the work budget");

  const double delta = p.T / depth, sq = std::sqrt(delta);
  const auto D = static_cast<std::size_t>(depth);
  auto v1 = [](double x) { return Vec::Constant(1, x); };
  auto m1 = [](double x) { return Mat::Constant(1, 1, x); };

  // Forward lattice: per level j, the state of each node.
  std::vector<std::vector<double>> xs(D + 1);
  xs[0] = {opt.x0};
  if (recombining) {
    const double s = p.sigma(v1(0.0))(0, 0);
    for (std::size_t j = 1; j <= D; ++j) {
      xs[j].resize(j + 1);
      for (std::size_t u = 0; u <= j; ++u)
        xs[j][u] = opt.x0 + s * (2.0 * static_cast<double>(u) - static_cast<double>(j)) * sq;
    }
  } else {
    for (std::size_t j = 1; j <= D; ++j) {
      xs[j].resize(xs[j - 1].size() * 2);
      for (std::size_t q = 0; q < xs[j - 1].size(); ++q) {
        const double x = xs[j - 1][q];
        const double drift = x + p.b(v1(x))(0) * delta, vol = p.sigma(v1(x))(0, 0) * sq;
        xs[j][2 * q] = drift + vol;      // ΔB = +√Δ
        xs[j][2 * q + 1] = drift - vol;  // ΔB = −√Δ
      }
    }
  }
  auto up = [&](std::size_t q) { return recombining ? q + 1 : 2 * q; };
  auto down = [&](std::size_t q) { return recombining ? q : 2 * q + 1; };

  const double lambda = opt.penalty * delta;
  TreeResult result;
  result.recombining = recombining;
  const auto npaths = static_cast<std::size_t>(paths);
  double k_sum = 0.0;
  for (std::size_t path = 0; path < npaths; ++path) {
    std::vector<double> y(xs[D].size()), z(xs[D].size()), kexp(xs[D].size(), 0.0);
    for (std::size_t q = 0; q < xs[D].size(); ++q) {
      y[q] = p.terminal(v1(xs[D][q]))(0);
      z[q] = terminal_z(p, v1(xs[D][q]), delta)(0, 0);
    }
    for (std::size_t j = D; j-- > 0;) {
      const double dw = ((path >> j) & 1U) ? -sq : sq;
      const double t_next = j + 1 == D ? p.T : static_cast<double>(j + 1) * delta;
      std::vector<double> yn(xs[j].size()), zn(xs[j].size()), kn(xs[j].size());
      for (std::size_t q = 0; q < xs[j].size(); ++q) {
        const std::size_t a = up(q), b = down(q);
        double ta = y[a], tb = y[b];
        if (!p.h_zero) {
          ta += p.h(t_next, v1(xs[j + 1][a]), v1(y[a]), m1(z[a]))(0, 0) * dw;
          tb += p.h(t_next, v1(xs[j + 1][b]), v1(y[b]), m1(z[b]))(0, 0) * dw;
        }
        const double e = 0.5 * (ta + tb);
        const double zz = (ta - tb) / (2.0 * sq);
        double yy = e, v = e;
        const int iters = p.f_zero ? 1 : 3;
        for (int it = 0; it < iters; ++it) {
          v = e + p.f(static_cast<double>(j) * delta, v1(xs[j][q]), v1(yy), m1(zz))(0) * delta;
          yy = lambda > 0.0 ? penalize(p.domain, v1(v), lambda)(0) : p.domain.project(v1(v)).point(0);
        }
        yn[q] = yy;
        zn[q] = zz;
        kn[q] = std::abs(yy - v) + 0.5 * (kexp[a] + kexp[b]);
      }
      y.swap(yn);
      z.swap(zn);
      kexp.swap(kn);
    }
    result.y0_per_path.push_back(y[0]);
    k_sum += kexp[0];
  }
  result.y0 = std::accumulate(result.y0_per_path.begin(), result.y0_per_path.end(), 0.0) / paths;
  result.k_total = k_sum / paths;
  return result;
}

SkorohodReport check_skorohod(const PenalizedSolution& s, double eps_int, int z_samples, std::uint64_t seed) {
  const auto& dom = s.problem->domain;
  SkorohodReport rep;
  rep.eps_int = eps_int >= 0.0 ? eps_int : 0.05 * dom.scale();
  const std::size_t N = s.grid.steps;
  std::vector<Vec> zs;
  for (int j = 0; j < z_samples; ++j) {
    PhiloxStream rng(seed, StreamTag::kSampling, static_cast<std::uint64_t>(j));
    Vec g(static_cast<Eigen::Index>(s.k));
    for (auto& v : g) v = rng.normal();
    zs.push_back(dom.project(dom.interior_point() + dom.scale() * g).point);
  }
  std::vector<Accumulator> acc(zs.size());
  Accumulator mass;
  double interior = 0.0, exterior = 0.0, total = 0.0;
  for (std::size_t w = 0; w < s.NW; ++w)
    for (std::size_t m = 0; m < s.M; ++m) {
      std::vector<double> vals(zs.size(), 0.0);
      double path_mass = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        const auto dk = s.dk(w, m, i);
        const double mag = dk.norm();
        if (mag == 0.0) continue;
        const auto y = s.y(w, m, i);
        for (std::size_t j = 0; j < zs.size(); ++j) vals[j] += (y - zs[j]).dot(dk);
        const double sd = dom.signed_distance(y);
        if (sd < -rep.eps_int) interior += mag;
        if (sd > rep.eps_int) exterior += mag;
        total += mag;
        path_mass += mag;
      }
      for (std::size_t j = 0; j < zs.size(); ++j) acc[j].add(vals[j]);
      mass.add(path_mass);
    }
  rep.minimality_max = -std::numeric_limits<double>::infinity();
  for (const auto& a : acc) {
    const Statistic st = a.stat();
    rep.minimality.push_back(st);
    if (st.value > rep.minimality_max) {
      rep.minimality_max = st.value;
      rep.minimality_se = st.se;
    }
  }
  if (acc.empty()) rep.minimality_max = 0.0;
  rep.interior_fraction = total > 0.0 ? interior / total : 0.0;
  rep.exterior_fraction = total > 0.0 ? exterior / total : 0.0;
  rep.total_mass = mass.stat().value;
  return rep;
}

MannKendall mann_kendall(const std::vector<double>& x) {
  MannKendall mk;
  const int n = static_cast<int>(x.size());
  if (n < 2) return mk;
  int inversions = 0;
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double diff = x[static_cast<std::size_t>(j)] - x[static_cast<std::size_t>(i)];
      s += (diff > 0) - (diff < 0);
      if (diff < 0) ++inversions;
    }
  mk.s = s;
  // Tie groups for the variance correction.
  std::vector<double> sorted = x;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  bool ties = false;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    if (t > 1) ties = true;
    tie_term += t * (t - 1) * (2 * t + 5);
    i = j;
  }
  mk.variance = (n * (n - 1.0) * (2.0 * n + 5.0) - tie_term) / 18.0;
  if (!ties && n <= 50) {
    // Inversion counts of a random permutation follow the Mahonian distribution.
    const int max_inv = n * (n - 1) / 2;
    std::vector<double> dist(static_cast<std::size_t>(max_inv + 1), 0.0);
    dist[0] = 1.0;
    for (int len = 2; len <= n; ++len) {
      std::vector<double> next(dist.size(), 0.0);
      for (int q = 0; q <= max_inv; ++q) {
        if (dist[static_cast<std::size_t>(q)] == 0.0) continue;
        for (int add = 0; add < len && q + add <= max_inv; ++add)
          next[static_cast<std::size_t>(q + add)] += dist[static_cast<std::size_t>(q)] / len;
      }
      dist.swap(next);
    }
    double p = 0.0;
    for (int q = 0; q <= inversions; ++q) p += dist[static_cast<std::size_t>(q)];
    mk.p_increasing = std::min(1.0, p);
    mk.exact = true;
  } else {
    const double sd = std::sqrt(std::max(mk.variance, 1e-300));
    const double zscore = s > 0 ? (s - 1.0) / sd : (s < 0 ? (s + 1.0) / sd : 0.0);
    mk.p_increasing = 0.5 * std::erfc(zscore / std::sqrt(2.0));
  }
  return mk;
}

DecayStudy penalty_decay_study(const std::vector<PenalizedSolution>& ladder) {
  DecayStudy st;
  for (const auto& s : ladder) st.rows.push_back({s.n, s.diagnostics.int_d2, s.diagnostics.sup_d4});
  bool positive = !st.rows.empty();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& r : st.rows) {
    if (!(r.int_d2.value > 0.0)) positive = false;
    const double lx = std::log(r.n), ly = std::log(std::max(r.int_d2.value, 1e-300));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double cnt = static_cast<double>(st.rows.size());
  st.slope = positive && st.rows.size() >= 2 ? (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx)
                                             : std::numeric_limits<double>::quiet_NaN();
  st.sup_d4_strictly_decreasing = st.rows.size() >= 2;
  for (std::size_t j = 1; j < st.rows.size(); ++j)
    st.sup_d4_strictly_decreasing = st.sup_d4_strictly_decreasing && st.rows[j].sup_d4.value < st.rows[j - 1].sup_d4.value;
  if (!st.rows.empty() && st.rows.front().sup_d4.value > 0.0)
    st.sup_d4_ratio = st.rows.back().sup_d4.value / st.rows.front().sup_d4.value;
  return st;
}

DecayStudy penalty_decay_study(const ProblemSpec& problem, const std::vector<double>& n_list, const NoiseBundle& bundle,
                               const SolverConfig& config) {
  const Mat starts = config.start.draw(bundle.M, bundle.grid.dt(), bundle.seed);
  auto flow = std::make_shared<const FlowEnsemble>(stochastics::forward_flow(problem, bundle, starts));
  std::vector<PenalizedSolution> ladder;
  for (double n : n_list) {
    PenalizedSolution s = solve_penalized(problem, n, bundle, config, flow);
    s.node_fns.clear();
    s.raw_y().clear();
    s.raw_y().shrink_to_fit();
    s.raw_z().clear();
    s.raw_z().shrink_to_fit();
    s.raw_dk().clear();
    s.raw_dk().shrink_to_fit();
    ladder.push_back(std::move(s));
  }
  return penalty_decay_study(ladder);
}

bool EstimatesReport::all_trend_free() const {
  return std::all_of(series.begin(), series.end(), [](const EstimateSeries& s) { return s.trend.trend_free(); });
}

EstimatesReport estimates_report(const std::vector<PenalizedSolution>& ladder) {
  EstimatesReport rep;
  std::vector<EstimateSeries> series = {{"sup_y2", {}, {}}, {"int_z2", {}, {}}, {"k_variation", {}, {}}, {"n_int_d_sq", {}, {}}};
  for (const auto& s : ladder) {
    rep.n.push_back(s.n);
    series[0].values.push_back(s.diagnostics.sup_y2.value);
    series[1].values.push_back(s.diagnostics.int_z2.value);
    series[2].values.push_back(s.diagnostics.k_variation.value);
    series[3].values.push_back(s.diagnostics.n_int_d_sq.value);
    rep.data_functional = s.diagnostics.data_functional.value;
  }
  for (auto& s : series) s.trend = mann_kendall(s.values);
  rep.series = std::move(series);
  return rep;
}

}  // namespace rbdsde::bdsde
