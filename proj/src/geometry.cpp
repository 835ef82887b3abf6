#include "rbdsde/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "rbdsde/errors.hpp"
#include "rbdsde/rng.hpp"

namespace rbdsde::geometry {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double bump(double r) { return r < 1.0 ? std::exp(-1.0 / (1.0 - r * r)) : 0.0; }

HalfSpace normalized(const HalfSpace& h) {
  const double n = h.normal.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw SetupError("half-space normal must be nonzero and finite");
  return {h.normal / n, h.offset / n};
}

Vec project_half_space(const HalfSpace& unit, const Vec& x) {
  const double excess = unit.normal.dot(x) - unit.offset;
  return excess > 0.0 ? Vec(x - excess * unit.normal) : x;
}

std::vector<double> to_vector(const Vec& v) { return {v.data(), v.data() + v.size()}; }

Vec from_json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

GaussLegendre gauss_legendre(int order) {
  if (order < 1) throw SetupError("Gauss-Legendre order must be positive");
  GaussLegendre rule;
  rule.nodes.resize(order);
  rule.weights.resize(order);
  for (int i = 0; i < order; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= order; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      const double pn = order == 1 ? x : p1;
      const double pnm1 = order == 1 ? 1.0 : p0;
      dp = order * (x * pn - pnm1) / (x * x - 1.0);
      const double dx = pn / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    rule.nodes[i] = x;
    rule.weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return rule;
}

ConvexDomain::ConvexDomain(Shape shape, std::size_t dim) : shape_(std::move(shape)), dim_(dim) {}

ConvexDomain ConvexDomain::ball(Vec center, double radius) {
  if (!(radius > 0.0) || !std::isfinite(radius)) throw SetupError("ball radius must be positive (empty interior)");
  const auto dim = static_cast<std::size_t>(center.size());
  ConvexDomain d(Ball{std::move(center), radius}, dim);
  d.auto_anchor();
  return d;
}

ConvexDomain ConvexDomain::box(Vec lower, Vec upper) {
  if (lower.size() != upper.size() || lower.size() == 0) throw SetupError("box bounds must have equal nonzero dimension");
  if (!((upper - lower).array() > 0.0).all()) throw SetupError("box has empty interior (need lower < upper)");
  const auto dim = static_cast<std::size_t>(lower.size());
  ConvexDomain d(Box{std::move(lower), std::move(upper)}, dim);
  d.auto_anchor();
  return d;
}

ConvexDomain ConvexDomain::half_space(Vec normal, double offset) {
  const auto dim = static_cast<std::size_t>(normal.size());
  ConvexDomain d(normalized(HalfSpace{std::move(normal), offset}), dim);
  d.auto_anchor();
  return d;
}

ConvexDomain ConvexDomain::intersection(std::vector<HalfSpace> faces) {
  if (faces.empty()) throw SetupError("half-space intersection needs at least one face");
  const auto dim = static_cast<std::size_t>(faces.front().normal.size());
  for (auto& f : faces) {
    if (static_cast<std::size_t>(f.normal.size()) != dim) throw SetupError("face dimensions disagree");
    f = normalized(f);
  }
  ConvexDomain d(Polytope{std::move(faces)}, dim);
  d.auto_anchor();
  return d;
}

ConvexDomain ConvexDomain::with_anchor(Vec interior_point, double gamma) const {
  if (static_cast<std::size_t>(interior_point.size()) != dim_) throw SetupError("interior point has wrong dimension");
  if (!(gamma > 0.0)) throw SetupError("gamma must be positive");
  ConvexDomain d = *this;
  d.anchor_ = std::move(interior_point);
  d.gamma_ = gamma;
  d.validate_anchor(true);
  return d;
}

std::string ConvexDomain::kind() const {
  struct {
    std::string operator()(const Ball&) const { return "ball"; }
    std::string operator()(const Box&) const { return "box"; }
    std::string operator()(const HalfSpace&) const { return "half-space"; }
    std::string operator()(const Polytope&) const { return "half-space-intersection"; }
    std::string operator()(const Mollified&) const { return "mollified"; }
  } visitor;
  return std::visit(visitor, shape_);
}

double ConvexDomain::scale() const { return std::max(gamma_, 1e-3); }

double ConvexDomain::epsilon() const {
  if (const auto* m = std::get_if<Mollified>(&shape_)) return m->epsilon;
  return 0.0;
}

void ConvexDomain::auto_anchor() {
  if (const auto* b = std::get_if<Ball>(&shape_)) {
    anchor_ = b->center;
    gamma_ = b->radius;
  } else if (const auto* bx = std::get_if<Box>(&shape_)) {
    anchor_ = 0.5 * (bx->lower + bx->upper);
    gamma_ = 0.5 * (bx->upper - bx->lower).minCoeff();
  } else if (const auto* h = std::get_if<HalfSpace>(&shape_)) {
    anchor_ = h->offset * h->normal - h->normal;
    gamma_ = 1.0;
  } else if (const auto* p = std::get_if<Polytope>(&shape_)) {
    // Approximate Chebyshev center: projected subgradient ascent on the
    // concave function a -> min_j slack_j(a), capped so unbounded
    // polytopes still terminate.
    Vec a;
    try {
      a = project_polytope(*p, Vec::Zero(static_cast<Eigen::Index>(dim_))).point;
    } catch (const IterationLimitError&) {
      throw SetupError("half-space intersection appears to be empty");
    }
    const double cap = 1.0 + a.norm();
    auto min_slack = [&](const Vec& y, std::size_t* arg) {
      double best = kInf;
      for (std::size_t j = 0; j < p->faces.size(); ++j) {
        const double s = p->faces[j].offset - p->faces[j].normal.dot(y);
        if (s < best) {
          best = s;
          if (arg) *arg = j;
        }
      }
      return best;
    };
    Vec best_a = a;
    double best_s = std::min(cap, min_slack(a, nullptr));
    for (int it = 0; it < 4000; ++it) {
      std::size_t j = 0;
      const double s = min_slack(a, &j);
      if (s >= cap) break;
      // Move away from the tightest face; average in near-tight faces so the
      // iterate does not zig-zag between two active constraints.
      Vec dir = Vec::Zero(static_cast<Eigen::Index>(dim_));
      for (const auto& f : p->faces) {
        if (f.offset - f.normal.dot(a) <= s + 1e-9 * cap) dir -= f.normal;
      }
      if (dir.norm() < 1e-14) break;
      a += (0.05 * cap / std::sqrt(1.0 + it)) * dir.normalized();
      const double sa = std::min(cap, min_slack(a, nullptr));
      if (sa > best_s) {
        best_s = sa;
        best_a = a;
      }
    }
    if (!(best_s > 1e-10)) throw SetupError("half-space intersection has empty interior");
    anchor_ = best_a;
    gamma_ = std::min(cap, min_slack(best_a, nullptr));
    validate_anchor(true);
    return;
  }
  validate_anchor(false);
}

void ConvexDomain::validate_anchor(bool sample_check) const {
  if (std::holds_alternative<Mollified>(shape_)) {
    const auto& m = std::get<Mollified>(shape_);
    if (!(mollified_distance(anchor_) < m.eta)) throw SetupError("interior point is not inside the mollified domain");
  } else {
    const double dep = depth(anchor_);
    if (dep < gamma_ * (1.0 - 1e-9) - 1e-12)
      throw SetupError("stored (a, gamma) fail: ball B(a, gamma) is not contained in the domain");
  }
  if (!sample_check) return;
  PhiloxStream rng(0x5eedULL, StreamTag::kProperty, 0);
  const int samples = std::holds_alternative<Mollified>(shape_) ? 32 : 256;
  const double radius = 3.0 * (scale() + anchor_.norm() + 1.0);
  for (int s = 0; s < samples; ++s) {
    Vec x(static_cast<Eigen::Index>(dim_));
    for (auto& v : x) v = anchor_[&v - x.data()] + radius * rng.normal();
    const ProjectionResult pr = project(x);
    const Vec r = x - pr.point;
    const double lhs = (x - anchor_).dot(r);
    if (lhs < gamma_ * r.norm() - 1e-9 * (1.0 + x.norm()) * r.norm())
      throw SetupError("could not certify (a, gamma) by sampling");
  }
}

double ConvexDomain::depth(const Vec& x) const {
  struct Visitor {
    const ConvexDomain& self;
    const Vec& x;
    double operator()(const Ball& b) const { return std::max(0.0, b.radius - (x - b.center).norm()); }
    double operator()(const Box& b) const {
      return std::max(0.0, std::min((x - b.lower).minCoeff(), (b.upper - x).minCoeff()));
    }
    double operator()(const HalfSpace& h) const { return std::max(0.0, h.offset - h.normal.dot(x)); }
    double operator()(const Polytope& p) const {
      double s = kInf;
      for (const auto& f : p.faces) s = std::min(s, f.offset - f.normal.dot(x));
      return std::max(0.0, s);
    }
    double operator()(const Mollified& m) const {
      if (!(self.mollified_distance(x) < m.eta)) return 0.0;
      // Smallest ray-exit distance over a fixed direction set; exact for k=1,
      // an upper bound in higher dimensions.
      const auto k = static_cast<Eigen::Index>(self.dim_);
      std::vector<Vec> dirs;
      if (k == 1) {
        dirs = {Vec::Constant(1, 1.0), Vec::Constant(1, -1.0)};
      } else {
        const int count = k == 2 ? 128 : 256;
        for (int i = 0; i < count; ++i) {
          Vec u = Vec::Zero(k);
          if (k == 2) {
            const double th = 2.0 * std::numbers::pi * i / count;
            u << std::cos(th), std::sin(th);
          } else {
            const double z = 1.0 - 2.0 * (i + 0.5) / count;
            const double rr = std::sqrt(std::max(0.0, 1.0 - z * z));
            const double th = std::numbers::pi * (3.0 - std::sqrt(5.0)) * i;
            u(0) = rr * std::cos(th);
            u(1) = rr * std::sin(th);
            u(2) = z;
          }
          dirs.push_back(u);
        }
      }
      double best = kInf;
      for (const auto& u : dirs) {
        double hi = m.delta + m.eta;
        while (self.mollified_distance(x + hi * u) < m.eta && hi < 1e8) hi *= 2.0;
        if (hi >= 1e8) continue;
        double lo = 0.0;
        for (int it = 0; it < 60; ++it) {
          const double mid = 0.5 * (lo + hi);
          (self.mollified_distance(x + mid * u) < m.eta ? lo : hi) = mid;
        }
        best = std::min(best, hi);
      }
      return best;
    }
  };
  return std::visit(Visitor{*this, x}, shape_);
}

ProjectionResult ConvexDomain::project(const Vec& x) const {
  if (static_cast<std::size_t>(x.size()) != dim_) throw DomainError("point dimension does not match domain");
  if (!x.allFinite()) throw DomainError("projection of a non-finite point");
  struct Visitor {
    const ConvexDomain& self;
    const Vec& x;
    ProjectionResult operator()(const Ball& b) const {
      const Vec r = x - b.center;
      const double n = r.norm();
      if (n <= b.radius) return {x, 0.0, true};
      return {b.center + (b.radius / n) * r, n - b.radius, false};
    }
    ProjectionResult operator()(const Box& b) const {
      const Vec p = x.cwiseMax(b.lower).cwiseMin(b.upper);
      const double d = (x - p).norm();
      return {p, d, d == 0.0};
    }
    ProjectionResult operator()(const HalfSpace& h) const {
      const Vec p = project_half_space(h, x);
      const double d = (x - p).norm();
      return {p, d, d == 0.0};
    }
    ProjectionResult operator()(const Polytope& p) const { return self.project_polytope(p, x); }
    ProjectionResult operator()(const Mollified& m) const { return self.project_mollified(m, x); }
  };
  return std::visit(Visitor{*this, x}, shape_);
}

ProjectionResult ConvexDomain::project_polytope(const Polytope& p, const Vec& x) const {
  const auto& faces = p.faces;
  auto max_violation = [&](const Vec& y) {
    double v = 0.0;
    for (const auto& f : faces) v = std::max(v, f.normal.dot(y) - f.offset);
    return v;
  };
  if (max_violation(x) <= 0.0) return {x, 0.0, true};

  const double scale = 1.0 + x.norm();
  std::vector<Vec> increments(faces.size(), Vec::Zero(x.size()));
  Vec y = x;
  double residual = kInf;
  bool converged = false;
  for (int it = 0; it < dykstra_.max_iterations; ++it) {
    const Vec start = y;
    for (std::size_t j = 0; j < faces.size(); ++j) {
      const Vec shifted = y + increments[j];
      const Vec next = project_half_space(faces[j], shifted);
      increments[j] = shifted - next;
      y = next;
    }
    residual = std::max((y - start).norm(), max_violation(y)) / scale;
    if (residual < dykstra_.tolerance) {
      converged = true;
      break;
    }
  }

  // Active-set polish: exact projection onto the affine span of the faces
  // active at the Dykstra iterate, kept only if it is KKT-certified.
  std::vector<std::size_t> active;
  for (std::size_t j = 0; j < faces.size(); ++j)
    if (faces[j].normal.dot(y) - faces[j].offset >= -1e-7 * scale) active.push_back(j);
  if (!active.empty() && active.size() <= static_cast<std::size_t>(x.size())) {
    Eigen::MatrixXd n(static_cast<Eigen::Index>(active.size()), x.size());
    Vec b(static_cast<Eigen::Index>(active.size()));
    for (std::size_t r = 0; r < active.size(); ++r) {
      n.row(static_cast<Eigen::Index>(r)) = faces[active[r]].normal.transpose();
      b(static_cast<Eigen::Index>(r)) = faces[active[r]].offset;
    }
    const Eigen::MatrixXd gram = n * n.transpose();
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(gram);
    if (qr.rank() == gram.rows()) {
      const Vec lambda = qr.solve(n * x - b);
      const Vec z = x - n.transpose() * lambda;
      if (lambda.minCoeff() >= -1e-12 * scale && max_violation(z) <= 1e-12 * scale) {
        const double d = (x - z).norm();
        return {z, d, false};
      }
    }
  }
  if (!converged) throw IterationLimitError("Dykstra projection did not converge", residual);
  const double d = (x - y).norm();
  return {y, d, d == 0.0};
}

double ConvexDomain::mollified_distance(const Vec& x) const {
  const auto* m = std::get_if<Mollified>(&shape_);
  if (!m) throw DomainError("mollified_distance on a non-mollified domain");
  double h = 0.0;
  for (std::size_t q = 0; q < m->nodes.size(); ++q) h += m->weights[q] * m->base->distance(x - m->nodes[q]);
  return h;
}

Vec ConvexDomain::mollified_gradient(const Vec& x) const {
  const auto* m = std::get_if<Mollified>(&shape_);
  if (!m) throw DomainError("mollified_gradient on a non-mollified domain");
  Vec g = Vec::Zero(x.size());
  for (std::size_t q = 0; q < m->nodes.size(); ++q) {
    const Vec z = x - m->nodes[q];
    const ProjectionResult pr = m->base->project(z);
    if (pr.distance > 0.0) g += (m->weights[q] / pr.distance) * (z - pr.point);
  }
  return g;
}

namespace {

// Exact projection onto a handful of half-spaces by enumerating active sets
// of size at most dim; Dykstra crawls when cuts are nearly parallel.
Vec project_cuts(const Polytope& p, const Vec& x) {
  const auto& faces = p.faces;
  const auto k = x.size();
  const double scale = 1.0 + x.norm();
  auto feasible = [&](const Vec& y) {
    for (const auto& f : faces)
      if (f.normal.dot(y) - f.offset > 1e-12 * scale) return false;
    return true;
  };
  if (feasible(x)) return x;
  Vec best;
  double best_d = kInf;
  std::vector<std::size_t> subset;
  auto visit = [&](auto&& self, std::size_t from) -> void {
    if (!subset.empty()) {
      const auto r = static_cast<Eigen::Index>(subset.size());
      Eigen::MatrixXd n(r, k);
      Vec b(r);
      for (Eigen::Index i = 0; i < r; ++i) {
        n.row(i) = faces[subset[static_cast<std::size_t>(i)]].normal.transpose();
        b(i) = faces[subset[static_cast<std::size_t>(i)]].offset;
      }
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(n * n.transpose());
      if (qr.rank() == r) {
        const Vec lambda = qr.solve(n * x - b);
        const Vec z = x - n.transpose() * lambda;
        const double d = (x - z).norm();
        if (lambda.minCoeff() >= -1e-12 * scale && d < best_d && feasible(z)) {
          best = z;
          best_d = d;
        }
      }
    }
    if (static_cast<Eigen::Index>(subset.size()) == k) return;
    for (std::size_t j = from; j < faces.size(); ++j) {
      subset.push_back(j);
      self(self, j + 1);
      subset.pop_back();
    }
  };
  visit(visit, 0);
  if (best.size() == 0) throw IterationLimitError("cut projection found no KKT point", 0.0);
  return best;
}

}  // namespace

ProjectionResult ConvexDomain::project_mollified(const Mollified& m, const Vec& x) const {
  const double eta = m.eta;
  if (mollified_distance(x) < eta) return {x, 0.0, true};
  const double tol = 1e-12 * (1.0 + x.norm());

  // The quadrature sum has gradient jumps wherever a shifted node crosses the
  // base boundary, so Newton-type solvers stall. Supporting hyperplanes
  // instead: project onto the polytope of cuts, pull back to the boundary
  // along the ray from the anchor, cut with a subgradient there.
  // Along the ray a + t(z − a) the mollified distance is convex, so Newton
  // from the outside decreases monotonically onto the boundary; the returned
  // point has h ≥ η up to rounding, which keeps every cut valid.
  auto boundary_point = [&](const Vec& z) {
    const Vec dir = z - anchor_;
    double lo = 0.0, t = 1.0;
    double f = mollified_distance(z) - eta;
    for (int it = 0; it < 60 && f <= 0.0; ++it) {
      lo = t;
      t *= 2.0;
      f = mollified_distance(anchor_ + t * dir) - eta;
    }
    for (int it = 0; it < 100 && f > 1e-15 * eta; ++it) {
      const double slope = mollified_gradient(anchor_ + t * dir).dot(dir);
      double next = slope > 0.0 ? t - f / slope : lo;
      if (!(next > lo)) next = 0.5 * (lo + t);
      if (t - next <= 1e-15 * t) break;
      const double fn = mollified_distance(anchor_ + next * dir) - eta;
      if (fn < 0.0) {
        lo = next;
        continue;
      }
      t = next;
      f = fn;
    }
    return Vec(anchor_ + t * dir);
  };
  Polytope cuts;
  auto add_cut = [&](const Vec& b) {
    const Vec g = mollified_gradient(b);
    if (g.norm() > 0.0) cuts.faces.push_back({g.normalized(), g.normalized().dot(b)});
  };
  add_cut(boundary_point(x));
  // |x − b| − |x − z| ≤ |z − b| bounds the distance error.
  Vec previous = x;
  double gap = kInf;
  for (int it = 0; it < 500; ++it) {
    const Vec z = project_cuts(cuts, x);
    if (mollified_distance(z) <= eta) return {z, (x - z).norm(), false};
    const Vec b = boundary_point(z);
    gap = (z - b).norm();
    if (gap < 1e-10 * (1.0 + x.norm()) || (z - previous).norm() <= tol) return {b, (x - b).norm(), false};
    previous = z;
    add_cut(b);
  }
  throw IterationLimitError("mollified projection did not converge", gap);
}

bool ConvexDomain::contains(const Vec& x, double tol) const { return distance(x) <= tol; }

double ConvexDomain::boundary_distance(const Vec& x) const {
  const double d = distance(x);
  return d > 0.0 ? d : depth(x);
}

double ConvexDomain::signed_distance(const Vec& x) const {
  const double d = distance(x);
  return d > 0.0 ? d : -depth(x);
}

ProjectionResult project(const ConvexDomain& domain, const Vec& x) { return domain.project(x); }
double distance(const ConvexDomain& domain, const Vec& x) { return domain.distance(x); }

Vec penalty_gradient(const ConvexDomain& domain, const Vec& x) {
  const ProjectionResult pr = domain.project(x);
  return 2.0 * (x - pr.point);
}

ResolventResult resolvent_step(const ConvexDomain& domain, const Vec& v, double lambda) {
  if (!(lambda > 0.0)) throw DomainError("resolvent_step requires lambda > 0");
  const ProjectionResult pr = domain.project(v);
  if (pr.inside) return {v, Vec::Zero(v.size())};
  // y lies on [π(v), v], so π(y) = π(v).
  Vec y = (v + lambda * pr.point) / (1.0 + lambda);
  Vec dk = lambda * (pr.point - y);
  return {std::move(y), std::move(dk)};
}

ConvexDomain mollify(const ConvexDomain& domain, double delta, double eta) {
  if (!(delta > 0.0) || !(eta > 0.0)) throw SetupError("mollify requires delta > 0 and eta > 0");
  if (std::holds_alternative<Mollified>(domain.shape())) throw SetupError("mollify expects an exact domain");
  const auto k = static_cast<Eigen::Index>(domain.dim());
  if (k > 3) throw NumericalIntegrationError("mollification quadrature supports k <= 3");

  Mollified m;
  m.base = std::make_shared<const ConvexDomain>(domain);
  m.delta = delta;
  m.eta = eta;
  const GaussLegendre rule = gauss_legendre(8);
  const int n = static_cast<int>(rule.nodes.size());
  int total = 1;
  for (Eigen::Index i = 0; i < k; ++i) total *= n;
  double mass = 0.0;
  for (int flat = 0; flat < total; ++flat) {
    Vec y(k);
    double w = 1.0;
    for (int i = 0, rem = flat; i < k; ++i, rem /= n) {
      y(i) = delta * rule.nodes[rem % n];
      w *= delta * rule.weights[rem % n];
    }
    w *= bump(y.norm() / delta);
    if (w <= 0.0) continue;
    m.nodes.push_back(y);
    m.weights.push_back(w);
    mass += w;
  }
  if (!(mass > 0.0) || !std::isfinite(mass)) throw NumericalIntegrationError("mollifier quadrature has no mass");
  for (auto& w : m.weights) w /= mass;
  for (std::size_t q = 0; q < m.nodes.size(); ++q) m.mean_offset += m.weights[q] * m.nodes[q].norm();
  // h ≤ h_δ ≤ h + m_δ: for η > m_δ the approximation contains D and lies in
  // the η-neighbourhood; otherwise only points at depth ≥ δ are retained.
  m.epsilon = eta > m.mean_offset ? eta : std::max(eta, delta);

  double gamma = domain.gamma();
  if (!(eta > m.mean_offset)) {
    gamma -= delta;
    if (!(gamma > 0.0)) throw SetupError("mollified domain: delta too large for the base domain's interior");
  }
  ConvexDomain out(std::move(m), domain.dim());
  out.anchor_ = domain.interior_point();
  out.gamma_ = gamma;
  out.validate_anchor(true);
  return out;
}

Vec normal_at(const ConvexDomain& domain, const Vec& x_boundary) {
  const double tol = 1e-6 * (1.0 + x_boundary.norm());
  if (domain.boundary_distance(x_boundary) > tol) throw DomainError("normal_at: point is not on the boundary");
  const Vec dir = x_boundary - domain.interior_point();
  const double len = dir.norm();
  if (!(len > 0.0)) throw DomainError("normal_at: boundary point coincides with the interior point");
  const Vec probe = x_boundary + 1e-4 * dir / len;
  const ProjectionResult pr = domain.project(probe);
  const Vec n = probe - pr.point;
  if (!(n.norm() > 0.0)) throw DomainError("normal_at: probe landed inside the domain");
  return n.normalized();
}

nlohmann::json to_json(const ConvexDomain& domain) {
  nlohmann::json j;
  j["kind"] = domain.kind();
  struct Visitor {
    nlohmann::json& params;
    void operator()(const Ball& b) const {
      params["center"] = to_vector(b.center);
      params["radius"] = b.radius;
    }
    void operator()(const Box& b) const {
      params["lower"] = to_vector(b.lower);
      params["upper"] = to_vector(b.upper);
    }
    void operator()(const HalfSpace& h) const {
      params["normal"] = to_vector(h.normal);
      params["offset"] = h.offset;
    }
    void operator()(const Polytope& p) const {
      auto faces = nlohmann::json::array();
      for (const auto& f : p.faces) faces.push_back({{"normal", to_vector(f.normal)}, {"offset", f.offset}});
      params["faces"] = faces;
    }
    void operator()(const Mollified& m) const {
      params["base"] = to_json(*m.base);
      params["delta"] = m.delta;
      params["eta"] = m.eta;
    }
  };
  nlohmann::json params = nlohmann::json::object();
  std::visit(Visitor{params}, domain.shape());
  j["params"] = params;
  j["interior_point"] = to_vector(domain.interior_point());
  j["gamma"] = domain.gamma();
  return j;
}

ConvexDomain domain_from_json(const nlohmann::json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    const auto& p = j.contains("params") ? j.at("params") : j;
    auto build = [&]() -> ConvexDomain {
      if (kind == "ball") return ConvexDomain::ball(from_json_vec(p.at("center")), p.at("radius").get<double>());
      if (kind == "box") return ConvexDomain::box(from_json_vec(p.at("lower")), from_json_vec(p.at("upper")));
      if (kind == "half-space")
        return ConvexDomain::half_space(from_json_vec(p.at("normal")), p.at("offset").get<double>());
      if (kind == "half-space-intersection") {
        std::vector<HalfSpace> faces;
        for (const auto& f : p.at("faces")) faces.push_back({from_json_vec(f.at("normal")), f.at("offset").get<double>()});
        return ConvexDomain::intersection(std::move(faces));
      }
      if (kind == "mollified")
        return mollify(domain_from_json(p.at("base")), p.at("delta").get<double>(), p.at("eta").get<double>());
      throw SetupError("unknown domain kind '" + kind + "'");
    };
    ConvexDomain d = build();
    if (j.contains("interior_point") && j.contains("gamma") && kind != "mollified")
      d = d.with_anchor(from_json_vec(j.at("interior_point")), j.at("gamma").get<double>());
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw SetupError(std::string("malformed domain JSON: ") + e.what());
  }
}

}  // namespace rbdsde::geometry
