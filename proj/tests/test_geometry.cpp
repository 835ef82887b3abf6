#include "doctest.h"

#include <cmath>
#include <random>

#include "rbdsde/errors.hpp"
#include "rbdsde/geometry.hpp"

using namespace rbdsde::geometry;
using rbdsde::geometry::Vec;

namespace {

Vec v2(double a, double b) { return (Vec(2) << a, b).finished(); }
Vec v1(double a) { return Vec::Constant(1, a); }

std::vector<ConvexDomain> catalogue() {
  return {ConvexDomain::ball(v2(0.5, -1), 1.5), ConvexDomain::box(v2(0, 0), v2(1, 2)),
          ConvexDomain::half_space(v2(1, 2), 0.5),
          ConvexDomain::intersection({{v2(-1, 0), 0}, {v2(0, -1), 0}, {v2(1, 1), 2}, {v2(1, -3), 1}})};
}

Vec gaussian(std::mt19937_64& g, Eigen::Index k, double s) {
  std::normal_distribution<double> n(0.0, s);
  Vec x(k);
  for (auto& v : x) v = n(g);
  return x;
}

}  // namespace

TEST_CASE("ball projection is radial") {
  const auto D = ConvexDomain::ball(Vec::Zero(2), 1.0);
  const auto r = project(D, v2(2, 0));
  CHECK(r.point.isApprox(v2(1, 0)));
  CHECK(r.distance == doctest::Approx(1.0));
  CHECK_FALSE(r.inside);
}

TEST_CASE("points of the domain project to themselves") {
  for (const auto& D : catalogue()) {
    const Vec a = D.interior_point();
    const auto r = project(D, a);
    CHECK((r.point - a).norm() == doctest::Approx(0.0));
    CHECK(r.distance == 0.0);
    CHECK(r.inside);
  }
}

TEST_CASE("quadrant projection matches brute-force minimization") {
  const auto D = ConvexDomain::intersection({{v2(-1, 0), 0}, {v2(0, -1), 0}});
  const Vec x = v2(-1, -2);
  const auto r = project(D, x);
  double best = 1e300;
  Vec arg;
  for (int i = 0; i <= 400; ++i)
    for (int j = 0; j <= 400; ++j) {
      const Vec y = v2(0.01 * i, 0.01 * j);
      if ((y - x).norm() < best) {
        best = (y - x).norm();
        arg = y;
      }
    }
  CHECK(r.point.isApprox(v2(0, 0)));
  CHECK((r.point - arg).norm() < 1e-2);
}

TEST_CASE("box corner distance") {
  const auto D = ConvexDomain::box(v2(0, 0), v2(1, 1));
  CHECK(distance(D, v2(2, 2)) == doctest::Approx(std::sqrt(2.0)));
  CHECK(distance(D, v2(0.3, 0.6)) == 0.0);
}

TEST_CASE("polytope distance matches dense sampling of the feasible set") {
  const auto D = catalogue()[3];
  const auto& faces = std::get<Polytope>(D.shape()).faces;
  auto feasible = [&](const Vec& y) {
    for (const auto& f : faces)
      if (f.normal.dot(y) > f.offset) return false;
    return true;
  };
  std::mt19937_64 g(3);
  for (int t = 0; t < 5; ++t) {
    const Vec x = gaussian(g, 2, 3.0);
    double best = 1e300;
    for (int i = 0; i <= 800; ++i)
      for (int j = 0; j <= 800; ++j) {
        const Vec y = v2(-0.5 + 0.005 * i, -0.5 + 0.005 * j);
        if (feasible(y)) best = std::min(best, (y - x).norm());
      }
    // the grid oracle is accurate to about half a cell diagonal
    CHECK(std::abs(distance(D, x) - best) < 4e-3);
    CHECK(distance(D, x) <= best + 1e-6);
  }
}

TEST_CASE("distance is convex along random segments") {
  std::mt19937_64 g(5);
  for (const auto& D : catalogue())
    for (int t = 0; t < 500; ++t) {
      const Vec x = gaussian(g, 2, 3.0), y = gaussian(g, 2, 3.0);
      CHECK(distance(D, 0.5 * (x + y)) <= 0.5 * (distance(D, x) + distance(D, y)) + 1e-9);
    }
}

TEST_CASE("penalty gradient") {
  const auto H = ConvexDomain::half_space(v2(-1, 0), 0.0);
  CHECK(penalty_gradient(H, v2(-3, 0)).isApprox(v2(-6, 0)));
  CHECK(penalty_gradient(H, v2(1, 5)).norm() == 0.0);
  const auto B = ConvexDomain::ball(Vec::Zero(2), 1.0);
  const Vec x = v2(0, 2);
  const double h = 1e-5;
  Vec fd(2);
  for (int i = 0; i < 2; ++i) {
    Vec e = Vec::Zero(2);
    e(i) = h;
    fd(i) = (std::pow(distance(B, x + e), 2) - std::pow(distance(B, x - e), 2)) / (2 * h);
  }
  CHECK((penalty_gradient(B, x) - fd).norm() < 1e-6);
  CHECK(penalty_gradient(B, x).isApprox(v2(0, 2)));
}

TEST_CASE("resolvent step") {
  const auto H = ConvexDomain::half_space(v1(-1), 0.0);
  const auto in = resolvent_step(H, v1(2), 3.0);
  CHECK(in.y(0) == 2.0);
  CHECK(in.dk(0) == 0.0);
  // minimizer of ½(y+1)² + ½·y² (λ = 1, y < 0): y = −0.5
  const auto r = resolvent_step(H, v1(-1), 1.0);
  CHECK(r.y(0) == doctest::Approx(-0.5));
  CHECK(r.dk(0) == doctest::Approx(0.5));
  const auto B = ConvexDomain::ball(Vec::Zero(2), 1.0);
  CHECK((resolvent_step(B, v2(3, 0), 1e12).y - v2(1, 0)).norm() < 1e-10);
}

TEST_CASE("resolvent consistency and segment property") {
  std::mt19937_64 g(7);
  for (const auto& D : catalogue())
    for (int t = 0; t < 1000; ++t) {
      const Vec v = gaussian(g, 2, 4.0);
      const double lambda = std::exp(gaussian(g, 1, 2.0)(0));
      const auto r = resolvent_step(D, v, lambda);
      const Vec py = project(D, r.y).point;
      CHECK((r.y + lambda * (r.y - py) - v).norm() < 1e-10);
      const Vec pv = project(D, v).point;
      // y on [π(v), v]: collinear and between
      const double len = (v - pv).norm();
      if (len > 1e-12) CHECK(std::abs((r.y - pv).norm() + (v - r.y).norm() - len) < 1e-9);
      CHECK((r.dk - (r.y - v)).norm() < 1e-12);
    }
}

TEST_CASE("projection identities and firm nonexpansiveness") {
  std::mt19937_64 g(11);
  for (const auto& D : catalogue()) {
    for (int t = 0; t < 10000; ++t) {
      const Vec x = D.interior_point() + gaussian(g, 2, 4.0);
      const Vec y = D.interior_point() + gaussian(g, 2, 4.0);
      const Vec px = D.project(x).point, py = D.project(y).point;
      const Vec r = x - px;
      REQUIRE((py - x).dot(r) <= 1e-9);
      REQUIRE((y - x).dot(r) <= (y - py).dot(r) + 1e-9);
      REQUIRE((x - D.interior_point()).dot(r) >= D.gamma() * r.norm() - 1e-9);
      REQUIRE((px - py).norm() <= (x - y).norm() + 1e-12);
    }
  }
}

TEST_CASE("ball anchor is the center with gamma equal to the radius") {
  const auto D = ConvexDomain::ball(v2(1, 2), 3.0);
  CHECK(D.interior_point().isApprox(v2(1, 2)));
  CHECK(D.gamma() == doctest::Approx(3.0));
}

TEST_CASE("Hessian of the squared distance is positive semidefinite") {
  std::mt19937_64 g(13);
  for (const auto& D : {ConvexDomain::ball(Vec::Zero(2), 1.0), ConvexDomain::half_space(v2(1, 1), 0.0)})
    for (int t = 0; t < 200; ++t) {
      Vec x = gaussian(g, 2, 3.0);
      if (D.contains(x)) continue;
      const Vec z = gaussian(g, 2, 1.0);
      const double h = 1e-4;
      auto rho = [&](const Vec& p) { return std::pow(distance(D, p), 2); };
      const double second = (rho(x + h * z) - 2 * rho(x) + rho(x - h * z)) / (h * h);
      CHECK(second >= -1e-6);
    }
}

TEST_CASE("empty and degenerate domains are rejected") {
  CHECK_THROWS_AS(ConvexDomain::intersection({{v1(1), -1}, {v1(-1), -1}}), rbdsde::SetupError);
  CHECK_THROWS_AS(ConvexDomain::ball(Vec::Zero(2), 0.0), rbdsde::SetupError);
  CHECK_THROWS_AS(ConvexDomain::box(v2(0, 0), v2(1, 0)), rbdsde::SetupError);
  CHECK_THROWS_AS(ConvexDomain::ball(Vec::Zero(2), 1.0).with_anchor(v2(0.9, 0), 0.5), rbdsde::SetupError);
}

TEST_CASE("normals") {
  CHECK(normal_at(ConvexDomain::ball(Vec::Zero(2), 1.0), v2(1, 0)).isApprox(v2(1, 0)));
  CHECK(normal_at(ConvexDomain::box(v2(0, 0), v2(1, 1)), v2(0.5, 1)).isApprox(v2(0, 1)));
  const auto Q = ConvexDomain::intersection({{v2(1, 0), 1}, {v2(0, 1), 1}});
  const Vec n = normal_at(Q, v2(1, 1));
  CHECK(n.norm() == doctest::Approx(1.0));
  CHECK(n(0) >= -1e-9);  // nonnegative combination of (1,0) and (0,1)
  CHECK(n(1) >= -1e-9);
  CHECK_THROWS_AS(normal_at(ConvexDomain::ball(Vec::Zero(2), 1.0), v2(0.2, 0)), rbdsde::DomainError);
}

TEST_CASE("mollified ball: reported epsilon, containment and the projection bound") {
  const auto B = ConvexDomain::ball(Vec::Zero(2), 1.0);
  const auto M = mollify(B, 0.1, 0.05);
  CHECK(M.kind() == "mollified");
  const double eps = M.epsilon();
  CHECK(eps > 0.0);
  std::mt19937_64 g(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < 300; ++t) {
    Vec x = v2(u(g), u(g));
    if (!B.contains(x)) continue;
    CHECK(M.distance(x) < eps);
  }
  double c_fit = 0.0;
  for (int t = 0; t < 200; ++t) {
    const Vec x = gaussian(g, 2, 2.0);
    const double gap = (B.project(x).point - M.project(x).point).norm();
    c_fit = std::max(c_fit, gap / std::sqrt(eps * eps + eps * M.distance(x)));
  }
  CHECK(c_fit <= 10.0);
}

TEST_CASE("mollified projection satisfies the optimality conditions") {
  const auto M = mollify(ConvexDomain::box(v2(0, 0), v2(1, 1)), 0.1, 0.02);
  std::mt19937_64 g(23);
  for (int t = 0; t < 50; ++t) {
    const Vec x = v2(0.5, 0.5) + gaussian(g, 2, 2.0);
    const auto r = M.project(x);
    if (r.inside) continue;
    CHECK(M.mollified_distance(r.point) == doctest::Approx(0.02).epsilon(1e-9));
    // Variational inequality against boundary points; the boundary has kinks,
    // so the gradient alone need not be parallel to x - y.
    double worst = -1.0;
    for (int k = 0; k < 256; ++k) {
      const double th = 2.0 * M_PI * k / 256.0;
      Vec in = v2(0.5, 0.5), out = in + 2.0 * v2(std::cos(th), std::sin(th));
      for (int it = 0; it < 60; ++it) {
        const Vec mid = 0.5 * (in + out);
        (M.mollified_distance(mid) <= 0.02 ? in : out) = mid;
      }
      worst = std::max(worst, (x - r.point).dot(in - r.point));
    }
    CHECK(worst <= 1e-9);
  }
}

TEST_CASE("mollification epsilon shrinks with the parameters") {
  const auto B = ConvexDomain::ball(Vec::Zero(2), 1.0);
  double prev = 1e300;
  for (double s : {0.4, 0.2, 0.1, 0.05}) {
    const double e = mollify(B, s, s / 2).epsilon();
    CHECK(e < prev);
    prev = e;
  }
}

TEST_CASE("domain JSON round trip") {
  for (const auto& D : catalogue()) {
    const auto back = domain_from_json(to_json(D));
    CHECK(back.kind() == D.kind());
    std::mt19937_64 g(19);
    for (int t = 0; t < 20; ++t) {
      const Vec x = gaussian(g, 2, 3.0);
      CHECK((back.project(x).point - D.project(x).point).norm() < 1e-12);
    }
  }
}

TEST_CASE("Gauss-Legendre integrates polynomials exactly") {
  const auto r = gauss_legendre(8);
  double s = 0.0;
  for (std::size_t i = 0; i < r.nodes.size(); ++i) s += r.weights[i] * std::pow(r.nodes[i], 14);
  CHECK(s == doctest::Approx(2.0 / 15.0).epsilon(1e-13));
}
