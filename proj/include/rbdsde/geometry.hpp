#pragma once

// Closed convex sets in R^k: exact projection, distance, normals, the
// penalty resolvent used by the backward solver, and smooth inner/outer
// approximations obtained by mollifying the distance function.

#include <Eigen/Dense>

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

namespace rbdsde::geometry {

using Vec = Eigen::VectorXd;

/// {x : normal·x <= offset}; `normal` is the outward normal and need not be unit.
struct HalfSpace {
  Vec normal;
  double offset = 0.0;
};

struct Ball {
  Vec center;
  double radius = 1.0;
};

struct Box {
  Vec lower;
  Vec upper;
};

struct Polytope {
  std::vector<HalfSpace> faces;
};

class ConvexDomain;

/// Sublevel set {x : (g_δ * d(·,D))(x) < η} of the mollified distance.
struct Mollified {
  std::shared_ptr<const ConvexDomain> base;
  double delta = 0.0;
  double eta = 0.0;
  double epsilon = 0.0;      // Hausdorff-type radius, see ConvexDomain::epsilon()
  double mean_offset = 0.0;  // ∫ g_δ(y)|y| dy under the quadrature
  std::vector<Vec> nodes;    // quadrature offsets y_q
  std::vector<double> weights;
};

struct ProjectionResult {
  Vec point;
  double distance = 0.0;
  bool inside = true;
};

struct ResolventResult {
  Vec y;
  Vec dk;
};

struct DykstraOptions {
  int max_iterations = 500;
  double tolerance = 1e-10;
};

class ConvexDomain {
 public:
  using Shape = std::variant<Ball, Box, HalfSpace, Polytope, Mollified>;

  static ConvexDomain ball(Vec center, double radius);
  static ConvexDomain box(Vec lower, Vec upper);
  static ConvexDomain half_space(Vec normal, double offset);
  static ConvexDomain intersection(std::vector<HalfSpace> faces);

  /// Attach a caller-supplied interior point a and constant γ; both are
  /// validated against the shape (B(a,γ) ⊂ D̄ and a sampled check of
  /// (x−a)·(x−π(x)) >= γ|x−π(x)|).
  ConvexDomain with_anchor(Vec interior_point, double gamma) const;

  std::size_t dim() const { return dim_; }
  const Shape& shape() const { return shape_; }
  std::string kind() const;
  const Vec& interior_point() const { return anchor_; }
  double gamma() const { return gamma_; }
  /// Length scale used for default tolerances (the certified γ, at least 1e-3).
  double scale() const;
  /// Only meaningful for mollified domains; 0 otherwise.
  double epsilon() const;

  ProjectionResult project(const Vec& x) const;
  double distance(const Vec& x) const { return project(x).distance; }
  bool contains(const Vec& x, double tol = 0.0) const;
  /// Distance to ∂D, for points on either side.
  double boundary_distance(const Vec& x) const;
  /// d(x,D) outside, −d(x,∂D) inside.
  double signed_distance(const Vec& x) const;

  /// Mollified distance h_δ(x) (mollified domains only).
  double mollified_distance(const Vec& x) const;
  Vec mollified_gradient(const Vec& x) const;

  void set_dykstra_options(DykstraOptions opts) { dykstra_ = opts; }

 private:
  ConvexDomain(Shape shape, std::size_t dim);
  void auto_anchor();
  void validate_anchor(bool sample_check) const;
  double depth(const Vec& x) const;  // d(x, ∂D) for x ∈ D̄, 0 outside
  ProjectionResult project_polytope(const Polytope& p, const Vec& x) const;
  ProjectionResult project_mollified(const Mollified& m, const Vec& x) const;

  friend ConvexDomain mollify(const ConvexDomain&, double, double);

  Shape shape_;
  std::size_t dim_ = 0;
  Vec anchor_;
  double gamma_ = 0.0;
  DykstraOptions dykstra_;
};

ProjectionResult project(const ConvexDomain& domain, const Vec& x);
double distance(const ConvexDomain& domain, const Vec& x);

/// ∇ d²(x,D) = 2(x − π(x)).
Vec penalty_gradient(const ConvexDomain& domain, const Vec& x);

/// Solves y + λ(y − π(y)) = v. Returns y and Δk = λ(π(y) − y) = y − v.
ResolventResult resolvent_step(const ConvexDomain& domain, const Vec& v, double lambda);

/// Smooth convex approximation {h_δ < η}; g_δ is the standard C^∞ bump of
/// radius δ, convolved by tensor Gauss-Legendre quadrature of order 8.
ConvexDomain mollify(const ConvexDomain& domain, double delta, double eta);

/// Representative outward unit normal at a boundary point.
Vec normal_at(const ConvexDomain& domain, const Vec& x_boundary);

// Gauss-Legendre rule on [-1, 1].
struct GaussLegendre {
  std::vector<double> nodes;
  std::vector<double> weights;
};
GaussLegendre gauss_legendre(int order);

nlohmann::json to_json(const ConvexDomain& domain);
ConvexDomain domain_from_json(const nlohmann::json& j);

}  // namespace rbdsde::geometry
