#include "doctest.h"

#include <cmath>

#include "rbdsde/errors.hpp"
#include "rbdsde/problem.hpp"

using namespace rbdsde;
using nlohmann::json;

namespace {

json half_line() { return {{"kind", "half-space"}, {"normal", {-1.0}}, {"offset", 0.0}}; }

}  // namespace

TEST_CASE("reflecting benchmark") {
  const auto p = reflecting_benchmark();
  CHECK(p.d == 1);
  CHECK(p.T == 1.0);
  CHECK(p.f_zero);
  CHECK(p.h_zero);
  CHECK(p.terminal(Vec::Constant(1, -0.7))(0) == -0.7);
  CHECK(p.domain.distance(Vec::Constant(1, -0.7)) == doctest::Approx(0.7));
  CHECK_NOTHROW(validate(p));
}

TEST_CASE("catalogue builds every named coefficient") {
  for (const char* name : {"brownian", "frozen", "ou", "linear", "trig"}) {
    const auto fc = make_forward(name, 2, json::object());
    CHECK(fc.b(Vec::Ones(2)).size() == 2);
    CHECK(fc.sigma(Vec::Ones(2)).rows() == 2);
  }
  CHECK_THROWS_AS(make_forward("levy", 1, json::object()), SetupError);
  for (const char* name : {"identity", "projected", "square", "constant", "linear"}) {
    const json j = {{"domain", {{"kind", "box"}, {"lower", {-1.0}}, {"upper", {1.0}}}},
                    {"terminal", name},
                    {"terminal_policy", "allow"}};
    CHECK_NOTHROW(problem_from_json(j));
  }
}

TEST_CASE("alpha at or above one is rejected") {
  json j = {{"domain", half_line()},
            {"noise", {{"name", "linear"}, {"z", 0.5}}},
            {"terminal_policy", "allow"},
            {"alpha", 1.0}};
  CHECK_THROWS_AS(problem_from_json(j), SetupError);
  j["alpha"] = 0.3;
  CHECK_NOTHROW(problem_from_json(j));
  // cz = 0.5 needs alpha >= 0.25.
  j["alpha"] = 0.2;
  CHECK_THROWS_AS(problem_from_json(j), SetupError);
}

TEST_CASE("terminal values outside the closed domain are rejected") {
  const json j = {{"domain", half_line()}, {"terminal", "identity"}};
  CHECK_THROWS_AS(problem_from_json(j), SetupError);
  const json projected = {{"domain", half_line()}, {"terminal", "projected"}};
  CHECK_NOTHROW(problem_from_json(projected));
  json allowed = j;
  allowed["terminal_policy"] = "allow";
  CHECK_NOTHROW(problem_from_json(allowed));
  allowed["terminal_policy"] = "maybe";
  CHECK_THROWS_AS(problem_from_json(allowed), SetupError);
}

TEST_CASE("malformed descriptions become setup errors") {
  CHECK_THROWS_AS(problem_from_json(json{{"T", 1.0}}), SetupError);
  CHECK_THROWS_AS(problem_from_json(json{{"domain", half_line()}, {"T", -1.0}, {"terminal_policy", "allow"}}),
                  SetupError);
  CHECK_THROWS_AS(problem_from_json(json{{"domain", half_line()}, {"d", 2}, {"terminal_policy", "allow"}}), SetupError);
}

TEST_CASE("backward drift subtracts the Ito-Stratonovich correction") {
  const auto fc = make_forward("trig", 1, {{"amplitude", 0.2}, {"scale", 1.5}});
  ProblemSpec p(geometry::ConvexDomain::half_space(Vec::Constant(1, -1.0), 0.0));
  p.forward = fc;
  const Vec x = Vec::Constant(1, 0.4);
  const double s = 1.5 * (1 + 0.2 * std::sin(0.4)), ds = 1.5 * 0.2 * std::cos(0.4);
  CHECK(p.backward_drift(x)(0) == doctest::Approx(-ds * s));
  // The finite-difference path agrees with the analytic derivative.
  p.forward.dsigma = nullptr;
  CHECK(p.backward_drift(x)(0) == doctest::Approx(-ds * s).epsilon(1e-7));
}

TEST_CASE("JSON round trip preserves the problem") {
  const json j = {{"domain", half_line()},
                  {"T", 2.0},
                  {"forward", {{"name", "ou"}, {"theta", 0.5}}},
                  {"terminal", {{"name", "square"}, {"center", {1.0}}}},
                  {"generator", {{"name", "linear"}, {"y", -0.5}}},
                  {"noise", {{"name", "constant"}, {"value", {{0.2}}}}},
                  {"terminal_policy", "allow"}};
  const auto p = problem_from_json(j);
  const auto q = problem_from_json(to_json(p));
  const Vec x = Vec::Constant(1, 0.3);
  CHECK(q.T == 2.0);
  CHECK(q.b(x)(0) == doctest::Approx(p.b(x)(0)));
  CHECK(q.terminal(x)(0) == doctest::Approx(0.49));
  CHECK(q.f(0.0, x, Vec::Constant(1, 2.0), Mat::Zero(1, 1))(0) == doctest::Approx(-1.0));
  CHECK(q.h(0.0, x, x, Mat::Zero(1, 1))(0, 0) == doctest::Approx(0.2));
}
