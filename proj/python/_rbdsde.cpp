// Python bindings: domains, problems, the penalized/reflected solvers, the
// lattice oracle and the weighted norm. Problems are passed as JSON text.

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rbdsde/bdsde.hpp"
#include "rbdsde/errors.hpp"
#include "rbdsde/spde.hpp"

namespace py = pybind11;
using namespace rbdsde;

namespace {

ProblemSpec parse_problem(const std::string& text) { return problem_from_json(nlohmann::json::parse(text)); }

bdsde::SolverConfig make_config(const std::string& basis, int degree, const Vec& x0) {
  bdsde::SolverConfig c;
  if (basis == "polynomial") {
    c.basis.kind = regression::BasisConfig::Kind::kPolynomial;
    c.basis.degree = degree;
  } else if (basis != "local") {
    throw SetupError("basis must be 'local' or 'polynomial'");
  }
  c.start = bdsde::StartLaw::gaussian(x0);
  return c;
}

py::dict diagnostics_dict(const bdsde::Diagnostics& d) {
  py::dict out;
  for (const auto& [name, s] : d.items()) out[py::str(name)] = py::make_tuple(s.value, s.se);
  return out;
}

}  // namespace

PYBIND11_MODULE(_rbdsde, m) {
  m.doc() = "Penalization solver for reflected backward doubly stochastic equations";

  py::register_exception<Error>(m, "Error");
  py::register_exception<SetupError>(m, "SetupError", PyExc_ValueError);

  using geometry::ConvexDomain;
  py::class_<ConvexDomain>(m, "ConvexDomain")
      .def_static("ball", &ConvexDomain::ball, py::arg("center"), py::arg("radius"))
      .def_static("box", &ConvexDomain::box, py::arg("lower"), py::arg("upper"))
      .def_static("half_space", &ConvexDomain::half_space, py::arg("normal"), py::arg("offset"))
      .def_static("from_json", [](const std::string& s) { return geometry::domain_from_json(nlohmann::json::parse(s)); })
      .def("to_json", [](const ConvexDomain& d) { return geometry::to_json(d).dump(); })
      .def_property_readonly("dim", &ConvexDomain::dim)
      .def_property_readonly("kind", &ConvexDomain::kind)
      .def("project", [](const ConvexDomain& d, const Vec& x) { return d.project(x).point; })
      .def("distance", &ConvexDomain::distance)
      .def("signed_distance", &ConvexDomain::signed_distance)
      .def("contains", &ConvexDomain::contains, py::arg("x"), py::arg("tol") = 0.0)
      .def("mollify", [](const ConvexDomain& d, double delta, double eta) { return geometry::mollify(d, delta, eta); })
      .def_property_readonly("epsilon", &ConvexDomain::epsilon);

  m.def("resolvent_step", [](const ConvexDomain& d, const Vec& v, double lambda) {
    const auto r = geometry::resolvent_step(d, v, lambda);
    return py::make_tuple(r.y, r.dk);
  });

  m.def("validate_problem", [](const std::string& text) { parse_problem(text); }, py::arg("problem_json"),
        "Raises SetupError if the problem is rejected.");

  m.def(
      "tree_oracle",
      [](const std::string& text, int depth, double x0) {
        bdsde::TreeOptions o;
        o.x0 = x0;
        return bdsde::tree_oracle(parse_problem(text), depth, o).y0;
      },
      py::arg("problem_json"), py::arg("depth"), py::arg("x0") = 0.0);

  m.def(
      "solve_penalized",
      [](const std::string& text, double n, std::size_t N, std::size_t M, std::size_t NW, std::uint64_t seed,
         const std::string& basis, int degree) {
        const auto p = parse_problem(text);
        const auto bundle = stochastics::sample_noise(stochastics::TimeGrid::make(0.0, p.T, N), p.d, p.l, M, NW, seed);
        const auto s = bdsde::solve_penalized(p, n, bundle, make_config(basis, degree, Vec::Zero(p.d)));
        py::dict out;
        out["y0"] = s.y0;
        out["y0_se"] = s.y0_se;
        out["z0"] = s.z0;
        out["diagnostics"] = diagnostics_dict(s.diagnostics);
        return out;
      },
      py::arg("problem_json"), py::arg("n"), py::arg("N") = 64, py::arg("M") = 20000, py::arg("NW") = 1,
      py::arg("seed") = 1, py::arg("basis") = "local", py::arg("degree") = 2);

  m.def(
      "solve_reflected",
      [](const std::string& text, const std::vector<double>& schedule, std::size_t N, std::size_t M, std::size_t NW,
         std::uint64_t seed, double tol) {
        const auto p = parse_problem(text);
        const auto bundle = stochastics::sample_noise(stochastics::TimeGrid::make(0.0, p.T, N), p.d, p.l, M, NW, seed);
        const auto r = bdsde::solve_reflected(p, bundle, schedule, make_config("local", 2, Vec::Zero(p.d)), tol);
        py::list cauchy;
        for (const auto& c : r.cauchy) cauchy.append(py::make_tuple(c.n, c.n_next, c.value.value, c.value.se));
        py::dict out;
        out["y0"] = r.y0;
        out["converged"] = r.converged;
        out["cauchy"] = cauchy;
        out["skorohod_interior_fraction"] = r.skorohod.interior_fraction;
        return out;
      },
      py::arg("problem_json"), py::arg("schedule"), py::arg("N") = 64, py::arg("M") = 20000, py::arg("NW") = 1,
      py::arg("seed") = 1, py::arg("tol") = 1e-2);

  m.def(
      "weighted_norm",
      [](const std::function<Vec(const Vec&)>& u, std::size_t d, double p, double tail) {
        return spde::weighted_norm(u, spde::WeightedNorm(d, p), tail).value;
      },
      py::arg("u"), py::arg("d"), py::arg("p") = -1.0, py::arg("tail_tolerance") = 1e-4);

  m.def("mann_kendall", [](const std::vector<double>& series) {
    const auto r = bdsde::mann_kendall(series);
    return py::make_tuple(r.s, r.p_increasing);
  });
}
