#include "cli.hpp"

#include <openssl/evp.h>

#include <Eigen/Core>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rbdsde/bdsde.hpp"
#include "rbdsde/errors.hpp"
#include "rbdsde/parallel.hpp"
#include "rbdsde/rng.hpp"
#include "rbdsde/spde.hpp"
#include "toml.hpp"

#ifndef RBDSDE_VERSION
#define RBDSDE_VERSION "0.0.0"
#endif

namespace rbdsde::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw UsageError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

json parse_config_text(const std::string& text, const fs::path& origin) {
  if (origin.extension() == ".json") {
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      throw UsageError(origin.string() + ": " + e.what());
    }
  }
  try {
    const toml::table table = toml::parse(text, origin.string());
    std::ostringstream ss;
    ss << toml::json_formatter{table};
    return json::parse(ss.str());
  } catch (const toml::parse_error& e) {
    const auto& where = e.source().begin;
    throw UsageError(origin.string() + ", line " + std::to_string(where.line) + ", column " +
                     std::to_string(where.column) + ": " + std::string(e.description()));
  }
}

// Field access with the dotted path reported on error.
const json* find(const json& root, const std::string& path) {
  const json* cur = &root;
  std::size_t start = 0;
  while (start <= path.size()) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!cur->is_object() || !cur->contains(key)) return nullptr;
    cur = &cur->at(key);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return cur;
}

double number(const json& root, const std::string& path, double fallback) {
  const json* v = find(root, path);
  if (v == nullptr) return fallback;
  if (!v->is_number()) throw UsageError("config field '" + path + "' must be a number");
  return v->get<double>();
}

double positive(const json& root, const std::string& path, double fallback) {
  const double v = number(root, path, fallback);
  if (!(v > 0.0)) throw UsageError("config field '" + path + "' must be positive");
  return v;
}

std::size_t count(const json& root, const std::string& path, std::size_t fallback) {
  const json* v = find(root, path);
  if (v == nullptr) return fallback;
  if (!v->is_number_integer() || v->get<long long>() <= 0)
    throw UsageError("config field '" + path + "' must be a positive integer");
  return v->get<std::size_t>();
}

std::string text(const json& root, const std::string& path, const std::string& fallback) {
  const json* v = find(root, path);
  if (v == nullptr) return fallback;
  if (!v->is_string()) throw UsageError("config field '" + path + "' must be a string");
  return v->get<std::string>();
}

std::vector<double> numbers(const json& root, const std::string& path, std::vector<double> fallback) {
  const json* v = find(root, path);
  if (v == nullptr) return fallback;
  if (!v->is_array()) throw UsageError("config field '" + path + "' must be an array of numbers");
  std::vector<double> out;
  for (const auto& e : *v) {
    if (!e.is_number()) throw UsageError("config field '" + path + "' must be an array of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

Vec vector_field(const json& root, const std::string& path, const Vec& fallback, std::size_t dim) {
  const json* v = find(root, path);
  if (v == nullptr) return fallback;
  const auto vals = numbers(root, path, {});
  if (vals.size() != dim) throw UsageError("config field '" + path + "' must have " + std::to_string(dim) + " entries");
  return Eigen::Map<const Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

std::vector<double> schedule(const json& root, const std::string& path, std::vector<double> fallback) {
  auto s = numbers(root, path, std::move(fallback));
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (!(s[j] > 0.0)) throw UsageError("config field '" + path + "' must hold positive penalty levels");
    if (j > 0 && !(s[j] > s[j - 1])) throw UsageError("config field '" + path + "' must be increasing");
  }
  return s;
}

struct Context {
  json config;
  fs::path config_path;
  std::string config_hash;
  std::uint64_t seed = 0;
  fs::path out;
  std::vector<std::pair<std::string, std::string>> artifacts;  // name, sha256
};

ProblemSpec load_problem(const Context& ctx, const std::string& field = "problem") {
  const json* p = find(ctx.config, field);
  if (p == nullptr) throw UsageError("config has no '" + field + "' table");
  if (p->is_string()) {
    const fs::path path = ctx.config_path.parent_path() / p->get<std::string>();
    return problem_from_json(parse_config_text(read_file(path), path));
  }
  if (!p->is_object()) throw UsageError("config field '" + field + "' must be a table or a file path");
  return problem_from_json(*p);
}

bdsde::SolverConfig solver_config(const json& c, const ProblemSpec& problem) {
  bdsde::SolverConfig cfg;
  const std::string basis = text(c, "solver.basis", "local");
  if (basis == "local") {
    cfg.basis.kind = regression::BasisConfig::Kind::kLocal;
  } else if (basis == "polynomial") {
    cfg.basis.kind = regression::BasisConfig::Kind::kPolynomial;
  } else {
    throw UsageError("config field 'solver.basis' must be 'local' or 'polynomial'");
  }
  cfg.basis.degree = static_cast<int>(count(c, "solver.degree", 2));
  cfg.basis.cells_per_axis = static_cast<int>(count(c, "solver.cells_per_axis", 16));
  cfg.basis.samples_per_cell = static_cast<int>(count(c, "solver.samples_per_cell", 400));
  cfg.picard_sweeps = static_cast<int>(count(c, "solver.picard_sweeps", 3));
  const Vec origin = Vec::Zero(static_cast<Eigen::Index>(problem.d));
  const std::string kind = text(c, "start.kind", "gaussian");
  const Vec x0 = vector_field(c, "start.x0", origin, problem.d);
  if (kind == "gaussian") {
    cfg.start = bdsde::StartLaw::gaussian(x0, number(c, "start.variance", 0.0));
  } else if (kind == "point") {
    cfg.start = bdsde::StartLaw::point(x0);
  } else if (kind == "box") {
    const Vec lo = vector_field(c, "start.lower", origin.array() - 1.0, problem.d);
    const Vec hi = vector_field(c, "start.upper", origin.array() + 1.0, problem.d);
    if (!((hi - lo).array() > 0.0).all()) throw UsageError("config fields 'start.lower' < 'start.upper' required");
    cfg.start = bdsde::StartLaw::uniform_box(lo, hi);
  } else {
    throw UsageError("config field 'start.kind' must be 'gaussian', 'point' or 'box'");
  }
  return cfg;
}

struct GridSizes {
  std::size_t N, M, NW;
};

GridSizes grid_sizes(const json& c) {
  return {count(c, "grid.N", 64), count(c, "grid.M", 20000), count(c, "grid.NW", 1)};
}

stochastics::NoiseBundle make_noise(const ProblemSpec& p, const GridSizes& g, std::uint64_t seed) {
  return stochastics::sample_noise(stochastics::TimeGrid::make(0.0, p.T, g.N), p.d, p.l, g.M, g.NW, seed);
}

class Csv {
 public:
  Csv(Context& ctx, std::string name, const std::vector<std::string>& header) : ctx_(ctx), name_(std::move(name)) {
    row(header);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t j = 0; j < cells.size(); ++j) body_ += (j ? "," : "") + cells[j];
    body_ += '\n';
  }
  ~Csv() {
    std::ofstream f(ctx_.out / name_, std::ios::binary);
    f << body_;
    ctx_.artifacts.emplace_back(name_, sha256_hex(body_));
  }

 private:
  Context& ctx_;
  std::string name_;
  std::string body_;
};

std::vector<std::string> stat_row(double n, const GridSizes& g, const std::string& metric, double value, double se) {
  return {num(n), std::to_string(g.N), std::to_string(g.M), std::to_string(g.NW), metric, num(value), num(se)};
}

const std::vector<std::string> kStatHeader{"n", "N", "M", "N_W", "metric", "value", "std_error"};

void write_ladder(Csv& csv, const std::vector<bdsde::PenalizedSolution>& ladder, const GridSizes& g) {
  for (const auto& s : ladder) {
    for (const auto& [name, st] : s.diagnostics.items()) csv.row(stat_row(s.n, g, name, st.value, st.se));
    for (Eigen::Index a = 0; a < s.y0.size(); ++a)
      csv.row(stat_row(s.n, g, "y0_" + std::to_string(a), s.y0(a), s.y0_se(a)));
  }
}

int cmd_solve(Context& ctx, std::ostream& log) {
  const auto problem = load_problem(ctx);
  const auto g = grid_sizes(ctx.config);
  const auto cfg = solver_config(ctx.config, problem);
  const auto sched = schedule(ctx.config, "solver.schedule", {4, 8, 16, 32, 64, 128, 256});
  const double tol = positive(ctx.config, "solver.tolerance", 1e-2);
  const auto bundle = make_noise(problem, g, ctx.seed);
  const auto sol = bdsde::solve_reflected(problem, bundle, sched, cfg, tol);
  {
    Csv csv(ctx, "diagnostics.csv", kStatHeader);
    write_ladder(csv, sol.ladder, g);
    const auto& sk = sol.skorohod;
    const double n = sol.finest().n;
    csv.row(stat_row(n, g, "minimality_max", sk.minimality_max, sk.minimality_se));
    csv.row(stat_row(n, g, "interior_fraction", sk.interior_fraction, 0.0));
    csv.row(stat_row(n, g, "exterior_fraction", sk.exterior_fraction, 0.0));
    csv.row(stat_row(n, g, "k_total_mass", sk.total_mass, 0.0));
  }
  {
    Csv csv(ctx, "cauchy.csv", {"n", "n_next", "N", "M", "N_W", "value", "std_error"});
    for (const auto& c : sol.cauchy)
      csv.row({num(c.n), num(c.n_next), std::to_string(g.N), std::to_string(g.M), std::to_string(g.NW),
               num(c.value.value), num(c.value.se)});
  }
  {
    Csv csv(ctx, "summary.csv", {"metric", "value"});
    for (Eigen::Index a = 0; a < sol.y0.size(); ++a) {
      csv.row({"y0_" + std::to_string(a), num(sol.y0(a))});
      csv.row({"y0_extrapolated_" + std::to_string(a), num(sol.y0_extrapolated(a))});
    }
    csv.row({"cauchy_decreasing", sol.cauchy_decreasing ? "1" : "0"});
    csv.row({"converged", sol.converged ? "1" : "0"});
  }
  for (Eigen::Index a = 0; a < sol.y0.size(); ++a) log << "Y0[" << a << "] = " << num(sol.y0(a)) << "\n";
  if (!sol.converged) {
    log << "no convergence: Cauchy sequence did not fall below " << num(tol) << " along the schedule\n";
    return kQualityGate;
  }
  log << "converged\n";
  return kSuccess;
}

int cmd_study(Context& ctx, std::ostream& log) {
  const auto problem = load_problem(ctx);
  const auto g = grid_sizes(ctx.config);
  const auto cfg = solver_config(ctx.config, problem);
  const auto sched = schedule(ctx.config, "solver.schedule", {4, 8, 16, 32, 64, 128});
  const auto bundle = make_noise(problem, g, ctx.seed);
  std::vector<bdsde::PenalizedSolution> ladder;
  {
    const Mat starts = cfg.start.draw(bundle.M, bundle.grid.dt(), bundle.seed);
    auto flow = std::make_shared<const stochastics::FlowEnsemble>(stochastics::forward_flow(problem, bundle, starts));
    for (double n : sched) ladder.push_back(bdsde::solve_penalized(problem, n, bundle, cfg, flow));
  }
  const auto study = bdsde::penalty_decay_study(ladder);
  const auto est = bdsde::estimates_report(ladder);
  {
    Csv csv(ctx, "study.csv", kStatHeader);
    write_ladder(csv, ladder, g);
  }
  {
    Csv csv(ctx, "summary.csv", {"metric", "value"});
    csv.row({"int_d2_loglog_slope", num(study.slope)});
    csv.row({"sup_d4_strictly_decreasing", study.sup_d4_strictly_decreasing ? "1" : "0"});
    csv.row({"sup_d4_final_over_initial", num(study.sup_d4_ratio)});
    csv.row({"data_functional", num(est.data_functional)});
    for (const auto& s : est.series) {
      csv.row({"mann_kendall_p_" + s.name, num(s.trend.p_increasing)});
      csv.row({"trend_free_" + s.name, s.trend.trend_free() ? "1" : "0"});
    }
    csv.row({"all_trend_free", est.all_trend_free() ? "1" : "0"});
  }
  log << "log-log slope of E∫d² against n: " << num(study.slope) << "\n";
  if (find(ctx.config, "study.slope_range") != nullptr) {
    const auto r = numbers(ctx.config, "study.slope_range", {});
    if (r.size() != 2 || !(r[0] < r[1])) throw UsageError("config field 'study.slope_range' must be [low, high]");
    if (!(study.slope >= r[0] && study.slope <= r[1])) {
      log << "slope outside [" << num(r[0]) << ", " << num(r[1]) << "]\n";
      return kQualityGate;
    }
  }
  return kSuccess;
}

double bump_value(const Vec& x, const Vec& c, double r) {
  double v = 1.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double u = (x(i) - c(i)) / r;
    if (std::abs(u) >= 1.0) return 0.0;
    v *= std::exp(-1.0 / (1.0 - u * u));
  }
  return v;
}

int cmd_field(Context& ctx, std::ostream& log) {
  const auto problem = load_problem(ctx);
  const auto& c = ctx.config;
  const auto d = problem.d;
  spde::FieldConfig fc;
  fc.solver = solver_config(c, problem);
  fc.schedule = schedule(c, "field.schedule", {64, 128});
  fc.steps = count(c, "field.steps", 32);
  fc.M = count(c, "field.M", 4000);
  fc.NW = count(c, "field.NW", 1);
  fc.seed = ctx.seed;
  fc.tolerance = positive(c, "field.tolerance", 1e-2);
  const auto times = numbers(c, "field.times", {0.0});
  const json* pts = find(c, "field.points");
  if (pts == nullptr || !pts->is_array() || pts->empty()) throw UsageError("config field 'field.points' must list grid points");
  Mat grid(static_cast<Eigen::Index>(pts->size()), static_cast<Eigen::Index>(d));
  for (std::size_t r = 0; r < pts->size(); ++r) {
    const auto& e = (*pts)[r];
    if (!e.is_array() || e.size() != d) throw UsageError("config field 'field.points' entries must have d coordinates");
    for (std::size_t j = 0; j < d; ++j) {
      if (!e[j].is_number()) throw UsageError("config field 'field.points' must hold numbers");
      grid(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = e[j].get<double>();
    }
  }
  const auto field = spde::evaluate_field(problem, grid, times, fc);
  {
    std::vector<std::string> header{"t"};
    for (std::size_t j = 0; j < d; ++j) header.push_back("x_" + std::to_string(j));
    header.insert(header.end(), {"component", "u", "std_error"});
    Csv csv(ctx, "field.csv", header);
    auto grad_header = header;
    grad_header.resize(d + 2);
    grad_header.insert(grad_header.end(), {"axis", "grad_u_sigma"});
    Csv gcsv(ctx, "gradient.csv", grad_header);
    for (const auto& p : field.points) {
      std::vector<std::string> lead{num(p.t)};
      for (Eigen::Index j = 0; j < p.x.size(); ++j) lead.push_back(num(p.x(j)));
      for (Eigen::Index a = 0; a < p.u.size(); ++a) {
        auto row = lead;
        row.insert(row.end(), {std::to_string(a), num(p.u(a)), num(p.se(a))});
        csv.row(row);
        for (Eigen::Index j = 0; j < p.grad.cols(); ++j) {
          auto grow = lead;
          grow.insert(grow.end(), {std::to_string(a), std::to_string(j), num(p.grad(a, j))});
          gcsv.row(grow);
        }
      }
    }
  }
  log << "field evaluated at " << field.points.size() << " points\n";

  const json* meas = find(c, "field.measure");
  if (meas == nullptr) return kSuccess;
  auto mcfg = fc.solver;
  const Vec lo = vector_field(c, "field.measure.lower", Vec::Constant(static_cast<Eigen::Index>(d), -4.0), d);
  const Vec hi = vector_field(c, "field.measure.upper", Vec::Constant(static_cast<Eigen::Index>(d), 4.0), d);
  if (!((hi - lo).array() > 0.0).all()) throw UsageError("config fields 'field.measure.lower' < 'upper' required");
  mcfg.start = bdsde::StartLaw::uniform_box(lo, hi);
  const GridSizes g{count(c, "field.measure.N", 64), count(c, "field.measure.M", 50000), 1};
  const double n = positive(c, "field.measure.n", 256);
  const auto bundle = make_noise(problem, g, ctx.seed);
  const auto sol = bdsde::solve_penalized(problem, n, bundle, mcfg);

  std::vector<spde::TestPair> pairs;
  if (const json* list = find(c, "field.measure.pairs")) {
    if (!list->is_array()) throw UsageError("config field 'field.measure.pairs' must be an array of tables");
    for (std::size_t q = 0; q < list->size(); ++q) {
      const json& e = (*list)[q];
      const std::string base = "field.measure.pairs[" + std::to_string(q) + "]";
      auto bump_of = [&](const std::string& key) {
        const json wrap = json{{"v", e.contains(key) ? e.at(key) : json::object()}};
        const Vec center = vector_field(wrap, "v.center", sol.start_law.anchor(), d);
        const double radius = positive(wrap, "v.radius", 1.0);
        return std::function<double(double, const Vec&)>(
            [center, radius](double, const Vec& x) { return bump_value(x, center, radius); });
      };
      if (!e.is_object()) throw UsageError("config field '" + base + "' must be a table");
      pairs.push_back({e.value("name", "pair" + std::to_string(q)), bump_of("phi"), bump_of("psi")});
    }
  } else {
    auto one = [](double, const Vec&) { return 1.0; };
    pairs.push_back({"unit", one, one});
  }
  spde::MeasureConfig mc;
  mc.eps_int = number(c, "field.measure.eps_int", -1.0);
  const auto est = spde::estimate_measure(problem, sol, bundle, pairs, mc);
  {
    Csv csv(ctx, "measure.csv", {"pair", "left", "left_std_error", "right", "right_std_error", "agree"});
    for (const auto& pe : est.pairs)
      csv.row({pe.name, num(pe.left.value), num(pe.left.se), num(pe.right.value), num(pe.right.se),
               pe.agree() ? "1" : "0"});
  }
  Csv csv(ctx, "measure_summary.csv", {"metric", "value", "std_error"});
  csv.row({"boundary_fraction", num(est.boundary_fraction), "0"});
  csv.row({"eps_int", num(est.eps_int), "0"});
  csv.row({"weighted_total_mass", num(est.weighted_total_mass), "0"});
  if (find(c, "field.weak_form") != nullptr) {
    const Vec center = vector_field(c, "field.weak_form.center", sol.start_law.anchor(), d);
    const auto phi = spde::separable_bump(problem, center, positive(c, "field.weak_form.radius", 1.0),
                                          number(c, "field.weak_form.slope", 0.0));
    spde::WeakFormConfig wc;
    wc.cells_per_axis = static_cast<int>(count(c, "field.weak_form.cells_per_axis", 64));
    wc.eps_int = mc.eps_int;
    const auto wf = spde::weak_form_residual(problem, spde::field_from_solution(sol, bundle), &sol, phi, wc);
    csv.row({"weak_transport", num(wf.transport), num(wf.field_se)});
    csv.row({"weak_boundary", num(wf.boundary), "0"});
    csv.row({"weak_f", num(wf.f_term), "0"});
    csv.row({"weak_h", num(wf.h_term), "0"});
    csv.row({"weak_nu", num(wf.nu_term.value), num(wf.nu_term.se)});
    csv.row({"weak_residual_with_nu", num(wf.residual_with), num(wf.se_with)});
    csv.row({"weak_residual_without_nu", num(wf.residual_without), num(wf.se_without)});
    log << "weak-form residual with ν: " << num(wf.residual_with) << " ± " << num(wf.se_with) << "\n";
  }
  return kSuccess;
}

struct PropertyResult {
  std::string name;
  bool passed = false;
  double statistic = 0.0;
  double threshold = 0.0;
  std::string detail;
};

PropertyResult verify_geometry(const ProblemSpec& problem, std::uint64_t seed, std::size_t samples) {
  const auto& D = problem.domain;
  const auto k = static_cast<Eigen::Index>(D.dim());
  const Vec a = D.interior_point();
  const double spread = 3.0 * D.scale();
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < samples; ++s) {
    PhiloxStream rng(seed, StreamTag::kProperty, s);
    Vec x(k), y(k);
    for (auto& v : x) v = spread * rng.normal();
    for (auto& v : y) v = spread * rng.normal();
    x += a;
    y += a;
    const Vec px = D.project(x).point, py = D.project(y).point;
    const Vec r = x - px;
    const Vec inside = py;  // a point of D̄
    const double p1 = (inside - x).dot(r);
    const double p2 = (y - x).dot(r) - (y - py).dot(r);
    const double p3 = D.gamma() * r.norm() - (x - a).dot(r);
    const double ne = (px - py).norm() - (x - y).norm();
    worst = std::max({worst, p1, p2, p3, ne});
  }
  return {"geometry", worst <= 1e-9, worst, 1e-9, "max violation of the projection identities"};
}

PropertyResult verify_flow(const ProblemSpec& problem, const bdsde::SolverConfig& cfg, std::size_t N, std::uint64_t seed,
                           std::size_t paths) {
  const auto fine = stochastics::sample_noise(stochastics::TimeGrid::make(0.0, problem.T, 8 * N), problem.d, problem.l,
                                              paths, 1, seed);
  Mat starts(static_cast<Eigen::Index>(paths), static_cast<Eigen::Index>(problem.d));
  const Vec anchor = cfg.start.anchor();
  for (std::size_t m = 0; m < paths; ++m) {
    PhiloxStream rng(seed, StreamTag::kProperty, m);
    for (std::size_t j = 0; j < problem.d; ++j)
      starts(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(j)) =
          anchor(static_cast<Eigen::Index>(j)) + 2.0 * (2.0 * rng.uniform() - 1.0);
  }
  std::vector<double> err;
  for (std::size_t factor : {8, 4, 2, 1}) {
    const auto b = factor == 1 ? fine : stochastics::coarsen(fine, factor);
    const auto flow = stochastics::forward_flow(problem, b, starts);
    const std::size_t steps = b.grid.steps;
    double e = 0.0;
    for (std::size_t m = 0; m < paths; ++m) {
      const Vec back = stochastics::inverse_flow(problem, b, m, flow.state_vec(m, steps), 0, steps);
      e += (back - starts.row(static_cast<Eigen::Index>(m)).transpose()).norm();
    }
    err.push_back(e / static_cast<double>(paths));
  }
  double worst_ratio = std::numeric_limits<double>::infinity();
  for (std::size_t j = 1; j < err.size(); ++j) worst_ratio = std::min(worst_ratio, err[j - 1] / err[j]);
  const bool exact = err.front() <= 1e-10;
  PropertyResult r{"flow_inversion", exact || worst_ratio >= 1.3, exact ? 0.0 : worst_ratio, 1.3, ""};
  r.detail = exact ? "inverse flow exact to rounding" : "min error ratio over three halvings of the step";
  return r;
}

PropertyResult verify_skorohod(const ProblemSpec& problem, const bdsde::SolverConfig& cfg,
                               const stochastics::NoiseBundle& bundle, double n) {
  const auto sol = bdsde::solve_penalized(problem, n, bundle, cfg);
  const auto rep = bdsde::check_skorohod(sol);
  PropertyResult r{"skorohod", rep.minimality_ok() && rep.interior_fraction < 0.1, rep.interior_fraction, 0.1, ""};
  r.detail = "minimality " + num(rep.minimality_max) + " (se " + num(rep.minimality_se) + "); interior K-mass fraction";
  return r;
}

PropertyResult verify_norms(const ProblemSpec& problem, const bdsde::SolverConfig& cfg, std::size_t N, std::size_t M,
                            std::uint64_t seed) {
  std::vector<std::function<double(const Vec&)>> phis;
  const Vec anchor = cfg.start.anchor();
  for (double shift : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
    Vec c = anchor;
    c(0) += shift;
    phis.push_back([c](const Vec& x) { return bump_value(x, c, 1.5); });
  }
  const double T = problem.T;
  const auto rep = spde::norm_equivalence_check(problem, phis, 0.0, {T / 4, T / 2, T}, M, T / static_cast<double>(N), seed);
  PropertyResult r{"norm_equivalence",
                   rep.min_ratio >= 0.2 && rep.max_ratio <= 5.0 && rep.max_s_variation < 0.2, rep.max_s_variation, 0.2,
                   ""};
  r.detail = "ratios in [" + num(rep.min_ratio) + ", " + num(rep.max_ratio) + "]; relative spread across s";
  return r;
}

int cmd_verify(Context& ctx, std::ostream& log) {
  std::vector<std::string> props{"geometry", "flow_inversion", "skorohod", "norm_equivalence"};
  if (const json* v = find(ctx.config, "verify.properties")) {
    if (!v->is_array()) throw UsageError("config field 'verify.properties' must be an array of names");
    props.clear();
    for (const auto& e : *v) {
      if (!e.is_string()) throw UsageError("config field 'verify.properties' must be an array of names");
      const auto name = e.get<std::string>();
      if (name != "geometry" && name != "flow_inversion" && name != "skorohod" && name != "norm_equivalence")
        throw UsageError("unknown property '" + name + "' in 'verify.properties'");
      props.push_back(name);
    }
  }
  if (props.empty()) throw UsageError("empty property suite: 'verify.properties' selects nothing");
  const auto problem = load_problem(ctx);
  const auto g = grid_sizes(ctx.config);
  const auto cfg = solver_config(ctx.config, problem);
  const auto sched = schedule(ctx.config, "solver.schedule", {256});
  std::vector<PropertyResult> results;
  for (const auto& name : props) {
    if (name == "geometry") {
      results.push_back(verify_geometry(problem, ctx.seed, count(ctx.config, "verify.geometry_samples", 10000)));
    } else if (name == "flow_inversion") {
      results.push_back(verify_flow(problem, cfg, g.N, ctx.seed, count(ctx.config, "verify.flow_paths", 2000)));
    } else if (name == "skorohod") {
      results.push_back(verify_skorohod(problem, cfg, make_noise(problem, g, ctx.seed), sched.back()));
    } else {
      const auto norm_problem = find(ctx.config, "verify.norm_problem") ? load_problem(ctx, "verify.norm_problem") : problem;
      results.push_back(
          verify_norms(norm_problem, cfg, g.N, count(ctx.config, "verify.norm_samples", 10000), ctx.seed));
    }
  }
  bool all = true;
  Csv csv(ctx, "verify.csv", {"property", "passed", "statistic", "threshold"});
  for (const auto& r : results) {
    all = all && r.passed;
    log << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << " = " << num(r.statistic)
        << " (threshold " << num(r.threshold) << ")\n";
    csv.row({r.name, r.passed ? "1" : "0", num(r.statistic), num(r.threshold)});
  }
  return all ? kSuccess : kQualityGate;
}

void write_manifest(const Context& ctx, const Invocation& inv, double wall) {
  json m;
  m["command"] = inv.command;
  m["config_sha256"] = ctx.config_hash;
  m["seeds"] = {{"base", ctx.seed}};
  m["versions"] = {{"rbdsde", RBDSDE_VERSION},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"compiler", __VERSION__}};
  json arts = json::object();
  for (const auto& [name, hash] : ctx.artifacts) arts[name] = hash;
  m["artifacts_sha256"] = arts;
  m["wall_time_seconds"] = wall;
  std::ofstream(ctx.out / "manifest.json", std::ios::binary) << m.dump(2) << "\n";
}

}  // namespace

int run(const Invocation& inv, std::ostream& log) {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    Context ctx;
    ctx.config_path = inv.config;
    const std::string bytes = read_file(inv.config);
    ctx.config = parse_config_text(bytes, inv.config);
    ctx.config_hash = sha256_hex(bytes);
    if (inv.seed) {
      ctx.seed = *inv.seed;
    } else if (const json* s = find(ctx.config, "seed"); s != nullptr && s->is_number_unsigned()) {
      ctx.seed = s->get<std::uint64_t>();
    } else {
      throw UsageError("no seed: set 'seed' in the config or pass --seed");
    }
    set_thread_count(inv.threads);
    ctx.out = inv.out;
    fs::create_directories(ctx.out);
    int code = kFailure;
    if (inv.command == "solve") {
      code = cmd_solve(ctx, log);
    } else if (inv.command == "study") {
      code = cmd_study(ctx, log);
    } else if (inv.command == "field") {
      code = cmd_field(ctx, log);
    } else if (inv.command == "verify") {
      code = cmd_verify(ctx, log);
    } else {
      throw UsageError("unknown command '" + inv.command + "'");
    }
    write_manifest(ctx, inv, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    return code;
  } catch (const UsageError& e) {
    log << "usage error: " << e.what() << "\n";
  } catch (const SetupError& e) {
    log << "setup rejected: " << e.what() << "\n";
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
  }
  return kFailure;
}

int main(int argc, char** argv) {
  CLI::App app{"Penalization solver for reflected backward doubly stochastic equations"};
  app.require_subcommand(1);
  Invocation inv;
  std::uint64_t seed = 0;
  for (const char* name : {"solve", "study", "field", "verify"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", inv.config, "TOML run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", inv.out, "output directory")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--threads", inv.threads, "worker threads (0 = all cores)");
    sub->callback([&inv, sub] { inv.command = sub->get_name(); });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kSuccess : kFailure;
  }
  for (auto* sub : app.get_subcommands())
    if (sub->count("--seed") > 0) inv.seed = seed;
  return run(inv, std::cout);
}

}  // namespace rbdsde::cli
