// Acceptance suite: `acceptance NN` runs criterion NN and prints one line,
// "PASS NN name: detail" or "FAIL NN name: detail". Exit status 0 on pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rbdsde/bdsde.hpp"
#include "rbdsde/geometry.hpp"
#include "rbdsde/spde.hpp"
#include "rbdsde/stochastics.hpp"

using namespace rbdsde;
using geometry::ConvexDomain;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome with_budget(Outcome o, double elapsed, double budget) {
  o.detail += "; " + fmt(elapsed) + " s (budget " + fmt(budget) + " s)";
  o.pass = o.pass && elapsed < budget;
  return o;
}

double bump(double u) { return std::abs(u) < 1.0 ? std::exp(-1.0 / (1.0 - u * u)) : 0.0; }

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  std::copy(v.begin(), v.end(), out.data());
  return out;
}

// ---------------------------------------------------------------- geometry

std::vector<ConvexDomain> domain_kinds() {
  std::vector<ConvexDomain> out;
  out.push_back(ConvexDomain::ball(vec({0.5, -1.0, 2.0}), 1.5));
  out.push_back(ConvexDomain::box(vec({-1.0, 0.0, -2.0}), vec({1.0, 0.5, 3.0})));
  out.push_back(ConvexDomain::half_space(vec({1.0, -2.0, 0.5}), 0.7));
  out.push_back(ConvexDomain::intersection({{vec({-1.0, 0.0}), 0.0},
                                            {vec({0.0, -1.0}), 0.0},
                                            {vec({1.0, 1.0}), 2.0},
                                            {vec({1.0, -3.0}), 1.0}}));
  out.push_back(geometry::mollify(ConvexDomain::box(vec({0.0, 0.0}), vec({1.0, 1.0})), 0.1, 0.02));
  return out;
}

Outcome convexity_identities() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kSamples = 10000;
  std::mt19937_64 g(20260101);
  std::ostringstream detail;
  bool pass = true;
  for (const auto& D : domain_kinds()) {
    const auto k = static_cast<Eigen::Index>(D.dim());
    const Vec a = D.interior_point();
    std::normal_distribution<double> n(0.0, 3.0 * std::max(1.0, D.scale()));
    std::vector<Vec> x(kSamples), px(kSamples);
    for (int s = 0; s < kSamples; ++s) {
      x[s] = a;
      for (Eigen::Index j = 0; j < k; ++j) x[s](j) += n(g);
      px[s] = D.project(x[s]).point;
    }
    // Each input x is paired with the next sample y for the two-point identities.
    double worst = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < kSamples; ++s) {
      const Vec& y = x[(s + 1) % kSamples];
      const Vec& py = px[(s + 1) % kSamples];
      const Vec r = x[s] - px[s];
      const double p1 = (py - x[s]).dot(r);
      const double p2 = (y - x[s]).dot(r) - (y - py).dot(r);
      const double p3 = D.gamma() * r.norm() - (x[s] - a).dot(r);
      const double ne = (px[s] - py).norm() - (x[s] - y).norm();
      worst = std::max({worst, p1, p2, p3, ne});
    }
    pass = pass && worst <= 1e-9;
    detail << (detail.tellp() > 0 ? ", " : "") << D.kind() << " " << fmt(worst);
  }
  return with_budget({pass, "max violation per kind (tol 1e-9): " + detail.str()}, seconds_since(t0), 10.0);
}

Outcome mollification_bound() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<ConvexDomain> bases = {
      ConvexDomain::ball(vec({0.0, 0.0}), 1.0), ConvexDomain::box(vec({0.0, 0.0}), vec({1.0, 2.0})),
      ConvexDomain::half_space(vec({1.0, 1.0}), 0.5),
      ConvexDomain::intersection({{vec({-1.0, 0.0}), 0.0}, {vec({0.0, -1.0}), 0.0}, {vec({1.0, 1.0}), 2.0}})};
  std::mt19937_64 g(4242);
  double c = 0.0;
  for (double eps : {0.2, 0.1, 0.05}) {
    for (std::size_t b = 0; b < bases.size(); ++b) {
      const auto& D = bases[b];
      // δ = η = ε keeps the mean quadrature offset below η, so the reported radius is ε.
      const auto De = geometry::mollify(D, eps, eps);
      if (std::abs(De.epsilon() - eps) > 1e-15) return {false, "reported epsilon " + fmt(De.epsilon()) + " != " + fmt(eps)};
      std::normal_distribution<double> n(0.0, 2.0);
      const int count = 1000 / static_cast<int>(bases.size()) + (b < 1000 % bases.size() ? 1 : 0);
      for (int s = 0; s < count; ++s) {
        const Vec x = D.interior_point() + vec({n(g), n(g)});
        const auto pe = De.project(x);
        const double gap = (D.project(x).point - pe.point).norm();
        c = std::max(c, gap / std::sqrt(eps * eps + eps * pe.distance));
      }
    }
  }
  return with_budget({c <= 10.0, "fitted c = " + fmt(c) + " (limit 10) over 10^3 samples per epsilon"},
                     seconds_since(t0), 30.0);
}

// ------------------------------------------------------- reflecting benchmark

const std::vector<double> kSchedule = {4, 8, 16, 32, 64, 128};

struct Ladder {
  bdsde::RBDSDESolution sol;
  double elapsed = 0.0;
  std::vector<bdsde::PenalizedSolution> schedule_part() const {
    return {sol.ladder.begin(), sol.ladder.begin() + static_cast<std::ptrdiff_t>(kSchedule.size())};
  }
};

// N = 64, M = 2·10⁴, one W path; the ladder extends to 256 so that every
// schedule entry n has a partner 2n and criterion 6 can read n = 256.
Ladder benchmark_ladder() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto p = reflecting_benchmark();
  const auto nb = stochastics::sample_noise(stochastics::TimeGrid::make(0.0, 1.0, 64), 1, 1, 20000, 1, 12345);
  bdsde::SolverConfig cfg;
  cfg.start = bdsde::StartLaw::gaussian(Vec::Zero(1));
  std::vector<double> full = kSchedule;
  full.push_back(256);
  Ladder l{bdsde::solve_reflected(p, nb, full, cfg), 0.0};
  l.elapsed = seconds_since(t0);
  return l;
}

Outcome penalty_decay_slope() {
  const auto l = benchmark_ladder();
  const auto study = bdsde::penalty_decay_study(l.schedule_part());
  const bool pass = study.slope >= -1.4 && study.slope <= -0.8;
  return with_budget({pass, "log-log slope of E int d^2 = " + fmt(study.slope) + " (range [-1.4, -0.8])"}, l.elapsed,
                     300.0);
}

Outcome sup_distance_decay() {
  const auto l = benchmark_ladder();
  const auto study = bdsde::penalty_decay_study(l.schedule_part());
  std::ostringstream s;
  for (const auto& r : study.rows) s << (s.tellp() > 0 ? " " : "") << fmt(r.sup_d4.value);
  const bool pass = study.sup_d4_strictly_decreasing && study.sup_d4_ratio < 0.1;
  return {pass, "E sup d^4 = " + s.str() + "; strictly decreasing " + (study.sup_d4_strictly_decreasing ? "yes" : "no") +
                    ", final/initial " + fmt(study.sup_d4_ratio) + " (limit 0.1)"};
}

Outcome cauchy_decay() {
  const auto l = benchmark_ladder();
  const auto& c = l.sol.cauchy;
  bool decreasing = true;
  std::ostringstream s;
  for (std::size_t j = 0; j < c.size(); ++j) {
    s << (j > 0 ? " " : "") << fmt(c[j].value.value);
    if (j > 0 && !(c[j].value.value < c[j - 1].value.value)) decreasing = false;
  }
  const double ratio = c.back().value.value / c.front().value.value;
  return {decreasing && ratio < 0.25, "E sup|Y^n - Y^2n|^2 for n = 4..128: " + s.str() + "; final/initial " + fmt(ratio) +
                                          " (limit 0.25)"};
}

Outcome tree_oracle_agreement() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto p = reflecting_benchmark();
  const auto nb = stochastics::sample_noise(stochastics::TimeGrid::make(0.0, 1.0, 64), 1, 1, 20000, 1, 12345);
  bdsde::SolverConfig cfg;
  cfg.start = bdsde::StartLaw::gaussian(Vec::Zero(1));
  const auto s = bdsde::solve_penalized(p, 256.0, nb, cfg);
  const double tree = bdsde::tree_oracle(p, 10).y0;
  const double gap = std::abs(s.y0(0) - tree);
  return with_budget({gap <= 0.02, "Y0(n=256) = " + fmt(s.y0(0)) + ", tree(10) = " + fmt(tree) + ", gap " + fmt(gap) +
                                       " (limit 0.02)"},
                     seconds_since(t0), 120.0);
}

Outcome skorohod_conditions() {
  const auto p = reflecting_benchmark();
  const auto nb = stochastics::sample_noise(stochastics::TimeGrid::make(0.0, 1.0, 64), 1, 1, 20000, 1, 12345);
  bdsde::SolverConfig cfg;
  cfg.start = bdsde::StartLaw::gaussian(Vec::Zero(1));
  const auto s = bdsde::solve_penalized(p, 256.0, nb, cfg);
  const auto r = bdsde::check_skorohod(s, 0.05, 20);
  const bool pass = r.minimality.size() == 20 && r.minimality_ok() && r.interior_fraction < 0.1;
  return {pass, "max minimality residual " + fmt(r.minimality_max) + " vs 2 se = " + fmt(2.0 * r.minimality_se) +
                    " over " + std::to_string(r.minimality.size()) + " z; interior K fraction " +
                    fmt(r.interior_fraction) + " (limit 0.1)"};
}

Outcome uniform_estimates() {
  const auto l = benchmark_ladder();
  const auto rep = bdsde::estimates_report(l.schedule_part());
  std::ostringstream s;
  for (const auto& e : rep.series)
    s << (s.tellp() > 0 ? ", " : "") << e.name << " p=" << fmt(e.trend.p_increasing)
      << (e.trend.trend_free() ? "" : " (trend)");
  return {rep.all_trend_free(), "Mann-Kendall one-sided p per quantity, level 0.05: " + s.str()};
}

// ------------------------------------------------------------------- spde

ProblemSpec half_line(const json& forward) {
  return problem_from_json({{"domain", {{"kind", "half-space"}, {"normal", {-1.0}}, {"offset", 0.0}}},
                            {"forward", forward},
                            {"terminal", "identity"},
                            {"terminal_policy", "allow"}});
}

Outcome flow_inversion() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto p = half_line("trig");
  constexpr std::size_t kPaths = 2000;
  const auto fine = stochastics::sample_noise(stochastics::TimeGrid::make(0.0, 1.0, 256), 1, 1, kPaths, 1, 7);
  Mat starts(kPaths, 1);
  for (std::size_t m = 0; m < kPaths; ++m) starts(static_cast<Eigen::Index>(m), 0) = -2.0 + 4.0 * m / (kPaths - 1.0);
  std::vector<double> err;
  for (std::size_t factor : {8, 4, 2, 1}) {
    const auto b = factor == 1 ? fine : stochastics::coarsen(fine, factor);
    const auto flow = stochastics::forward_flow(p, b, starts);
    const std::size_t steps = b.grid.steps;
    double e = 0.0;
    for (std::size_t m = 0; m < kPaths; ++m)
      e += std::abs(stochastics::inverse_flow(p, b, m, flow.state_vec(m, steps), 0, steps)(0) -
                    starts(static_cast<Eigen::Index>(m), 0));
    err.push_back(e / kPaths);
  }
  std::ostringstream s;
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t j = 1; j < err.size(); ++j) {
    s << fmt(err[j - 1] / err[j]) << (j + 1 < err.size() ? " " : "");
    worst = std::min(worst, err[j - 1] / err[j]);
  }
  return with_budget({worst >= 1.3, "error ratios over 3 halvings (N = 32..256): " + s.str() + " (limit 1.3)"},
                     seconds_since(t0), 60.0);
}

Outcome norm_equivalence() {
  const auto p = half_line({{"name", "ou"}, {"theta", 1.0}, {"mean", 0.0}, {"scale", 1.0}});
  std::vector<std::function<double(const Vec&)>> phis;
  for (double c : {-2.0, -1.0, 0.0, 1.0, 2.0}) phis.push_back([c](const Vec& x) { return bump((x(0) - c) / 1.5); });
  const auto r = spde::norm_equivalence_check(p, phis, 0.0, {0.25, 0.5, 1.0}, 20000, 1.0 / 64, 11);
  const bool pass = r.min_ratio >= 0.2 && r.max_ratio <= 5.0 && r.max_s_variation < 0.2;
  return {pass, "ratios in [" + fmt(r.min_ratio) + ", " + fmt(r.max_ratio) + "] (interval [0.2, 5]); variation across s " +
                    fmt(r.max_s_variation) + " (limit 0.2)"};
}

struct BoxSolution {
  ProblemSpec problem;
  stochastics::NoiseBundle noise;
  bdsde::PenalizedSolution solution;
};

// Start points uniform on [-6, 6] stand in for Lebesgue measure in x.
BoxSolution box_start_benchmark(std::size_t M) {
  auto p = reflecting_benchmark();
  auto nb = stochastics::sample_noise(stochastics::TimeGrid::make(0.0, 1.0, 64), 1, 1, M, 1, 21);
  bdsde::SolverConfig cfg;
  cfg.start = bdsde::StartLaw::uniform_box(Vec::Constant(1, -6.0), Vec::Constant(1, 6.0));
  auto s = bdsde::solve_penalized(p, 256.0, nb, cfg);
  return {std::move(p), std::move(nb), std::move(s)};
}

Outcome measure_representation() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto b = box_start_benchmark(100000);
  auto bump_at = [](double c, double r) { return [c, r](double, const Vec& x) { return bump((x(0) - c) / r); }; };
  const std::vector<spde::TestPair> pairs = {
      {"bumps", bump_at(0.0, 3.0), bump_at(0.0, 2.0)},
      {"gaussian-bump", [](double s, const Vec& x) { return (1.0 + s) * std::exp(-x(0) * x(0)); }, bump_at(-0.5, 1.5)},
      {"bump-one", bump_at(1.0, 2.0), [](double, const Vec&) { return 1.0; }}};
  const auto m = spde::estimate_measure(b.problem, b.solution, b.noise, pairs);
  bool pass = m.pairs.size() == 3;
  std::ostringstream s;
  for (const auto& q : m.pairs) {
    pass = pass && q.agree();
    s << (s.tellp() > 0 ? ", " : "") << q.name << " " << fmt(q.left.value) << " vs " << fmt(q.right.value)
      << " (3 se " << fmt(3.0 * q.combined_se) << ")";
  }
  return with_budget({pass, s.str()}, seconds_since(t0), 600.0);
}

Outcome weak_form_ablation() {
  const auto b = box_start_benchmark(100000);
  const auto field = spde::field_from_solution(b.solution, b.noise);
  const auto phi = spde::separable_bump(b.problem, Vec::Zero(1), 2.0, 0.5);
  const auto r = spde::weak_form_residual(b.problem, field, &b.solution, phi);
  const bool pass = std::abs(r.residual_without) > 3.0 * r.se_without && std::abs(r.residual_with) <= 3.0 * r.se_with;
  return {pass, "without nu " + fmt(r.residual_without) + " (3 se " + fmt(3.0 * r.se_without) + "); with nu " +
                    fmt(r.residual_with) + " (3 se " + fmt(3.0 * r.se_with) + ")"};
}

Outcome heat_equation() {
  const auto p = problem_from_json({{"domain", {{"kind", "ball"}, {"center", {0.0}}, {"radius", 1e6}}},
                                    {"forward", {{"name", "brownian"}, {"scale", std::sqrt(2.0)}}},
                                    {"terminal", "square"},
                                    {"terminal_policy", "allow"}});
  spde::FieldConfig cfg;
  cfg.schedule = {};
  cfg.solver.basis.kind = regression::BasisConfig::Kind::kPolynomial;
  cfg.M = 20000;
  cfg.steps = 32;
  Mat grid(5, 1);
  grid << -1.0, -0.5, 0.0, 0.5, 1.0;
  const auto f = spde::evaluate_field(p, grid, {0.0}, cfg);
  bool pass = f.points.size() == 5;
  double worst = 0.0;
  for (const auto& q : f.points) {
    const double z = std::abs(q.u(0) - (q.x(0) * q.x(0) + 2.0 * (1.0 - q.t))) / q.se(0);
    worst = std::max(worst, z);
    pass = pass && z <= 3.0;
  }
  return {pass, "max |u - (x^2 + 2(T-t))| / se at t = 0 over 5 points = " + fmt(worst) + " (limit 3)"};
}

// ------------------------------------------------------------------- cli

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome cli_determinism() {
  const fs::path root = fs::temp_directory_path() / "rbdsde_acceptance_determinism";
  fs::remove_all(root);
  const fs::path config = fs::path(RBDSDE_CONFIG_DIR) / "verify.toml";
  std::vector<fs::path> outs;
  for (const char* run : {"first", "second"}) {
    const fs::path out = root / run;
    const std::string cmd = std::string("\"") + RBDSDE_CLI_PATH + "\" verify --config \"" + config.string() +
                            "\" --out \"" + out.string() + "\" --seed 7 > \"" + (root / run).string() + ".log\" 2>&1";
    fs::create_directories(root);
    const int code = std::system(cmd.c_str());
    if (code != 0) return {false, std::string("rbdsde verify exited with status ") + std::to_string(code) + " on run " + run};
    outs.push_back(out);
  }
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(outs[0])) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  std::size_t identical = 0;
  std::ostringstream diff;
  for (const auto& name : names) {
    const std::string a = slurp(outs[0] / name), b = slurp(outs[1] / name);
    if (name == "manifest.json") {
      // Wall time is recorded for the run and is the only field allowed to differ.
      auto ja = json::parse(a), jb = json::parse(b);
      ja.erase("wall_time_seconds");
      jb.erase("wall_time_seconds");
      if (ja == jb) ++identical; else diff << name << " ";
    } else if (a == b) {
      ++identical;
    } else {
      diff << name << " ";
    }
  }
  for (const auto& e : fs::directory_iterator(outs[1]))
    if (!fs::exists(outs[0] / e.path().filename())) diff << e.path().filename().string() << " ";
  const bool pass = diff.str().empty() && !names.empty();
  return {pass, std::to_string(identical) + "/" + std::to_string(names.size()) + " artifacts byte-identical" +
                    (pass ? "" : "; differing: " + diff.str())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<std::string, std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"01", {"convexity_identities", convexity_identities}},
      {"02", {"mollification_bound", mollification_bound}},
      {"03", {"penalty_decay_slope", penalty_decay_slope}},
      {"04", {"sup_distance_decay", sup_distance_decay}},
      {"05", {"cauchy_decay", cauchy_decay}},
      {"06", {"tree_oracle_agreement", tree_oracle_agreement}},
      {"07", {"skorohod_conditions", skorohod_conditions}},
      {"08", {"uniform_estimates", uniform_estimates}},
      {"09", {"flow_inversion", flow_inversion}},
      {"10", {"norm_equivalence", norm_equivalence}},
      {"11", {"measure_representation", measure_representation}},
      {"12", {"weak_form_ablation", weak_form_ablation}},
      {"13", {"heat_equation", heat_equation}},
      {"14", {"cli_determinism", cli_determinism}},
  };
  std::vector<std::string> ids;
  for (int i = 1; i < argc; ++i) ids.emplace_back(argv[i]);
  if (ids.empty())
    for (const auto& [id, _] : criteria) ids.push_back(id);
  int failures = 0;
  for (const auto& id : ids) {
    const auto it = criteria.find(id);
    if (it == criteria.end()) {
      std::cerr << "unknown criterion " << id << "\n";
      return 2;
    }
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << id << " " << it->second.first << ": " << o.detail << std::endl;
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
