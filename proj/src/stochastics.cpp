#include "rbdsde/stochastics.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "rbdsde/errors.hpp"
#include "rbdsde/parallel.hpp"
#include "rbdsde/rng.hpp"

namespace rbdsde::stochastics {
namespace {

static_assert(std::endian::native == std::endian::little, "binary persistence assumes a little-endian host");

void check_increments(const std::vector<double>& data, std::size_t width, double dt, const char* label) {
  const std::size_t count = data.size() / width;
  if (count < 2000) return;
  for (std::size_t j = 0; j < width; ++j) {
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t r = 0; r < count; ++r) {
      const double z = data[r * width + j] / std::sqrt(dt);
      sum += z;
      sum2 += z * z;
    }
    const double mean = sum / static_cast<double>(count);
    const double var = sum2 / static_cast<double>(count) - mean * mean;
    if (std::abs(mean) > 4.0 / std::sqrt(static_cast<double>(count)) || std::abs(var - 1.0) > 0.1)
      throw Error(std::string("noise sanity check failed for ") + label + " increments");
  }
}

void write_array(const std::filesystem::path& path, const std::vector<double>& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
}

std::vector<double> read_array(const std::filesystem::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<double> data(count);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double))) throw Error("truncated array " + path.string());
  return data;
}

nlohmann::json grid_json(const TimeGrid& g) { return {{"t0", g.t0}, {"T", g.T}, {"steps", g.steps}}; }

TimeGrid grid_from(const nlohmann::json& j) {
  return TimeGrid::make(j.at("t0").get<double>(), j.at("T").get<double>(), j.at("steps").get<std::size_t>());
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

}  // namespace

TimeGrid TimeGrid::make(double t0, double T, std::size_t steps) {
  if (steps == 0) throw SetupError("time grid needs at least one step");
  if (!(T > t0)) throw SetupError("time grid needs T > t0");
  return TimeGrid{t0, T, steps};
}

NoiseBundle sample_noise(const TimeGrid& grid, std::size_t d, std::size_t l, std::size_t M, std::size_t NW,
                         std::uint64_t seed) {
  if (M == 0 || NW == 0) throw SetupError("sample_noise needs M >= 1 and N_W >= 1");
  NoiseBundle nb;
  nb.grid = grid;
  nb.d = d;
  nb.l = l;
  nb.M = M;
  nb.NW = NW;
  nb.seed = seed;
  const std::size_t N = grid.steps;
  const double sdt = std::sqrt(grid.dt());
  nb.dB.resize(M * N * d);
  nb.dW.resize(NW * N * l);
  parallel_for(M, [&](std::size_t m) {
    PhiloxStream rng(seed, StreamTag::kForwardB, m);
    for (std::size_t q = 0; q < N * d; ++q) nb.dB[m * N * d + q] = sdt * rng.normal();
  });
  for (std::size_t w = 0; w < NW; ++w) {
    PhiloxStream rng(seed, StreamTag::kBackwardW, w);
    for (std::size_t q = 0; q < N * l; ++q) nb.dW[w * N * l + q] = sdt * rng.normal();
  }
  check_increments(nb.dB, d, grid.dt(), "B");
  check_increments(nb.dW, l, grid.dt(), "W");
  return nb;
}

NoiseBundle coarsen(const NoiseBundle& bundle, std::size_t factor) {
  if (factor == 0 || bundle.grid.steps % factor != 0) throw SetupError("coarsening factor must divide the step count");
  NoiseBundle out = bundle;
  const std::size_t N = bundle.grid.steps, Nc = N / factor;
  out.grid = TimeGrid::make(bundle.grid.t0, bundle.grid.T, Nc);
  auto sum_blocks = [&](const std::vector<double>& src, std::size_t rows, std::size_t width) {
    std::vector<double> dst(rows * Nc * width, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < width; ++j) dst[(r * Nc + i / factor) * width + j] += src[(r * N + i) * width + j];
    return dst;
  };
  out.dB = sum_blocks(bundle.dB, bundle.M, bundle.d);
  out.dW = sum_blocks(bundle.dW, bundle.NW, bundle.l);
  return out;
}

Mat FlowEnsemble::start_points() const {
  Mat out(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(d));
  for (std::size_t m = 0; m < M; ++m) out.row(static_cast<Eigen::Index>(m)) = state_vec(m, first_step).transpose();
  return out;
}

FlowEnsemble forward_flow(const ProblemSpec& problem, const NoiseBundle& bundle, const Mat& start_points,
                          std::size_t first_step) {
  const std::size_t d = problem.d, N = bundle.grid.steps;
  const auto M = static_cast<std::size_t>(start_points.rows());
  if (static_cast<std::size_t>(start_points.cols()) != d || bundle.d != d) throw SetupError("flow dimension mismatch");
  if (M > bundle.M) throw SetupError("more start points than B paths in the bundle");
  if (first_step > N) throw SetupError("flow start index beyond the grid");

  FlowEnsemble fe;
  fe.grid = bundle.grid;
  fe.d = d;
  fe.M = M;
  fe.first_step = first_step;
  fe.states.resize(M * (N + 1) * d);
  fe.jacobians.assign(M * (N + 1), 1.0);
  const double dt = bundle.grid.dt();
  const bool trivial_jacobian = problem.forward.b_zero && problem.forward.sigma_constant;
  const auto dd = static_cast<Eigen::Index>(d);
  const Mat eye = Mat::Identity(dd, dd);

  std::vector<std::size_t> failure(M, 0);
  parallel_for(M, [&](std::size_t m) {
    Vec x = start_points.row(static_cast<Eigen::Index>(m)).transpose();
    Mat jac = eye;
    for (std::size_t i = 0; i <= first_step; ++i)
      Eigen::Map<Vec>(&fe.states[(m * (N + 1) + i) * d], dd) = x;
    for (std::size_t i = first_step; i < N; ++i) {
      const Eigen::Map<const Vec> db(bundle.b_increment(m, i), dd);
      if (!trivial_jacobian) {
        Mat step = eye + problem.db(x) * dt;
        if (!problem.forward.sigma_constant) {
          const std::vector<Mat> ds = problem.dsigma(x);
          // ∂/∂x_i of σ(x)ΔB is ds[i]·ΔB; that forms column i of the step matrix.
          for (Eigen::Index c = 0; c < dd; ++c) step.col(c) += ds[static_cast<std::size_t>(c)] * db;
        }
        jac = step * jac;
        fe.jacobians[m * (N + 1) + i + 1] = jac.determinant();
      }
      x = x + problem.b(x) * dt + problem.sigma(x) * db;
      if (!x.allFinite()) {
        failure[m] = i + 1;
        return;
      }
      Eigen::Map<Vec>(&fe.states[(m * (N + 1) + i + 1) * d], dd) = x;
    }
  });
  for (std::size_t m = 0; m < M; ++m)
    if (failure[m] != 0) throw DivergenceError("forward flow produced a non-finite state on path " + std::to_string(m), failure[m]);
  return fe;
}

Vec inverse_flow(const ProblemSpec& problem, const NoiseBundle& bundle, std::size_t path, const Vec& y,
                 std::size_t t_index, std::size_t s_index) {
  if (t_index > s_index || s_index > bundle.grid.steps) throw SetupError("inverse flow needs t <= s within the grid");
  if (path >= bundle.M) throw SetupError("inverse flow path index out of range");
  const auto dd = static_cast<Eigen::Index>(problem.d);
  const double dt = bundle.grid.dt();
  Vec z = y;
  for (std::size_t j = s_index; j-- > t_index;) {
    const Eigen::Map<const Vec> db(bundle.b_increment(path, j), dd);
    z = z - problem.backward_drift(z) * dt - problem.sigma(z) * db;
    if (!z.allFinite()) throw DivergenceError("inverse flow produced a non-finite state", j);
  }
  return z;
}

double jacobian_det_inverse(const FlowEnsemble& ensemble, std::size_t path, std::size_t step) {
  const double j = ensemble.jacobian(path, step);
  if (!(j > 0.0))
    throw PositivityError("forward Jacobian determinant not positive at path " + std::to_string(path) + ", step " +
                          std::to_string(step) + "; refine the time step");
  return 1.0 / j;
}

void save(const NoiseBundle& bundle, const std::filesystem::path& stem) {
  write_array(with_suffix(stem, ".dB.f64"), bundle.dB);
  write_array(with_suffix(stem, ".dW.f64"), bundle.dW);
  const nlohmann::json meta = {{"kind", "noise"},
                               {"dims", {{"M", bundle.M}, {"N", bundle.grid.steps}, {"d", bundle.d}, {"NW", bundle.NW}, {"l", bundle.l}}},
                               {"seed", bundle.seed},
                               {"grid", grid_json(bundle.grid)},
                               {"layout", "row-major float64 little-endian: dB[M][N][d], dW[NW][N][l]"}};
  std::ofstream(with_suffix(stem, ".json")) << meta.dump(2) << '\n';
}

NoiseBundle load_noise(const std::filesystem::path& stem) {
  std::ifstream in(with_suffix(stem, ".json"));
  if (!in) throw Error("cannot read sidecar for " + stem.string());
  const auto meta = nlohmann::json::parse(in);
  NoiseBundle nb;
  nb.grid = grid_from(meta.at("grid"));
  const auto& dims = meta.at("dims");
  nb.M = dims.at("M");
  nb.d = dims.at("d");
  nb.NW = dims.at("NW");
  nb.l = dims.at("l");
  nb.seed = meta.at("seed");
  nb.dB = read_array(with_suffix(stem, ".dB.f64"), nb.M * nb.grid.steps * nb.d);
  nb.dW = read_array(with_suffix(stem, ".dW.f64"), nb.NW * nb.grid.steps * nb.l);
  return nb;
}

void save(const FlowEnsemble& fe, const std::filesystem::path& stem) {
  write_array(with_suffix(stem, ".states.f64"), fe.states);
  write_array(with_suffix(stem, ".jacobians.f64"), fe.jacobians);
  const nlohmann::json meta = {{"kind", "flow"},
                               {"dims", {{"M", fe.M}, {"N", fe.grid.steps}, {"d", fe.d}}},
                               {"first_step", fe.first_step},
                               {"grid", grid_json(fe.grid)},
                               {"layout", "row-major float64 little-endian: states[M][N+1][d], jacobians[M][N+1]"}};
  std::ofstream(with_suffix(stem, ".json")) << meta.dump(2) << '\n';
}

FlowEnsemble load_flow(const std::filesystem::path& stem) {
  std::ifstream in(with_suffix(stem, ".json"));
  if (!in) throw Error("cannot read sidecar for " + stem.string());
  const auto meta = nlohmann::json::parse(in);
  FlowEnsemble fe;
  fe.grid = grid_from(meta.at("grid"));
  fe.M = meta.at("dims").at("M");
  fe.d = meta.at("dims").at("d");
  fe.first_step = meta.at("first_step");
  fe.states = read_array(with_suffix(stem, ".states.f64"), fe.M * (fe.grid.steps + 1) * fe.d);
  fe.jacobians = read_array(with_suffix(stem, ".jacobians.f64"), fe.M * (fe.grid.steps + 1));
  return fe;
}

}  // namespace rbdsde::stochastics
