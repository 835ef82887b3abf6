#include "rbdsde/problem.hpp"

#include <cmath>

#include "rbdsde/errors.hpp"
#include "rbdsde/rng.hpp"

namespace rbdsde {
namespace {

constexpr double kFdStep = 1e-5;

Vec vec_param(const nlohmann::json& params, const char* key, std::size_t size, double fallback) {
  if (!params.contains(key)) return Vec::Constant(static_cast<Eigen::Index>(size), fallback);
  const auto& v = params.at(key);
  if (v.is_number()) return Vec::Constant(static_cast<Eigen::Index>(size), v.get<double>());
  const auto values = v.get<std::vector<double>>();
  if (values.size() != size) throw SetupError(std::string("parameter '") + key + "' has wrong length");
  return Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(size));
}

Mat mat_param(const nlohmann::json& params, const char* key, std::size_t rows, std::size_t cols, double fallback) {
  const auto r = static_cast<Eigen::Index>(rows), c = static_cast<Eigen::Index>(cols);
  if (!params.contains(key)) return Mat::Constant(r, c, fallback);
  const auto& v = params.at(key);
  if (v.is_number()) return Mat::Constant(r, c, v.get<double>());
  const auto values = v.get<std::vector<std::vector<double>>>();
  if (values.size() != rows) throw SetupError(std::string("parameter '") + key + "' has wrong row count");
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (values[static_cast<std::size_t>(i)].size() != cols)
      throw SetupError(std::string("parameter '") + key + "' has wrong column count");
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = values[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return m;
}

double num_param(const nlohmann::json& params, const char* key, double fallback) {
  return params.contains(key) ? params.at(key).get<double>() : fallback;
}

}  // namespace

std::vector<Mat> ProblemSpec::dsigma(const Vec& x) const {
  if (forward.dsigma) return forward.dsigma(x);
  const auto n = static_cast<Eigen::Index>(d);
  std::vector<Mat> out;
  out.reserve(d);
  if (forward.sigma_constant) {
    out.assign(d, Mat::Zero(n, n));
    return out;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec xp = x, xm = x;
    xp(i) += kFdStep;
    xm(i) -= kFdStep;
    out.push_back((forward.sigma(xp) - forward.sigma(xm)) / (2.0 * kFdStep));
  }
  return out;
}

Mat ProblemSpec::db(const Vec& x) const {
  const auto n = static_cast<Eigen::Index>(d);
  if (forward.b_zero) return Mat::Zero(n, n);
  if (forward.db) return forward.db(x);
  Mat j(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec xp = x, xm = x;
    xp(i) += kFdStep;
    xm(i) -= kFdStep;
    j.col(i) = (forward.b(xp) - forward.b(xm)) / (2.0 * kFdStep);
  }
  return j;
}

Vec ProblemSpec::backward_drift(const Vec& x) const {
  Vec out = forward.b(x);
  if (forward.sigma_constant) return out;
  const Mat s = forward.sigma(x);
  const std::vector<Mat> ds = dsigma(x);
  for (std::size_t i = 0; i < d; ++i) out -= ds[i] * s.row(static_cast<Eigen::Index>(i)).transpose();
  return out;
}

void validate(const ProblemSpec& p, std::uint64_t seed) {
  if (p.d == 0 || p.k == 0 || p.l == 0) throw SetupError("dimensions d, k, l must be positive");
  if (p.domain.dim() != p.k) throw SetupError("domain dimension must equal k");
  if (!(p.T > 0.0)) throw SetupError("horizon T must be positive");
  if (!p.forward.b || !p.forward.sigma || !p.terminal) throw SetupError("b, sigma and terminal map are required");
  if (!p.f_zero && !p.generator) throw SetupError("generator f missing");
  if (!p.h_zero && !p.noise_coefficient) throw SetupError("noise coefficient h missing");
  if (!(p.alpha >= 0.0 && p.alpha < 1.0)) throw SetupError("contraction constant alpha must satisfy 0 <= alpha < 1");
  if (!(p.beta >= 0.0 && p.beta < 1.0)) throw SetupError("constant beta must satisfy 0 <= beta < 1");
  if (!(p.lipschitz_c > 0.0)) throw SetupError("Lipschitz constant c must be positive");

  const auto d = static_cast<Eigen::Index>(p.d), k = static_cast<Eigen::Index>(p.k), l = static_cast<Eigen::Index>(p.l);
  PhiloxStream rng(seed, StreamTag::kProperty, 1);
  auto gaussian = [&](Eigen::Index rows, Eigen::Index cols, double scale) {
    Mat m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
    return m;
  };

  {
    const Vec x = gaussian(d, 1, 1.0).col(0);
    if (p.forward.b(x).size() != d) throw SetupError("b has wrong output dimension");
    const Mat s = p.forward.sigma(x);
    if (s.rows() != d || s.cols() != d) throw SetupError("sigma must be d×d");
    if (p.terminal(x).size() != k) throw SetupError("terminal map must return a k-vector");
  }

  if (!p.h_zero) {
    const double bound = std::sqrt(p.alpha) * (1.0 + 1e-6) + 1e-12;
    for (int s = 0; s < 200; ++s) {
      const double t = p.T * rng.uniform();
      const Vec x = gaussian(d, 1, 2.0).col(0);
      const Vec y = gaussian(k, 1, 2.0).col(0);
      const Mat z1 = gaussian(k, d, 2.0), z2 = gaussian(k, d, 2.0);
      const Mat h1 = p.noise_coefficient(t, x, y, z1);
      if (h1.rows() != k || h1.cols() != l) throw SetupError("h must return a k×l matrix");
      const double q = (h1 - p.noise_coefficient(t, x, y, z2)).norm() / (z1 - z2).norm();
      if (q > bound)
        throw SetupError("h violates the declared contraction in z: quotient " + std::to_string(q) +
                         " exceeds sqrt(alpha)");
    }
  }

  if (p.terminal_policy == TerminalPolicy::kReject) {
    const double spread = 3.0 * std::sqrt(1.0 + p.T);
    for (int s = 0; s < 1000; ++s) {
      const Vec x = gaussian(d, 1, spread).col(0);
      const Vec xi = p.terminal(x);
      if (p.domain.distance(xi) > 1e-9 * (1.0 + xi.norm()))
        throw SetupError("terminal condition leaves the closed domain (Phi(x) not in D-bar)");
    }
  }
}

ForwardCoefficients make_forward(const std::string& name, std::size_t dim, const nlohmann::json& params) {
  const auto d = static_cast<Eigen::Index>(dim);
  ForwardCoefficients fc;
  fc.name = name;
  fc.params = params.is_null() ? nlohmann::json::object() : params;
  const double scale = num_param(fc.params, "scale", 1.0);
  const Mat constant_sigma = scale * Mat::Identity(d, d);
  if (name == "brownian" || name == "frozen") {
    const Mat s = name == "frozen" ? Mat(Mat::Zero(d, d)) : constant_sigma;
    fc.b = [d](const Vec&) { return Vec(Vec::Zero(d)); };
    fc.sigma = [s](const Vec&) { return s; };
    fc.b_zero = true;
    fc.sigma_constant = true;
  } else if (name == "ou") {
    const double theta = num_param(fc.params, "theta", 1.0);
    const Vec mean = vec_param(fc.params, "mean", dim, 0.0);
    fc.b = [theta, mean](const Vec& x) { return Vec(-theta * (x - mean)); };
    fc.db = [theta, d](const Vec&) { return Mat(-theta * Mat::Identity(d, d)); };
    fc.sigma = [constant_sigma](const Vec&) { return constant_sigma; };
    fc.sigma_constant = true;
  } else if (name == "linear") {
    const Mat a = mat_param(fc.params, "matrix", dim, dim, 0.0);
    const Vec c = vec_param(fc.params, "offset", dim, 0.0);
    fc.b = [a, c](const Vec& x) { return Vec(a * x + c); };
    fc.db = [a](const Vec&) { return a; };
    fc.sigma = [constant_sigma](const Vec&) { return constant_sigma; };
    fc.sigma_constant = true;
  } else if (name == "trig") {
    // σ = diag(scale·(1 + amplitude·sin x_i)), b = 0.
    const double amp = num_param(fc.params, "amplitude", 0.1);
    fc.b = [d](const Vec&) { return Vec(Vec::Zero(d)); };
    fc.b_zero = true;
    fc.sigma = [scale, amp](const Vec& x) {
      return Mat((scale * (1.0 + amp * x.array().sin())).matrix().asDiagonal());
    };
    fc.dsigma = [scale, amp, d](const Vec& x) {
      std::vector<Mat> out(static_cast<std::size_t>(d), Mat::Zero(d, d));
      for (Eigen::Index i = 0; i < d; ++i) out[static_cast<std::size_t>(i)](i, i) = scale * amp * std::cos(x(i));
      return out;
    };
  } else {
    throw SetupError("unknown forward dynamics '" + name + "'");
  }
  return fc;
}

void set_terminal(ProblemSpec& p, const std::string& name, const nlohmann::json& params_in) {
  const auto params = params_in.is_null() ? nlohmann::json::object() : params_in;
  const auto d = static_cast<Eigen::Index>(p.d), k = static_cast<Eigen::Index>(p.k);
  p.terminal_name = name;
  p.terminal_params = params;
  if (name == "identity" || name == "projected") {
    if (d != k) throw SetupError("terminal '" + name + "' needs k == d");
    if (name == "identity") {
      p.terminal = [](const Vec& x) { return x; };
    } else {
      const auto domain = p.domain;
      p.terminal = [domain](const Vec& x) { return domain.project(x).point; };
    }
  } else if (name == "square") {
    const Vec c = vec_param(params, "center", p.d, 0.0);
    p.terminal = [c, k](const Vec& x) { return Vec(Vec::Constant(k, (x - c).squaredNorm())); };
  } else if (name == "constant") {
    const Vec v = vec_param(params, "value", p.k, 0.0);
    p.terminal = [v](const Vec&) { return v; };
  } else if (name == "linear") {
    const Mat a = mat_param(params, "matrix", p.k, p.d, 0.0);
    const Vec c = vec_param(params, "offset", p.k, 0.0);
    p.terminal = [a, c](const Vec& x) { return Vec(a * x + c); };
  } else {
    throw SetupError("unknown terminal map '" + name + "'");
  }
}

void set_generator(ProblemSpec& p, const std::string& name, const nlohmann::json& params_in) {
  const auto params = params_in.is_null() ? nlohmann::json::object() : params_in;
  p.generator_name = name;
  p.generator_params = params;
  if (name == "zero") {
    p.f_zero = true;
    p.generator = nullptr;
    return;
  }
  p.f_zero = false;
  if (name == "constant") {
    const Vec v = vec_param(params, "value", p.k, 0.0);
    p.generator = [v](double, const Vec&, const Vec&, const Mat&) { return v; };
  } else if (name == "linear") {
    // f = a·y + c + b·(z 1_d)
    const double a = num_param(params, "y", 0.0), b = num_param(params, "z", 0.0);
    const Vec c = vec_param(params, "offset", p.k, 0.0);
    p.generator = [a, b, c](double, const Vec&, const Vec& y, const Mat& z) {
      return Vec(a * y + c + b * z.rowwise().sum());
    };
  } else {
    throw SetupError("unknown generator '" + name + "'");
  }
}

void set_noise(ProblemSpec& p, const std::string& name, const nlohmann::json& params_in) {
  const auto params = params_in.is_null() ? nlohmann::json::object() : params_in;
  p.noise_name = name;
  p.noise_params = params;
  if (name == "zero") {
    p.h_zero = true;
    p.noise_coefficient = nullptr;
    return;
  }
  p.h_zero = false;
  const Mat h0 = mat_param(params, "value", p.k, p.l, 0.0);
  if (name == "constant") {
    p.noise_coefficient = [h0](double, const Vec&, const Vec&, const Mat&) { return h0; };
  } else if (name == "linear") {
    // h = h0 + cy·y 1ᵀ + cz·z[:, :l]
    if (p.l > p.d) throw SetupError("linear noise coefficient needs l <= d");
    const double cy = num_param(params, "y", 0.0), cz = num_param(params, "z", 0.0);
    const auto l = static_cast<Eigen::Index>(p.l);
    p.noise_coefficient = [h0, cy, cz, l](double, const Vec&, const Vec& y, const Mat& z) {
      return Mat(h0 + cy * y * Eigen::RowVectorXd::Ones(l) + cz * z.leftCols(l));
    };
  } else {
    throw SetupError("unknown noise coefficient '" + name + "'");
  }
}

ProblemSpec problem_from_json(const nlohmann::json& j) {
  try {
    ProblemSpec p(geometry::domain_from_json(j.at("domain")));
    p.T = j.value("T", 1.0);
    p.d = j.value("d", std::size_t{1});
    p.k = j.value("k", p.domain.dim());
    p.l = j.value("l", std::size_t{1});
    p.lipschitz_c = j.value("lipschitz_c", 1.0);
    p.alpha = j.value("alpha", 0.0);
    p.beta = j.value("beta", 0.0);
    const std::string policy = j.value("terminal_policy", std::string("reject"));
    if (policy == "reject") {
      p.terminal_policy = TerminalPolicy::kReject;
    } else if (policy == "allow") {
      p.terminal_policy = TerminalPolicy::kAllow;
    } else {
      throw SetupError("terminal_policy must be 'reject' or 'allow'");
    }
    auto part = [&](const char* key, const char* fallback) {
      if (!j.contains(key)) return std::pair<std::string, nlohmann::json>{fallback, nlohmann::json::object()};
      const auto& v = j.at(key);
      if (v.is_string()) return std::pair<std::string, nlohmann::json>{v.get<std::string>(), nlohmann::json::object()};
      nlohmann::json params = v;
      params.erase("name");
      return std::pair<std::string, nlohmann::json>{v.at("name").get<std::string>(), params};
    };
    const auto [fname, fparams] = part("forward", "brownian");
    p.forward = make_forward(fname, p.d, fparams);
    const auto [tname, tparams] = part("terminal", "identity");
    set_terminal(p, tname, tparams);
    const auto [gname, gparams] = part("generator", "zero");
    set_generator(p, gname, gparams);
    const auto [hname, hparams] = part("noise", "zero");
    set_noise(p, hname, hparams);
    validate(p);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw SetupError(std::string("malformed problem description: ") + e.what());
  }
}

nlohmann::json to_json(const ProblemSpec& p) {
  auto part = [](const std::string& name, nlohmann::json params) {
    params["name"] = name;
    return params;
  };
  return {{"domain", geometry::to_json(p.domain)},
          {"T", p.T},
          {"d", p.d},
          {"k", p.k},
          {"l", p.l},
          {"forward", part(p.forward.name, p.forward.params)},
          {"terminal", part(p.terminal_name, p.terminal_params)},
          {"generator", part(p.generator_name.empty() ? "zero" : p.generator_name, p.generator_params)},
          {"noise", part(p.noise_name.empty() ? "zero" : p.noise_name, p.noise_params)},
          {"lipschitz_c", p.lipschitz_c},
          {"alpha", p.alpha},
          {"beta", p.beta},
          {"terminal_policy", p.terminal_policy == TerminalPolicy::kReject ? "reject" : "allow"}};
}

ProblemSpec reflecting_benchmark() {
  ProblemSpec p(geometry::ConvexDomain::half_space(Vec::Constant(1, -1.0), 0.0));
  p.T = 1.0;
  p.forward = make_forward("brownian", 1, nlohmann::json::object());
  p.terminal_policy = TerminalPolicy::kAllow;
  set_terminal(p, "identity", nlohmann::json::object());
  set_generator(p, "zero", nlohmann::json::object());
  set_noise(p, "zero", nlohmann::json::object());
  validate(p);
  return p;
}

}  // namespace rbdsde
