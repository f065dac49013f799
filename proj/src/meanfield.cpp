#include "crit/meanfield.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>

#include "crit/error.hpp"

namespace crit {

namespace {

using std::numbers::pi;

GaussHermite build_gauss_hermite(std::size_t n) {
  // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite
  // polynomials: nodes are its eigenvalues, weights the squared first
  // components of the normalized eigenvectors.
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(Eigen::Index(n), Eigen::Index(n));
  for (std::size_t k = 1; k < n; ++k) {
    J(Eigen::Index(k), Eigen::Index(k - 1)) = J(Eigen::Index(k - 1), Eigen::Index(k)) = std::sqrt(double(k));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  GaussHermite g;
  g.nodes.resize(n);
  g.weights.resize(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    g.nodes[i] = es.eigenvalues()(Eigen::Index(i));
    g.weights[i] = std::pow(es.eigenvectors()(0, Eigen::Index(i)), 2);
    total += g.weights[i];
  }
  for (double& w : g.weights) w /= total;
  // Symmetrize away the last bits of eigen-solver noise.
  for (std::size_t i = 0; i < n / 2; ++i) {
    const double x = 0.5 * (g.nodes[n - 1 - i] - g.nodes[i]);
    const double w = 0.5 * (g.weights[i] + g.weights[n - 1 - i]);
    g.nodes[i] = -x;
    g.nodes[n - 1 - i] = x;
    g.weights[i] = g.weights[n - 1 - i] = w;
  }
  if (n % 2) g.nodes[n / 2] = 0.0;
  return g;
}

// E[relu(u) relu(v)] for a centered pair with the given covariance.
double relu_cross(double k11, double k12, double k22) {
  const double s = std::sqrt(k11 * k22);
  if (s <= 0.0) return 0.0;
  const double rho = std::clamp(k12 / s, -1.0, 1.0);
  const double theta = std::acos(rho);
  return s / (2.0 * pi) * (std::sin(theta) + (pi - theta) * std::cos(theta));
}

double cross_moment(ActivationKind act, double k11, double k12, double k22) {
  switch (act) {
    case ActivationKind::relu: return relu_cross(k11, k12, k22);
    case ActivationKind::linear: return k12;
    default:
      return gaussian_expectation2([act](double u, double v) { return activate(act, u) * activate(act, v); }, k11,
                                   k12, k22);
  }
}

}  // namespace

const GaussHermite& gauss_hermite(std::size_t n) {
  if (n < 2) throw InvalidArgument("Gauss-Hermite rule needs at least 2 nodes");
  static std::mutex mu;
  static std::map<std::size_t, GaussHermite> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, build_gauss_hermite(n)).first;
  return it->second;
}

double gaussian_expectation(const std::function<double(double)>& f, double K, std::size_t n) {
  if (!(K >= 0.0)) throw InvalidArgument("gaussian_expectation: variance must be non-negative");
  const GaussHermite& g = gauss_hermite(n);
  const double s = std::sqrt(K);
  double acc = 0.0;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) acc += g.weights[i] * f(s * g.nodes[i]);
  return acc;
}

double gaussian_expectation2(const std::function<double(double, double)>& f, double K11, double K12, double K22,
                             std::size_t n) {
  if (!(K11 >= 0.0) || !(K22 >= 0.0)) throw InvalidArgument("gaussian_expectation2: variances must be non-negative");
  // u = a z1, v = b z1 + c z2 (Cholesky).
  const double a = std::sqrt(K11);
  const double b = a > 0.0 ? K12 / a : 0.0;
  const double c = std::sqrt(std::max(0.0, K22 - b * b));
  const GaussHermite& g = gauss_hermite(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    for (std::size_t j = 0; j < g.nodes.size(); ++j) {
      const double z1 = g.nodes[i], z2 = g.nodes[j];
      acc += g.weights[i] * g.weights[j] * f(a * z1, b * z1 + c * z2);
    }
  }
  return acc;
}

double ActivationStats::phi_sq(double K) const {
  switch (kind) {
    case ActivationKind::relu: return K / 2.0;
    case ActivationKind::linear: return K;
    case ActivationKind::gelu: return resmlp_G(K);
    default: return gaussian_expectation([k = kind](double h) { return std::pow(activate(k, h), 2); }, K);
  }
}

double ActivationStats::d1_sq(double K) const {
  switch (kind) {
    case ActivationKind::relu: return K > 0.0 ? 0.5 : 0.0;
    case ActivationKind::linear: return 1.0;
    case ActivationKind::gelu: return resmlp_He(K);
    default: return gaussian_expectation([k = kind](double h) { return std::pow(activate_d1(k, h), 2); }, K);
  }
}

double ActivationStats::phi_d2(double K) const {
  switch (kind) {
    case ActivationKind::relu:
    case ActivationKind::linear: return 0.0;
    default:
      return gaussian_expectation([k = kind](double h) { return activate(k, h) * activate_d2(k, h); }, K);
  }
}

double ActivationStats::d2_sq_plus_d1_d3(double K) const {
  switch (kind) {
    case ActivationKind::relu:
    case ActivationKind::linear: return 0.0;
    default:
      return gaussian_expectation(
          [k = kind](double h) {
            const double d2 = activate_d2(k, h);
            return d2 * d2 + activate_d1(k, h) * activate_d3(k, h);
          },
          K);
  }
}

double ActivationStats::mean(double K) const {
  switch (kind) {
    case ActivationKind::relu: return std::sqrt(K / (2.0 * pi));
    case ActivationKind::linear:
    case ActivationKind::tanh: return 0.0;
    default: return gaussian_expectation([k = kind](double h) { return activate(k, h); }, K);
  }
}

MeanFieldState nngp_step(const MeanFieldState& s, ActivationKind act, bool prebn) {
  if (prebn) return bn_nngp_step(s, act);
  if (!(s.K_diag >= 0.0)) throw InvalidArgument("nngp_step: K_diag must be non-negative");
  const double w2 = std::pow(s.a_w * s.sigma_w, 2);
  const double b2 = std::pow(s.a_b * s.sigma_b, 2);
  MeanFieldState out = s;
  out.K_diag = w2 * ActivationStats{act}.phi_sq(s.K_diag) + b2;
  out.K_off = w2 * cross_moment(act, s.K_diag, s.K_off, s.K_diag) + b2;
  out.l = s.l + 1;
  return out;
}

MeanFieldState bn_nngp_step(const MeanFieldState& s, ActivationKind act) {
  const double w2 = std::pow(s.a_w * s.sigma_w, 2);
  const double b2 = std::pow(s.a_b * s.sigma_b, 2);
  const ActivationStats st{act};
  const double m = st.mean(1.0);
  MeanFieldState out = s;
  out.K_diag = w2 * st.phi_sq(1.0) + b2 + s.mu * s.mu * s.K_diag;
  out.K_off = w2 * m * m + b2 + s.mu * s.mu * s.K_off;
  out.l = s.l + 1;
  return out;
}

MeanFieldState bn_kernel_after(MeanFieldState s, ActivationKind act, std::size_t depth) {
  for (std::size_t i = 0; i < depth; ++i) s = bn_nngp_step(s, act);
  return s;
}

Susceptibility chi(const MeanFieldState& s, ActivationKind act) {
  if (!(s.K_diag > 0.0)) throw InvalidArgument("chi: K_diag must be positive");
  const double w2 = std::pow(s.a_w * s.sigma_w, 2);
  const ActivationStats st{act};
  return {w2 * (st.d1_sq(s.K_diag) + st.phi_d2(s.K_diag)), w2 * st.d2_sq_plus_d1_d3(s.K_diag)};
}

MonteCarloResult monte_carlo_expectation(const std::function<double(double)>& f, double K, std::size_t n,
                                         RngStream& rng) {
  if (n < 2) throw InvalidArgument("Monte Carlo needs at least 2 samples");
  const double sd = std::sqrt(K);
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = f(sd * rng.normal());
    const double d = v - mean;
    mean += d / double(i + 1);
    m2 += d * (v - mean);
  }
  return {mean, std::sqrt(m2 / double(n - 1) / double(n))};
}

MonteCarloResult chi_delta_monte_carlo(const MeanFieldState& s, ActivationKind act, std::size_t n, RngStream& rng) {
  if (!(s.K_diag > 0.0)) throw InvalidArgument("chi: K_diag must be positive");
  const double K = s.K_diag;
  const double scale = std::pow(s.a_w * s.sigma_w, 2) / 2.0;
  MonteCarloResult r = monte_carlo_expectation(
      [act, K](double h) {
        const double d1 = activate_d1(act, h);
        return d1 * d1 * (h * h / (K * K) - 1.0 / K);
      },
      K, n, rng);
  r.mean *= scale;
  r.stderr_ *= scale;
  return r;
}

bool DynamicsTrajectory::diverged() const {
  for (long d : diverged_at) {
    if (d >= 0) return true;
  }
  return false;
}

DynamicsTrajectory relu_dynamics(std::span<const double> j0, double sigma_w, std::span<const double> eta,
                                 std::size_t steps, LossKind loss) {
  if (loss == LossKind::jkl) throw InvalidArgument("relu_dynamics covers JLL and JSL only");
  if (eta.size() != 1 && eta.size() != j0.size()) {
    throw InvalidArgument("relu_dynamics: eta must hold one rate or one per layer");
  }
  for (double v : j0) {
    if (!(v > 0.0)) throw InvalidArgument("relu_dynamics: J0 must be positive");
  }
  const double s2 = sigma_w * sigma_w;
  DynamicsTrajectory out;
  out.j.emplace_back(j0.begin(), j0.end());
  out.diverged_at.assign(j0.size(), -1);
  std::vector<double> s(j0.size());
  for (std::size_t i = 0; i < j0.size(); ++i) s[i] = std::sqrt(j0[i]);
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<double> row(j0.size());
    for (std::size_t i = 0; i < j0.size(); ++i) {
      if (out.diverged_at[i] >= 0) {
        row[i] = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      const double e = eta.size() == 1 ? eta[0] : eta[i];
      const double j = s[i] * s[i];
      if (loss == LossKind::jll) {
        s[i] -= e * s2 * std::log(j) / s[i];
      } else {
        s[i] -= e * s2 * s[i] * (j - 1.0);
      }
      if (!(s[i] > 0.0) || !std::isfinite(s[i] * s[i])) {
        out.diverged_at[i] = long(t + 1);
        row[i] = std::numeric_limits<double>::quiet_NaN();
      } else {
        row[i] = s[i] * s[i];
      }
    }
    out.j.push_back(std::move(row));
  }
  return out;
}

double bn_apjn_limit(double mu, ActivationKind act, const MeanFieldState& s) {
  const double gap = s.K_diag - s.K_off;
  if (!(gap > 1e-12 * std::max(1.0, std::abs(s.K_diag)))) {
    throw InvalidArgument("bn_apjn_limit: singular kernel, K_xx == K_xx'");
  }
  const double w2 = std::pow(s.a_w * s.sigma_w, 2);
  return w2 * ActivationStats{act}.d1_sq(1.0) / gap + mu * mu;
}

double resmlp_G(double z) {
  if (!(z >= 0.0)) throw InvalidArgument("resmlp_G: argument must be non-negative");
  return z / 4.0 + z / (2.0 * pi) * std::asin(z / (1.0 + z)) + z * z / (pi * (1.0 + z) * std::sqrt(1.0 + 2.0 * z));
}

double resmlp_He(double K) {
  if (!(K >= 0.0)) throw InvalidArgument("resmlp_He: argument must be non-negative");
  return 0.25 + (std::asin(K / (1.0 + K)) + K * (3.0 + 5.0 * K) / ((1.0 + K) * std::pow(1.0 + 2.0 * K, 1.5))) /
                    (2.0 * pi);
}

double resmlp_Ke(double K, double sigma_w, double sigma_b, double mu, double eps_ls) {
  const double w2 = sigma_w * sigma_w, b2 = sigma_b * sigma_b, e2 = eps_ls * eps_ls;
  return w2 * (mu * mu * K + e2 * (w2 * K + b2)) + b2;
}

double resmlp_kernel_step(double K, double sigma_w, double sigma_b, double mu, double eps_ls, ActivationKind act) {
  if (!(K >= 0.0)) throw InvalidArgument("resmlp_kernel_step: K must be non-negative");
  const double w2 = sigma_w * sigma_w, b2 = sigma_b * sigma_b, e2 = eps_ls * eps_ls, m2 = mu * mu;
  const double ke = resmlp_Ke(K, sigma_w, sigma_b, mu, eps_ls);
  const double g = act == ActivationKind::relu ? ke / 2.0 : resmlp_G(ke);
  if (act != ActivationKind::relu && act != ActivationKind::gelu) {
    throw InvalidArgument("resmlp_kernel_step supports gelu and relu");
  }
  return (m2 * m2 + m2 * e2 * w2) * K + (1.0 + m2) * e2 * b2 + e2 * w2 * g;
}

double resmlp_apjn(double K, double sigma_w, double sigma_b, double mu, double eps_ls, ActivationKind act) {
  if (!(K >= 0.0)) throw InvalidArgument("resmlp_apjn: K must be non-negative");
  if (act != ActivationKind::relu && act != ActivationKind::gelu) {
    throw InvalidArgument("resmlp_apjn supports gelu and relu");
  }
  const double w2 = sigma_w * sigma_w, e2 = eps_ls * eps_ls, m2 = mu * mu;
  const double h = act == ActivationKind::relu ? 0.5 : resmlp_He(resmlp_Ke(K, sigma_w, sigma_b, mu, eps_ls));
  return (m2 + e2 * w2) * (m2 + e2 * w2 * w2 * h);
}

}  // namespace crit
