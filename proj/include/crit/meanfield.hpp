#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "crit/activation.hpp"
#include "crit/rng.hpp"

namespace crit {

enum class LossKind { jll, jsl, jkl };

/// Nodes and weights for E[f(z)], z ~ N(0, 1).
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// n-point rule for the standard normal (Golub-Welsch); cached per n.
const GaussHermite& gauss_hermite(std::size_t n = 96);

/// E[f(h)] for h ~ N(0, K).
double gaussian_expectation(const std::function<double(double)>& f, double K, std::size_t n = 96);
/// E[f(u, v)] for (u, v) centered Gaussian with variances K11, K22 and covariance K12.
double gaussian_expectation2(const std::function<double(double, double)>& f, double K11, double K12, double K22,
                             std::size_t n = 48);

/// Gaussian moments of an activation under N(0, K).
struct ActivationStats {
  ActivationKind kind = ActivationKind::relu;

  double phi_sq(double K) const;             // E[phi^2]
  double d1_sq(double K) const;              // E[phi'^2]
  double phi_d2(double K) const;             // E[phi phi'']
  double d2_sq_plus_d1_d3(double K) const;   // E[phi''^2 + phi' phi''']
  double mean(double K) const;               // E[phi]
};

struct MeanFieldState {
  double K_diag = 1.0;
  double K_off = 0.0;
  std::size_t l = 0;
  double sigma_w = 1.0;
  double sigma_b = 0.0;
  double mu = 0.0;
  double a_w = 1.0;
  double a_b = 1.0;
  double eps_ls = 0.0;
};

/// One Activation -> Dense layer: K' = (a_W s_w)^2 E[phi(h) phi(h')] + (a_b s_b)^2.
/// With prebn, one Pre-BN residual block (BN -> phi -> Dense, skip mu) in the
/// infinite-batch limit, where the normalized inputs are uncorrelated.
MeanFieldState nngp_step(const MeanFieldState& s, ActivationKind act, bool prebn = false);
MeanFieldState bn_nngp_step(const MeanFieldState& s, ActivationKind act);

struct Susceptibility {
  double chi_k = 0.0;
  double chi_delta = 0.0;
};

/// chi_K = (a_W s_w)^2 E[phi'^2 + phi phi''], chi_Delta = (a_W s_w)^2 E[phi''^2 + phi' phi'''].
Susceptibility chi(const MeanFieldState& s, ActivationKind act);

struct MonteCarloResult {
  double mean = 0.0;
  double stderr_ = 0.0;
};

/// chi_Delta by sampling, using the integration-by-parts form
/// (a s_w)^2 / 2 * E[phi'(h)^2 (h^2 / K^2 - 1 / K)], valid for kinked activations.
MonteCarloResult chi_delta_monte_carlo(const MeanFieldState& s, ActivationKind act, std::size_t n, RngStream& rng);
/// E[f(h)], h ~ N(0, K), by sampling.
MonteCarloResult monte_carlo_expectation(const std::function<double(double)>& f, double K, std::size_t n,
                                         RngStream& rng);

struct DynamicsTrajectory {
  /// j[t][layer] for t = 0..T; NaN after a layer diverges.
  std::vector<std::vector<double>> j;
  /// Step at which sqrt(J) left (0, inf) per layer, or -1.
  std::vector<long> diverged_at;

  bool diverged() const;
};

/// Scalar ReLU tuning map per layer:
///   JLL: sqrt J' = sqrt J - eta s_w^2 log J / sqrt J
///   JSL: sqrt J' = sqrt J - eta s_w^2 sqrt J (J - 1)
/// eta holds one global rate or one per layer.
DynamicsTrajectory relu_dynamics(std::span<const double> j0, double sigma_w, std::span<const double> eta,
                                 std::size_t steps, LossKind loss);

/// Infinite-batch Pre-BN APJN (a_W s_w)^2 E[phi'^2] / (K_xx - K_xx') + mu^2.
double bn_apjn_limit(double mu, ActivationKind act, const MeanFieldState& s);

/// State after `depth` Pre-BN blocks starting from s.
MeanFieldState bn_kernel_after(MeanFieldState s, ActivationKind act, std::size_t depth);

/// E[GELU(h)^2] for h ~ N(0, z).
double resmlp_G(double z);
/// E[GELU'(h)^2] for h ~ N(0, K).
double resmlp_He(double K);
/// Kernel entering the expansion layer of a ResMLP block with input kernel K.
double resmlp_Ke(double K, double sigma_w, double sigma_b, double mu, double eps_ls);
/// Diagonal kernel after one ResMLP block; ReLU replaces G[z] by z / 2.
double resmlp_kernel_step(double K, double sigma_w, double sigma_b, double mu, double eps_ls, ActivationKind act);
/// Block APJN (mu^2 + E^2 s^2)(mu^2 + E^2 s^4 H_e[K_e]); ReLU uses H_e = 1/2.
double resmlp_apjn(double K, double sigma_w, double sigma_b, double mu, double eps_ls, ActivationKind act);

}  // namespace crit
