#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "crit/apjn.hpp"
#include "crit/blocks.hpp"
#include "crit/error.hpp"
#include "crit/losses.hpp"
#include "crit/meanfield.hpp"

namespace crit {

enum class Schedule { constant, relu_bound, one_step };
enum class ReturnMode { scale_sigmas, freeze_aux };
enum class GradMode { finite_difference, analytic_relu };

std::string_view to_string(LossKind k) noexcept;
std::string_view to_string(Schedule s) noexcept;
std::string_view to_string(ReturnMode m) noexcept;
std::string_view to_string(GradMode m) noexcept;
LossKind parse_loss(std::string_view s);
Schedule parse_schedule(std::string_view s);
ReturnMode parse_return_mode(std::string_view s);
GradMode parse_grad_mode(std::string_view s);

/// Which parameter groups receive a scalar. Weights and biases cover Dense,
/// Conv2d and PatchEmbed; affine covers AffineNorm alpha/beta; layerscale
/// covers LayerScale vectors.
struct AuxMask {
  bool weights = true;
  bool biases = true;
  bool affine = false;
  bool layerscale = false;

  bool operator==(const AuxMask&) const = default;
};

inline constexpr double aux_min = 1e-6;
inline constexpr double aux_max = 1e6;

struct TuneConfig {
  LossKind loss = LossKind::jll;
  double lambda = 0.0;
  PairRange range = PairRange::include_io;
  Schedule schedule = Schedule::constant;
  double eta = 0.01;
  /// relu-bound uses safety * eta_bound(J(t)).
  double bound_safety = 0.5;
  std::size_t steps = 100;
  double epsilon = 1e-6;
  ApjnOptions apjn{};
  ReturnMode return_mode = ReturnMode::scale_sigmas;
  GradMode grad_mode = GradMode::finite_difference;
  /// Relative step: a -> a (1 +- fd_step).
  double fd_step = 1e-4;
  AuxMask mask{};
  bool fresh_batch = false;

  void validate() const;
  bool operator==(const TuneConfig&) const = default;
};

struct TuneStep {
  std::size_t t = 0;
  double loss = 0.0;
  std::vector<double> j;
  std::vector<double> j_stderr;
  /// Multiplier a_W / a_b per group (first weight-bearing block of the group).
  std::vector<double> a_w;
  std::vector<double> a_b;
  /// Rate that produced this step, per group; NaN at t = 0.
  std::vector<double> eta;
};

struct TuneTrace {
  std::vector<TuneStep> steps;

  std::vector<std::vector<double>> j_history() const;
};

/// CSV with columns t,loss,J_1..J_G,aW_1..aW_G,ab_1..ab_G,eta where eta is the
/// smallest per-group rate of that step.
void write_trace_csv(std::ostream& os, const TuneTrace& trace);

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, TuneTrace trace) : Error(what), trace_(std::move(trace)) {}
  const TuneTrace& trace() const noexcept { return trace_; }

 private:
  TuneTrace trace_;
};

struct TuneResult {
  NetworkSpec spec;
  ParamSet params;
  AuxScalars aux;
  TuneTrace trace;
  bool converged = false;
};

/// Supplies the batch for step t when fresh_batch is set.
using BatchSource = std::function<Tensor(std::size_t step)>;

/// One scalar being tuned.
struct AuxSlot {
  std::size_t block = 0;
  bool bias = false;
  std::size_t group = 0;
};

/// Slots enabled by the mask, skipping tensors that are identically zero.
std::vector<AuxSlot> aux_slots(const NetworkSpec& spec, const ParamSet& params, const AuxMask& mask);

struct LossEval {
  double loss = 0.0;
  std::vector<double> j;
  std::vector<double> j_stderr;
  std::vector<double> kernels;
};

/// Loss over pairs (g-1, g), g = 1..G. Probes for pair g come from rng.split(g).
/// Non-positive or non-finite J yields a non-finite loss instead of throwing.
LossEval evaluate_loss(const Evaluation& eval, const TuneConfig& cfg, const RngStream& rng);

/// Gradient per slot. Finite differences reuse the probes of rng on both
/// sides; analytic-relu needs every group to be ReLU -> Dense.
std::vector<double> grad_aux(const Evaluation& eval, const std::vector<AuxSlot>& slots, const TuneConfig& cfg,
                             const RngStream& rng);

TuneResult tune(const NetworkSpec& spec, const ParamSet& params, const Tensor& batch, const TuneConfig& cfg,
                const RngStream& rng, const BatchSource& fresh = {});

/// min over layers of the ReLU stability bound on eta.
double eta_bound(std::span<const double> j, double sigma_w, LossKind loss);
double eta_one_step(double j0, double sigma_w, LossKind loss);
/// Bound at t = 0 with J(0) = (a_W s_w)^2 / 2.
double eta_zero(double a_w, double sigma_w, LossKind loss);

/// ||grad W^1|| / ||grad W^G|| under 0.5 ||h_out||^2 / |B|, for networks whose
/// groups each end in a Dense layer.
double gradient_norm_ratio(const Evaluation& eval);

}  // namespace crit
