#pragma once

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <string_view>
#include <vector>

#include "crit/blocks.hpp"
#include "crit/rng.hpp"

namespace crit {

namespace detail {
class Tape;
}

enum class ApjnMethod { exact, estimated };

/// How estimator probes are laid over the batch. Shared reuses one vector
/// for every sample; independent draws a fresh vector per sample, which stays
/// unbiased when BatchNorm couples the samples. Automatic picks shared for
/// segments without BatchNorm and independent otherwise.
enum class ProbeMode { automatic, shared, independent };

std::string_view to_string(ApjnMethod m) noexcept;
std::string_view to_string(ProbeMode m) noexcept;
ApjnMethod parse_apjn_method(std::string_view s);
ProbeMode parse_probe_mode(std::string_view s);

inline constexpr std::size_t default_max_jacobian_entries = 200'000'000;

struct ApjnOptions {
  ApjnMethod method = ApjnMethod::exact;
  std::size_t n_v = 10;
  ProbeMode probes = ProbeMode::automatic;
  std::size_t max_entries = default_max_jacobian_entries;

  bool operator==(const ApjnOptions&) const = default;
};

struct ApjnEstimate {
  double value = 0.0;
  /// Sample std of the probe terms over sqrt(N_v); NaN when N_v == 1.
  double stderr_ = 0.0;
  std::vector<double> terms;
};

struct ApjnPair {
  std::size_t l0 = 0;
  std::size_t l = 0;
  double value = 0.0;
  /// NaN for exact values.
  double stderr_ = 0.0;
  ApjnMethod method = ApjnMethod::exact;
  std::size_t n_v = 0;
  std::size_t batch = 0;
  std::size_t samples = 1;
};

struct ApjnReport {
  std::vector<ApjnPair> pairs;

  std::vector<double> values() const;
};

/// Forward state of one network on one batch, reused across APJN queries.
class Evaluation {
 public:
  Evaluation(const NetworkSpec& spec, const ParamSet& params, const AuxScalars& aux, const Tensor& batch);
  ~Evaluation();
  Evaluation(const Evaluation&);
  Evaluation& operator=(const Evaluation&);
  Evaluation(Evaluation&&) noexcept;
  Evaluation& operator=(Evaluation&&) noexcept;

  /// Re-evaluates with new aux scalars, recomputing only groups >= first_group.
  Evaluation with_aux(const AuxScalars& aux, std::size_t first_group) const;

  const NetworkSpec& spec() const;
  const AuxScalars& aux() const;
  std::size_t batch_size() const;
  /// Activations at boundary l, shape [|B|, boundary shape...].
  const Tensor& boundary(std::size_t l) const;
  /// Mean over neurons and batch of the squared flattened activation.
  double kernel(std::size_t l) const;

  double exact(std::size_t l0, std::size_t l, std::size_t max_entries = default_max_jacobian_entries) const;
  ApjnEstimate estimate(std::size_t l0, std::size_t l, std::size_t n_v, RngStream& rng,
                        ProbeMode probes = ProbeMode::automatic) const;
  /// exact() or estimate() per the options; stderr is NaN for exact.
  ApjnPair measure(std::size_t l0, std::size_t l, const ApjnOptions& opt, RngStream& rng) const;

  /// Vector-Jacobian product of a [|B|, shape(l)...] cotangent back to l0.
  Tensor pullback(std::size_t l0, std::size_t l, const Tensor& cotangent) const;

 private:
  explicit Evaluation(std::shared_ptr<const detail::Tape> tape);
  std::shared_ptr<const detail::Tape> tape_;
};

double exact_apjn(const NetworkSpec& spec, const ParamSet& params, const AuxScalars& aux, const Tensor& batch,
                  std::size_t l0, std::size_t l, std::size_t max_entries = default_max_jacobian_entries);

ApjnEstimate estimate_apjn(const NetworkSpec& spec, const ParamSet& params, const AuxScalars& aux,
                           const Tensor& batch, std::size_t l0, std::size_t l, std::size_t n_v, RngStream& rng,
                           ProbeMode probes = ProbeMode::automatic);

/// Non-overlapping pairs (0,k), (k,2k), ... ; a shorter final pair covers
/// any remainder.
std::vector<std::pair<std::size_t, std::size_t>> profile_pairs(std::size_t groups, std::size_t k);

ApjnReport apjn_profile(const Evaluation& eval, std::size_t k, const ApjnOptions& opt, RngStream& rng);
ApjnReport apjn_profile(const NetworkSpec& spec, const ParamSet& params, const AuxScalars& aux,
                        const Tensor& batch, std::size_t k, const ApjnOptions& opt, RngStream& rng);

/// |J(l,l+2) - J(l,l+1) J(l+1,l+2)| / J(l,l+2), all exact.
double factorization_residual(const NetworkSpec& spec, const ParamSet& params, const AuxScalars& aux,
                              const Tensor& batch, std::size_t l,
                              std::size_t max_entries = default_max_jacobian_entries);

/// APJN for the given pairs averaged over n_samples parameter draws
/// (draw s uses rng.split(s)). Kernels are averaged alike, one per boundary.
/// aux defaults to all ones.
struct Measurement {
  ApjnReport report;
  std::vector<double> kernels;
};
Measurement measure_network(const NetworkSpec& spec, const Tensor& batch,
                            const std::vector<std::pair<std::size_t, std::size_t>>& pairs, const ApjnOptions& opt,
                            std::size_t n_samples, const RngStream& rng, const AuxScalars* aux = nullptr);

/// CSV rows: l0,l,value,stderr,method,N_v,batch,samples.
void write_report_csv(std::ostream& os, const ApjnReport& report, bool header = true);

}  // namespace crit
