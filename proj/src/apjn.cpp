#include "crit/apjn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "crit/error.hpp"
#include "engine.hpp"
#include "format.hpp"

namespace crit {

namespace {

constexpr double nan_value = std::numeric_limits<double>::quiet_NaN();
// Upper bound on doubles held by one tangent chunk.
constexpr std::size_t chunk_budget = std::size_t{1} << 22;

Shape with_rows(std::size_t rows, const Shape& sample) {
  Shape out{rows};
  out.insert(out.end(), sample.begin(), sample.end());
  return out;
}

std::size_t widest_layer(const NetworkSpec& spec, std::size_t l0, std::size_t l) {
  std::size_t w = spec.width(l0);
  for (std::size_t i = spec.group_begin(l0 + 1); i < spec.group_end(l); ++i) {
    w = std::max(w, shape_product(spec.sample_shape_out(i)));
  }
  return w;
}

void check_pair(const NetworkSpec& spec, std::size_t l0, std::size_t l) {
  if (l0 >= l || l > spec.groups()) {
    throw InvalidArgument("APJN pair (" + std::to_string(l0) + "," + std::to_string(l) +
                          ") must satisfy 0 <= l0 < l <= " + std::to_string(spec.groups()));
  }
}

}  // namespace

std::string_view to_string(ApjnMethod m) noexcept { return m == ApjnMethod::exact ? "exact" : "estimated"; }

std::string_view to_string(ProbeMode m) noexcept {
  switch (m) {
    case ProbeMode::automatic: return "auto";
    case ProbeMode::shared: return "shared";
    case ProbeMode::independent: return "independent";
  }
  return "?";
}

ApjnMethod parse_apjn_method(std::string_view s) {
  if (s == "exact") return ApjnMethod::exact;
  if (s == "estimated" || s == "estimate") return ApjnMethod::estimated;
  throw InvalidArgument("unknown APJN method '" + std::string(s) + "' (exact|estimated)");
}

ProbeMode parse_probe_mode(std::string_view s) {
  if (s == "auto") return ProbeMode::automatic;
  if (s == "shared") return ProbeMode::shared;
  if (s == "independent") return ProbeMode::independent;
  throw InvalidArgument("unknown probe mode '" + std::string(s) + "' (auto|shared|independent)");
}

std::vector<double> ApjnReport::values() const {
  std::vector<double> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.value);
  return out;
}

Evaluation::Evaluation(const NetworkSpec& spec, const ParamSet& params, const AuxScalars& aux, const Tensor& batch)
    : tape_(std::make_shared<const detail::Tape>(spec, params, aux, batch)) {}

Evaluation::Evaluation(std::shared_ptr<const detail::Tape> tape) : tape_(std::move(tape)) {}
Evaluation::~Evaluation() = default;
Evaluation::Evaluation(const Evaluation&) = default;
Evaluation& Evaluation::operator=(const Evaluation&) = default;
Evaluation::Evaluation(Evaluation&&) noexcept = default;
Evaluation& Evaluation::operator=(Evaluation&&) noexcept = default;

Evaluation Evaluation::with_aux(const AuxScalars& aux, std::size_t first_group) const {
  return Evaluation(std::make_shared<const detail::Tape>(tape_->with_aux(aux, first_group)));
}

const NetworkSpec& Evaluation::spec() const { return tape_->spec(); }
const AuxScalars& Evaluation::aux() const { return tape_->aux(); }
std::size_t Evaluation::batch_size() const { return tape_->batch_size(); }
const Tensor& Evaluation::boundary(std::size_t l) const { return tape_->boundary(l); }
double Evaluation::kernel(std::size_t l) const { return mean_of_squares(tape_->boundary(l).data()); }

double Evaluation::exact(std::size_t l0, std::size_t l, std::size_t max_entries) const {
  const NetworkSpec& spec = tape_->spec();
  check_pair(spec, l0, l);
  const std::size_t b = tape_->batch_size();
  const std::size_t n0 = spec.width(l0), n1 = spec.width(l);
  const bool coupled = spec.segment_has_batchnorm(l0, l);
  const double entries = double(n0) * double(n1) * double(b) * (coupled ? double(b) : 1.0);
  if (entries > double(max_entries)) {
    throw ResourceError("exact APJN needs " + format_g(entries) + " Jacobian entries (limit " +
                        std::to_string(max_entries) + "); use the estimator instead");
  }
  const bool forward = n0 <= n1;
  const std::size_t basis = forward ? n0 : n1;
  const Shape& seed_shape = spec.boundary_shape(forward ? l0 : l);
  const std::size_t rows_per_tangent = coupled ? b : 1;
  const std::size_t tangents = b * basis;
  const std::size_t per_chunk =
      std::max<std::size_t>(1, chunk_budget / (widest_layer(spec, l0, l) * rows_per_tangent));
  double total = 0.0;
  for (std::size_t start = 0; start < tangents; start += per_chunk) {
    const std::size_t count = std::min(per_chunk, tangents - start);
    Tensor seed(with_rows(count * rows_per_tangent, seed_shape));
    detail::RowLayout rows;
    rows.grouped = coupled;
    if (!coupled) rows.sample.resize(count);
    for (std::size_t t = 0; t < count; ++t) {
      const std::size_t sample = (start + t) / basis;
      const std::size_t index = (start + t) % basis;
      const std::size_t row = coupled ? t * b + sample : t;
      seed[row * basis + index] = 1.0;
      if (!coupled) rows.sample[t] = sample;
    }
    const Tensor out = forward ? tape_->jvp(l0, l, std::move(seed), rows) : tape_->vjp(l0, l, std::move(seed), rows);
    total += sum_of_squares(out.data());
  }
  return total / (double(b) * double(n1));
}

ApjnEstimate Evaluation::estimate(std::size_t l0, std::size_t l, std::size_t n_v, RngStream& rng,
                                  ProbeMode probes) const {
  const NetworkSpec& spec = tape_->spec();
  check_pair(spec, l0, l);
  if (n_v < 1) throw InvalidArgument("estimate_apjn: N_v must be at least 1");
  if (probes == ProbeMode::automatic) {
    probes = spec.segment_has_batchnorm(l0, l) ? ProbeMode::independent : ProbeMode::shared;
  }
  const std::size_t b = tape_->batch_size();
  const std::size_t n1 = spec.width(l);
  const Shape& out_shape = spec.boundary_shape(l);
  const std::size_t per_chunk = std::max<std::size_t>(1, chunk_budget / (widest_layer(spec, l0, l) * b));
  ApjnEstimate est;
  est.terms.reserve(n_v);
  const detail::RowLayout rows = detail::RowLayout::whole_batches();
  for (std::size_t start = 0; start < n_v; start += per_chunk) {
    const std::size_t count = std::min(per_chunk, n_v - start);
    Tensor v(with_rows(count * b, out_shape));
    for (std::size_t p = 0; p < count; ++p) {
      double* group = v.raw() + p * b * n1;
      if (probes == ProbeMode::shared) {
        for (std::size_t j = 0; j < n1; ++j) group[j] = rng.normal();
        for (std::size_t s = 1; s < b; ++s) std::copy(group, group + n1, group + s * n1);
      } else {
        for (std::size_t j = 0; j < b * n1; ++j) group[j] = rng.normal();
      }
    }
    const Tensor g = tape_->vjp(l0, l, std::move(v), rows);
    const std::size_t n0 = g.size() / (count * b);
    for (std::size_t p = 0; p < count; ++p) {
      const double sq = sum_of_squares(g.data().subspan(p * b * n0, b * n0));
      est.terms.push_back(sq / (double(b) * double(n1)));
    }
  }
  double mean = 0.0;
  for (double t : est.terms) mean += t;
  mean /= double(n_v);
  est.value = mean;
  if (n_v == 1) {
    est.stderr_ = nan_value;
  } else {
    double ss = 0.0;
    for (double t : est.terms) ss += (t - mean) * (t - mean);
    est.stderr_ = std::sqrt(ss / double(n_v - 1)) / std::sqrt(double(n_v));
  }
  return est;
}

ApjnPair Evaluation::measure(std::size_t l0, std::size_t l, const ApjnOptions& opt, RngStream& rng) const {
  ApjnPair p;
  p.l0 = l0;
  p.l = l;
  p.method = opt.method;
  p.batch = batch_size();
  if (opt.method == ApjnMethod::exact) {
    p.value = exact(l0, l, opt.max_entries);
    p.stderr_ = nan_value;
  } else {
    const ApjnEstimate e = estimate(l0, l, opt.n_v, rng, opt.probes);
    p.value = e.value;
    p.stderr_ = e.stderr_;
    p.n_v = opt.n_v;
  }
  return p;
}

Tensor Evaluation::pullback(std::size_t l0, std::size_t l, const Tensor& cotangent) const {
  const NetworkSpec& spec = tape_->spec();
  check_pair(spec, l0, l);
  const std::size_t b = tape_->batch_size();
  const Tensor c = cotangent.reshaped(with_rows(b, spec.boundary_shape(l)));
  return tape_->vjp(l0, l, c, detail::RowLayout::whole_batches());
}

double exact_apjn(const NetworkSpec& spec, const ParamSet& params, const AuxScalars& aux, const Tensor& batch,
                  std::size_t l0, std::size_t l, std::size_t max_entries) {
  return Evaluation(spec, params, aux, batch).exact(l0, l, max_entries);
}

ApjnEstimate estimate_apjn(const NetworkSpec& spec, const ParamSet& params, const AuxScalars& aux,
                           const Tensor& batch, std::size_t l0, std::size_t l, std::size_t n_v, RngStream& rng,
                           ProbeMode probes) {
  if (n_v < 1) throw InvalidArgument("estimate_apjn: N_v must be at least 1");
  return Evaluation(spec, params, aux, batch).estimate(l0, l, n_v, rng, probes);
}

std::vector<std::pair<std::size_t, std::size_t>> profile_pairs(std::size_t groups, std::size_t k) {
  if (k < 1) throw InvalidArgument("profile step k must be at least 1");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t l = 0; l < groups; l += k) out.emplace_back(l, std::min(l + k, groups));
  return out;
}

ApjnReport apjn_profile(const Evaluation& eval, std::size_t k, const ApjnOptions& opt, RngStream& rng) {
  ApjnReport r;
  for (auto [l0, l] : profile_pairs(eval.spec().groups(), k)) r.pairs.push_back(eval.measure(l0, l, opt, rng));
  return r;
}

ApjnReport apjn_profile(const NetworkSpec& spec, const ParamSet& params, const AuxScalars& aux,
                        const Tensor& batch, std::size_t k, const ApjnOptions& opt, RngStream& rng) {
  return apjn_profile(Evaluation(spec, params, aux, batch), k, opt, rng);
}

double factorization_residual(const NetworkSpec& spec, const ParamSet& params, const AuxScalars& aux,
                              const Tensor& batch, std::size_t l, std::size_t max_entries) {
  if (l + 2 > spec.groups()) throw InvalidArgument("factorization_residual needs l + 2 <= number of groups");
  const Evaluation eval(spec, params, aux, batch);
  const double j02 = eval.exact(l, l + 2, max_entries);
  const double j01 = eval.exact(l, l + 1, max_entries);
  const double j12 = eval.exact(l + 1, l + 2, max_entries);
  return std::abs(j02 - j01 * j12) / j02;
}

Measurement measure_network(const NetworkSpec& spec, const Tensor& batch,
                            const std::vector<std::pair<std::size_t, std::size_t>>& pairs, const ApjnOptions& opt,
                            std::size_t n_samples, const RngStream& rng, const AuxScalars* aux) {
  if (n_samples < 1) throw InvalidArgument("n_param_samples must be at least 1");
  Measurement m;
  m.kernels.assign(spec.groups() + 1, 0.0);
  std::vector<double> var(pairs.size(), 0.0);
  for (auto [l0, l] : pairs) {
    ApjnPair p;
    p.l0 = l0;
    p.l = l;
    p.method = opt.method;
    p.n_v = opt.method == ApjnMethod::estimated ? opt.n_v : 0;
    p.batch = batch.shape().front();
    p.samples = n_samples;
    m.report.pairs.push_back(p);
  }
  for (std::size_t s = 0; s < n_samples; ++s) {
    const ParamSet params = init_params(spec, rng.split(s));
    const Evaluation eval(spec, params, aux ? *aux : AuxScalars::ones(spec.size()), batch);
    RngStream probes = rng.split((std::uint64_t{1} << 40) | s);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const ApjnPair p = eval.measure(pairs[i].first, pairs[i].second, opt, probes);
      m.report.pairs[i].value += p.value / double(n_samples);
      if (opt.method == ApjnMethod::estimated) var[i] += p.stderr_ * p.stderr_;
    }
    for (std::size_t l = 0; l <= spec.groups(); ++l) m.kernels[l] += eval.kernel(l) / double(n_samples);
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    m.report.pairs[i].stderr_ =
        opt.method == ApjnMethod::estimated ? std::sqrt(var[i]) / double(n_samples) : nan_value;
  }
  return m;
}

void write_report_csv(std::ostream& os, const ApjnReport& report, bool header) {
  if (header) os << "l0,l,value,stderr,method,N_v,batch,samples\n";
  for (const auto& p : report.pairs) {
    os << p.l0 << ',' << p.l << ',' << format_g(p.value) << ',' << (std::isnan(p.stderr_) ? "" : format_g(p.stderr_))
       << ',' << to_string(p.method) << ',' << p.n_v << ',' << p.batch << ',' << p.samples << '\n';
  }
}

}  // namespace crit
