#include "crit/losses.hpp"

#include <cmath>
#include <string>

#include "crit/apjn.hpp"
#include "crit/error.hpp"

namespace crit {

namespace {

LossValue finish(std::vector<double> terms) {
  LossValue v;
  for (double t : terms) v.total += t;
  v.terms = std::move(terms);
  return v;
}

}  // namespace

std::string_view to_string(PairRange r) noexcept {
  return r == PairRange::include_io ? "include-io" : "interior-only";
}

PairRange parse_pair_range(std::string_view s) {
  if (s == "include-io") return PairRange::include_io;
  if (s == "interior-only") return PairRange::interior_only;
  throw InvalidArgument("unknown JKL range '" + std::string(s) + "' (include-io|interior-only)");
}

LossValue jll(std::span<const double> j) {
  std::vector<double> terms;
  terms.reserve(j.size());
  for (double v : j) {
    if (!(v > 0.0)) throw InvalidArgument("jll: APJN values must be positive");
    const double lg = std::log(v);
    terms.push_back(0.5 * lg * lg);
  }
  return finish(std::move(terms));
}

LossValue jsl(std::span<const double> j) {
  std::vector<double> terms;
  terms.reserve(j.size());
  for (double v : j) terms.push_back(0.5 * (v - 1.0) * (v - 1.0));
  return finish(std::move(terms));
}

LossValue jkl(std::span<const double> j, std::span<const double> k, double lambda, PairRange range) {
  if (!(lambda >= 0.0)) throw InvalidArgument("jkl: lambda must be non-negative");
  if (k.size() != j.size() + 1) {
    throw InvalidArgument("jkl: expected " + std::to_string(j.size() + 1) + " kernels for " +
                          std::to_string(j.size()) + " pairs, got " + std::to_string(k.size()));
  }
  for (double v : k) {
    if (!(v > 0.0)) throw InvalidArgument("jkl: kernel values must be positive");
  }
  const std::size_t first = range == PairRange::interior_only ? 1 : 0;
  std::vector<double> terms;
  for (std::size_t l = first; l < j.size(); ++l) {
    if (!(j[l] > 0.0)) throw InvalidArgument("jkl: APJN values must be positive");
    const double lj = std::log(j[l]);
    const double lk = std::log(k[l + 1] / k[l]);
    terms.push_back(0.5 * lj * lj + 0.5 * lambda * lk * lk);
  }
  return finish(std::move(terms));
}

std::vector<double> kernel_profile(const Evaluation& eval) {
  std::vector<double> out;
  for (std::size_t l = 0; l <= eval.spec().groups(); ++l) out.push_back(eval.kernel(l));
  return out;
}

}  // namespace crit
