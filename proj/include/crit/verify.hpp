#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace crit {

struct VerifyOptions {
  std::uint64_t seed = 0;
  /// Smaller networks and fewer draws, with tolerances widened to match.
  bool quick = false;
  /// Overrides the width of the factorization suite when nonzero.
  std::size_t width = 0;
  /// Overrides N_v of the estimator suite when nonzero.
  std::size_t n_v = 0;
};

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
  std::vector<std::pair<std::string, double>> metrics;
};

/// Suite names in acceptance order, followed by the extra quadrature check.
const std::vector<std::string>& suite_names();

/// Runs one suite; unknown names throw InvalidArgument.
SuiteResult run_suite(std::string_view name, const VerifyOptions& opt = {});

/// Expands "all" and runs each selected suite in order.
std::vector<SuiteResult> run_suites(const std::vector<std::string>& names, const VerifyOptions& opt = {});

}  // namespace crit
