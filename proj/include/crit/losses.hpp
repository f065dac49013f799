#pragma once

#include <span>
#include <string_view>
#include <vector>

namespace crit {

class Evaluation;

struct LossValue {
  double total = 0.0;
  std::vector<double> terms;
};

/// Which pairs enter JKL: include-io keeps every pair (0,1) .. (L,L+1);
/// interior-only drops the input pair (0,1).
enum class PairRange { include_io, interior_only };

std::string_view to_string(PairRange r) noexcept;
PairRange parse_pair_range(std::string_view s);

/// 0.5 * sum (log J)^2; J must be positive.
LossValue jll(std::span<const double> j);
/// 0.5 * sum (J - 1)^2.
LossValue jsl(std::span<const double> j);
/// JLL plus (lambda / 2) sum log^2(K[l+1] / K[l]) over the same pairs.
/// j holds pairs (l, l+1) for l = 0..n-1 and k holds boundaries 0..n.
LossValue jkl(std::span<const double> j, std::span<const double> k, double lambda,
              PairRange range = PairRange::include_io);

/// Empirical K^l for every boundary: mean squared flattened activation.
std::vector<double> kernel_profile(const Evaluation& eval);

}  // namespace crit
