#include "crit/rng.hpp"

#include <cmath>
#include <numbers>

#include "crit/error.hpp"

namespace crit {

namespace {

constexpr std::uint64_t mix(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t combine(std::uint64_t a, std::uint64_t b) noexcept {
  return mix(a ^ mix(b + 0x632be59bd9b4e019ULL));
}

}  // namespace

std::uint64_t RngStream::next_u64() noexcept {
  return combine(combine(seed_, stream_), counter_++);
}

double RngStream::uniform() noexcept {
  // 53 random mantissa bits, shifted off zero.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double r = std::sqrt(-2.0 * std::log(uniform()));
  const double theta = 2.0 * std::numbers::pi * uniform();
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

RngStream RngStream::split(std::uint64_t child) const noexcept {
  return RngStream(seed_, combine(stream_ + 0x5851f42d4c957f2dULL, child));
}

Tensor gaussian(const Shape& shape, double mean, double std, RngStream& rng) {
  if (!(std >= 0.0) || !std::isfinite(std)) {
    throw InvalidArgument("gaussian: std must be finite and non-negative");
  }
  Tensor out(shape, mean);
  if (std == 0.0) return out;
  for (auto& v : out.data()) v = mean + std * rng.normal();
  return out;
}

}  // namespace crit
