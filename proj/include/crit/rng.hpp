#pragma once

#include <cstdint>

#include "crit/tensor.hpp"

namespace crit {

/// Counter-based random stream.
///
/// Draw k of stream (seed, stream_id) is a pure function of the three
/// integers, so streams never interfere and any draw can be reproduced
/// without replaying the ones before it.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream_id = 0) : seed_(seed), stream_(stream_id) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }

  /// Raw 64-bit draw.
  std::uint64_t next_u64() noexcept;
  /// Uniform on (0, 1).
  double uniform() noexcept;
  /// Standard normal (Box-Muller).
  double normal() noexcept;

  /// Independent child stream, a function of (seed, stream_id, child) only.
  RngStream split(std::uint64_t child) const noexcept;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// iid N(mean, std^2) entries, drawn in row-major order.
Tensor gaussian(const Shape& shape, double mean, double std, RngStream& rng);

}  // namespace crit
