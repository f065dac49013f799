#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "crit/blocks.hpp"

namespace crit::detail {

// Which batch sample each tangent row belongs to. A grouped layout holds
// whole-batch perturbations: rows come in runs of |B|, row r is sample r % |B|.
// BatchNorm couples samples and only accepts grouped layouts.
struct RowLayout {
  bool grouped = false;
  std::vector<std::size_t> sample;

  std::size_t sample_of(std::size_t r, std::size_t batch) const { return grouped ? r % batch : sample[r]; }
  static RowLayout whole_batches() { return RowLayout{true, {}}; }
};

struct LayerCache {
  Tensor deriv;
  Tensor normed;
  std::vector<double> inv_std;
};

/// Forward pass of one network on one batch, with everything the tangent
/// passes need. Copies share the per-layer state, so re-running the tail of
/// a network under new aux scalars costs only the layers that changed.
class Tape {
 public:
  Tape(const NetworkSpec& spec, const ParamSet& params, const AuxScalars& aux, const Tensor& batch);

  /// Same network and batch, aux replaced; groups before first_group must
  /// be unaffected by the change.
  Tape with_aux(const AuxScalars& aux, std::size_t first_group) const;

  const NetworkSpec& spec() const noexcept { return *spec_; }
  const AuxScalars& aux() const noexcept { return aux_; }
  std::size_t batch_size() const noexcept { return batch_; }
  /// Activations [|B|, boundary shape...] at boundary l.
  const Tensor& boundary(std::size_t l) const { return *boundary_.at(l); }

  /// Push tangents [R, shape(l0)...] forward to boundary l.
  Tensor jvp(std::size_t l0, std::size_t l, Tensor tangents, const RowLayout& rows) const;
  /// Pull cotangents [R, shape(l)...] back to boundary l0.
  Tensor vjp(std::size_t l0, std::size_t l, Tensor cotangents, const RowLayout& rows) const;

 private:
  Tape() = default;
  void run_from(std::size_t first_group);

  std::shared_ptr<const NetworkSpec> spec_;
  std::shared_ptr<const ParamSet> params_;
  AuxScalars aux_;
  std::size_t batch_ = 0;
  std::vector<std::shared_ptr<const BlockParams>> eff_;
  std::vector<std::shared_ptr<const LayerCache>> cache_;
  std::vector<std::shared_ptr<const Tensor>> boundary_;
};

}  // namespace crit::detail
