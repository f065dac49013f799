#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "crit/activation.hpp"
#include "crit/rng.hpp"
#include "crit/tensor.hpp"

namespace crit {

// Layer descriptors. Sample shapes exclude the batch extent; the channel axis
// is 0 for rank-3 samples [C, H, W] and the last axis otherwise.

/// y = a_W W x + a_b b along the last axis (axis = -1) or, for rank-2
/// samples, along the first axis (axis = 0, the cross-patch mix).
struct Dense {
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
  double sigma_w = 1.0;
  double sigma_b = 0.0;
  int axis = -1;

  bool operator==(const Dense&) const = default;
};

struct Conv2d {
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  double sigma_w = 1.0;
  double sigma_b = 0.0;

  bool operator==(const Conv2d&) const = default;
};

struct Activation {
  ActivationKind kind = ActivationKind::relu;

  bool operator==(const Activation&) const = default;
};

/// Training-mode batch normalization without affine parameters.
struct BatchNorm {
  double eps = 1e-5;

  bool operator==(const BatchNorm&) const = default;
};

/// Per-channel y = alpha * x + beta.
struct AffineNorm {
  double alpha_init = 1.0;
  double beta_init = 0.0;

  bool operator==(const AffineNorm&) const = default;
};

/// Per-channel y = E * x with E initialized to eps_ls.
struct LayerScale {
  double eps_ls = 0.1;

  bool operator==(const LayerScale&) const = default;
};

struct ResidualOpen {
  bool operator==(const ResidualOpen&) const = default;
};

/// y = branch + mu * skip, closing the innermost open residual.
struct ResidualClose {
  double mu = 1.0;

  bool operator==(const ResidualClose&) const = default;
};

struct Flatten {
  bool operator==(const Flatten&) const = default;
};

/// Mean over non-overlapping window x window tiles of a [C, H, W] sample;
/// window 0 averages every non-channel position.
struct AvgPool {
  std::size_t window = 0;

  bool operator==(const AvgPool&) const = default;
};

/// [C, H, W] image to [(H/P)(W/P), dim] patch embeddings.
struct PatchEmbed {
  std::size_t patch = 4;
  std::size_t dim = 64;
  double sigma_w = 1.0;
  double sigma_b = 0.0;

  bool operator==(const PatchEmbed&) const = default;
};

using BlockKind = std::variant<Dense, Conv2d, Activation, BatchNorm, AffineNorm, LayerScale, ResidualOpen,
                               ResidualClose, Flatten, AvgPool, PatchEmbed>;

struct BlockSpec {
  BlockKind kind;
  /// Output of this layer is a measurement boundary.
  bool boundary = false;

  bool operator==(const BlockSpec&) const = default;
};

std::string block_name(const BlockKind& kind);
bool has_weight(const BlockKind& kind) noexcept;
bool has_bias(const BlockKind& kind) noexcept;

class NetworkSpec {
 public:
  NetworkSpec() = default;
  NetworkSpec(Shape input_shape, std::vector<BlockSpec> blocks);

  const Shape& input_shape() const noexcept { return input_shape_; }
  const std::vector<BlockSpec>& blocks() const noexcept { return blocks_; }
  std::size_t size() const noexcept { return blocks_.size(); }

  /// Boundaries are numbered 0 (input) to groups(); group g holds the
  /// layers between boundary g-1 and boundary g.
  std::size_t groups() const noexcept { return group_end_.size(); }
  /// Index L of the last interior boundary (groups() - 1).
  std::size_t depth() const noexcept { return groups() - 1; }
  std::size_t group_begin(std::size_t g) const;
  std::size_t group_end(std::size_t g) const;
  std::size_t group_of(std::size_t block) const;

  const Shape& sample_shape_in(std::size_t block) const { return shapes_.at(block); }
  const Shape& sample_shape_out(std::size_t block) const { return shapes_.at(block + 1); }
  const Shape& boundary_shape(std::size_t l) const;
  std::size_t width(std::size_t l) const { return shape_product(boundary_shape(l)); }

  bool has_batchnorm() const noexcept;
  bool segment_has_batchnorm(std::size_t l0, std::size_t l) const;

  friend bool operator==(const NetworkSpec& a, const NetworkSpec& b);

 private:
  void validate();

  Shape input_shape_;
  std::vector<BlockSpec> blocks_;
  std::vector<Shape> shapes_;
  std::vector<std::size_t> group_end_;
  std::vector<std::size_t> block_group_;
};

struct BlockParams {
  Tensor weight;
  Tensor bias;
};

/// Sampled parameters, one entry per layer (empty tensors for layers
/// without parameters).
struct ParamSet {
  std::vector<BlockParams> blocks;
};

/// Twin-network multipliers, one (weight, bias) pair per layer.
struct AuxScalars {
  std::vector<double> weight;
  std::vector<double> bias;

  static AuxScalars ones(std::size_t n) { return {std::vector<double>(n, 1.0), std::vector<double>(n, 1.0)}; }
  std::size_t size() const noexcept { return weight.size(); }
};

/// Flattened outputs [|B|, N_l] at every boundary 0..groups().
struct BatchActivations {
  std::vector<Tensor> boundaries;
  std::size_t batch_size = 0;
};

ParamSet init_params(const NetworkSpec& spec, const RngStream& rng);

/// Parameters as seen by the forward pass: a_W W and a_b b.
ParamSet effective_params(const NetworkSpec& spec, const ParamSet& params, const AuxScalars& aux);

BatchActivations forward(const NetworkSpec& spec, const ParamSet& params, const AuxScalars& aux, const Tensor& batch);

/// Output of the whole network, shape [|B|, output sample shape...].
Tensor forward_output(const NetworkSpec& spec, const ParamSet& params, const AuxScalars& aux, const Tensor& batch);

/// Spec with sigma_theta replaced by sigma_theta * a_theta (and the
/// AffineNorm / LayerScale initial values scaled alike).
NetworkSpec scale_sigmas(const NetworkSpec& spec, const AuxScalars& aux);
/// Parameters multiplied by their aux scalars, matching scale_sigmas.
ParamSet scale_params(const NetworkSpec& spec, const ParamSet& params, const AuxScalars& aux);

/// Rescales every sample of a [|B|, ...] batch to unit second moment.
Tensor normalize_samples(const Tensor& batch);

/// Standard normal [|B|, input shape...] batch.
Tensor gaussian_batch(const NetworkSpec& spec, std::size_t batch, RngStream& rng);

void check_batch(const NetworkSpec& spec, const Tensor& batch);

// Preset builders.

/// depth x (Activation -> Dense) blocks of the given width.
NetworkSpec mlp(std::size_t depth, std::size_t width, double sigma_w, double sigma_b,
                ActivationKind act = ActivationKind::relu, std::size_t input_width = 0);

/// depth x Pre-BN residual blocks: h + BN -> act -> Dense, skip scaled by mu.
NetworkSpec prebn_resmlp(std::size_t depth, std::size_t width, double sigma_w, double sigma_b, double mu,
                         ActivationKind act = ActivationKind::relu, double bn_eps = 1e-5);

struct ResMlpOptions {
  std::size_t channels = 3;
  std::size_t image = 16;
  std::size_t patch = 4;
  std::size_t dim = 64;
  std::size_t depth = 2;
  double sigma_w = 1.0;
  double sigma_b = 0.0;
  double mu = 1.0;
  double eps_ls = 0.1;
  ActivationKind act = ActivationKind::gelu;
  std::size_t classes = 10;
};

/// Patch embedding, ResMLP blocks, global average pool, linear classifier.
NetworkSpec resmlp_toy(const ResMlpOptions& opt);

struct MiniVggOptions {
  std::size_t channels = 3;
  std::size_t image = 16;
  std::vector<std::size_t> widths = {8, 8, 16, 16, 32, 32};
  double sigma_w = 1.0;
  double sigma_b = 0.0;
  std::size_t classes = 10;
};

/// Conv -> BN -> AffineNorm -> ReLU blocks, 2x2 pooling after each pair,
/// then flatten and a linear classifier.
NetworkSpec mini_vgg(const MiniVggOptions& opt);

}  // namespace crit
