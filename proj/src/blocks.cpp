#include "crit/blocks.hpp"

#include <cmath>
#include <utility>

#include "crit/error.hpp"
#include "engine.hpp"

namespace crit {

namespace {

std::size_t channels_of(const Shape& s) { return s.size() == 3 ? s[0] : s.back(); }

[[noreturn]] void bad_block(std::size_t i, const BlockKind& kind, const std::string& why) {
  throw InvalidArgument("layer " + std::to_string(i) + " (" + block_name(kind) + "): " + why);
}

void require_sigmas(std::size_t i, const BlockKind& kind, double sigma_w, double sigma_b) {
  if (!(sigma_w > 0.0) || !std::isfinite(sigma_w)) bad_block(i, kind, "sigma_w must be positive");
  if (!(sigma_b >= 0.0) || !std::isfinite(sigma_b)) bad_block(i, kind, "sigma_b must be non-negative");
}

Shape infer_shape(std::size_t i, const BlockKind& kind, const Shape& in) {
  return std::visit(
      [&](const auto& k) -> Shape {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Dense>) {
          require_sigmas(i, kind, k.sigma_w, k.sigma_b);
          if (k.fan_in == 0 || k.fan_out == 0) bad_block(i, kind, "fan_in and fan_out must be positive");
          if (k.axis == 0) {
            if (in.size() != 2) bad_block(i, kind, "axis 0 needs rank-2 samples, got " + shape_string(in));
            if (in[0] != k.fan_in) bad_block(i, kind, "fan_in does not match input " + shape_string(in));
            return {k.fan_out, in[1]};
          }
          if (k.axis != -1) bad_block(i, kind, "axis must be -1 or 0");
          if (in.back() != k.fan_in) bad_block(i, kind, "fan_in does not match input " + shape_string(in));
          Shape out = in;
          out.back() = k.fan_out;
          return out;
        } else if constexpr (std::is_same_v<K, Conv2d>) {
          require_sigmas(i, kind, k.sigma_w, k.sigma_b);
          if (k.in_ch == 0 || k.out_ch == 0 || k.kernel == 0) bad_block(i, kind, "channels and kernel must be positive");
          if (k.stride == 0) bad_block(i, kind, "stride must be at least 1");
          if (in.size() != 3 || in[0] != k.in_ch) bad_block(i, kind, "expects [in_ch, H, W], got " + shape_string(in));
          if (in[1] + 2 * k.padding < k.kernel || in[2] + 2 * k.padding < k.kernel) {
            bad_block(i, kind, "kernel larger than padded input");
          }
          return {k.out_ch, (in[1] + 2 * k.padding - k.kernel) / k.stride + 1,
                  (in[2] + 2 * k.padding - k.kernel) / k.stride + 1};
        } else if constexpr (std::is_same_v<K, PatchEmbed>) {
          require_sigmas(i, kind, k.sigma_w, k.sigma_b);
          if (k.patch == 0 || k.dim == 0) bad_block(i, kind, "patch and dim must be positive");
          if (in.size() != 3 || in[1] % k.patch || in[2] % k.patch) {
            bad_block(i, kind, "expects [C, H, W] divisible by the patch size, got " + shape_string(in));
          }
          return {(in[1] / k.patch) * (in[2] / k.patch), k.dim};
        } else if constexpr (std::is_same_v<K, BatchNorm>) {
          if (!(k.eps >= 0.0)) bad_block(i, kind, "eps must be non-negative");
          return in;
        } else if constexpr (std::is_same_v<K, LayerScale>) {
          if (!(k.eps_ls >= 0.0)) bad_block(i, kind, "eps_ls must be non-negative");
          return in;
        } else if constexpr (std::is_same_v<K, ResidualClose>) {
          if (!(k.mu >= 0.0)) bad_block(i, kind, "mu must be non-negative");
          return in;
        } else if constexpr (std::is_same_v<K, Flatten>) {
          return {shape_product(in)};
        } else if constexpr (std::is_same_v<K, AvgPool>) {
          if (k.window == 0) {
            if (in.size() < 2) bad_block(i, kind, "global pooling needs rank >= 2");
            return {channels_of(in)};
          }
          if (in.size() != 3 || in[1] % k.window || in[2] % k.window) {
            bad_block(i, kind, "window must divide the spatial extents of " + shape_string(in));
          }
          return {in[0], in[1] / k.window, in[2] / k.window};
        } else {
          return in;
        }
      },
      kind);
}

template <class F>
void for_each_param_block(const NetworkSpec& spec, F&& f) {
  for (std::size_t i = 0; i < spec.size(); ++i) f(i, spec.blocks()[i].kind);
}

}  // namespace

std::string block_name(const BlockKind& kind) {
  static const char* names[] = {"dense",      "conv2d",         "activation",     "batchnorm",
                                "affinenorm", "layerscale",     "residual_open",  "residual_close",
                                "flatten",    "avgpool",        "patch_embed"};
  return names[kind.index()];
}

bool has_weight(const BlockKind& kind) noexcept {
  return std::holds_alternative<Dense>(kind) || std::holds_alternative<Conv2d>(kind) ||
         std::holds_alternative<PatchEmbed>(kind) || std::holds_alternative<AffineNorm>(kind) ||
         std::holds_alternative<LayerScale>(kind);
}

bool has_bias(const BlockKind& kind) noexcept {
  return std::holds_alternative<Dense>(kind) || std::holds_alternative<Conv2d>(kind) ||
         std::holds_alternative<PatchEmbed>(kind) || std::holds_alternative<AffineNorm>(kind);
}

NetworkSpec::NetworkSpec(Shape input_shape, std::vector<BlockSpec> blocks)
    : input_shape_(std::move(input_shape)), blocks_(std::move(blocks)) {
  validate();
}

void NetworkSpec::validate() {
  if (input_shape_.empty()) throw InvalidArgument("network input shape is empty");
  for (auto e : input_shape_) {
    if (e == 0) throw InvalidArgument("network input extents must be positive");
  }
  if (blocks_.empty()) throw InvalidArgument("network has no layers");
  if (!blocks_.back().boundary) throw InvalidArgument("the last layer must end a measurement group");
  shapes_.assign(1, input_shape_);
  group_end_.clear();
  block_group_.clear();
  std::vector<Shape> open;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const BlockKind& kind = blocks_[i].kind;
    const Shape& in = shapes_.back();
    Shape out = infer_shape(i, kind, in);
    if (std::holds_alternative<ResidualOpen>(kind)) open.push_back(in);
    if (std::holds_alternative<ResidualClose>(kind)) {
      if (open.empty()) bad_block(i, kind, "no matching residual_open");
      if (open.back() != in) bad_block(i, kind, "branch shape " + shape_string(in) + " differs from skip " +
                                                    shape_string(open.back()));
      open.pop_back();
    }
    block_group_.push_back(group_end_.size() + 1);
    if (blocks_[i].boundary) {
      if (!open.empty()) bad_block(i, kind, "a boundary cannot sit inside an open residual");
      group_end_.push_back(i + 1);
    }
    shapes_.push_back(std::move(out));
  }
}

std::size_t NetworkSpec::group_begin(std::size_t g) const {
  if (g == 0 || g > groups()) throw InvalidArgument("group index out of range");
  return g == 1 ? 0 : group_end_[g - 2];
}

std::size_t NetworkSpec::group_end(std::size_t g) const {
  if (g == 0 || g > groups()) throw InvalidArgument("group index out of range");
  return group_end_[g - 1];
}

std::size_t NetworkSpec::group_of(std::size_t block) const { return block_group_.at(block); }

const Shape& NetworkSpec::boundary_shape(std::size_t l) const {
  if (l > groups()) throw InvalidArgument("boundary index " + std::to_string(l) + " out of range");
  return l == 0 ? input_shape_ : shapes_[group_end_[l - 1]];
}

bool NetworkSpec::has_batchnorm() const noexcept {
  for (const auto& b : blocks_) {
    if (std::holds_alternative<BatchNorm>(b.kind)) return true;
  }
  return false;
}

bool NetworkSpec::segment_has_batchnorm(std::size_t l0, std::size_t l) const {
  for (std::size_t i = group_begin(l0 + 1); i < group_end(l); ++i) {
    if (std::holds_alternative<BatchNorm>(blocks_[i].kind)) return true;
  }
  return false;
}

bool operator==(const NetworkSpec& a, const NetworkSpec& b) {
  return a.input_shape_ == b.input_shape_ && a.blocks_ == b.blocks_;
}

ParamSet init_params(const NetworkSpec& spec, const RngStream& rng) {
  ParamSet out;
  out.blocks.resize(spec.size());
  for_each_param_block(spec, [&](std::size_t i, const BlockKind& kind) {
    RngStream wr = rng.split(i).split(0);
    RngStream br = rng.split(i).split(1);
    BlockParams& p = out.blocks[i];
    const std::size_t ch = channels_of(spec.sample_shape_in(i));
    std::visit(
        [&](const auto& k) {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, Dense>) {
            p.weight = gaussian({k.fan_out, k.fan_in}, 0.0, k.sigma_w / std::sqrt(double(k.fan_in)), wr);
            p.bias = gaussian({k.fan_out}, 0.0, k.sigma_b, br);
          } else if constexpr (std::is_same_v<K, Conv2d>) {
            const std::size_t fan = k.in_ch * k.kernel * k.kernel;
            p.weight = gaussian({k.out_ch, fan}, 0.0, k.sigma_w / std::sqrt(double(fan)), wr);
            p.bias = gaussian({k.out_ch}, 0.0, k.sigma_b, br);
          } else if constexpr (std::is_same_v<K, PatchEmbed>) {
            const std::size_t fan = spec.sample_shape_in(i)[0] * k.patch * k.patch;
            p.weight = gaussian({k.dim, fan}, 0.0, k.sigma_w / std::sqrt(double(fan)), wr);
            p.bias = gaussian({k.dim}, 0.0, k.sigma_b, br);
          } else if constexpr (std::is_same_v<K, AffineNorm>) {
            p.weight = Tensor({ch}, k.alpha_init);
            p.bias = Tensor({ch}, k.beta_init);
          } else if constexpr (std::is_same_v<K, LayerScale>) {
            p.weight = Tensor({ch}, k.eps_ls);
          }
        },
        kind);
  });
  return out;
}

ParamSet effective_params(const NetworkSpec& spec, const ParamSet& params, const AuxScalars& aux) {
  ParamSet out = params;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    for (auto& v : out.blocks[i].weight.data()) v *= aux.weight.at(i);
    for (auto& v : out.blocks[i].bias.data()) v *= aux.bias.at(i);
  }
  return out;
}

ParamSet scale_params(const NetworkSpec& spec, const ParamSet& params, const AuxScalars& aux) {
  return effective_params(spec, params, aux);
}

NetworkSpec scale_sigmas(const NetworkSpec& spec, const AuxScalars& aux) {
  std::vector<BlockSpec> blocks = spec.blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const double aw = aux.weight.at(i), ab = aux.bias.at(i);
    std::visit(
        [&](auto& k) {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, Dense> || std::is_same_v<K, Conv2d> || std::is_same_v<K, PatchEmbed>) {
            k.sigma_w *= aw;
            k.sigma_b *= ab;
          } else if constexpr (std::is_same_v<K, AffineNorm>) {
            k.alpha_init *= aw;
            k.beta_init *= ab;
          } else if constexpr (std::is_same_v<K, LayerScale>) {
            k.eps_ls *= aw;
          }
        },
        blocks[i].kind);
  }
  return NetworkSpec(spec.input_shape(), std::move(blocks));
}

void check_batch(const NetworkSpec& spec, const Tensor& batch) {
  const Shape& in = spec.input_shape();
  const Shape& got = batch.shape();
  bool ok = got.size() == in.size() + 1;
  for (std::size_t i = 0; ok && i < in.size(); ++i) ok = got[i + 1] == in[i];
  if (!ok) {
    throw InvalidArgument("batch shape " + shape_string(got) + " does not match network input [B," +
                          shape_string(in).substr(1));
  }
}

BatchActivations forward(const NetworkSpec& spec, const ParamSet& params, const AuxScalars& aux,
                         const Tensor& batch) {
  const detail::Tape tape(spec, params, aux, batch);
  BatchActivations out;
  out.batch_size = tape.batch_size();
  for (std::size_t l = 0; l <= spec.groups(); ++l) {
    out.boundaries.push_back(tape.boundary(l).reshaped({out.batch_size, spec.width(l)}));
  }
  return out;
}

Tensor forward_output(const NetworkSpec& spec, const ParamSet& params, const AuxScalars& aux, const Tensor& batch) {
  const detail::Tape tape(spec, params, aux, batch);
  return tape.boundary(spec.groups());
}

Tensor normalize_samples(const Tensor& batch) {
  if (batch.rank() < 2) throw InvalidArgument("normalize_samples expects a [B, ...] batch");
  Tensor out = batch;
  const std::size_t b = batch.shape().front();
  const std::size_t n = batch.size() / b;
  for (std::size_t s = 0; s < b; ++s) {
    const double m2 = mean_of_squares(batch.data().subspan(s * n, n));
    if (m2 <= 0.0) continue;
    const double inv = 1.0 / std::sqrt(m2);
    for (std::size_t i = 0; i < n; ++i) out[s * n + i] *= inv;
  }
  return out;
}

Tensor gaussian_batch(const NetworkSpec& spec, std::size_t batch, RngStream& rng) {
  if (batch == 0) throw InvalidArgument("batch size must be positive");
  Shape shape{batch};
  shape.insert(shape.end(), spec.input_shape().begin(), spec.input_shape().end());
  return gaussian(shape, 0.0, 1.0, rng);
}

NetworkSpec mlp(std::size_t depth, std::size_t width, double sigma_w, double sigma_b, ActivationKind act,
                std::size_t input_width) {
  if (depth == 0 || width == 0) throw InvalidArgument("mlp needs positive depth and width");
  const std::size_t in = input_width ? input_width : width;
  std::vector<BlockSpec> blocks;
  for (std::size_t l = 0; l < depth; ++l) {
    blocks.push_back({Activation{act}, false});
    blocks.push_back({Dense{l == 0 ? in : width, width, sigma_w, sigma_b}, true});
  }
  return NetworkSpec({in}, std::move(blocks));
}

NetworkSpec prebn_resmlp(std::size_t depth, std::size_t width, double sigma_w, double sigma_b, double mu,
                         ActivationKind act, double bn_eps) {
  if (depth == 0 || width == 0) throw InvalidArgument("prebn_resmlp needs positive depth and width");
  std::vector<BlockSpec> blocks;
  for (std::size_t l = 0; l < depth; ++l) {
    blocks.push_back({ResidualOpen{}, false});
    blocks.push_back({BatchNorm{bn_eps}, false});
    blocks.push_back({Activation{act}, false});
    blocks.push_back({Dense{width, width, sigma_w, sigma_b}, false});
    blocks.push_back({ResidualClose{mu}, true});
  }
  return NetworkSpec({width}, std::move(blocks));
}

NetworkSpec resmlp_toy(const ResMlpOptions& o) {
  if (o.image % o.patch) throw InvalidArgument("image size must be a multiple of the patch size");
  const std::size_t np = (o.image / o.patch) * (o.image / o.patch);
  const std::size_t d = o.dim;
  std::vector<BlockSpec> b;
  b.push_back({PatchEmbed{o.patch, d, o.sigma_w, o.sigma_b}, true});
  for (std::size_t l = 0; l < o.depth; ++l) {
    b.push_back({AffineNorm{}, false});
    b.push_back({ResidualOpen{}, false});
    b.push_back({Dense{np, np, o.sigma_w, o.sigma_b, 0}, false});
    b.push_back({LayerScale{o.eps_ls}, false});
    b.push_back({ResidualClose{o.mu}, false});
    b.push_back({AffineNorm{}, false});
    b.push_back({ResidualOpen{}, false});
    b.push_back({Dense{d, 4 * d, o.sigma_w, o.sigma_b}, false});
    b.push_back({Activation{o.act}, false});
    b.push_back({Dense{4 * d, d, o.sigma_w, o.sigma_b}, false});
    b.push_back({LayerScale{o.eps_ls}, false});
    b.push_back({ResidualClose{o.mu}, true});
  }
  b.push_back({AvgPool{0}, false});
  b.push_back({Dense{d, o.classes, o.sigma_w, o.sigma_b}, true});
  return NetworkSpec({o.channels, o.image, o.image}, std::move(b));
}

NetworkSpec mini_vgg(const MiniVggOptions& o) {
  if (o.widths.empty()) throw InvalidArgument("mini_vgg needs at least one conv block");
  std::vector<BlockSpec> b;
  std::size_t ch = o.channels, side = o.image;
  for (std::size_t i = 0; i < o.widths.size(); ++i) {
    b.push_back({Conv2d{ch, o.widths[i], 3, 1, 1, o.sigma_w, o.sigma_b}, false});
    b.push_back({BatchNorm{}, false});
    b.push_back({AffineNorm{}, false});
    b.push_back({Activation{ActivationKind::relu}, false});
    ch = o.widths[i];
    if (i % 2 == 1 && side % 2 == 0 && side > 2) {
      b.push_back({AvgPool{2}, false});
      side /= 2;
    }
    b.back().boundary = true;
  }
  b.push_back({Flatten{}, false});
  b.push_back({Dense{ch * side * side, o.classes, o.sigma_w, o.sigma_b}, true});
  return NetworkSpec({o.channels, o.image, o.image}, std::move(b));
}

}  // namespace crit
