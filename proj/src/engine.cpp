#include "engine.hpp"

#include <Eigen/Core>
#include <cmath>
#include <utility>

#include "crit/error.hpp"

namespace crit::detail {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

struct ChannelLayout {
  std::size_t outer = 1;
  std::size_t channels = 1;
  std::size_t inner = 1;
};

ChannelLayout channel_layout(const Shape& s) {
  if (s.size() == 3) return {1, s[0], s[1] * s[2]};
  const std::size_t c = s.back();
  return {shape_product(s) / c, c, 1};
}

Shape with_rows(std::size_t rows, const Shape& sample) {
  Shape out;
  out.reserve(sample.size() + 1);
  out.push_back(rows);
  out.insert(out.end(), sample.begin(), sample.end());
  return out;
}

std::size_t rows_of(const Tensor& t) { return t.shape().front(); }

Tensor dense_apply(const Dense& d, const Tensor& w, const Tensor& x, const Shape& out_sample, bool adjoint) {
  const std::size_t rows = rows_of(x);
  Tensor y(with_rows(rows, out_sample));
  const ConstMap W(w.raw(), d.fan_out, d.fan_in);
  if (d.axis == 0) {
    // Sample [P, d]: mix the leading axis row by row.
    const std::size_t in_p = adjoint ? d.fan_out : d.fan_in;
    const std::size_t out_p = adjoint ? d.fan_in : d.fan_out;
    const std::size_t ch = x.size() / (rows * in_p);
    for (std::size_t r = 0; r < rows; ++r) {
      const ConstMap X(x.raw() + r * in_p * ch, in_p, ch);
      MutMap Y(y.raw() + r * out_p * ch, out_p, ch);
      if (adjoint) {
        Y.noalias() = W.transpose() * X;
      } else {
        Y.noalias() = W * X;
      }
    }
    return y;
  }
  const std::size_t in_w = adjoint ? d.fan_out : d.fan_in;
  const std::size_t out_w = adjoint ? d.fan_in : d.fan_out;
  const std::size_t m = x.size() / in_w;
  const ConstMap X(x.raw(), m, in_w);
  MutMap Y(y.raw(), m, out_w);
  if (adjoint) {
    Y.noalias() = X * W;
  } else {
    Y.noalias() = X * W.transpose();
  }
  return y;
}

struct ConvGeom {
  std::size_t c, h, w, k, s, p, ho, wo;
};

ConvGeom conv_geom(const Conv2d& cv, const Shape& in) {
  const std::size_t ho = (in[1] + 2 * cv.padding - cv.kernel) / cv.stride + 1;
  const std::size_t wo = (in[2] + 2 * cv.padding - cv.kernel) / cv.stride + 1;
  return {in[0], in[1], in[2], cv.kernel, cv.stride, cv.padding, ho, wo};
}

void im2col(const ConvGeom& g, const double* x, double* cols) {
  const std::size_t hw = g.ho * g.wo;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* dst = cols + ((c * g.k + ky) * g.k + kx) * hw;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.s + ky) - static_cast<long>(g.p);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.s + kx) - static_cast<long>(g.p);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w);
            dst[oy * g.wo + ox] = inside ? x[(c * g.h + iy) * g.w + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const ConvGeom& g, const double* cols, double* x) {
  const std::size_t hw = g.ho * g.wo;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* src = cols + ((c * g.k + ky) * g.k + kx) * hw;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.s + ky) - static_cast<long>(g.p);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.s + kx) - static_cast<long>(g.p);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            x[(c * g.h + iy) * g.w + ix] += src[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

Tensor conv_apply(const Conv2d& cv, const Tensor& w, const Tensor& x, const Shape& in_sample,
                  const Shape& out_sample, bool adjoint) {
  const ConvGeom g = conv_geom(cv, in_sample);
  const std::size_t rows = rows_of(x);
  const std::size_t ckk = g.c * g.k * g.k;
  const std::size_t hw = g.ho * g.wo;
  const ConstMap W(w.raw(), cv.out_ch, ckk);
  RowMat cols(ckk, hw);
  if (!adjoint) {
    Tensor y(with_rows(rows, out_sample));
    const std::size_t in_n = shape_product(in_sample);
    for (std::size_t r = 0; r < rows; ++r) {
      im2col(g, x.raw() + r * in_n, cols.data());
      MutMap Y(y.raw() + r * cv.out_ch * hw, cv.out_ch, hw);
      Y.noalias() = W * cols;
    }
    return y;
  }
  Tensor y(with_rows(rows, in_sample));
  const std::size_t in_n = shape_product(in_sample);
  for (std::size_t r = 0; r < rows; ++r) {
    const ConstMap G(x.raw() + r * cv.out_ch * hw, cv.out_ch, hw);
    cols.noalias() = W.transpose() * G;
    col2im(g, cols.data(), y.raw() + r * in_n);
  }
  return y;
}

Tensor patch_apply(const PatchEmbed& pe, const Tensor& w, const Tensor& x, const Shape& in_sample,
                   const Shape& out_sample, bool adjoint) {
  const std::size_t c = in_sample[0], h = in_sample[1], wd = in_sample[2], p = pe.patch;
  const std::size_t gw = wd / p;
  const std::size_t np = (h / p) * gw;
  const std::size_t cpp = c * p * p;
  const std::size_t in_n = shape_product(in_sample);
  const std::size_t rows = rows_of(x);
  const ConstMap W(w.raw(), pe.dim, cpp);
  RowMat pm(np, cpp);
  auto index = [&](std::size_t patch, std::size_t col) {
    const std::size_t ch = col / (p * p), dy = (col / p) % p, dx = col % p;
    const std::size_t py = patch / gw, px = patch % gw;
    return (ch * h + py * p + dy) * wd + px * p + dx;
  };
  if (!adjoint) {
    Tensor y(with_rows(rows, out_sample));
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = x.raw() + r * in_n;
      for (std::size_t i = 0; i < np; ++i) {
        for (std::size_t j = 0; j < cpp; ++j) pm(i, j) = xr[index(i, j)];
      }
      MutMap Y(y.raw() + r * np * pe.dim, np, pe.dim);
      Y.noalias() = pm * W.transpose();
    }
    return y;
  }
  Tensor y(with_rows(rows, in_sample));
  for (std::size_t r = 0; r < rows; ++r) {
    const ConstMap G(x.raw() + r * np * pe.dim, np, pe.dim);
    pm.noalias() = G * W;
    double* yr = y.raw() + r * in_n;
    for (std::size_t i = 0; i < np; ++i) {
      for (std::size_t j = 0; j < cpp; ++j) yr[index(i, j)] = pm(i, j);
    }
  }
  return y;
}

Tensor pool_apply(const AvgPool& ap, const Tensor& x, const Shape& in_sample, const Shape& out_sample,
                  bool adjoint) {
  const std::size_t rows = rows_of(x);
  const std::size_t in_n = shape_product(in_sample);
  const std::size_t out_n = shape_product(out_sample);
  Tensor y(with_rows(rows, adjoint ? in_sample : out_sample));
  if (ap.window == 0) {
    const ChannelLayout cl = channel_layout(in_sample);
    const double inv = 1.0 / static_cast<double>(cl.outer * cl.inner);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* in = (adjoint ? x.raw() + r * out_n : x.raw() + r * in_n);
      double* out = (adjoint ? y.raw() + r * in_n : y.raw() + r * out_n);
      for (std::size_t o = 0; o < cl.outer; ++o) {
        for (std::size_t ch = 0; ch < cl.channels; ++ch) {
          for (std::size_t i = 0; i < cl.inner; ++i) {
            const std::size_t k = (o * cl.channels + ch) * cl.inner + i;
            if (adjoint) {
              out[k] = in[ch] * inv;
            } else {
              out[ch] += in[k] * inv;
            }
          }
        }
      }
    }
    return y;
  }
  const std::size_t c = in_sample[0], h = in_sample[1], wd = in_sample[2], win = ap.window;
  const std::size_t ho = h / win, wo = wd / win;
  const double inv = 1.0 / static_cast<double>(win * win);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = (adjoint ? x.raw() + r * out_n : x.raw() + r * in_n);
    double* out = (adjoint ? y.raw() + r * in_n : y.raw() + r * out_n);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t iy = 0; iy < ho * win; ++iy) {
        for (std::size_t ix = 0; ix < wo * win; ++ix) {
          const std::size_t fine = (ch * h + iy) * wd + ix;
          const std::size_t coarse = (ch * ho + iy / win) * wo + ix / win;
          if (adjoint) {
            out[fine] = in[coarse] * inv;
          } else {
            out[coarse] += in[fine] * inv;
          }
        }
      }
    }
  }
  return y;
}

void scale_channels(Tensor& x, const Shape& sample, const Tensor& scale) {
  const ChannelLayout cl = channel_layout(sample);
  const std::size_t n = shape_product(sample);
  const std::size_t rows = x.size() / n;
  double* p = x.raw();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < cl.outer; ++o) {
      for (std::size_t ch = 0; ch < cl.channels; ++ch) {
        const double s = scale[ch];
        for (std::size_t i = 0; i < cl.inner; ++i) *p++ *= s;
      }
    }
  }
}

void add_channels(Tensor& x, const Shape& sample, const Tensor& shift) {
  const ChannelLayout cl = channel_layout(sample);
  const std::size_t n = shape_product(sample);
  const std::size_t rows = x.size() / n;
  double* p = x.raw();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < cl.outer; ++o) {
      for (std::size_t ch = 0; ch < cl.channels; ++ch) {
        const double s = shift[ch];
        for (std::size_t i = 0; i < cl.inner; ++i) *p++ += s;
      }
    }
  }
}

void add_dense_bias(const Dense& d, Tensor& y, const Tensor& b) {
  if (d.axis == 0) {
    const std::size_t rows = rows_of(y);
    const std::size_t ch = y.size() / (rows * d.fan_out);
    double* p = y.raw();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t o = 0; o < d.fan_out; ++o) {
        for (std::size_t i = 0; i < ch; ++i) *p++ += b[o];
      }
    }
    return;
  }
  const std::size_t m = y.size() / d.fan_out;
  double* p = y.raw();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t o = 0; o < d.fan_out; ++o) *p++ += b[o];
  }
}

void add_leading_bias(Tensor& y, std::size_t channels, std::size_t inner, const Tensor& b) {
  // Layout [R, channels, inner].
  const std::size_t rows = y.size() / (channels * inner);
  double* p = y.raw();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t i = 0; i < inner; ++i) *p++ += b[c];
    }
  }
}

// BatchNorm Jacobian (I - 11'/n - yy'/n) / s per channel; it is symmetric,
// so the same routine serves both directions.
Tensor batchnorm_tangent(const LayerCache& cache, const Tensor& t, const Shape& sample, std::size_t batch) {
  const ChannelLayout cl = channel_layout(sample);
  const std::size_t n = shape_product(sample);
  const std::size_t rows = rows_of(t);
  if (rows % batch != 0) throw Error("batchnorm tangent needs whole-batch rows");
  const std::size_t groups = rows / batch;
  const double count = static_cast<double>(batch * cl.outer * cl.inner);
  Tensor out(t.shape());
  const double* y = cache.normed.raw();
  std::vector<double> m1(cl.channels), m2(cl.channels);
  for (std::size_t g = 0; g < groups; ++g) {
    const double* dx = t.raw() + g * batch * n;
    double* dy = out.raw() + g * batch * n;
    std::fill(m1.begin(), m1.end(), 0.0);
    std::fill(m2.begin(), m2.end(), 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t o = 0; o < cl.outer; ++o) {
        for (std::size_t ch = 0; ch < cl.channels; ++ch) {
          const std::size_t base = b * n + (o * cl.channels + ch) * cl.inner;
          for (std::size_t i = 0; i < cl.inner; ++i) {
            m1[ch] += dx[base + i];
            m2[ch] += y[base + i] * dx[base + i];
          }
        }
      }
    }
    for (std::size_t ch = 0; ch < cl.channels; ++ch) {
      m1[ch] /= count;
      m2[ch] /= count;
    }
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t o = 0; o < cl.outer; ++o) {
        for (std::size_t ch = 0; ch < cl.channels; ++ch) {
          const std::size_t base = b * n + (o * cl.channels + ch) * cl.inner;
          const double s = cache.inv_std[ch];
          for (std::size_t i = 0; i < cl.inner; ++i) {
            dy[base + i] = (dx[base + i] - m1[ch] - y[base + i] * m2[ch]) * s;
          }
        }
      }
    }
  }
  return out;
}

LayerCache batchnorm_forward(const BatchNorm& bn, const Tensor& x, const Shape& sample, Tensor& y) {
  const ChannelLayout cl = channel_layout(sample);
  const std::size_t n = shape_product(sample);
  const std::size_t batch = rows_of(x);
  const double count = static_cast<double>(batch * cl.outer * cl.inner);
  std::vector<double> mean(cl.channels, 0.0), var(cl.channels, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < cl.outer; ++o) {
      for (std::size_t ch = 0; ch < cl.channels; ++ch) {
        const double* p = x.raw() + b * n + (o * cl.channels + ch) * cl.inner;
        for (std::size_t i = 0; i < cl.inner; ++i) mean[ch] += p[i];
      }
    }
  }
  for (auto& m : mean) m /= count;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < cl.outer; ++o) {
      for (std::size_t ch = 0; ch < cl.channels; ++ch) {
        const double* p = x.raw() + b * n + (o * cl.channels + ch) * cl.inner;
        for (std::size_t i = 0; i < cl.inner; ++i) {
          const double d = p[i] - mean[ch];
          var[ch] += d * d;
        }
      }
    }
  }
  LayerCache cache;
  cache.inv_std.resize(cl.channels);
  for (std::size_t ch = 0; ch < cl.channels; ++ch) cache.inv_std[ch] = 1.0 / std::sqrt(var[ch] / count + bn.eps);
  y = Tensor(x.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < cl.outer; ++o) {
      for (std::size_t ch = 0; ch < cl.channels; ++ch) {
        const std::size_t base = b * n + (o * cl.channels + ch) * cl.inner;
        for (std::size_t i = 0; i < cl.inner; ++i) {
          y[base + i] = (x[base + i] - mean[ch]) * cache.inv_std[ch];
        }
      }
    }
  }
  cache.normed = y;
  return cache;
}

// Linear part of a layer (no bias), or its adjoint.
Tensor linear_part(const BlockKind& kind, const BlockParams& p, const Tensor& x, const Shape& in_sample,
                   const Shape& out_sample, bool adjoint) {
  const Shape& target = adjoint ? in_sample : out_sample;
  return std::visit(
      [&](const auto& k) -> Tensor {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Dense>) {
          return dense_apply(k, p.weight, x, target, adjoint);
        } else if constexpr (std::is_same_v<K, Conv2d>) {
          return conv_apply(k, p.weight, x, in_sample, out_sample, adjoint);
        } else if constexpr (std::is_same_v<K, PatchEmbed>) {
          return patch_apply(k, p.weight, x, in_sample, out_sample, adjoint);
        } else if constexpr (std::is_same_v<K, AffineNorm> || std::is_same_v<K, LayerScale>) {
          Tensor y = x;
          scale_channels(y, in_sample, p.weight);
          return y;
        } else if constexpr (std::is_same_v<K, AvgPool>) {
          return pool_apply(k, x, in_sample, out_sample, adjoint);
        } else if constexpr (std::is_same_v<K, Flatten>) {
          return x.reshaped(with_rows(rows_of(x), target));
        } else {
          throw Error("layer " + block_name(kind) + " is not linear");
        }
      },
      kind);
}

Tensor elementwise_mul(const Tensor& t, const Tensor& factors, const RowLayout& rows, std::size_t batch) {
  const std::size_t r_count = rows_of(t);
  const std::size_t n = t.size() / r_count;
  Tensor out(t.shape());
  for (std::size_t r = 0; r < r_count; ++r) {
    const double* f = factors.raw() + rows.sample_of(r, batch) * n;
    const double* a = t.raw() + r * n;
    double* o = out.raw() + r * n;
    for (std::size_t i = 0; i < n; ++i) o[i] = a[i] * f[i];
  }
  return out;
}

void axpy(Tensor& y, double a, const Tensor& x) {
  double* p = y.raw();
  const double* q = x.raw();
  for (std::size_t i = 0; i < y.size(); ++i) p[i] += a * q[i];
}

}  // namespace

Tape::Tape(const NetworkSpec& spec, const ParamSet& params, const AuxScalars& aux, const Tensor& batch)
    : spec_(std::make_shared<const NetworkSpec>(spec)),
      params_(std::make_shared<const ParamSet>(params)),
      aux_(aux) {
  check_batch(spec, batch);
  if (params.blocks.size() != spec.size()) throw InvalidArgument("parameter set does not match network");
  if (aux.weight.size() != spec.size() || aux.bias.size() != spec.size()) {
    throw InvalidArgument("aux scalars do not match network");
  }
  batch_ = batch.shape().front();
  if (batch_ < 2 && spec.has_batchnorm()) throw InvalidArgument("BatchNorm needs a batch of at least 2 samples");
  eff_.resize(spec.size());
  cache_.resize(spec.size());
  boundary_.resize(spec.groups() + 1);
  boundary_[0] = std::make_shared<const Tensor>(batch);
  run_from(1);
}

Tape Tape::with_aux(const AuxScalars& aux, std::size_t first_group) const {
  Tape t = *this;
  t.aux_ = aux;
  t.run_from(std::max<std::size_t>(first_group, 1));
  return t;
}

void Tape::run_from(std::size_t first_group) {
  const NetworkSpec& spec = *spec_;
  if (first_group > spec.groups()) return;
  const std::size_t start = spec.group_begin(first_group);
  Tensor x = *boundary_[first_group - 1];
  std::vector<Tensor> skips;
  for (std::size_t i = start; i < spec.size(); ++i) {
    const BlockSpec& blk = spec.blocks()[i];
    const Shape& in = spec.sample_shape_in(i);
    const Shape& out = spec.sample_shape_out(i);
    const BlockParams& raw = params_->blocks[i];
    BlockParams eff;
    if (has_weight(blk.kind)) {
      eff.weight = raw.weight;
      for (auto& v : eff.weight.data()) v *= aux_.weight[i];
    }
    if (has_bias(blk.kind)) {
      eff.bias = raw.bias;
      for (auto& v : eff.bias.data()) v *= aux_.bias[i];
    }
    cache_[i].reset();
    Tensor y;
    std::visit(
        [&](const auto& k) {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, Activation>) {
            auto c = std::make_shared<LayerCache>();
            y = Tensor(x.shape());
            c->deriv = Tensor(x.shape());
            for (std::size_t j = 0; j < x.size(); ++j) {
              y[j] = activate(k.kind, x[j]);
              c->deriv[j] = activate_d1(k.kind, x[j]);
            }
            cache_[i] = std::move(c);
          } else if constexpr (std::is_same_v<K, BatchNorm>) {
            cache_[i] = std::make_shared<LayerCache>(batchnorm_forward(k, x, in, y));
          } else if constexpr (std::is_same_v<K, ResidualOpen>) {
            skips.push_back(x);
            y = std::move(x);
          } else if constexpr (std::is_same_v<K, ResidualClose>) {
            y = std::move(x);
            axpy(y, k.mu, skips.back());
            skips.pop_back();
          } else {
            y = linear_part(blk.kind, eff, x, in, out, false);
            if constexpr (std::is_same_v<K, Dense>) {
              add_dense_bias(k, y, eff.bias);
            } else if constexpr (std::is_same_v<K, Conv2d>) {
              add_leading_bias(y, k.out_ch, out[1] * out[2], eff.bias);
            } else if constexpr (std::is_same_v<K, PatchEmbed>) {
              add_dense_bias(Dense{k.dim, k.dim, 0, 0, -1}, y, eff.bias);
            } else if constexpr (std::is_same_v<K, AffineNorm>) {
              add_channels(y, in, eff.bias);
            }
          }
        },
        blk.kind);
    eff_[i] = std::make_shared<const BlockParams>(std::move(eff));
    x = std::move(y);
    if (blk.boundary) {
      const std::size_t l = spec.group_of(i);
      boundary_[l] = std::make_shared<const Tensor>(x);
    }
  }
}

Tensor Tape::jvp(std::size_t l0, std::size_t l, Tensor t, const RowLayout& rows) const {
  const NetworkSpec& spec = *spec_;
  if (l0 >= l || l > spec.groups()) throw InvalidArgument("jvp: need l0 < l <= number of groups");
  std::vector<Tensor> skips;
  for (std::size_t i = spec.group_begin(l0 + 1); i < spec.group_end(l); ++i) {
    const BlockSpec& blk = spec.blocks()[i];
    const Shape& in = spec.sample_shape_in(i);
    const Shape& out = spec.sample_shape_out(i);
    std::visit(
        [&](const auto& k) {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, Activation>) {
            t = elementwise_mul(t, cache_[i]->deriv, rows, batch_);
          } else if constexpr (std::is_same_v<K, BatchNorm>) {
            if (!rows.grouped) throw Error("BatchNorm tangents need whole-batch rows");
            t = batchnorm_tangent(*cache_[i], t, in, batch_);
          } else if constexpr (std::is_same_v<K, ResidualOpen>) {
            skips.push_back(t);
          } else if constexpr (std::is_same_v<K, ResidualClose>) {
            axpy(t, k.mu, skips.back());
            skips.pop_back();
          } else {
            t = linear_part(blk.kind, *eff_[i], t, in, out, false);
          }
        },
        blk.kind);
  }
  return t;
}

Tensor Tape::vjp(std::size_t l0, std::size_t l, Tensor t, const RowLayout& rows) const {
  const NetworkSpec& spec = *spec_;
  if (l0 >= l || l > spec.groups()) throw InvalidArgument("vjp: need l0 < l <= number of groups");
  std::vector<Tensor> skips;
  const std::size_t begin = spec.group_begin(l0 + 1);
  for (std::size_t i = spec.group_end(l); i-- > begin;) {
    const BlockSpec& blk = spec.blocks()[i];
    const Shape& in = spec.sample_shape_in(i);
    const Shape& out = spec.sample_shape_out(i);
    std::visit(
        [&](const auto& k) {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, Activation>) {
            t = elementwise_mul(t, cache_[i]->deriv, rows, batch_);
          } else if constexpr (std::is_same_v<K, BatchNorm>) {
            if (!rows.grouped) throw Error("BatchNorm tangents need whole-batch rows");
            t = batchnorm_tangent(*cache_[i], t, in, batch_);
          } else if constexpr (std::is_same_v<K, ResidualClose>) {
            Tensor skip = t;
            for (auto& v : skip.data()) v *= k.mu;
            skips.push_back(std::move(skip));
          } else if constexpr (std::is_same_v<K, ResidualOpen>) {
            axpy(t, 1.0, skips.back());
            skips.pop_back();
          } else {
            t = linear_part(blk.kind, *eff_[i], t, in, out, true);
          }
        },
        blk.kind);
  }
  return t;
}

}  // namespace crit::detail
