#include <doctest.h>

#include <cmath>
#include <numbers>

#include "crit/blocks.hpp"
#include "crit/error.hpp"

using namespace crit;

namespace {

double variance(std::span<const double> v) {
  double m = 0.0, s = 0.0;
  for (double x : v) m += x;
  m /= double(v.size());
  for (double x : v) s += (x - m) * (x - m);
  return s / double(v.size());
}

Tensor eye(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t[i * n + i] = 1.0;
  return t;
}

}  // namespace

TEST_SUITE("blocks") {
  TEST_CASE("dense weight variance is sigma_w^2 / fan_in") {
    const NetworkSpec spec({100}, {{Dense{100, 100, std::numbers::sqrt2, 0.0}, true}});
    const ParamSet p = init_params(spec, RngStream(5, 0));
    CHECK(variance(p.blocks[0].weight.data()) == doctest::Approx(2.0 / 100.0).epsilon(0.1));
    for (double b : p.blocks[0].bias.data()) CHECK(b == 0.0);
  }

  TEST_CASE("conv weight variance uses fan_in * kernel^2") {
    const NetworkSpec spec({4, 8, 8}, {{Conv2d{4, 64, 3, 1, 1, 2.0, 0.5}, true}});
    const ParamSet p = init_params(spec, RngStream(6, 0));
    CHECK(variance(p.blocks[0].weight.data()) == doctest::Approx(4.0 / 36.0).epsilon(0.1));
    CHECK(variance(p.blocks[0].bias.data()) == doctest::Approx(0.25).epsilon(0.5));
  }

  TEST_CASE("init is deterministic per stream") {
    const NetworkSpec spec = mlp(3, 20, 1.0, 0.1);
    const ParamSet a = init_params(spec, RngStream(1, 2));
    const ParamSet b = init_params(spec, RngStream(1, 2));
    for (std::size_t i = 0; i < spec.size(); ++i) CHECK(a.blocks[i].weight == b.blocks[i].weight);
  }

  TEST_CASE("resmlp affine norms start as identity") {
    const NetworkSpec spec = resmlp_toy({});
    const ParamSet p = init_params(spec, RngStream(0, 0));
    std::size_t found = 0;
    for (std::size_t i = 0; i < spec.size(); ++i) {
      if (std::holds_alternative<AffineNorm>(spec.blocks()[i].kind)) {
        ++found;
        for (double a : p.blocks[i].weight.data()) CHECK(a == 1.0);
        for (double b : p.blocks[i].bias.data()) CHECK(b == 0.0);
      }
      if (std::holds_alternative<LayerScale>(spec.blocks()[i].kind)) {
        for (double e : p.blocks[i].weight.data()) CHECK(e == 0.1);
      }
    }
    CHECK(found > 0);
  }

  TEST_CASE("identity dense with linear activation passes input through") {
    const NetworkSpec spec({4}, {{Dense{4, 4, 1.0, 0.0}, false}, {Activation{ActivationKind::linear}, true}});
    ParamSet p = init_params(spec, RngStream(0, 0));
    p.blocks[0].weight = eye(4);
    RngStream r(3, 3);
    const Tensor x = gaussian({5, 4}, 0.0, 1.0, r);
    CHECK(forward_output(spec, p, AuxScalars::ones(spec.size()), x) == x);
  }

  TEST_CASE("relu layer") {
    const NetworkSpec spec({3}, {{Activation{ActivationKind::relu}, true}});
    const ParamSet p = init_params(spec, RngStream(0, 0));
    const Tensor y = forward_output(spec, p, AuxScalars::ones(1), Tensor({1, 3}, {-1, 2, 0}));
    CHECK(y == Tensor({1, 3}, {0, 2, 0}));
  }

  TEST_CASE("batchnorm normalizes every neuron over the batch") {
    const double eps = 1e-5;
    const NetworkSpec spec({6}, {{BatchNorm{eps}, true}});
    const ParamSet p = init_params(spec, RngStream(0, 0));
    for (std::size_t B : {2, 7, 64}) {
      RngStream r(B, 1);
      const Tensor x = gaussian({B, 6}, 3.0, 2.0, r);
      const Tensor y = forward_output(spec, p, AuxScalars::ones(1), x);
      for (std::size_t j = 0; j < 6; ++j) {
        double mx = 0, my = 0;
        for (std::size_t b = 0; b < B; ++b) {
          mx += x[b * 6 + j] / double(B);
          my += y[b * 6 + j] / double(B);
        }
        double vx = 0, vy = 0;
        for (std::size_t b = 0; b < B; ++b) {
          vx += std::pow(x[b * 6 + j] - mx, 2) / double(B);
          vy += std::pow(y[b * 6 + j] - my, 2) / double(B);
        }
        CHECK(std::abs(my) <= 1e-12);
        CHECK(std::abs(vy - vx / (vx + eps)) <= 1e-10);
      }
    }
  }

  TEST_CASE("pre-bn residual with zero branch is the identity") {
    const NetworkSpec spec = prebn_resmlp(4, 16, 1.5, 0.7, 1.0);
    const ParamSet p = init_params(spec, RngStream(2, 0));
    AuxScalars aux{std::vector<double>(spec.size(), 0.0), std::vector<double>(spec.size(), 0.0)};
    RngStream r(4, 4);
    const Tensor x = gaussian({8, 16}, 0.0, 1.0, r);
    CHECK(forward_output(spec, p, aux, x) == x);
  }

  TEST_CASE("twin network and scaled sigmas agree") {
    const NetworkSpec spec = mlp(3, 12, 1.3, 0.4);
    const ParamSet p = init_params(spec, RngStream(8, 0));
    AuxScalars aux = AuxScalars::ones(spec.size());
    for (std::size_t i = 0; i < spec.size(); ++i) {
      aux.weight[i] = 0.5 + 0.1 * double(i);
      aux.bias[i] = 1.5 - 0.1 * double(i);
    }
    RngStream r(1, 1);
    const Tensor x = gaussian({4, 12}, 0.0, 1.0, r);
    const Tensor a = forward_output(spec, p, aux, x);
    const NetworkSpec s2 = scale_sigmas(spec, aux);
    const Tensor b = forward_output(s2, scale_params(spec, p, aux), AuxScalars::ones(spec.size()), x);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    const auto& d = std::get<Dense>(s2.blocks()[1].kind);
    CHECK(d.sigma_w == doctest::Approx(1.3 * aux.weight[1]));
    CHECK(d.sigma_b == doctest::Approx(0.4 * aux.bias[1]));
  }

  TEST_CASE("group structure") {
    const NetworkSpec spec = mlp(4, 8, 1.0, 0.0);
    CHECK(spec.groups() == 4);
    CHECK(spec.group_begin(1) == 0);
    CHECK(spec.group_end(1) == 2);
    CHECK(spec.group_of(5) == 3);
    CHECK_THROWS_AS(spec.group_begin(0), Error);
    CHECK(spec.width(0) == 8);
    CHECK_FALSE(spec.segment_has_batchnorm(0, 4));
    CHECK(prebn_resmlp(2, 8, 1, 0, 1).segment_has_batchnorm(0, 1));
  }

  TEST_CASE("presets have the documented shapes") {
    const NetworkSpec r = resmlp_toy({});
    CHECK(r.boundary_shape(1) == Shape{16, 64});
    const NetworkSpec v = mini_vgg({});
    CHECK(v.groups() == 7);
    const ParamSet p = init_params(v, RngStream(0, 0));
    RngStream rng(0, 1);
    const Tensor x = gaussian_batch(v, 2, rng);
    CHECK(forward_output(v, p, AuxScalars::ones(v.size()), x).shape() == Shape{2, 10});
  }

  TEST_CASE("invalid specs are rejected") {
    CHECK_THROWS_AS(NetworkSpec({4}, {{Dense{5, 4, 1.0, 0.0}, true}}), Error);
    CHECK_THROWS_AS(NetworkSpec({4}, {{Dense{4, 4, 0.0, 0.0}, true}}), Error);
    CHECK_THROWS_AS(NetworkSpec({4}, {{ResidualClose{1.0}, true}}), Error);
    CHECK_THROWS_AS(NetworkSpec({4}, {{ResidualOpen{}, true}}), Error);
    CHECK_THROWS_AS(NetworkSpec({3, 8, 8}, {{Conv2d{3, 4, 3, 0, 1, 1.0, 0.0}, true}}), Error);
  }

  TEST_CASE("normalize_samples gives unit second moment") {
    RngStream r(0, 5);
    const Tensor x = gaussian({3, 50}, 1.0, 4.0, r);
    const Tensor y = normalize_samples(x);
    for (std::size_t b = 0; b < 3; ++b) {
      CHECK(mean_of_squares(y.data().subspan(b * 50, 50)) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}
