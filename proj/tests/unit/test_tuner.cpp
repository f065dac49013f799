#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "crit/error.hpp"
#include "crit/meanfield.hpp"
#include "crit/tuner.hpp"

using namespace crit;

namespace {

Tensor batch(const NetworkSpec& s, std::size_t B, std::uint64_t seed) {
  RngStream r(seed, 77);
  return gaussian_batch(s, B, r);
}

}  // namespace

TEST_SUITE("tuner") {
  TEST_CASE("closed-form rates") {
    const std::vector<double> two{2.0};
    CHECK(eta_bound(two, 2.0, LossKind::jll) ==
          doctest::Approx(2 * (std::sqrt(2.0) - 1) * std::sqrt(2.0) / (4 * std::log(2.0))).epsilon(1e-13));
    CHECK(eta_bound(two, 2.0, LossKind::jll) == doctest::Approx(0.4226).epsilon(1e-4));
    CHECK(eta_bound(two, 2.0, LossKind::jsl) == doctest::Approx(0.1464).epsilon(1e-3));
    CHECK(eta_one_step(2.0, 2.0, LossKind::jll) == doctest::Approx(0.2113).epsilon(1e-3));
    CHECK(eta_one_step(2.0, 2.0, LossKind::jsl) == doctest::Approx(0.0732).epsilon(1e-3));
    CHECK(eta_zero(1.0, 2.0, LossKind::jll) == doctest::Approx((2 - std::sqrt(2.0)) / (2 * std::log(2.0))));
    CHECK(eta_zero(1.0, 2.0, LossKind::jll) == doctest::Approx(eta_bound(two, 2.0, LossKind::jll)).epsilon(1e-12));
    CHECK(eta_zero(1.0, 2.0, LossKind::jsl) == doctest::Approx(eta_bound(two, 2.0, LossKind::jsl)).epsilon(1e-12));
    const std::vector<double> both{2.0, 4.0}, four{4.0};
    for (LossKind l : {LossKind::jll, LossKind::jsl}) {
      CHECK(eta_bound(both, 2.0, l) == std::min(eta_bound(two, 2.0, l), eta_bound(four, 2.0, l)));
    }
    // J = 1 is the removable point of the log ratio.
    const std::vector<double> one{1.0};
    CHECK(std::isfinite(eta_bound(one, 1.5, LossKind::jll)));
    CHECK_THROWS_AS(eta_zero(1.0, std::sqrt(2.0), LossKind::jll), Error);
  }

  TEST_CASE("large sigma_w scaling of eta_0") {
    CHECK(eta_zero(1, 8, LossKind::jsl) / eta_zero(1, 4, LossKind::jsl) == doctest::Approx(1.0 / 16).epsilon(0.2));
    CHECK(eta_zero(1, 64, LossKind::jll) / eta_zero(1, 8, LossKind::jll) ==
          doctest::Approx(std::log(8.0) / std::log(64.0)).epsilon(0.2));
  }

  TEST_CASE("updates below the bound contract monotonically") {
    for (LossKind loss : {LossKind::jll, LossKind::jsl}) {
      const std::vector<double> j0{0.3, 2.5, 4.0};
      const double eta = 0.9 * eta_bound(j0, 2.0, loss);
      const DynamicsTrajectory d = relu_dynamics(j0, 2.0, std::span<const double>(&eta, 1), 60, loss);
      for (std::size_t t = 1; t < d.j.size(); ++t) {
        for (std::size_t l = 0; l < 3; ++l) {
          CHECK(std::abs(std::sqrt(d.j[t][l]) - 1.0) <= std::abs(std::sqrt(d.j[t - 1][l]) - 1.0) + 1e-15);
        }
      }
    }
  }

  TEST_CASE("relu gradients: isolated log term, no bias updates") {
    const NetworkSpec spec = mlp(4, 100, 1.6, 0.5);
    const ParamSet p = init_params(spec, RngStream(1, 0));
    AuxScalars aux = AuxScalars::ones(spec.size());
    aux.weight[3] = 0.8;
    const Evaluation ev(spec, p, aux, batch(spec, 2, 0));
    TuneConfig cfg;
    const auto slots = aux_slots(spec, p, cfg.mask);
    const auto fd = grad_aux(ev, slots, cfg, RngStream(0, 0));
    const LossEval le = evaluate_loss(ev, cfg, RngStream(0, 0));
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const double a = slots[i].bias ? aux.bias[slots[i].block] : aux.weight[slots[i].block];
      if (slots[i].bias) {
        CHECK(std::abs(fd[i]) < 1e-6);
      } else {
        CHECK(fd[i] == doctest::Approx(2.0 / a * std::log(le.j[slots[i].group - 1])).epsilon(1e-4));
      }
    }
    cfg.grad_mode = GradMode::analytic_relu;
    const auto an = grad_aux(ev, slots, cfg, RngStream(0, 0));
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (slots[i].bias) CHECK(an[i] == 0.0);
    }
  }

  TEST_CASE("analytic mode rejects other architectures") {
    const NetworkSpec spec = mlp(2, 8, 1.0, 0.0, ActivationKind::gelu);
    const ParamSet p = init_params(spec, RngStream(0, 0));
    const Evaluation ev(spec, p, AuxScalars::ones(spec.size()), batch(spec, 2, 0));
    TuneConfig cfg;
    cfg.grad_mode = GradMode::analytic_relu;
    CHECK_THROWS_AS(grad_aux(ev, aux_slots(spec, p, cfg.mask), cfg, RngStream(0, 0)), Error);
  }

  TEST_CASE("critical network exits at t = 0") {
    const NetworkSpec spec({8}, {{Activation{ActivationKind::linear}, true}});
    const ParamSet p = init_params(spec, RngStream(0, 0));
    TuneConfig cfg;
    cfg.epsilon = 1e-9;
    const TuneResult r = tune(spec, p, batch(spec, 2, 0), cfg, RngStream(0, 0));
    CHECK(r.trace.steps.size() == 1);
    CHECK(r.converged);
    CHECK(r.spec == spec);
  }

  TEST_CASE("one-step schedule lands near J = 1") {
    const NetworkSpec spec = mlp(5, 400, 2.0, 0.0);
    const ParamSet p = init_params(spec, RngStream(2, 0));
    TuneConfig cfg;
    cfg.schedule = Schedule::one_step;
    cfg.steps = 1;
    cfg.epsilon = 0.0;
    cfg.grad_mode = GradMode::analytic_relu;
    const TuneResult r = tune(spec, p, batch(spec, 2, 1), cfg, RngStream(0, 0));
    REQUIRE(r.trace.steps.size() == 2);
    for (double j : r.trace.steps[1].j) CHECK(j == doctest::Approx(1.0).epsilon(0.15));
    for (double e : r.trace.steps[1].eta) CHECK(e == doctest::Approx(eta_one_step(2.0, 2.0, LossKind::jll)).epsilon(0.3));
  }

  TEST_CASE("return modes describe the same network") {
    const NetworkSpec spec = mlp(3, 30, 1.8, 0.2);
    const ParamSet p = init_params(spec, RngStream(3, 0));
    const Tensor x = batch(spec, 3, 2);
    TuneConfig cfg;
    cfg.eta = 0.05;
    cfg.steps = 5;
    cfg.epsilon = 0.0;
    const TuneResult a = tune(spec, p, x, cfg, RngStream(1, 0));
    cfg.return_mode = ReturnMode::freeze_aux;
    const TuneResult b = tune(spec, p, x, cfg, RngStream(1, 0));
    CHECK(b.spec == spec);
    const Tensor ya = forward_output(a.spec, a.params, a.aux, x);
    const Tensor yb = forward_output(b.spec, b.params, b.aux, x);
    for (std::size_t i = 0; i < ya.size(); ++i) CHECK(ya[i] == doctest::Approx(yb[i]).epsilon(1e-12));
    for (double v : a.aux.weight) CHECK(v == 1.0);
    CHECK(std::get<Dense>(a.spec.blocks()[1].kind).sigma_w == doctest::Approx(1.8 * b.aux.weight[1]));
  }

  TEST_CASE("divergence carries the partial trace") {
    // a_W jumps to the clamp and the activations overflow 60 layers later.
    const NetworkSpec spec = mlp(60, 16, 0.5, 0.0);
    const ParamSet p = init_params(spec, RngStream(4, 0));
    TuneConfig cfg;
    cfg.eta = 1e6;
    cfg.steps = 5;
    cfg.grad_mode = GradMode::analytic_relu;
    try {
      tune(spec, p, batch(spec, 2, 3), cfg, RngStream(0, 0));
      FAIL("expected divergence");
    } catch (const DivergenceError& e) {
      CHECK(!e.trace().steps.empty());
    }
  }

  TEST_CASE("aux scalars stay inside the clamp") {
    const NetworkSpec spec = mlp(2, 20, 3.0, 0.0);
    const ParamSet p = init_params(spec, RngStream(4, 0));
    TuneConfig cfg;
    cfg.loss = LossKind::jsl;
    cfg.eta = 1e3;
    cfg.steps = 1;
    cfg.grad_mode = GradMode::analytic_relu;
    try {
      const TuneResult r = tune(spec, p, batch(spec, 2, 3), cfg, RngStream(0, 0));
      for (double a : r.trace.steps.back().a_w) CHECK(a >= aux_min);
    } catch (const DivergenceError& e) {
      for (double a : e.trace().steps.back().a_w) CHECK(a >= aux_min);
    }
  }

  TEST_CASE("trace csv") {
    const NetworkSpec spec = mlp(2, 16, 1.7, 0.0);
    const ParamSet p = init_params(spec, RngStream(5, 0));
    TuneConfig cfg;
    cfg.steps = 3;
    cfg.epsilon = 0.0;
    const TuneResult r = tune(spec, p, batch(spec, 2, 1), cfg, RngStream(0, 0));
    std::ostringstream os;
    write_trace_csv(os, r.trace);
    std::istringstream in(os.str());
    std::string header;
    std::getline(in, header);
    CHECK(header == "t,loss,J_1,J_2,aW_1,aW_2,ab_1,ab_2,eta");
    std::size_t rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    CHECK(rows == 4);
  }

  TEST_CASE("fresh batches are drawn per step") {
    const NetworkSpec spec = mlp(2, 16, 1.7, 0.0);
    const ParamSet p = init_params(spec, RngStream(5, 0));
    TuneConfig cfg;
    cfg.steps = 3;
    cfg.epsilon = 0.0;
    cfg.fresh_batch = true;
    std::vector<std::size_t> seen;
    const BatchSource src = [&](std::size_t t) {
      seen.push_back(t);
      return batch(spec, 2, 100 + t);
    };
    tune(spec, p, Tensor(), cfg, RngStream(0, 0), src);
    CHECK(seen.size() == 4);
    CHECK_THROWS_AS(tune(spec, p, Tensor(), cfg, RngStream(0, 0)), Error);
  }

  TEST_CASE("tuning restores the gradient ratio of a deep ordered network") {
    const NetworkSpec spec = mlp(20, 200, 1.0, 1.0);
    const ParamSet p = init_params(spec, RngStream(6, 0));
    const Tensor x = batch(spec, 4, 5);
    const double before = gradient_norm_ratio(Evaluation(spec, p, AuxScalars::ones(spec.size()), x));
    TuneConfig cfg;
    cfg.schedule = Schedule::one_step;
    cfg.steps = 3;
    cfg.epsilon = 0.0;
    cfg.grad_mode = GradMode::analytic_relu;
    cfg.return_mode = ReturnMode::freeze_aux;
    const TuneResult r = tune(spec, p, x, cfg, RngStream(0, 0));
    const double after = gradient_norm_ratio(Evaluation(spec, p, r.aux, x));
    CHECK(before < 0.1);
    CHECK(after > 0.1);
    CHECK(after < 10.0);
  }

  TEST_CASE("config validation and names") {
    TuneConfig cfg;
    cfg.steps = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = {};
    cfg.loss = LossKind::jkl;
    cfg.schedule = Schedule::relu_bound;
    CHECK_THROWS_AS(cfg.validate(), Error);
    for (Schedule s : {Schedule::constant, Schedule::relu_bound, Schedule::one_step}) CHECK(parse_schedule(to_string(s)) == s);
    for (LossKind l : {LossKind::jll, LossKind::jsl, LossKind::jkl}) CHECK(parse_loss(to_string(l)) == l);
  }
}
