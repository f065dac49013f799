#include "crit/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>

#include "crit/apjn.hpp"
#include "crit/blocks.hpp"
#include "crit/error.hpp"
#include "crit/losses.hpp"
#include "crit/meanfield.hpp"
#include "crit/tuner.hpp"

namespace crit {

namespace {

using std::numbers::pi;

template <class T>
T pick(const VerifyOptions& o, T full, T quick) {
  return o.quick ? quick : full;
}

std::string num(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<std::pair<std::size_t, std::size_t>> adjacent_pairs(const NetworkSpec& spec) {
  return profile_pairs(spec.groups(), 1);
}

Tensor batch_for(const NetworkSpec& spec, std::size_t B, const RngStream& rng) {
  RngStream r = rng;
  return gaussian_batch(spec, B, r);
}

struct Ctx {
  SuiteResult r;
  bool ok = true;

  void metric(const std::string& k, double v) { r.metrics.emplace_back(k, v); }
  void check(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (!r.detail.empty()) r.detail += "; ";
      r.detail += "FAILED " + what;
    }
  }
  void note(const std::string& s) {
    if (!r.detail.empty()) r.detail += "; ";
    r.detail += s;
  }
};

// 1. J^{l,l+1} of a ReLU MLP against (a_W s_w)^2 / 2.
void relu_criticality(Ctx& c, const VerifyOptions& o) {
  const std::size_t width = pick<std::size_t>(o, 500, 200);
  const std::size_t draws = pick<std::size_t>(o, 20, 5);
  const double tol = pick(o, 0.05, 0.1);
  for (double sw : {1.0, std::numbers::sqrt2, 2.0}) {
    const NetworkSpec spec = mlp(10, width, sw, 0.0);
    const RngStream root(o.seed, 100);
    const Tensor x = batch_for(spec, 4, root.split(1));
    ApjnOptions opt;
    const Measurement m = measure_network(spec, x, adjacent_pairs(spec), opt, draws, root.split(2));
    double worst = 0.0;
    for (const auto& p : m.report.pairs) worst = std::max(worst, std::abs(p.value / (sw * sw / 2.0) - 1.0));
    c.metric("max_rel_dev_sw" + num(sw, 3), worst);
    c.check(worst <= tol, "sigma_w=" + num(sw) + " max |J/(s^2/2)-1| = " + num(worst));
    c.note("sigma_w=" + num(sw, 3) + ": " + num(worst, 3));
  }
}

// 2. One step with per-layer eta_1-step lands every J(1) in [0.95, 1.05].
void one_step(Ctx& c, const VerifyOptions& o) {
  const std::size_t width = pick<std::size_t>(o, 500, 200);
  const std::size_t draws = pick<std::size_t>(o, 10, 3);
  const double tol = pick(o, 0.05, 0.1);
  for (LossKind loss : {LossKind::jll, LossKind::jsl}) {
    const NetworkSpec spec = mlp(10, width, 2.0, 0.0);
    std::vector<double> mean(spec.groups(), 0.0);
    double single_lo = 1e9, single_hi = 0.0;
    for (std::size_t s = 0; s < draws; ++s) {
      const RngStream root(o.seed, 200 + s);
      const ParamSet params = init_params(spec, root.split(0));
      const Tensor x = batch_for(spec, 1, root.split(1));
      TuneConfig cfg;
      cfg.loss = loss;
      cfg.schedule = Schedule::one_step;
      cfg.steps = 1;
      cfg.epsilon = 0.0;
      const TuneResult res = tune(spec, params, x, cfg, root.split(2));
      const auto& j1 = res.trace.steps.at(1).j;
      for (std::size_t l = 0; l < j1.size(); ++l) {
        mean[l] += j1[l] / double(draws);
        single_lo = std::min(single_lo, j1[l]);
        single_hi = std::max(single_hi, j1[l]);
      }
    }
    const auto [lo, hi] = std::minmax_element(mean.begin(), mean.end());
    const std::string tag(to_string(loss));
    c.metric(tag + "_min", *lo);
    c.metric(tag + "_max", *hi);
    c.check(*lo >= 1.0 - tol && *hi <= 1.0 + tol, tag + " J(1) range [" + num(*lo) + ", " + num(*hi) + "]");
    c.note(tag + " mean J(1) in [" + num(*lo) + ", " + num(*hi) + "], single draws [" + num(single_lo) + ", " +
           num(single_hi) + "]");
  }
}

// 3. eta x sigma_w grid: empirical convergence against the iterated ReLU map.
void convergence_band(Ctx& c, const VerifyOptions& o) {
  const std::size_t width = pick<std::size_t>(o, 500, 100);
  const std::size_t steps = pick<std::size_t>(o, 980, 200);
  const std::vector<double> sigmas = {1.0, 2.0, 3.0};
  const std::vector<double> etas = {0.05, 0.1, 0.2, 0.4};
  const std::size_t depth = 10;
  auto in_band = [](const std::vector<double>& j) {
    return std::all_of(j.begin(), j.end(), [](double v) { return v > 0.8 && v < 1.25; });
  };
  std::vector<std::vector<int>> pred(sigmas.size()), emp(sigmas.size());
  std::size_t converged = 0, failed = 0;
  for (std::size_t a = 0; a < sigmas.size(); ++a) {
    const double sw = sigmas[a];
    const NetworkSpec spec = mlp(depth, width, sw, 0.0);
    for (std::size_t b = 0; b < etas.size(); ++b) {
      const double eta = etas[b];
      const std::vector<double> j0(spec.groups(), sw * sw / 2.0);
      const DynamicsTrajectory d = relu_dynamics(j0, sw, std::span<const double>(&eta, 1), steps, LossKind::jll);
      pred[a].push_back(!d.diverged() && in_band(d.j.back()));

      const RngStream root(o.seed, 300 + a * etas.size() + b);
      const ParamSet params = init_params(spec, root.split(0));
      const Tensor x = batch_for(spec, 8, root.split(1));
      TuneConfig cfg;
      cfg.eta = eta;
      cfg.steps = steps;
      cfg.epsilon = 0.0;
      cfg.grad_mode = GradMode::analytic_relu;
      cfg.return_mode = ReturnMode::freeze_aux;
      cfg.apjn.method = ApjnMethod::estimated;
      cfg.apjn.n_v = 5;
      bool ok = false;
      try {
        const TuneResult res = tune(spec, params, x, cfg, root.split(2));
        const Evaluation ev(spec, params, res.aux, x);
        std::vector<double> j;
        for (std::size_t g = 1; g <= spec.groups(); ++g) j.push_back(ev.exact(g - 1, g));
        ok = in_band(j);
      } catch (const DivergenceError&) {
        ok = false;
      }
      emp[a].push_back(ok);
      (ok ? converged : failed) += 1;
    }
  }
  // A disagreement is tolerated only next to a predicted boundary.
  std::size_t mismatches = 0, far = 0;
  std::string grid;
  for (std::size_t a = 0; a < sigmas.size(); ++a) {
    grid += (a ? " " : "") + std::string("s") + num(sigmas[a], 2) + ":";
    for (std::size_t b = 0; b < etas.size(); ++b) {
      grid += emp[a][b] ? (pred[a][b] ? "C" : "c") : (pred[a][b] ? "x" : "X");
      if (emp[a][b] == pred[a][b]) continue;
      ++mismatches;
      const bool near = (b > 0 && pred[a][b - 1] != pred[a][b]) || (b + 1 < etas.size() && pred[a][b + 1] != pred[a][b]);
      if (!near) ++far;
    }
  }
  c.metric("mismatches", double(mismatches));
  c.metric("far_mismatches", double(far));
  c.check(converged > 0 && failed > 0, "grid must contain converged and failed points");
  c.check(far == 0, std::to_string(far) + " disagreements away from the predicted boundary");
  c.note("grid (C/X agree, c/x disagree) " + grid + ", eta in {0.05,0.1,0.2,0.4}");
}

// 4. Tuner J(t) against iterating the ReLU map from the same J(0).
void relu_dynamics_match(Ctx& c, const VerifyOptions& o) {
  const std::size_t width = pick<std::size_t>(o, 500, 200);
  const std::size_t steps = pick<std::size_t>(o, 50, 20);
  const double tol = pick(o, 0.02, 0.04);
  const double sw = 1.5, eta = 0.05;
  const NetworkSpec spec = mlp(10, width, sw, 0.0);
  const RngStream root(o.seed, 400);
  const ParamSet params = init_params(spec, root.split(0));
  const Tensor x = batch_for(spec, 1, root.split(1));
  TuneConfig cfg;
  cfg.eta = eta;
  cfg.steps = steps;
  cfg.epsilon = 0.0;
  const TuneResult res = tune(spec, params, x, cfg, root.split(2));
  const auto hist = res.trace.j_history();
  const DynamicsTrajectory d = relu_dynamics(hist.front(), sw, std::span<const double>(&eta, 1), steps, LossKind::jll);
  double worst = 0.0;
  for (std::size_t t = 0; t < hist.size(); ++t) {
    for (std::size_t l = 0; l < hist[t].size(); ++l) worst = std::max(worst, std::abs(hist[t][l] / d.j[t][l] - 1.0));
  }
  c.metric("max_rel_dev", worst);
  c.check(hist.size() == steps + 1, "tuner stopped early");
  c.check(worst <= tol, "max |J_tuner/J_map - 1| = " + num(worst));
  c.note("sigma_w=1.5 eta=0.05: max rel deviation " + num(worst, 3) + " over " + std::to_string(hist.size()) +
         " steps");
}

// Mean J^{l-1,l} of the last Pre-BN block over parameter draws.
double bn_last_block(double sw, double sb, double mu, std::size_t width, std::size_t depth, std::size_t B,
                     std::size_t draws, std::uint64_t seed, std::uint64_t stream, std::size_t n_v,
                     std::size_t prefix = 0) {
  const NetworkSpec spec = prebn_resmlp(depth, width, sw, sb, mu);
  double acc = 0.0;
  for (std::size_t s = 0; s < draws; ++s) {
    const RngStream root(seed, stream + s);
    const ParamSet params = init_params(spec, root.split(0));
    Tensor x = batch_for(spec, prefix ? prefix : B, root.split(1));
    if (prefix && B < prefix) {
      std::vector<double> head(x.data().begin(), x.data().begin() + std::ptrdiff_t(B * width));
      x = Tensor({B, width}, std::move(head));
    }
    const Evaluation ev(spec, params, AuxScalars::ones(spec.size()), x);
    RngStream probes = root.split(2);
    acc += ev.estimate(depth - 1, depth, n_v, probes, ProbeMode::independent).value;
  }
  return acc / double(draws);
}

const std::vector<std::pair<double, double>>& bn_grid() {
  static const std::vector<std::pair<double, double>> g = {{0.5, 0.0}, {0.5, 2.0}, {1.5, 1.0},
                                                           {2.0, 0.5}, {3.0, 0.0}, {3.0, 2.0}};
  return g;
}

// 5. mu = 0: last-block APJN against pi / (pi - 1).
void bn_chaos(Ctx& c, const VerifyOptions& o) {
  const std::size_t width = pick<std::size_t>(o, 500, 200);
  const std::size_t B = pick<std::size_t>(o, 256, 64);
  const std::size_t draws = pick<std::size_t>(o, 20, 4);
  const double tol = pick(o, 0.05, 0.1);
  const double target = pi / (pi - 1.0);
  const std::size_t points = pick<std::size_t>(o, bn_grid().size(), 2);
  double worst = 0.0;
  std::string vals;
  for (std::size_t i = 0; i < points; ++i) {
    const auto [sw, sb] = bn_grid()[i];
    const double j = bn_last_block(sw, sb, 0.0, width, 31, B, draws, o.seed, 500 + 100 * i, 10);
    worst = std::max(worst, std::abs(j / target - 1.0));
    vals += (i ? " " : "") + num(j);
  }
  c.metric("max_rel_dev", worst);
  c.check(worst <= tol, "max |J/(pi/(pi-1)) - 1| = " + num(worst));
  c.note("target " + num(target, 6) + ", J^{30,31} = " + vals);
}

// 6. mu = 1: last-block APJN within 0.05 of 1.
void bn_residual(Ctx& c, const VerifyOptions& o) {
  const std::size_t width = pick<std::size_t>(o, 500, 200);
  const std::size_t B = pick<std::size_t>(o, 256, 64);
  const std::size_t draws = pick<std::size_t>(o, 20, 4);
  const double tol = pick(o, 0.05, 0.08);
  const std::size_t points = pick<std::size_t>(o, bn_grid().size(), 2);
  double worst = 0.0;
  std::string vals, preds;
  for (std::size_t i = 0; i < points; ++i) {
    const auto [sw, sb] = bn_grid()[i];
    const double j = bn_last_block(sw, sb, 1.0, width, 31, B, draws, o.seed, 1500 + 100 * i, 10);
    MeanFieldState st;
    st.sigma_w = sw;
    st.sigma_b = sb;
    st.mu = 1.0;
    const double p = bn_apjn_limit(1.0, ActivationKind::relu, bn_kernel_after(st, ActivationKind::relu, 30));
    worst = std::max(worst, std::abs(j - 1.0));
    vals += (i ? " " : "") + num(j);
    preds += (i ? " " : "") + num(p);
  }
  c.metric("max_abs_dev", worst);
  c.check(worst <= tol, "max |J - 1| = " + num(worst));
  c.note("J^{30,31} = " + vals + " (limit formula " + preds + ")");
}

// 7. Batch-size dependence of the mu = 0 last-block APJN.
void bn_batch_size(Ctx& c, const VerifyOptions& o) {
  const std::size_t width = pick<std::size_t>(o, 500, 200);
  const std::size_t draws = pick<std::size_t>(o, 20, 4);
  const double tol = pick(o, 0.01, 0.03);
  const std::vector<std::size_t> sizes = o.quick ? std::vector<std::size_t>{16, 32, 64}
                                                 : std::vector<std::size_t>{32, 128, 256};
  std::vector<double> j;
  for (std::size_t B : sizes) {
    j.push_back(bn_last_block(1.5, 0.5, 0.0, width, 31, B, draws, o.seed, 2500, 10, sizes.back()));
  }
  const double rel = std::abs(j[1] - j[2]) / j[2];
  c.metric("rel_diff", rel);
  c.check(rel < tol, "|J(" + std::to_string(sizes[1]) + ") - J(" + std::to_string(sizes[2]) + ")| / J = " + num(rel));
  c.note("J at |B| = " + std::to_string(sizes[0]) + "/" + std::to_string(sizes[1]) + "/" +
         std::to_string(sizes[2]) + ": " + num(j[0]) + " " + num(j[1]) + " " + num(j[2]));
}

// 8. Toy ResMLP block APJN against the closed forms.
void resmlp(Ctx& c, const VerifyOptions& o) {
  const std::size_t draws = pick<std::size_t>(o, 16, 4);
  const double tol = pick(o, 0.10, 0.2);
  double worst = 0.0;
  std::size_t idx = 0;
  std::string vals;
  for (ActivationKind act : {ActivationKind::gelu, ActivationKind::relu}) {
    for (double mu : {0.0, 1.0}) {
      for (double eps : {0.1, 1.0}) {
        for (double sw : {1.0, 2.0}) {
          ++idx;
          if (o.quick && idx % 4 != 1) continue;
          ResMlpOptions ro;
          ro.mu = mu;
          ro.eps_ls = eps;
          ro.sigma_w = sw;
          ro.act = act;
          const NetworkSpec spec = resmlp_toy(ro);
          double j = 0.0, k = 0.0;
          for (std::size_t s = 0; s < draws; ++s) {
            const RngStream root(o.seed, 3000 + 100 * idx + s);
            const ParamSet params = init_params(spec, root.split(0));
            const Tensor x = batch_for(spec, 2, root.split(1));
            const Evaluation ev(spec, params, AuxScalars::ones(spec.size()), x);
            j += ev.exact(1, 2) / double(draws);
            k += ev.kernel(1) / double(draws);
          }
          const double p = resmlp_apjn(k, sw, 0.0, mu, eps, act);
          const double dev = std::abs(j / p - 1.0);
          worst = std::max(worst, dev);
          if (dev > tol) {
            c.check(false, std::string(to_string(act)) + " mu=" + num(mu) + " eps=" + num(eps) + " sw=" + num(sw) +
                               ": J=" + num(j) + " vs " + num(p));
          }
          vals += (vals.empty() ? "" : " ") + num(j / p, 3);
        }
      }
    }
  }
  c.metric("max_rel_dev", worst);
  c.note("J/closed-form = " + vals);
}

// 9. Estimator mean against exact APJN, and stderr scaling with N_v.
void estimator(Ctx& c, const VerifyOptions& o) {
  const std::size_t width = pick<std::size_t>(o, 64, 32);
  const std::size_t nv = o.n_v ? o.n_v : pick<std::size_t>(o, 1000, 400);
  const NetworkSpec spec = mlp(4, width, std::numbers::sqrt2, 0.1);
  const RngStream root(o.seed, 4000);
  const ParamSet params = init_params(spec, root.split(0));
  const Tensor x = batch_for(spec, 8, root.split(1));
  const Evaluation ev(spec, params, AuxScalars::ones(spec.size()), x);
  const double exact = ev.exact(0, spec.groups());
  RngStream pr = root.split(2);
  const ApjnEstimate e = ev.estimate(0, spec.groups(), nv, pr);
  const double z = std::abs(e.value - exact) / e.stderr_;
  c.metric("z", z);
  c.check(z <= 3.0, "|mean - exact| = " + num(z) + " stderr");
  std::vector<double> ratios;
  for (std::size_t rep = 0; rep < 5; ++rep) {
    RngStream a = root.split(10 + rep), b = root.split(20 + rep);
    const double s_small = ev.estimate(0, spec.groups(), nv / 4, a).stderr_;
    const double s_big = ev.estimate(0, spec.groups(), nv, b).stderr_;
    ratios.push_back(s_small / s_big);
  }
  const double ratio = median(ratios);
  c.metric("stderr_ratio", ratio);
  c.check(std::abs(ratio / 2.0 - 1.0) <= 0.2, "stderr ratio for 4x N_v = " + num(ratio));
  c.note("exact " + num(exact, 6) + ", estimate " + num(e.value, 6) + " +- " + num(e.stderr_, 3) + " (z=" + num(z, 3) +
         "), stderr ratio " + num(ratio, 3));
}

// 10. Relative factorization residual against width.
void factorization(Ctx& c, const VerifyOptions& o) {
  std::vector<std::size_t> widths = o.quick ? std::vector<std::size_t>{50, 100, 200}
                                            : std::vector<std::size_t>{100, 300, 1000};
  if (o.width) widths = {o.width};
  const std::size_t draws = pick<std::size_t>(o, 20, 6);
  std::vector<double> med;
  std::string vals;
  for (std::size_t w : widths) {
    const NetworkSpec spec = mlp(4, w, std::numbers::sqrt2, 0.0);
    std::vector<double> res;
    for (std::size_t s = 0; s < draws; ++s) {
      const RngStream root(o.seed, 5000 + 10 * w + s);
      const ParamSet params = init_params(spec, root.split(0));
      const Tensor x = batch_for(spec, 2, root.split(1));
      res.push_back(factorization_residual(spec, params, AuxScalars::ones(spec.size()), x, 1));
    }
    med.push_back(median(res));
    vals += (vals.empty() ? "" : " ") + std::to_string(w) + ":" + num(med.back(), 3);
  }
  c.metric("residual_widest", med.back());
  c.check(med.back() <= 0.05, "median residual at width " + std::to_string(widths.back()) + " = " + num(med.back()));
  for (std::size_t i = 1; i < med.size(); ++i) c.check(med[i] < med[i - 1], "residual does not decrease with width");
  c.note("median residual " + vals);
}

// 11. chi_Delta for ReLU.
void chi_delta(Ctx& c, const VerifyOptions& o) {
  MeanFieldState st;
  st.K_diag = 1.0;
  st.sigma_w = std::numbers::sqrt2;
  const double analytic = chi(st, ActivationKind::relu).chi_delta;
  RngStream rng(o.seed, 6000);
  const MonteCarloResult mc = chi_delta_monte_carlo(st, ActivationKind::relu, pick<std::size_t>(o, 1000000, 200000), rng);
  c.metric("analytic", analytic);
  c.metric("monte_carlo", mc.mean);
  c.check(analytic == 0.0, "analytic chi_Delta = " + num(analytic));
  c.check(std::abs(mc.mean) < 1e-2, "Monte Carlo chi_Delta = " + num(mc.mean));
  c.note("analytic " + num(analytic) + ", Monte Carlo " + num(mc.mean, 3) + " +- " + num(mc.stderr_, 2));
}

// 12. ReLU NNGP fixed point at sigma_w = sigma_b = 1.
void kernel_fixed_point(Ctx& c, const VerifyOptions&) {
  MeanFieldState st;
  st.K_diag = 1.0;
  st.K_off = 0.0;
  st.sigma_w = 1.0;
  st.sigma_b = 1.0;
  std::size_t it = 0;
  while (it < 200 && std::abs(st.K_diag - 2.0) >= 1e-6) {
    st = nngp_step(st, ActivationKind::relu);
    ++it;
  }
  c.metric("iterations", double(it));
  c.check(std::abs(st.K_diag - 2.0) < 1e-6, "K = " + num(st.K_diag, 10) + " after 200 iterations");
  c.note("K = " + num(st.K_diag, 10) + " after " + std::to_string(it) + " iterations");
}

// 13. Large-sigma_w scaling of eta_0.
void lr_scaling(Ctx& c, const VerifyOptions&) {
  const double jsl_a = eta_zero(1.0, 8.0, LossKind::jsl) / eta_zero(1.0, 4.0, LossKind::jsl) / std::pow(2.0, -4);
  const double jsl_b = eta_zero(1.0, 64.0, LossKind::jsl) / eta_zero(1.0, 8.0, LossKind::jsl) / std::pow(8.0, -4);
  const double jll_a = eta_zero(1.0, 8.0, LossKind::jll) / eta_zero(1.0, 4.0, LossKind::jll) /
                       (std::log(4.0) / std::log(8.0));
  const double jll_b = eta_zero(1.0, 64.0, LossKind::jll) / eta_zero(1.0, 8.0, LossKind::jll) /
                       (std::log(8.0) / std::log(64.0));
  for (auto [name, v] : {std::pair{"jsl_8_4", jsl_a}, {"jsl_64_8", jsl_b}, {"jll_8_4", jll_a}, {"jll_64_8", jll_b}}) {
    c.metric(name, v);
    c.check(std::abs(v - 1.0) <= 0.2, std::string(name) + " ratio/expected = " + num(v));
  }
  c.note("ratio/expected: JSL " + num(jsl_a, 3) + " " + num(jsl_b, 3) + ", JLL " + num(jll_a, 3) + " " +
         num(jll_b, 3));
}

// 14. JKL == (1 + lambda) JLL for ReLU, sigma_b = 0, on mean-field profiles.
void jkl_equivalence(Ctx& c, const VerifyOptions& o) {
  RngStream rng(o.seed, 7000);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.next_u64() % 12;
    const double lambda = 2.0 * rng.uniform();
    MeanFieldState st;
    st.K_diag = 0.2 + 2.0 * rng.uniform();
    std::vector<double> j, k{st.K_diag};
    for (std::size_t l = 0; l < n; ++l) {
      st.sigma_w = 0.5 + 2.5 * rng.uniform();
      st.a_w = 0.5 + rng.uniform();
      j.push_back(std::pow(st.a_w * st.sigma_w, 2) * ActivationStats{ActivationKind::relu}.d1_sq(st.K_diag));
      st = nngp_step(st, ActivationKind::relu);
      k.push_back(st.K_diag);
    }
    for (PairRange r : {PairRange::include_io, PairRange::interior_only}) {
      const double a = jkl(j, k, lambda, r).total;
      const std::size_t first = r == PairRange::interior_only ? 1 : 0;
      const double b = (1.0 + lambda) * jll(std::span<const double>(j).subspan(first)).total;
      if (b > 0.0) worst = std::max(worst, std::abs(a - b) / b);
    }
  }
  c.metric("max_rel_dev", worst);
  c.check(worst <= 1e-10, "max relative deviation " + num(worst));
  c.note("100 random profiles, max relative deviation " + num(worst, 3));
}

// 15. Finite-difference JLL gradient against (2 / a_W) log J.
void gradient(Ctx& c, const VerifyOptions& o) {
  const std::size_t width = pick<std::size_t>(o, 500, 100);
  double worst = 0.0;
  int net = 0;
  for (double sw : {1.5, 2.0}) {
    const NetworkSpec spec = mlp(6, width, sw, 0.0);
    const RngStream root(o.seed, 8000 + net++);
    const ParamSet params = init_params(spec, root.split(0));
    const Tensor x = batch_for(spec, 2, root.split(1));
    AuxScalars aux = AuxScalars::ones(spec.size());
    if (sw == 2.0) {
      RngStream r = root.split(3);
      for (auto& a : aux.weight) a = 0.5 + r.uniform();
    }
    const Evaluation ev(spec, params, aux, x);
    TuneConfig cfg;
    const auto slots = aux_slots(spec, params, cfg.mask);
    const auto fd = grad_aux(ev, slots, cfg, root.split(2));
    cfg.grad_mode = GradMode::analytic_relu;
    const auto an = grad_aux(ev, slots, cfg, root.split(2));
    for (std::size_t i = 0; i < slots.size(); ++i) worst = std::max(worst, std::abs(fd[i] - an[i]) / std::abs(an[i]));
  }
  c.metric("max_rel_dev", worst);
  c.check(worst <= 1e-3, "max relative deviation " + num(worst));
  c.note("max relative FD/analytic deviation " + num(worst, 3));
}

// Quadrature expectations against Monte Carlo.
void quadrature(Ctx& c, const VerifyOptions& o) {
  RngStream rng(o.seed, 9000);
  const std::size_t n = pick<std::size_t>(o, 1000000, 200000);
  double worst = 0.0;
  for (ActivationKind act : {ActivationKind::gelu, ActivationKind::tanh, ActivationKind::relu}) {
    for (double K : {0.5, 1.0, 2.0}) {
      const ActivationStats st{act};
      const auto m1 = monte_carlo_expectation([act](double h) { return std::pow(activate(act, h), 2); }, K, n, rng);
      const auto m2 = monte_carlo_expectation([act](double h) { return std::pow(activate_d1(act, h), 2); }, K, n, rng);
      const double z1 = std::abs(m1.mean - st.phi_sq(K)) / m1.stderr_;
      const double z2 = std::abs(m2.mean - st.d1_sq(K)) / m2.stderr_;
      worst = std::max({worst, z1, z2});
    }
  }
  MeanFieldState s;
  s.K_diag = 1.0;
  const auto mc = chi_delta_monte_carlo(s, ActivationKind::gelu, n, rng);
  const double zc = std::abs(mc.mean - chi(s, ActivationKind::gelu).chi_delta) / mc.stderr_;
  worst = std::max(worst, zc);
  c.metric("max_z", worst);
  c.check(worst <= 3.0, "largest deviation " + num(worst) + " standard errors");
  c.note("largest deviation " + num(worst, 3) + " standard errors");
}

using SuiteFn = void (*)(Ctx&, const VerifyOptions&);

const std::vector<std::pair<std::string, SuiteFn>>& registry() {
  static const std::vector<std::pair<std::string, SuiteFn>> r = {
      {"relu-criticality", relu_criticality},
      {"one-step", one_step},
      {"convergence-band", convergence_band},
      {"relu-dynamics", relu_dynamics_match},
      {"bn-chaos", bn_chaos},
      {"bn-residual", bn_residual},
      {"bn-batch-size", bn_batch_size},
      {"resmlp", resmlp},
      {"estimator", estimator},
      {"factorization", factorization},
      {"chi-delta", chi_delta},
      {"kernel-fixed-point", kernel_fixed_point},
      {"lr-scaling", lr_scaling},
      {"jkl-equivalence", jkl_equivalence},
      {"gradient", gradient},
      {"quadrature", quadrature},
  };
  return r;
}

}  // namespace

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [n, f] : registry()) v.push_back(n);
    return v;
  }();
  return names;
}

SuiteResult run_suite(std::string_view name, const VerifyOptions& opt) {
  for (const auto& [n, f] : registry()) {
    if (n != name) continue;
    Ctx c;
    c.r.name = n;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      f(c, opt);
    } catch (const std::exception& e) {
      c.ok = false;
      c.note(std::string("error: ") + e.what());
    }
    c.r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.r.passed = c.ok;
    return c.r;
  }
  throw InvalidArgument("unknown verify suite '" + std::string(name) + "'");
}

std::vector<SuiteResult> run_suites(const std::vector<std::string>& names, const VerifyOptions& opt) {
  std::vector<std::string> todo;
  for (const auto& n : names) {
    if (n == "all") {
      todo.insert(todo.end(), suite_names().begin(), suite_names().end());
    } else {
      if (std::find(suite_names().begin(), suite_names().end(), n) == suite_names().end()) {
        throw InvalidArgument("unknown verify suite '" + n + "'");
      }
      todo.push_back(n);
    }
  }
  std::vector<SuiteResult> out;
  for (const auto& n : todo) out.push_back(run_suite(n, opt));
  return out;
}

}  // namespace crit
