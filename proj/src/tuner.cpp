#include "crit/tuner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>

#include "format.hpp"

namespace crit {

namespace {

constexpr double nan_v = std::numeric_limits<double>::quiet_NaN();

bool is_zero(const Tensor& t) {
  for (double v : t.data()) {
    if (v != 0.0) return false;
  }
  return true;
}

bool is_linear_kind(const BlockKind& k) {
  return std::holds_alternative<Dense>(k) || std::holds_alternative<Conv2d>(k) ||
         std::holds_alternative<PatchEmbed>(k);
}

double sigma_w_of(const BlockKind& k) {
  if (auto* d = std::get_if<Dense>(&k)) return d->sigma_w;
  if (auto* c = std::get_if<Conv2d>(&k)) return c->sigma_w;
  if (auto* p = std::get_if<PatchEmbed>(&k)) return p->sigma_w;
  return nan_v;
}

// First linear layer of group g, or the first weighted layer if none.
std::ptrdiff_t representative(const NetworkSpec& spec, std::size_t g) {
  std::ptrdiff_t fallback = -1;
  for (std::size_t b = spec.group_begin(g); b < spec.group_end(g); ++b) {
    const BlockKind& k = spec.blocks()[b].kind;
    if (is_linear_kind(k)) return std::ptrdiff_t(b);
    if (fallback < 0 && has_weight(k)) fallback = std::ptrdiff_t(b);
  }
  return fallback;
}

double group_sigma_w(const NetworkSpec& spec, std::size_t g) {
  for (std::size_t b = spec.group_begin(g); b < spec.group_end(g); ++b) {
    const double s = sigma_w_of(spec.blocks()[b].kind);
    if (!std::isnan(s)) return s;
  }
  throw InvalidArgument("group " + std::to_string(g) + " has no linear layer for the ReLU rate schedule");
}

double loss_value(const std::vector<double>& j, const std::vector<double>& k, const TuneConfig& cfg) {
  for (double v : j) {
    if (!(v > 0.0) || !std::isfinite(v)) return nan_v;
  }
  switch (cfg.loss) {
    case LossKind::jll: return jll(j).total;
    case LossKind::jsl: return jsl(j).total;
    case LossKind::jkl:
      for (double v : k) {
        if (!(v > 0.0) || !std::isfinite(v)) return nan_v;
      }
      return jkl(j, k, cfg.lambda, cfg.range).total;
  }
  return nan_v;
}

// Recomputes the pairs and kernels touched by groups >= first_group.
LossEval evaluate_from(const Evaluation& eval, const LossEval* base, std::size_t first_group, const TuneConfig& cfg,
                       const RngStream& rng) {
  const std::size_t G = eval.spec().groups();
  LossEval out;
  if (base) {
    out = *base;
  } else {
    out.j.assign(G, nan_v);
    out.j_stderr.assign(G, nan_v);
    out.kernels.assign(G + 1, nan_v);
    first_group = 1;
  }
  for (std::size_t g = first_group; g <= G; ++g) {
    RngStream r = rng.split(g);
    const ApjnPair p = eval.measure(g - 1, g, cfg.apjn, r);
    out.j[g - 1] = p.value;
    out.j_stderr[g - 1] = p.stderr_;
  }
  if (cfg.loss == LossKind::jkl) {
    for (std::size_t l = base ? first_group : 0; l <= G; ++l) out.kernels[l] = eval.kernel(l);
  }
  out.loss = loss_value(out.j, out.kernels, cfg);
  return out;
}

AuxScalars perturbed(const AuxScalars& aux, const AuxSlot& s, double factor) {
  AuxScalars a = aux;
  (s.bias ? a.bias : a.weight)[s.block] *= factor;
  return a;
}

double slot_value(const AuxScalars& aux, const AuxSlot& s) { return (s.bias ? aux.bias : aux.weight)[s.block]; }

void check_relu_mlp(const NetworkSpec& spec) {
  for (std::size_t g = 1; g <= spec.groups(); ++g) {
    const std::size_t b0 = spec.group_begin(g), b1 = spec.group_end(g);
    const auto* act = std::get_if<Activation>(&spec.blocks()[b0].kind);
    if (b1 - b0 != 2 || !act || act->kind != ActivationKind::relu ||
        !std::holds_alternative<Dense>(spec.blocks()[b0 + 1].kind)) {
      throw InvalidArgument("analytic-relu gradients need every group to be ReLU -> Dense");
    }
  }
}

std::vector<double> grad_from(const Evaluation& eval, const LossEval& base, const std::vector<AuxSlot>& slots,
                              const TuneConfig& cfg, const RngStream& rng) {
  std::vector<double> grad(slots.size(), 0.0);
  if (cfg.grad_mode == GradMode::analytic_relu) {
    check_relu_mlp(eval.spec());
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const AuxSlot& s = slots[i];
      if (s.bias) {
        if (cfg.loss == LossKind::jkl) throw InvalidArgument("analytic-relu JKL gradients need sigma_b = 0");
        continue;
      }
      const double a = slot_value(eval.aux(), s);
      const double j = base.j[s.group - 1];
      switch (cfg.loss) {
        case LossKind::jll: grad[i] = 2.0 / a * std::log(j); break;
        case LossKind::jsl: grad[i] = 2.0 / a * (j - 1.0) * j; break;
        case LossKind::jkl:
          if (cfg.range == PairRange::interior_only && s.group == 1) break;
          grad[i] = 2.0 / a *
                    (std::log(j) + cfg.lambda * std::log(base.kernels[s.group] / base.kernels[s.group - 1]));
          break;
      }
    }
    return grad;
  }
  const double h = cfg.fd_step;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const AuxSlot& s = slots[i];
    const double a = slot_value(eval.aux(), s);
    const Evaluation up = eval.with_aux(perturbed(eval.aux(), s, 1.0 + h), s.group);
    const Evaluation dn = eval.with_aux(perturbed(eval.aux(), s, 1.0 - h), s.group);
    const double lp = evaluate_from(up, &base, s.group, cfg, rng).loss;
    const double lm = evaluate_from(dn, &base, s.group, cfg, rng).loss;
    if (!std::isfinite(lp) || !std::isfinite(lm)) {
      throw DivergenceError("finite-difference loss is not finite", {});
    }
    grad[i] = (lp - lm) / (2.0 * a * h);
  }
  return grad;
}

std::vector<double> rates(const TuneConfig& cfg, const NetworkSpec& spec, const std::vector<double>& j) {
  const std::size_t G = spec.groups();
  if (cfg.schedule == Schedule::constant) return std::vector<double>(G, cfg.eta);
  if (cfg.loss == LossKind::jkl) throw InvalidArgument("ReLU rate schedules support JLL and JSL only");
  std::vector<double> eta(G);
  if (cfg.schedule == Schedule::one_step) {
    for (std::size_t g = 1; g <= G; ++g) eta[g - 1] = eta_one_step(j[g - 1], group_sigma_w(spec, g), cfg.loss);
    return eta;
  }
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t g = 1; g <= G; ++g) {
    const double v = j[g - 1];
    m = std::min(m, eta_bound(std::span<const double>(&v, 1), group_sigma_w(spec, g), cfg.loss));
  }
  std::fill(eta.begin(), eta.end(), cfg.bound_safety * m);
  return eta;
}

TuneStep record(std::size_t t, const LossEval& le, const AuxScalars& aux, const NetworkSpec& spec,
                std::vector<double> eta) {
  TuneStep s;
  s.t = t;
  s.loss = le.loss;
  s.j = le.j;
  s.j_stderr = le.j_stderr;
  for (std::size_t g = 1; g <= spec.groups(); ++g) {
    const std::ptrdiff_t b = representative(spec, g);
    s.a_w.push_back(b < 0 ? nan_v : aux.weight[std::size_t(b)]);
    s.a_b.push_back(b < 0 || !has_bias(spec.blocks()[std::size_t(b)].kind) ? nan_v : aux.bias[std::size_t(b)]);
  }
  s.eta = std::move(eta);
  return s;
}

// Stable (s - 1) / log(s) for s > 0, equal to 1 at s = 1.
double ratio_log(double s) {
  const double d = s - 1.0;
  if (std::abs(d) < 1e-8) return 1.0 / (1.0 - d / 2.0);
  return d / std::log1p(d);
}

}  // namespace

std::string_view to_string(LossKind k) noexcept {
  switch (k) {
    case LossKind::jll: return "jll";
    case LossKind::jsl: return "jsl";
    case LossKind::jkl: return "jkl";
  }
  return "?";
}

std::string_view to_string(Schedule s) noexcept {
  switch (s) {
    case Schedule::constant: return "constant";
    case Schedule::relu_bound: return "relu-bound";
    case Schedule::one_step: return "one-step";
  }
  return "?";
}

std::string_view to_string(ReturnMode m) noexcept {
  return m == ReturnMode::scale_sigmas ? "scale-sigmas" : "freeze-aux";
}

std::string_view to_string(GradMode m) noexcept {
  return m == GradMode::finite_difference ? "finite-difference" : "analytic-relu";
}

LossKind parse_loss(std::string_view s) {
  if (s == "jll") return LossKind::jll;
  if (s == "jsl") return LossKind::jsl;
  if (s == "jkl") return LossKind::jkl;
  throw InvalidArgument("unknown loss '" + std::string(s) + "' (jll|jsl|jkl)");
}

Schedule parse_schedule(std::string_view s) {
  if (s == "constant") return Schedule::constant;
  if (s == "relu-bound") return Schedule::relu_bound;
  if (s == "one-step") return Schedule::one_step;
  throw InvalidArgument("unknown schedule '" + std::string(s) + "' (constant|relu-bound|one-step)");
}

ReturnMode parse_return_mode(std::string_view s) {
  if (s == "scale-sigmas") return ReturnMode::scale_sigmas;
  if (s == "freeze-aux") return ReturnMode::freeze_aux;
  throw InvalidArgument("unknown return mode '" + std::string(s) + "' (scale-sigmas|freeze-aux)");
}

GradMode parse_grad_mode(std::string_view s) {
  if (s == "finite-difference") return GradMode::finite_difference;
  if (s == "analytic-relu") return GradMode::analytic_relu;
  throw InvalidArgument("unknown gradient mode '" + std::string(s) + "' (finite-difference|analytic-relu)");
}

void TuneConfig::validate() const {
  if (steps < 1) throw InvalidArgument("tune: T must be at least 1");
  if (!(epsilon >= 0.0)) throw InvalidArgument("tune: epsilon must be non-negative");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw InvalidArgument("tune: eta must be positive");
  if (!(lambda >= 0.0)) throw InvalidArgument("tune: lambda must be non-negative");
  if (!(fd_step > 0.0 && fd_step < 0.5)) throw InvalidArgument("tune: fd_step must lie in (0, 0.5)");
  if (!(bound_safety > 0.0 && bound_safety <= 1.0)) throw InvalidArgument("tune: bound safety must lie in (0, 1]");
  if (apjn.method == ApjnMethod::estimated && apjn.n_v < 1) throw InvalidArgument("tune: N_v must be positive");
  if (schedule != Schedule::constant && loss == LossKind::jkl) {
    throw InvalidArgument("tune: ReLU rate schedules support JLL and JSL only");
  }
}

std::vector<std::vector<double>> TuneTrace::j_history() const {
  std::vector<std::vector<double>> out;
  for (const auto& s : steps) out.push_back(s.j);
  return out;
}

void write_trace_csv(std::ostream& os, const TuneTrace& trace) {
  const std::size_t G = trace.steps.empty() ? 0 : trace.steps.front().j.size();
  os << "t,loss";
  for (std::size_t g = 1; g <= G; ++g) os << ",J_" << g;
  for (std::size_t g = 1; g <= G; ++g) os << ",aW_" << g;
  for (std::size_t g = 1; g <= G; ++g) os << ",ab_" << g;
  os << ",eta\n";
  for (const auto& s : trace.steps) {
    os << s.t << ',' << format_g(s.loss);
    for (double v : s.j) os << ',' << format_g(v);
    for (double v : s.a_w) os << ',' << format_g(v);
    for (double v : s.a_b) os << ',' << format_g(v);
    double eta = nan_v;
    for (double v : s.eta) {
      if (std::isnan(eta) || v < eta) eta = v;
    }
    os << ',' << format_g(eta) << '\n';
  }
}

std::vector<AuxSlot> aux_slots(const NetworkSpec& spec, const ParamSet& params, const AuxMask& mask) {
  std::vector<AuxSlot> out;
  for (std::size_t b = 0; b < spec.size(); ++b) {
    const BlockKind& k = spec.blocks()[b].kind;
    bool w = false, bias = false;
    if (is_linear_kind(k)) {
      w = mask.weights;
      bias = mask.biases;
    } else if (std::holds_alternative<AffineNorm>(k)) {
      w = bias = mask.affine;
    } else if (std::holds_alternative<LayerScale>(k)) {
      w = mask.layerscale;
    }
    const std::size_t g = spec.group_of(b);
    if (w && !is_zero(params.blocks.at(b).weight)) out.push_back({b, false, g});
    if (bias && has_bias(k) && !is_zero(params.blocks.at(b).bias)) out.push_back({b, true, g});
  }
  return out;
}

LossEval evaluate_loss(const Evaluation& eval, const TuneConfig& cfg, const RngStream& rng) {
  return evaluate_from(eval, nullptr, 1, cfg, rng);
}

std::vector<double> grad_aux(const Evaluation& eval, const std::vector<AuxSlot>& slots, const TuneConfig& cfg,
                             const RngStream& rng) {
  const LossEval base = evaluate_loss(eval, cfg, rng);
  if (!std::isfinite(base.loss)) throw DivergenceError("loss is not finite", {});
  return grad_from(eval, base, slots, cfg, rng);
}

TuneResult tune(const NetworkSpec& spec, const ParamSet& params, const Tensor& batch, const TuneConfig& cfg,
                const RngStream& rng, const BatchSource& fresh) {
  cfg.validate();
  if (cfg.fresh_batch && !fresh) throw InvalidArgument("tune: fresh-batch mode needs a batch source");
  const std::vector<AuxSlot> slots = aux_slots(spec, params, cfg.mask);
  AuxScalars aux = AuxScalars::ones(spec.size());
  TuneTrace trace;

  Evaluation eval(spec, params, aux, cfg.fresh_batch ? fresh(0) : batch);
  LossEval cur = evaluate_loss(eval, cfg, rng.split(0));
  if (!std::isfinite(cur.loss)) throw DivergenceError("tuning diverged at step 0 (non-finite loss)", trace);
  trace.steps.push_back(record(0, cur, aux, spec, std::vector<double>(spec.groups(), nan_v)));

  std::size_t t = 0;
  while (t < cfg.steps && cur.loss > cfg.epsilon) {
    std::vector<double> grad;
    try {
      grad = grad_from(eval, cur, slots, cfg, rng.split(t));
    } catch (const DivergenceError& e) {
      throw DivergenceError("tuning diverged at step " + std::to_string(t) + " (" + e.what() + ")", trace);
    }
    const std::vector<double> eta = rates(cfg, spec, cur.j);
    std::size_t first = spec.groups() + 1;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (grad[i] == 0.0) continue;
      double& a = (slots[i].bias ? aux.bias : aux.weight)[slots[i].block];
      a = std::clamp(a - eta[slots[i].group - 1] * grad[i], aux_min, aux_max);
      first = std::min(first, slots[i].group);
    }
    ++t;
    if (cfg.fresh_batch) {
      eval = Evaluation(spec, params, aux, fresh(t));
    } else {
      eval = eval.with_aux(aux, std::min(first, spec.groups()));
    }
    cur = evaluate_loss(eval, cfg, rng.split(t));
    if (!std::isfinite(cur.loss)) {
      throw DivergenceError("tuning diverged at step " + std::to_string(t) + " (non-finite loss)", trace);
    }
    trace.steps.push_back(record(t, cur, aux, spec, eta));
  }

  TuneResult res;
  res.converged = cur.loss <= cfg.epsilon;
  res.trace = std::move(trace);
  if (cfg.return_mode == ReturnMode::scale_sigmas) {
    res.spec = scale_sigmas(spec, aux);
    res.params = scale_params(spec, params, aux);
    res.aux = AuxScalars::ones(spec.size());
  } else {
    res.spec = spec;
    res.params = params;
    res.aux = aux;
  }
  return res;
}

double eta_bound(std::span<const double> j, double sigma_w, LossKind loss) {
  if (j.empty()) throw InvalidArgument("eta_bound: no APJN values");
  if (!(sigma_w > 0.0)) throw InvalidArgument("eta_bound: sigma_w must be positive");
  if (loss == LossKind::jkl) throw InvalidArgument("eta_bound supports JLL and JSL only");
  const double s2 = sigma_w * sigma_w;
  double m = std::numeric_limits<double>::infinity();
  for (double v : j) {
    if (!(v > 0.0)) throw InvalidArgument("eta_bound: APJN values must be positive");
    const double s = std::sqrt(v);
    // 2 (s - 1) s / (s_w^2 log s^2) = s (s - 1) / (s_w^2 log s)
    const double b = loss == LossKind::jll ? s * ratio_log(s) / s2 : 2.0 / (s2 * s * (1.0 + s));
    m = std::min(m, b);
  }
  return m;
}

double eta_one_step(double j0, double sigma_w, LossKind loss) {
  return 0.5 * eta_bound(std::span<const double>(&j0, 1), sigma_w, loss);
}

double eta_zero(double a_w, double sigma_w, LossKind loss) {
  if (!(a_w > 0.0) || !(sigma_w > 0.0)) throw InvalidArgument("eta_zero: a_W and sigma_w must be positive");
  const double x = a_w * sigma_w;
  switch (loss) {
    case LossKind::jll: {
      if (std::abs(x - std::numbers::sqrt2) <= 1e-12) {
        throw InvalidArgument("eta_zero: singular at a_W sigma_w = sqrt(2) for JLL");
      }
      return (x - std::numbers::sqrt2) * a_w / (sigma_w * (std::log(x * x) - std::log(2.0)));
    }
    case LossKind::jsl: return 4.0 / (sigma_w * sigma_w * sigma_w * a_w * (std::numbers::sqrt2 + x));
    case LossKind::jkl: break;
  }
  throw InvalidArgument("eta_zero supports JLL and JSL only");
}

double gradient_norm_ratio(const Evaluation& eval) {
  const NetworkSpec& spec = eval.spec();
  const std::size_t G = spec.groups();
  const std::size_t B = eval.batch_size();
  const Tensor& out = eval.boundary(G);
  Tensor cot(out.shape(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) cot[i] = out[i] / double(B);

  auto weight_grad_norm = [&](std::size_t g) {
    const std::size_t b0 = spec.group_begin(g), b1 = spec.group_end(g);
    const auto* dense = std::get_if<Dense>(&spec.blocks()[b1 - 1].kind);
    const Activation* act = b1 - b0 == 2 ? std::get_if<Activation>(&spec.blocks()[b0].kind) : nullptr;
    if (!dense || dense->axis != -1 || !(b1 - b0 == 1 || act)) {
      throw InvalidArgument("gradient_norm_ratio needs groups of the form [Activation ->] Dense");
    }
    const Tensor delta = g == G ? cot : eval.pullback(g, G, cot);
    const Tensor& h = eval.boundary(g - 1);
    const std::size_t n_in = dense->fan_in, n_out = dense->fan_out;
    double sq = 0.0;
    std::vector<double> x(n_in);
    std::vector<double> gw(n_out * n_in, 0.0);
    for (std::size_t s = 0; s < B; ++s) {
      for (std::size_t i = 0; i < n_in; ++i) {
        const double v = h[s * n_in + i];
        x[i] = act ? activate(act->kind, v) : v;
      }
      for (std::size_t o = 0; o < n_out; ++o) {
        const double d = delta[s * n_out + o];
        if (d == 0.0) continue;
        double* row = gw.data() + o * n_in;
        for (std::size_t i = 0; i < n_in; ++i) row[i] += d * x[i];
      }
    }
    const double a = eval.aux().weight[b1 - 1];
    for (double v : gw) sq += v * v;
    return a * std::sqrt(sq);
  };
  return weight_grad_norm(1) / weight_grad_norm(G);
}

}  // namespace crit
