#include "crit/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "crit/cifar.hpp"
#include "crit/error.hpp"
#include "crit/losses.hpp"
#include "crit/meanfield.hpp"
#include "format.hpp"

namespace crit {

namespace {

using json = nlohmann::json;

constexpr double band_lo = 0.8;
constexpr double band_hi = 1.25;

bool in_band(const std::vector<double>& j) {
  return !j.empty() && std::all_of(j.begin(), j.end(), [](double v) { return v > band_lo && v < band_hi; });
}

std::string opt_num(double v) { return std::isnan(v) ? "" : format_g(v); }

json num_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// Opens --out or falls back to stdout.
class Sink {
 public:
  explicit Sink(const std::string& path) {
    if (path.empty()) return;
    file_.open(path);
    if (!file_) throw Error("cannot open output file " + path);
  }
  std::ostream& os() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

 private:
  std::ofstream file_;
};

std::vector<std::pair<std::size_t, std::size_t>> measure_pairs(const ExperimentConfig& cfg, const NetworkSpec& spec) {
  if (!cfg.measure.pairs.empty()) return cfg.measure.pairs;
  return profile_pairs(spec.groups(), cfg.measure.k);
}

Tensor fit_input(const NetworkSpec& spec, Tensor x) {
  const Shape& in = spec.input_shape();
  Shape want{x.shape().front()};
  want.insert(want.end(), in.begin(), in.end());
  if (x.shape() == want) return x;
  if (x.size() != shape_product(want)) {
    throw ConfigError(0, "data", "input samples do not match the network input shape");
  }
  return Tensor(std::move(want), std::vector<double>(x.data().begin(), x.data().end()));
}

Tensor draw_batch(const ExperimentConfig& cfg, const NetworkSpec& spec, RngStream rng) {
  if (cfg.data.source == "cifar10") {
    const Tensor raw = load_cifar10(resolve_data_path(cfg.data.path), cfg.data.batch, cfg.data.normalize);
    return fit_input(spec, raw);
  }
  Tensor x = gaussian_batch(spec, cfg.data.batch, rng);
  return cfg.data.normalize ? normalize_samples(x) : x;
}

bool relu_map_applies(const ExperimentConfig& cfg) {
  const NetworkConfig& n = cfg.network;
  return cfg.scan.command == "tune" && n.preset == "mlp" && n.activation.value_or(ActivationKind::relu) == ActivationKind::relu &&
         n.sigma_b == 0.0 && (cfg.tune.loss == LossKind::jll || cfg.tune.loss == LossKind::jsl) &&
         cfg.tune.schedule == Schedule::constant;
}

ScanRow scan_point(const ExperimentConfig& base, const std::vector<double>& coords, std::uint64_t point) {
  ScanRow row;
  row.coords = coords;
  ExperimentConfig cfg = base;
  try {
    for (std::size_t a = 0; a < coords.size(); ++a) set_config_value(cfg, base.scan.axes[a].key, format_g(coords[a]));
    validate_config(cfg);
    if (relu_map_applies(cfg)) {
      const double sw = cfg.network.sigma_w;
      const std::vector<double> j0(cfg.network.depth, sw * sw / 2.0);
      const double eta = cfg.tune.eta;
      const DynamicsTrajectory d = relu_dynamics(j0, sw, std::span<const double>(&eta, 1), cfg.tune.steps, cfg.tune.loss);
      row.predicted_converged = !d.diverged() && in_band(d.j.back());
      row.eta0 = eta_zero(1.0, sw, cfg.tune.loss);
    }
    if (cfg.scan.command == "measure") {
      const Measurement m = run_measure(cfg, point);
      row.j = m.report.values();
    } else {
      try {
        const TuneResult res = run_tune(cfg, point);
        row.steps = res.trace.steps.back().t;
        row.j = res.trace.steps.back().j;
      } catch (const DivergenceError& e) {
        row.status = "diverged";
        if (!e.trace().steps.empty()) {
          row.steps = e.trace().steps.back().t;
          row.j = e.trace().steps.back().j;
        }
        return row;
      }
    }
    row.converged = in_band(row.j);
  } catch (const std::exception& e) {
    row.status = std::string("error: ") + e.what();
    row.converged = false;
  }
  return row;
}

// Quotes a CSV field when it contains separators.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

}  // namespace

OutputFormat parse_output_format(std::string_view s) {
  if (s == "csv") return OutputFormat::csv;
  if (s == "json") return OutputFormat::json;
  throw InvalidArgument("unknown output format '" + std::string(s) + "' (expected csv or json)");
}

Tensor make_batch(const ExperimentConfig& cfg, const NetworkSpec& spec, std::uint64_t point) {
  return draw_batch(cfg, spec, RngStream(cfg.seed, point).split(2));
}

Measurement run_measure(const ExperimentConfig& cfg, std::uint64_t point) {
  const NetworkSpec spec = cfg.network.build();
  const AuxScalars aux = cfg.network.aux(spec);
  const Tensor x = make_batch(cfg, spec, point);
  const RngStream root(cfg.seed, point);
  return measure_network(spec, x, measure_pairs(cfg, spec), cfg.measure.apjn, cfg.measure.samples, root.split(1), &aux);
}

void write_measure(std::ostream& os, const Measurement& m, OutputFormat fmt) {
  if (fmt == OutputFormat::json) {
    json rows = json::array();
    for (const auto& p : m.report.pairs) {
      rows.push_back({{"l0", p.l0},
                      {"l", p.l},
                      {"J", num_or_null(p.value)},
                      {"stderr", num_or_null(p.stderr_)},
                      {"method", std::string(to_string(p.method))},
                      {"N_v", p.n_v},
                      {"batch", p.batch},
                      {"samples", p.samples}});
    }
    json k = json::array();
    for (double v : m.kernels) k.push_back(num_or_null(v));
    os << json{{"pairs", rows}, {"kernels", k}}.dump(2) << '\n';
    return;
  }
  os << "l0,l,J,stderr,method,N_v,batch,samples,K_l0,K_l\n";
  for (const auto& p : m.report.pairs) {
    os << p.l0 << ',' << p.l << ',' << format_g(p.value) << ',' << opt_num(p.stderr_) << ',' << to_string(p.method)
       << ',' << p.n_v << ',' << p.batch << ',' << p.samples << ',' << format_g(m.kernels.at(p.l0)) << ','
       << format_g(m.kernels.at(p.l)) << '\n';
  }
}

TuneResult run_tune(const ExperimentConfig& cfg, std::uint64_t point) {
  const NetworkSpec spec = cfg.network.build();
  const RngStream root(cfg.seed, point);
  const ParamSet params = init_params(spec, root.split(1));
  const Tensor x = make_batch(cfg, spec, point);
  BatchSource fresh;
  if (cfg.tune.fresh_batch) {
    if (cfg.data.source != "gaussian") throw ConfigError(0, "tune.fresh_batch", "needs data.source = gaussian");
    const RngStream data = root.split(2);
    fresh = [&cfg, &spec, data, x](std::size_t t) { return t == 0 ? x : draw_batch(cfg, spec, data.split(t)); };
  }
  return tune(spec, params, x, cfg.tune, root.split(3), fresh);
}

std::string tuned_network_text(const TuneResult& res, ReturnMode mode) {
  if (mode == ReturnMode::freeze_aux) return serialize_network(res.spec, &res.aux);
  return serialize_network(res.spec);
}

std::vector<ScanRow> run_scan(const ExperimentConfig& cfg, std::size_t workers) {
  if (cfg.scan.axes.empty() || cfg.scan.axes.size() > 2) {
    throw ConfigError(0, "scan.axis", "scan needs one or two axes");
  }
  std::vector<std::vector<double>> grid{{}};
  for (const ScanAxis& ax : cfg.scan.axes) {
    std::vector<std::vector<double>> next;
    for (const auto& g : grid) {
      for (double v : ax.values()) {
        auto c = g;
        c.push_back(v);
        next.push_back(std::move(c));
      }
    }
    grid = std::move(next);
  }
  std::vector<ScanRow> rows(grid.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < grid.size();) rows[i] = scan_point(cfg, grid[i], i);
  };
  const std::size_t n = std::clamp<std::size_t>(workers, 1, grid.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return rows;
}

void write_scan(std::ostream& os, const ExperimentConfig& cfg, const std::vector<ScanRow>& rows, OutputFormat fmt) {
  auto stats = [](const std::vector<double>& j) {
    struct S {
      double lo, hi, mean, last;
    } s{NAN, NAN, NAN, NAN};
    if (j.empty()) return s;
    s.lo = *std::min_element(j.begin(), j.end());
    s.hi = *std::max_element(j.begin(), j.end());
    s.mean = 0.0;
    for (double v : j) s.mean += v / double(j.size());
    s.last = j.back();
    return s;
  };
  if (fmt == OutputFormat::json) {
    json out = json::array();
    for (const auto& r : rows) {
      json row;
      for (std::size_t a = 0; a < r.coords.size(); ++a) row[cfg.scan.axes[a].key] = r.coords[a];
      const auto s = stats(r.j);
      json j = json::array();
      for (double v : r.j) j.push_back(num_or_null(v));
      row["status"] = r.status;
      row["converged"] = r.converged;
      row["steps"] = r.steps;
      row["J_min"] = num_or_null(s.lo);
      row["J_max"] = num_or_null(s.hi);
      row["J_mean"] = num_or_null(s.mean);
      row["J_last"] = num_or_null(s.last);
      row["predicted_converged"] = r.predicted_converged ? json(*r.predicted_converged) : json(nullptr);
      row["eta0"] = r.eta0 ? json(*r.eta0) : json(nullptr);
      row["J_profile"] = j;
      out.push_back(row);
    }
    os << out.dump(2) << '\n';
    return;
  }
  for (const auto& ax : cfg.scan.axes) os << ax.key << ',';
  os << "status,converged,steps,J_min,J_max,J_mean,J_last,predicted_converged,eta0,J_profile\n";
  for (const auto& r : rows) {
    for (double c : r.coords) os << format_g(c) << ',';
    const auto s = stats(r.j);
    std::string prof;
    for (std::size_t i = 0; i < r.j.size(); ++i) prof += (i ? ";" : "") + format_g(r.j[i]);
    os << csv_field(r.status) << ',' << (r.converged ? 1 : 0) << ',' << r.steps << ',' << opt_num(s.lo) << ','
       << opt_num(s.hi) << ',' << opt_num(s.mean) << ',' << opt_num(s.last) << ','
       << (r.predicted_converged ? (*r.predicted_converged ? "1" : "0") : "") << ','
       << (r.eta0 ? format_g(*r.eta0) : "") << ',' << prof << '\n';
  }
}

void write_verify(std::ostream& os, const std::vector<SuiteResult>& results, OutputFormat fmt) {
  if (fmt == OutputFormat::json) {
    json out = json::array();
    for (const auto& r : results) {
      json m = json::object();
      for (const auto& [k, v] : r.metrics) m[k] = num_or_null(v);
      out.push_back({{"suite", r.name}, {"passed", r.passed}, {"seconds", r.seconds}, {"detail", r.detail},
                     {"metrics", m}});
    }
    os << out.dump(2) << '\n';
    return;
  }
  os << "suite,passed,seconds,detail\n";
  for (const auto& r : results) {
    std::ostringstream sec;
    sec.precision(3);
    sec << std::fixed << r.seconds;
    os << r.name << ',' << (r.passed ? 1 : 0) << ',' << sec.str() << ',' << csv_field(r.detail) << '\n';
  }
}

int cmd_measure(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream&) {
  validate_config(cfg);
  const Measurement m = run_measure(cfg);
  Sink sink(opt.out);
  write_measure(sink.os(), m, opt.format);
  return exit_ok;
}

int cmd_tune(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& err) {
  validate_config(cfg);
  auto write_trace = [&](const TuneTrace& trace, bool converged, const std::string* network) {
    Sink sink(opt.out);
    if (opt.format == OutputFormat::json) {
      json steps = json::array();
      for (const auto& s : trace.steps) {
        json j = json::array(), aw = json::array(), ab = json::array(), eta = json::array();
        for (double v : s.j) j.push_back(num_or_null(v));
        for (double v : s.a_w) aw.push_back(v);
        for (double v : s.a_b) ab.push_back(v);
        for (double v : s.eta) eta.push_back(num_or_null(v));
        steps.push_back({{"t", s.t}, {"loss", num_or_null(s.loss)}, {"J", j}, {"a_W", aw}, {"a_b", ab}, {"eta", eta}});
      }
      json out = {{"converged", converged}, {"steps", steps}};
      out["network"] = network ? json(*network) : json(nullptr);
      sink.os() << out.dump(2) << '\n';
    } else {
      write_trace_csv(sink.os(), trace);
    }
  };
  std::string net_path = cfg.tune_network_out;
  if (net_path.empty() && !opt.out.empty()) net_path = opt.out + ".network";
  try {
    const TuneResult res = run_tune(cfg);
    const std::string net = tuned_network_text(res, cfg.tune.return_mode);
    write_trace(res.trace, res.converged, &net);
    if (!net_path.empty()) {
      std::ofstream f(net_path);
      if (!f) throw Error("cannot open network output " + net_path);
      f << net;
    }
    return exit_ok;
  } catch (const DivergenceError& e) {
    write_trace(e.trace(), false, nullptr);
    err << "crit-tuner: " << e.what() << '\n';
    return exit_divergence;
  }
}

int cmd_scan(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream&) {
  if (cfg.scan.axes.empty()) throw ConfigError(0, "scan.axis", "scan needs at least one axis");
  const auto rows = run_scan(cfg, opt.workers);
  Sink sink(opt.out);
  write_scan(sink.os(), cfg, rows, opt.format);
  return exit_ok;
}

int cmd_verify(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& err) {
  VerifyOptions vo;
  vo.seed = cfg.seed;
  vo.quick = cfg.verify.quick;
  vo.width = cfg.verify.width;
  vo.n_v = cfg.verify.n_v;
  std::vector<SuiteResult> results;
  try {
    results = run_suites(cfg.verify.suites, vo);
  } catch (const InvalidArgument& e) {
    throw ConfigError(0, "verify.suites", e.what());
  }
  Sink sink(opt.out);
  write_verify(sink.os(), results, opt.format);
  bool ok = true;
  for (const auto& r : results) {
    if (!r.passed) {
      ok = false;
      err << "crit-tuner: suite " << r.name << " failed: " << r.detail << '\n';
    }
  }
  return ok ? exit_ok : exit_verify;
}

int run_command(const std::string& command, const std::string& config_path, std::optional<std::uint64_t> seed,
                const CommandOptions& opt, std::ostream& err) {
  try {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (command == "measure") return cmd_measure(cfg, opt, err);
    if (command == "tune") return cmd_tune(cfg, opt, err);
    if (command == "scan") return cmd_scan(cfg, opt, err);
    if (command == "verify") return cmd_verify(cfg, opt, err);
    err << "crit-tuner: unknown command '" << command << "'\n";
    return exit_config;
  } catch (const ConfigError& e) {
    err << "crit-tuner: " << e.what() << '\n';
    return exit_config;
  } catch (const DivergenceError& e) {
    err << "crit-tuner: " << e.what() << '\n';
    return exit_divergence;
  } catch (const std::exception& e) {
    err << "crit-tuner: " << e.what() << '\n';
    return exit_error;
  }
}

}  // namespace crit
