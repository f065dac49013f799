#include "crit/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "crit/cifar.hpp"
#include "crit/error.hpp"
#include "format.hpp"

namespace crit {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t end = s.find(sep, start);
    const std::string_view part = trim(s.substr(start, end == std::string_view::npos ? s.npos : end - start));
    if (!part.empty()) out.emplace_back(part);
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream is{std::string(s)};
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

struct Ctx {
  std::size_t line;
  std::string_view key;

  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(line, std::string(key), msg); }
};

double to_double(const Ctx& c, std::string_view v) {
  v = trim(v);
  if (v == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (v == "inf") return std::numeric_limits<double>::infinity();
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) c.fail("expected a number, got '" + std::string(v) + "'");
  return out;
}

std::size_t to_size(const Ctx& c, std::string_view v) {
  v = trim(v);
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    c.fail("expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

std::uint64_t to_u64(const Ctx& c, std::string_view v) {
  v = trim(v);
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    c.fail("expected an unsigned integer, got '" + std::string(v) + "'");
  }
  return out;
}

bool to_bool(const Ctx& c, std::string_view v) {
  v = trim(v);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  c.fail("expected true or false, got '" + std::string(v) + "'");
}

template <class F>
auto guarded(const Ctx& c, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    c.fail(e.what());
  }
}

std::string b2s(bool b) { return b ? "true" : "false"; }

template <class T>
std::string join(const std::vector<T>& v, std::string_view sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    if constexpr (std::is_same_v<T, std::string>) {
      out += v[i];
    } else if constexpr (std::is_floating_point_v<T>) {
      out += format_g(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

struct Key {
  std::string name;
  std::function<void(ExperimentConfig&, const Ctx&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define CRIT_NUM(name, field)                                                                       \
  Key {                                                                                             \
    name, [](ExperimentConfig& e, const Ctx& c, std::string_view v) { e.field = to_double(c, v); }, \
        [](const ExperimentConfig& e) { return format_g(e.field); }                                 \
  }
#define CRIT_SIZE(name, field)                                                                    \
  Key {                                                                                           \
    name, [](ExperimentConfig& e, const Ctx& c, std::string_view v) { e.field = to_size(c, v); }, \
        [](const ExperimentConfig& e) { return std::to_string(e.field); }                         \
  }
#define CRIT_BOOL(name, field)                                                                    \
  Key {                                                                                           \
    name, [](ExperimentConfig& e, const Ctx& c, std::string_view v) { e.field = to_bool(c, v); }, \
        [](const ExperimentConfig& e) { return b2s(e.field); }                                    \
  }
#define CRIT_ENUM(name, field, parse)                                                                            \
  Key {                                                                                                          \
    name,                                                                                                        \
        [](ExperimentConfig& e, const Ctx& c, std::string_view v) { e.field = guarded(c, [&] { return parse(trim(v)); }); }, \
        [](const ExperimentConfig& e) { return std::string(to_string(e.field)); }                                \
  }
#define CRIT_STR(name, field)                                                                          \
  Key {                                                                                                \
    name, [](ExperimentConfig& e, const Ctx&, std::string_view v) { e.field = std::string(trim(v)); }, \
        [](const ExperimentConfig& e) { return e.field; }                                              \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      Key{"seed", [](ExperimentConfig& e, const Ctx& c, std::string_view v) { e.seed = to_u64(c, v); },
          [](const ExperimentConfig& e) { return std::to_string(e.seed); }},
      CRIT_STR("network.preset", network.preset),
      CRIT_SIZE("network.depth", network.depth),
      CRIT_SIZE("network.width", network.width),
      CRIT_SIZE("network.input_width", network.input_width),
      CRIT_NUM("network.sigma_w", network.sigma_w),
      CRIT_NUM("network.sigma_b", network.sigma_b),
      CRIT_NUM("network.mu", network.mu),
      CRIT_NUM("network.bn_eps", network.bn_eps),
      CRIT_NUM("network.eps_ls", network.eps_ls),
      Key{"network.activation",
          [](ExperimentConfig& e, const Ctx& c, std::string_view v) {
            e.network.activation = guarded(c, [&] { return parse_activation(trim(v)); });
          },
          [](const ExperimentConfig& e) {
            return e.network.activation ? std::string(to_string(*e.network.activation)) : std::string();
          }},
      CRIT_SIZE("network.channels", network.channels),
      CRIT_SIZE("network.image", network.image),
      CRIT_SIZE("network.patch", network.patch),
      CRIT_SIZE("network.dim", network.dim),
      CRIT_SIZE("network.classes", network.classes),
      Key{"network.widths",
          [](ExperimentConfig& e, const Ctx& c, std::string_view v) {
            e.network.widths.clear();
            for (const auto& w : split(v, ',')) e.network.widths.push_back(to_size(c, w));
          },
          [](const ExperimentConfig& e) { return join(e.network.widths); }},
      Key{"network.input",
          [](ExperimentConfig& e, const Ctx& c, std::string_view v) {
            e.network.input.clear();
            for (const auto& w : split(v, ',')) e.network.input.push_back(to_size(c, w));
          },
          [](const ExperimentConfig& e) { return join(e.network.input); }},
      CRIT_STR("data.source", data.source),
      CRIT_STR("data.path", data.path),
      CRIT_SIZE("data.batch", data.batch),
      CRIT_BOOL("data.normalize", data.normalize),
      CRIT_SIZE("measure.k", measure.k),
      Key{"measure.pairs",
          [](ExperimentConfig& e, const Ctx& c, std::string_view v) {
            e.measure.pairs.clear();
            for (const auto& p : split(v, ',')) {
              const auto ab = split(p, ':');
              if (ab.size() != 2) c.fail("pairs are written l0:l, got '" + p + "'");
              e.measure.pairs.emplace_back(to_size(c, ab[0]), to_size(c, ab[1]));
            }
          },
          [](const ExperimentConfig& e) {
            std::string out;
            for (std::size_t i = 0; i < e.measure.pairs.size(); ++i) {
              if (i) out += ',';
              out += std::to_string(e.measure.pairs[i].first) + ':' + std::to_string(e.measure.pairs[i].second);
            }
            return out;
          }},
      CRIT_ENUM("measure.method", measure.apjn.method, parse_apjn_method),
      CRIT_SIZE("measure.n_v", measure.apjn.n_v),
      CRIT_ENUM("measure.probes", measure.apjn.probes, parse_probe_mode),
      CRIT_SIZE("measure.max_entries", measure.apjn.max_entries),
      CRIT_SIZE("measure.samples", measure.samples),
      CRIT_ENUM("tune.loss", tune.loss, parse_loss),
      CRIT_NUM("tune.lambda", tune.lambda),
      CRIT_ENUM("tune.range", tune.range, parse_pair_range),
      CRIT_ENUM("tune.schedule", tune.schedule, parse_schedule),
      CRIT_NUM("tune.eta", tune.eta),
      CRIT_NUM("tune.bound_safety", tune.bound_safety),
      CRIT_SIZE("tune.steps", tune.steps),
      CRIT_NUM("tune.epsilon", tune.epsilon),
      CRIT_ENUM("tune.method", tune.apjn.method, parse_apjn_method),
      CRIT_SIZE("tune.n_v", tune.apjn.n_v),
      CRIT_ENUM("tune.probes", tune.apjn.probes, parse_probe_mode),
      CRIT_SIZE("tune.max_entries", tune.apjn.max_entries),
      CRIT_ENUM("tune.return_mode", tune.return_mode, parse_return_mode),
      CRIT_ENUM("tune.grad_mode", tune.grad_mode, parse_grad_mode),
      CRIT_NUM("tune.fd_step", tune.fd_step),
      Key{"tune.mask",
          [](ExperimentConfig& e, const Ctx& c, std::string_view v) {
            AuxMask m{false, false, false, false};
            for (const auto& w : split(v, ',')) {
              if (w == "none") continue;
              if (w == "weights") m.weights = true;
              else if (w == "biases") m.biases = true;
              else if (w == "affine") m.affine = true;
              else if (w == "layerscale") m.layerscale = true;
              else c.fail("unknown mask entry '" + w + "' (weights|biases|affine|layerscale)");
            }
            e.tune.mask = m;
          },
          [](const ExperimentConfig& e) {
            std::vector<std::string> v;
            if (e.tune.mask.weights) v.emplace_back("weights");
            if (e.tune.mask.biases) v.emplace_back("biases");
            if (e.tune.mask.affine) v.emplace_back("affine");
            if (e.tune.mask.layerscale) v.emplace_back("layerscale");
            return v.empty() ? std::string("none") : join(v);
          }},
      CRIT_BOOL("tune.fresh_batch", tune.fresh_batch),
      CRIT_STR("tune.network_out", tune_network_out),
      CRIT_STR("scan.command", scan.command),
      Key{"verify.suites",
          [](ExperimentConfig& e, const Ctx&, std::string_view v) { e.verify.suites = split(v, ','); },
          [](const ExperimentConfig& e) { return join(e.verify.suites); }},
      CRIT_BOOL("verify.quick", verify.quick),
      CRIT_SIZE("verify.width", verify.width),
      CRIT_SIZE("verify.n_v", verify.n_v),
  };
  return table;
}

#undef CRIT_NUM
#undef CRIT_SIZE
#undef CRIT_BOOL
#undef CRIT_ENUM
#undef CRIT_STR

const Key* find_key(std::string_view name) {
  for (const auto& k : keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

// "name=value" attribute map of a block line.
struct Attrs {
  const Ctx& c;
  std::map<std::string, std::string> kv;
  bool boundary = false;

  double num(const std::string& k, double def) {
    auto it = kv.find(k);
    if (it == kv.end()) return def;
    const double v = to_double(c, it->second);
    kv.erase(it);
    return v;
  }
  std::size_t size(const std::string& k, std::size_t def) {
    auto it = kv.find(k);
    if (it == kv.end()) return def;
    const std::size_t v = to_size(c, it->second);
    kv.erase(it);
    return v;
  }
  std::string str(const std::string& k, const std::string& def) {
    auto it = kv.find(k);
    if (it == kv.end()) return def;
    std::string v = it->second;
    kv.erase(it);
    return v;
  }
  void done() const {
    if (!kv.empty()) c.fail("unknown block attribute '" + kv.begin()->first + "'");
  }
};

void parse_block(NetworkConfig& net, const Ctx& c, std::string_view value) {
  const auto w = words(value);
  if (w.empty()) c.fail("empty block line");
  Attrs a{c, {}, false};
  for (std::size_t i = 1; i < w.size(); ++i) {
    if (w[i] == "boundary") {
      a.boundary = true;
      continue;
    }
    const auto eq = w[i].find('=');
    if (eq == std::string::npos) c.fail("expected name=value, got '" + w[i] + "'");
    a.kv[w[i].substr(0, eq)] = w[i].substr(eq + 1);
  }
  const double aux_w = a.num("aux_w", 1.0);
  const double aux_b = a.num("aux_b", 1.0);
  const std::string& kind = w[0];
  BlockKind k;
  if (kind == "dense") {
    Dense d;
    d.fan_in = a.size("fan_in", 0);
    d.fan_out = a.size("fan_out", 0);
    d.sigma_w = a.num("sigma_w", d.sigma_w);
    d.sigma_b = a.num("sigma_b", d.sigma_b);
    d.axis = int(std::lround(a.num("axis", d.axis)));
    k = d;
  } else if (kind == "conv2d") {
    Conv2d d;
    d.in_ch = a.size("in", 0);
    d.out_ch = a.size("out", 0);
    d.kernel = a.size("kernel", d.kernel);
    d.stride = a.size("stride", d.stride);
    d.padding = a.size("padding", d.padding);
    d.sigma_w = a.num("sigma_w", d.sigma_w);
    d.sigma_b = a.num("sigma_b", d.sigma_b);
    k = d;
  } else if (kind == "activation") {
    const std::string fn = a.str("fn", "relu");
    k = Activation{guarded(c, [&] { return parse_activation(fn); })};
  } else if (kind == "batchnorm") {
    k = BatchNorm{a.num("eps", 1e-5)};
  } else if (kind == "affinenorm") {
    AffineNorm d;
    d.alpha_init = a.num("alpha", d.alpha_init);
    d.beta_init = a.num("beta", d.beta_init);
    k = d;
  } else if (kind == "layerscale") {
    k = LayerScale{a.num("eps", 0.1)};
  } else if (kind == "residual-open") {
    k = ResidualOpen{};
  } else if (kind == "residual-close") {
    k = ResidualClose{a.num("mu", 1.0)};
  } else if (kind == "flatten") {
    k = Flatten{};
  } else if (kind == "avgpool") {
    k = AvgPool{a.size("window", 0)};
  } else if (kind == "patchembed") {
    PatchEmbed d;
    d.patch = a.size("patch", d.patch);
    d.dim = a.size("dim", d.dim);
    d.sigma_w = a.num("sigma_w", d.sigma_w);
    d.sigma_b = a.num("sigma_b", d.sigma_b);
    k = d;
  } else {
    c.fail("unknown block kind '" + kind + "'");
  }
  a.done();
  net.blocks.push_back({k, a.boundary});
  net.aux_w.push_back(aux_w);
  net.aux_b.push_back(aux_b);
}

std::string block_line(const BlockSpec& b, double aux_w, double aux_b, bool with_aux) {
  std::string s = std::visit(
      [](const auto& k) -> std::string {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, Dense>) {
          return "dense fan_in=" + std::to_string(k.fan_in) + " fan_out=" + std::to_string(k.fan_out) +
                 " sigma_w=" + format_g(k.sigma_w) + " sigma_b=" + format_g(k.sigma_b) +
                 " axis=" + std::to_string(k.axis);
        } else if constexpr (std::is_same_v<T, Conv2d>) {
          return "conv2d in=" + std::to_string(k.in_ch) + " out=" + std::to_string(k.out_ch) +
                 " kernel=" + std::to_string(k.kernel) + " stride=" + std::to_string(k.stride) +
                 " padding=" + std::to_string(k.padding) + " sigma_w=" + format_g(k.sigma_w) +
                 " sigma_b=" + format_g(k.sigma_b);
        } else if constexpr (std::is_same_v<T, Activation>) {
          return "activation fn=" + std::string(to_string(k.kind));
        } else if constexpr (std::is_same_v<T, BatchNorm>) {
          return "batchnorm eps=" + format_g(k.eps);
        } else if constexpr (std::is_same_v<T, AffineNorm>) {
          return "affinenorm alpha=" + format_g(k.alpha_init) + " beta=" + format_g(k.beta_init);
        } else if constexpr (std::is_same_v<T, LayerScale>) {
          return "layerscale eps=" + format_g(k.eps_ls);
        } else if constexpr (std::is_same_v<T, ResidualOpen>) {
          return "residual-open";
        } else if constexpr (std::is_same_v<T, ResidualClose>) {
          return "residual-close mu=" + format_g(k.mu);
        } else if constexpr (std::is_same_v<T, Flatten>) {
          return "flatten";
        } else if constexpr (std::is_same_v<T, AvgPool>) {
          return "avgpool window=" + std::to_string(k.window);
        } else {
          return "patchembed patch=" + std::to_string(k.patch) + " dim=" + std::to_string(k.dim) +
                 " sigma_w=" + format_g(k.sigma_w) + " sigma_b=" + format_g(k.sigma_b);
        }
      },
      b.kind);
  if (with_aux && (aux_w != 1.0 || aux_b != 1.0)) s += " aux_w=" + format_g(aux_w) + " aux_b=" + format_g(aux_b);
  if (b.boundary) s += " boundary";
  return s;
}

void parse_axis(ExperimentConfig& cfg, const Ctx& c, std::string_view value) {
  const auto w = words(value);
  if (w.size() != 4 && !(w.size() == 5 && w[4] == "log")) c.fail("expected 'key min max points [log]'");
  ScanAxis a;
  a.key = w[0];
  if (!find_key(a.key)) c.fail("unknown scan key '" + a.key + "'");
  a.min = to_double(c, w[1]);
  a.max = to_double(c, w[2]);
  a.points = to_size(c, w[3]);
  a.log = w.size() == 5;
  if (a.points < 1) c.fail("scan axis needs at least one point");
  if (a.log && !(a.min > 0.0 && a.max > 0.0)) c.fail("log axis needs positive bounds");
  if (cfg.scan.axes.size() >= 2) c.fail("at most two scan axes are supported");
  cfg.scan.axes.push_back(a);
}

void parse_into(ExperimentConfig& cfg, std::istream& in, const std::filesystem::path& base_dir, bool network_only,
                int depth);

void load_network_file(ExperimentConfig& cfg, const Ctx& c, std::string_view value,
                       const std::filesystem::path& base_dir, int depth) {
  if (depth > 8) c.fail("network.file nesting too deep");
  std::filesystem::path p{std::string(trim(value))};
  if (p.is_relative()) p = base_dir / p;
  std::ifstream f(p);
  if (!f) c.fail("cannot open network file " + p.string());
  ExperimentConfig sub;
  sub.network.aux_w.clear();
  try {
    parse_into(sub, f, p.parent_path(), true, depth + 1);
  } catch (const ConfigError& e) {
    c.fail(p.string() + ": " + e.what());
  }
  cfg.network = sub.network;
}

void parse_into(ExperimentConfig& cfg, std::istream& in, const std::filesystem::path& base_dir, bool network_only,
                int depth) {
  std::string raw;
  std::size_t line = 0;
  bool blocks_reset = false;
  while (std::getline(in, raw)) {
    ++line;
    std::string_view s = raw;
    if (auto h = s.find('#'); h != s.npos) s = s.substr(0, h);
    s = trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == s.npos) throw ConfigError(line, "", "expected 'key = value'");
    const std::string key(trim(s.substr(0, eq)));
    const std::string_view value = trim(s.substr(eq + 1));
    const Ctx c{line, key};
    if (network_only && key.rfind("network.", 0) != 0) continue;
    if (key == "network.block") {
      if (!blocks_reset) {
        cfg.network.blocks.clear();
        cfg.network.aux_w.clear();
        cfg.network.aux_b.clear();
        blocks_reset = true;
      }
      parse_block(cfg.network, c, value);
    } else if (key == "network.file") {
      load_network_file(cfg, c, value, base_dir, depth);
    } else if (key == "scan.axis") {
      parse_axis(cfg, c, value);
    } else if (const Key* k = find_key(key)) {
      k->set(cfg, c, value);
    } else {
      c.fail("unknown key");
    }
  }
  // Aux entries are only kept when some multiplier differs from 1.
  bool any = false;
  for (double v : cfg.network.aux_w) any |= v != 1.0;
  for (double v : cfg.network.aux_b) any |= v != 1.0;
  if (!any) {
    cfg.network.aux_w.clear();
    cfg.network.aux_b.clear();
  }
}

}  // namespace

std::vector<double> ScanAxis::values() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < points; ++i) {
    const double f = points == 1 ? 0.0 : double(i) / double(points - 1);
    out.push_back(log ? std::exp(std::log(min) + f * (std::log(max) - std::log(min))) : min + f * (max - min));
  }
  return out;
}

NetworkSpec NetworkConfig::build() const {
  const ActivationKind act = activation.value_or(preset == "resmlp-toy" ? ActivationKind::gelu : ActivationKind::relu);
  if (preset == "mlp") return mlp(depth, width, sigma_w, sigma_b, act, input_width);
  if (preset == "prebn-resmlp") return prebn_resmlp(depth, width, sigma_w, sigma_b, mu, act, bn_eps);
  if (preset == "resmlp-toy") {
    ResMlpOptions o;
    o.channels = channels;
    o.image = image;
    o.patch = patch;
    o.dim = dim;
    o.depth = depth;
    o.sigma_w = sigma_w;
    o.sigma_b = sigma_b;
    o.mu = mu;
    o.eps_ls = eps_ls;
    o.act = act;
    o.classes = classes;
    return resmlp_toy(o);
  }
  if (preset == "mini-vgg") {
    MiniVggOptions o;
    o.channels = channels;
    o.image = image;
    o.widths = widths;
    o.sigma_w = sigma_w;
    o.sigma_b = sigma_b;
    o.classes = classes;
    return mini_vgg(o);
  }
  if (preset == "custom") {
    if (blocks.empty()) throw InvalidArgument("custom network has no network.block lines");
    return NetworkSpec(input, blocks);
  }
  throw InvalidArgument("unknown preset '" + preset + "' (mlp|prebn-resmlp|resmlp-toy|mini-vgg|custom)");
}

AuxScalars NetworkConfig::aux(const NetworkSpec& spec) const {
  AuxScalars a = AuxScalars::ones(spec.size());
  if (preset == "custom" && aux_w.size() == spec.size() && aux_b.size() == spec.size()) {
    a.weight = aux_w;
    a.bias = aux_b;
  }
  return a;
}

ExperimentConfig parse_config(std::istream& in, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  parse_into(cfg, in, base_dir, false, 0);
  return cfg;
}

ExperimentConfig parse_config_string(std::string_view text, const std::filesystem::path& base_dir) {
  std::istringstream is{std::string(text)};
  return parse_config(is, base_dir);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(0, "", "cannot open config file " + path.string());
  return parse_config(f, path.parent_path());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) {
    const std::string v = k.get(cfg);
    if (v.empty()) continue;
    out += k.name + " = " + v + "\n";
  }
  const bool aux = !cfg.network.aux_w.empty();
  for (std::size_t i = 0; i < cfg.network.blocks.size(); ++i) {
    out += "network.block = " +
           block_line(cfg.network.blocks[i], aux ? cfg.network.aux_w[i] : 1.0, aux ? cfg.network.aux_b[i] : 1.0, aux) +
           "\n";
  }
  for (const auto& a : cfg.scan.axes) {
    out += "scan.axis = " + a.key + " " + format_g(a.min) + " " + format_g(a.max) + " " + std::to_string(a.points) +
           (a.log ? " log" : "") + "\n";
  }
  return out;
}

std::string serialize_network(const NetworkSpec& spec, const AuxScalars* aux) {
  std::string out = "network.preset = custom\nnetwork.input = ";
  for (std::size_t i = 0; i < spec.input_shape().size(); ++i) {
    if (i) out += ',';
    out += std::to_string(spec.input_shape()[i]);
  }
  out += '\n';
  for (std::size_t i = 0; i < spec.size(); ++i) {
    out += "network.block = " +
           block_line(spec.blocks()[i], aux ? aux->weight[i] : 1.0, aux ? aux->bias[i] : 1.0, aux != nullptr) + "\n";
  }
  return out;
}

void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value, std::size_t line) {
  const Key* k = find_key(key);
  if (!k) throw ConfigError(line, std::string(key), "unknown key");
  k->set(cfg, Ctx{line, key}, value);
}

void validate_config(const ExperimentConfig& cfg) {
  NetworkSpec spec;
  try {
    spec = cfg.network.build();
  } catch (const Error& e) {
    throw ConfigError(0, "network", e.what());
  }
  if (!cfg.network.aux_w.empty() && cfg.network.aux_w.size() != spec.size()) {
    throw ConfigError(0, "network.block", "aux values must be given for every layer");
  }
  if (cfg.data.source != "gaussian" && cfg.data.source != "cifar10") {
    throw ConfigError(0, "data.source", "expected gaussian or cifar10");
  }
  if (cfg.data.batch < 1) throw ConfigError(0, "data.batch", "batch size must be positive");
  if (cfg.data.source == "cifar10") {
    if (cfg.data.path.empty()) throw ConfigError(0, "data.path", "cifar10 needs a path");
    const auto p = resolve_data_path(cfg.data.path);
    if (!std::filesystem::exists(p)) throw ConfigError(0, "data.path", "no such file " + p.string());
    if (spec.input_shape() != Shape{3, 32, 32}) {
      throw ConfigError(0, "network", "cifar10 input needs a [3, 32, 32] network input");
    }
  }
  if (cfg.measure.k < 1) throw ConfigError(0, "measure.k", "k must be positive");
  if (cfg.measure.samples < 1) throw ConfigError(0, "measure.samples", "need at least one parameter sample");
  for (auto [l0, l] : cfg.measure.pairs) {
    if (!(l0 < l && l <= spec.groups())) {
      throw ConfigError(0, "measure.pairs", "pair " + std::to_string(l0) + ":" + std::to_string(l) + " out of range");
    }
  }
  try {
    cfg.tune.validate();
  } catch (const Error& e) {
    throw ConfigError(0, "tune", e.what());
  }
  if (cfg.scan.command != "measure" && cfg.scan.command != "tune") {
    throw ConfigError(0, "scan.command", "expected measure or tune");
  }
}

}  // namespace crit
