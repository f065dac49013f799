#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crit/apjn.hpp"
#include "crit/blocks.hpp"
#include "crit/tuner.hpp"

namespace crit {

/// Network section. Presets expand through the builders in blocks.hpp;
/// "custom" lists the layers explicitly.
struct NetworkConfig {
  std::string preset = "mlp";  // mlp | prebn-resmlp | resmlp-toy | mini-vgg | custom
  std::size_t depth = 10;
  std::size_t width = 500;
  std::size_t input_width = 0;
  double sigma_w = 1.4142135623730951;
  double sigma_b = 0.0;
  double mu = 1.0;
  double bn_eps = 1e-5;
  double eps_ls = 0.1;
  /// Unset means relu, or gelu for resmlp-toy.
  std::optional<ActivationKind> activation;
  std::size_t channels = 3;
  std::size_t image = 16;
  std::size_t patch = 4;
  std::size_t dim = 64;
  std::size_t classes = 10;
  std::vector<std::size_t> widths = {8, 8, 16, 16, 32, 32};

  Shape input;
  std::vector<BlockSpec> blocks;
  /// Frozen multipliers per custom layer; empty when not given.
  std::vector<double> aux_w;
  std::vector<double> aux_b;

  NetworkSpec build() const;
  /// Frozen aux scalars for custom networks, all ones otherwise.
  AuxScalars aux(const NetworkSpec& spec) const;
  bool operator==(const NetworkConfig&) const = default;
};

struct DataConfig {
  std::string source = "gaussian";  // gaussian | cifar10
  std::string path;
  std::size_t batch = 256;
  bool normalize = true;

  bool operator==(const DataConfig&) const = default;
};

struct MeasureConfig {
  std::size_t k = 1;
  /// Explicit (l0, l) pairs; empty means non-overlapping pairs of k groups.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  ApjnOptions apjn{};
  std::size_t samples = 1;

  bool operator==(const MeasureConfig&) const = default;
};

struct ScanAxis {
  std::string key;
  double min = 0.0;
  double max = 0.0;
  std::size_t points = 1;
  bool log = false;

  std::vector<double> values() const;
  bool operator==(const ScanAxis&) const = default;
};

struct ScanConfig {
  std::string command = "measure";  // measure | tune
  std::vector<ScanAxis> axes;

  bool operator==(const ScanConfig&) const = default;
};

struct VerifyConfig {
  std::vector<std::string> suites = {"all"};
  /// Reduced sizes for a fast smoke run.
  bool quick = false;
  std::size_t width = 0;
  std::size_t n_v = 0;

  bool operator==(const VerifyConfig&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  NetworkConfig network;
  DataConfig data;
  MeasureConfig measure;
  TuneConfig tune;
  /// Where cmd_tune writes the returned network; empty derives it from --out.
  std::string tune_network_out;
  ScanConfig scan;
  VerifyConfig verify;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Parses "key = value" lines; '#' starts a comment. network.block and
/// scan.axis may repeat. network.file pulls the network section from another
/// file, resolved against base_dir. Errors carry line and field.
ExperimentConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {});
ExperimentConfig parse_config_string(std::string_view text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Text that parses back to an equal config.
std::string serialize_config(const ExperimentConfig& cfg);
/// network.* lines for a custom network with the given layers and aux.
std::string serialize_network(const NetworkSpec& spec, const AuxScalars* aux = nullptr);

/// Sets one scalar key as if it appeared on the given line.
void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value, std::size_t line = 0);

/// Semantic checks for a command: network builds, data path exists,
/// tune settings valid. Throws ConfigError.
void validate_config(const ExperimentConfig& cfg);

}  // namespace crit
