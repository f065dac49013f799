#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "crit/apjn.hpp"
#include "crit/config.hpp"
#include "crit/tuner.hpp"
#include "crit/verify.hpp"

namespace crit {

inline constexpr int exit_ok = 0;
inline constexpr int exit_error = 1;
inline constexpr int exit_config = 2;
inline constexpr int exit_divergence = 3;
inline constexpr int exit_verify = 4;

enum class OutputFormat { csv, json };
OutputFormat parse_output_format(std::string_view s);

struct CommandOptions {
  OutputFormat format = OutputFormat::csv;
  /// Empty writes to stdout.
  std::string out;
  std::size_t workers = 1;
};

/// Input batch for grid point `point` (stream (seed, point).split(2)).
Tensor make_batch(const ExperimentConfig& cfg, const NetworkSpec& spec, std::uint64_t point = 0);

Measurement run_measure(const ExperimentConfig& cfg, std::uint64_t point = 0);
void write_measure(std::ostream& os, const Measurement& m, OutputFormat fmt);

/// Throws DivergenceError with the partial trace.
TuneResult run_tune(const ExperimentConfig& cfg, std::uint64_t point = 0);
/// Network file for the returned network: sigmas folded in, or frozen aux.
std::string tuned_network_text(const TuneResult& res, ReturnMode mode);

struct ScanRow {
  std::vector<double> coords;
  std::string status = "ok";  // ok | diverged | error: ...
  bool converged = false;
  std::size_t steps = 0;
  std::vector<double> j;
  /// Set only where the ReLU map applies (relu MLP, sigma_b = 0, JLL/JSL, constant eta).
  std::optional<bool> predicted_converged;
  std::optional<double> eta0;
};

/// Every grid point on its own stream; rows come back in grid order and do
/// not depend on the worker count.
std::vector<ScanRow> run_scan(const ExperimentConfig& cfg, std::size_t workers = 1);
void write_scan(std::ostream& os, const ExperimentConfig& cfg, const std::vector<ScanRow>& rows, OutputFormat fmt);

void write_verify(std::ostream& os, const std::vector<SuiteResult>& results, OutputFormat fmt);

/// Command entry points. Diagnostics go to err; the return value is the exit code.
int cmd_measure(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& err);
int cmd_tune(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& err);
int cmd_scan(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& err);
int cmd_verify(const ExperimentConfig& cfg, const CommandOptions& opt, std::ostream& err);

/// Loads the config (empty path = defaults), applies the seed override and
/// dispatches on the command name.
int run_command(const std::string& command, const std::string& config_path, std::optional<std::uint64_t> seed,
                const CommandOptions& opt, std::ostream& err);

}  // namespace crit
