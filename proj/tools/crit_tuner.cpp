// crit-tuner: measure | tune | scan | verify

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "crit/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"APJN measurement and auxiliary-scalar tuning for critical initialization"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "crit-tuner 0.1.0");

  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "csv";
  std::size_t workers = 1;

  for (auto [name, help] : {std::pair{"measure", "APJN profile and kernels of the configured network"},
                            {"tune", "tune auxiliary scalars; writes the trace and the returned network"},
                            {"scan", "run measure or tune over a 1- or 2-axis grid"},
                            {"verify", "run oracle suites and report pass/fail"}}) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "config file (key = value lines)");
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out, "output path (default stdout)");
    sub->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    sub->add_option("--workers", workers, "scan worker threads")->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : crit::exit_config;
  }

  crit::CommandOptions opt;
  opt.format = crit::parse_output_format(format);
  opt.out = out;
  opt.workers = workers;
  const std::string command = app.get_subcommands().front()->get_name();
  return crit::run_command(command, config, seed, opt, std::cerr);
}
