#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "crit/commands.hpp"
#include "crit/error.hpp"
#include "crit/meanfield.hpp"

using namespace crit;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

fs::path scratch() {
  const fs::path d = fs::temp_directory_path() / "crit_commands_test";
  fs::create_directories(d);
  return d;
}

int run_cli(const std::string& args) {
  const char* exe = std::getenv("CRIT_TUNER_EXE");
  if (!exe) return -1;
  const int rc = std::system((std::string(exe) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

ExperimentConfig small_mlp() {
  ExperimentConfig c;
  c.network.depth = 9;
  c.network.width = 40;
  c.data.batch = 4;
  return c;
}

}  // namespace

TEST_SUITE("commands") {
  TEST_CASE("measure on a critical relu net") {
    ExperimentConfig c;
    c.data.batch = 256;
    c.measure.apjn.method = ApjnMethod::estimated;
    c.measure.apjn.n_v = 20;
    const Measurement m = run_measure(c);
    REQUIRE(m.report.pairs.size() == 10);
    for (double v : m.report.values()) CHECK(v == doctest::Approx(1.0).epsilon(0.1));
    std::ostringstream os;
    write_measure(os, m, OutputFormat::csv);
    const auto ls = lines(os.str());
    CHECK(ls.front() == "l0,l,J,stderr,method,N_v,batch,samples,K_l0,K_l");
    CHECK(ls.size() == 11);
  }

  TEST_CASE("k = 3 on a 9-group net gives 3 rows") {
    ExperimentConfig c = small_mlp();
    c.measure.k = 3;
    CHECK(run_measure(c).report.pairs.size() == 3);
  }

  TEST_CASE("resmlp-toy measure follows the closed form") {
    ExperimentConfig c;
    c.network.preset = "resmlp-toy";
    c.network.depth = 2;
    c.network.mu = 1.0;
    c.network.eps_ls = 0.1;
    c.network.sigma_w = 1.0;
    c.data.batch = 2;
    c.data.normalize = false;
    c.measure.pairs = {{1, 2}, {2, 3}};
    c.measure.samples = 8;
    const Measurement m = run_measure(c);
    for (std::size_t i = 0; i < 2; ++i) {
      const double want = resmlp_apjn(m.kernels[i + 1], 1.0, 0.0, 1.0, 0.1, ActivationKind::gelu);
      CHECK(m.report.pairs[i].value == doctest::Approx(want).epsilon(0.1));
    }
  }

  TEST_CASE("one-point scan equals measure") {
    ExperimentConfig c = small_mlp();
    c.scan.axes = {{"network.sigma_w", 1.3, 1.3, 1, false}};
    c.network.sigma_w = 1.3;
    const auto rows = run_scan(c);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].status == "ok");
    CHECK(rows[0].j == run_measure(c).report.values());
  }

  TEST_CASE("scan rows do not depend on the worker count") {
    ExperimentConfig c = small_mlp();
    c.scan.command = "tune";
    c.tune.steps = 5;
    c.tune.eta = 0.05;
    c.tune.epsilon = 0.0;
    c.scan.axes = {{"network.sigma_w", 1.0, 2.5, 4, false}, {"tune.eta", 0.02, 0.08, 2, true}};
    std::ostringstream a, b;
    write_scan(a, c, run_scan(c, 1), OutputFormat::csv);
    write_scan(b, c, run_scan(c, 3), OutputFormat::csv);
    CHECK(a.str() == b.str());
    const auto ls = lines(a.str());
    CHECK(ls.size() == 9);
    CHECK(ls.front() ==
          "network.sigma_w,tune.eta,status,converged,steps,J_min,J_max,J_mean,J_last,predicted_converged,eta0,J_profile");
  }

  TEST_CASE("scan records per-point failures and keeps going") {
    ExperimentConfig c = small_mlp();
    c.scan.axes = {{"network.depth", 0, 2, 3, false}};
    const auto rows = run_scan(c);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].status.rfind("error:", 0) == 0);
    CHECK(rows[1].status == "ok");
    CHECK(rows[2].status == "ok");
  }

  TEST_CASE("eta-sigma scan predicts convergence from the relu map") {
    ExperimentConfig c = small_mlp();
    c.network.depth = 4;
    c.scan.command = "tune";
    c.tune.steps = 40;
    c.tune.epsilon = 0.0;
    c.tune.grad_mode = GradMode::analytic_relu;
    c.scan.axes = {{"network.sigma_w", 1.0, 3.0, 2, false}, {"tune.eta", 0.05, 1.0, 2, true}};
    const auto rows = run_scan(c);
    for (const auto& r : rows) {
      REQUIRE(r.predicted_converged.has_value());
      REQUIRE(r.eta0.has_value());
    }
    CHECK(*rows[0].predicted_converged);
    CHECK(*rows[0].eta0 == doctest::Approx(eta_zero(1.0, 1.0, LossKind::jll)));
    CHECK_FALSE(*rows[3].predicted_converged);
    CHECK(rows[0].converged);
    CHECK_FALSE(rows[3].converged);
  }

  TEST_CASE("tune writes the trace and a loadable network") {
    const fs::path d = scratch();
    ExperimentConfig c = small_mlp();
    c.network.sigma_w = 1.8;
    c.tune.steps = 20;
    c.tune.eta = 0.05;
    CommandOptions o;
    o.out = (d / "trace.csv").string();
    std::ostringstream err;
    REQUIRE(cmd_tune(c, o, err) == exit_ok);
    CHECK(fs::exists(d / "trace.csv"));
    const ExperimentConfig back = load_config(d / "trace.csv.network");
    const NetworkSpec tuned = back.network.build();
    const TuneResult r = run_tune(c);
    CHECK(tuned == r.spec);

    c.tune.return_mode = ReturnMode::freeze_aux;
    c.tune_network_out = (d / "frozen.net").string();
    REQUIRE(cmd_tune(c, o, err) == exit_ok);
    const ExperimentConfig fz = load_config(d / "frozen.net");
    const NetworkSpec fs_ = fz.network.build();
    CHECK(fs_ == c.network.build());
    const AuxScalars aux = fz.network.aux(fs_);
    CHECK(aux.weight[1] != 1.0);
    fs::remove_all(d);
  }

  TEST_CASE("divergence has its own exit code") {
    ExperimentConfig c = small_mlp();
    c.network.depth = 60;
    c.network.width = 16;
    c.network.sigma_w = 0.5;
    c.tune.eta = 1e6;
    c.tune.steps = 5;
    c.tune.grad_mode = GradMode::analytic_relu;
    std::ostringstream out, err;
    CommandOptions o;
    o.out = (scratch() / "div.csv").string();
    CHECK(cmd_tune(c, o, err) == exit_divergence);
    CHECK(fs::exists(o.out));
    fs::remove_all(scratch());
  }

  TEST_CASE("mini-vgg tuning with JKL") {
    ExperimentConfig c;
    c.network.preset = "mini-vgg";
    c.network.image = 8;
    c.network.widths = {4, 4, 8, 8, 8, 8};
    c.network.sigma_w = 2.5;
    c.data.batch = 128;
    c.tune.loss = LossKind::jkl;
    c.tune.lambda = 0.05;
    c.tune.eta = 0.05;
    c.tune.steps = 60;
    c.tune.epsilon = 0.0;
    // BN after every conv cancels a_W, so the affine scalars carry the tuning.
    c.tune.mask.affine = true;
    c.tune.apjn.method = ApjnMethod::estimated;
    c.tune.apjn.n_v = 3;
    const TuneResult r = run_tune(c);
    CHECK(r.trace.steps.back().loss < r.trace.steps.front().loss);
    for (double j : r.trace.steps.back().j) CHECK((j >= 0.8 && j <= 1.25));
  }

  TEST_CASE("verify command") {
    ExperimentConfig c;
    c.verify.suites = {"kernel-fixed-point", "jkl-equivalence"};
    std::ostringstream err;
    CommandOptions o;
    o.out = (scratch() / "verify.csv").string();
    CHECK(cmd_verify(c, o, err) == exit_ok);
    c.verify.suites = {"nonsense"};
    CHECK_THROWS_AS(cmd_verify(c, o, err), ConfigError);
    fs::remove_all(scratch());
    CHECK(suite_names().size() == 16);
  }

  TEST_CASE("json mirrors") {
    ExperimentConfig c = small_mlp();
    std::ostringstream os;
    write_measure(os, run_measure(c), OutputFormat::json);
    CHECK(os.str().find("\"kernels\"") != std::string::npos);
    CHECK(parse_output_format("json") == OutputFormat::json);
    CHECK_THROWS_AS(parse_output_format("xml"), Error);
  }

  TEST_CASE("cli exit codes") {
    if (!std::getenv("CRIT_TUNER_EXE")) return;
    const fs::path d = scratch();
    {
      std::ofstream f(d / "bad.cfg");
      f << "network.depth = -3\n";
    }
    {
      std::ofstream f(d / "ok.cfg");
      f << "network.depth = 3\nnetwork.width = 16\ndata.batch = 2\n";
    }
    {
      std::ofstream f(d / "div.cfg");
      f << "network.depth = 60\nnetwork.width = 16\nnetwork.sigma_w = 0.5\ndata.batch = 2\n"
           "tune.eta = 1e6\ntune.steps = 5\ntune.grad_mode = analytic-relu\n";
    }
    CHECK(run_cli("measure --config " + (d / "ok.cfg").string()) == 0);
    CHECK(run_cli("measure --config " + (d / "ok.cfg").string() + " --format json --seed 4") == 0);
    CHECK(run_cli("measure --config " + (d / "bad.cfg").string()) == exit_config);
    CHECK(run_cli("measure --config " + (d / "missing.cfg").string()) == exit_config);
    CHECK(run_cli("measure --format xml") == exit_config);
    CHECK(run_cli("tune --config " + (d / "div.cfg").string() + " --out " + (d / "t.csv").string()) ==
          exit_divergence);
    CHECK(run_cli("scan --config " + (d / "ok.cfg").string()) == exit_config);
    fs::remove_all(d);
  }
}
