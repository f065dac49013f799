#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "crit/config.hpp"
#include "crit/error.hpp"

using namespace crit;

namespace {

const char* full_config = R"(# every section
seed = 17
network.preset = mlp
network.depth = 6
network.width = 64
network.sigma_w = 1.7
network.sigma_b = 0.25
network.activation = tanh
data.source = gaussian
data.batch = 32
data.normalize = false
measure.k = 2
measure.pairs = 0:2, 2:6
measure.method = estimated
measure.n_v = 40
measure.samples = 3
tune.loss = jkl
tune.lambda = 0.05
tune.range = interior-only
tune.eta = 0.03
tune.steps = 392
tune.epsilon = 1e-4
tune.method = estimated
tune.n_v = 3
tune.return_mode = freeze-aux
tune.mask = weights, affine
tune.fd_step = 0.001
tune.fresh_batch = true
tune.network_out = tuned.net
scan.command = tune
scan.axis = tune.eta 0.01 0.4 5 log
scan.axis = network.sigma_w 1 3 3
verify.suites = estimator, factorization
verify.quick = true
verify.width = 300
)";

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("parses every section") {
    const ExperimentConfig c = parse_config_string(full_config);
    CHECK(c.seed == 17);
    CHECK(c.network.depth == 6);
    CHECK(c.network.activation == ActivationKind::tanh);
    CHECK(c.data.batch == 32);
    CHECK_FALSE(c.data.normalize);
    CHECK(c.measure.pairs.size() == 2);
    CHECK(c.measure.apjn.method == ApjnMethod::estimated);
    CHECK(c.measure.apjn.n_v == 40);
    CHECK(c.tune.loss == LossKind::jkl);
    CHECK(c.tune.range == PairRange::interior_only);
    CHECK(c.tune.steps == 392);
    CHECK(c.tune.mask.affine);
    CHECK_FALSE(c.tune.mask.biases);
    CHECK(c.tune_network_out == "tuned.net");
    REQUIRE(c.scan.axes.size() == 2);
    CHECK(c.scan.axes[0].log);
    CHECK(c.scan.axes[0].values().size() == 5);
    CHECK(c.scan.axes[0].values().back() == doctest::Approx(0.4));
    CHECK(c.scan.axes[1].values() == std::vector<double>{1, 2, 3});
    CHECK(c.verify.suites == std::vector<std::string>{"estimator", "factorization"});
  }

  TEST_CASE("round trip") {
    const ExperimentConfig a = parse_config_string(full_config);
    CHECK(parse_config_string(serialize_config(a)) == a);
    const ExperimentConfig d{};
    CHECK(parse_config_string(serialize_config(d)) == d);

    ExperimentConfig e{};
    e.tune.mask = {false, false, false, false};
    e.network.sigma_w = 0.1 + 0.2;
    CHECK(parse_config_string(serialize_config(e)) == e);
  }

  TEST_CASE("custom networks and serialized specs") {
    const NetworkSpec spec = mini_vgg({});
    AuxScalars aux = AuxScalars::ones(spec.size());
    aux.weight[0] = 1.25;
    aux.bias[0] = 0.5;
    const ExperimentConfig c = parse_config_string(serialize_network(spec, &aux));
    CHECK(c.network.preset == "custom");
    CHECK(c.network.build() == spec);
    const AuxScalars back = c.network.aux(spec);
    CHECK(back.weight == aux.weight);
    CHECK(back.bias == aux.bias);
    CHECK(parse_config_string(serialize_config(c)) == c);
    for (const NetworkSpec& s : {resmlp_toy({}), prebn_resmlp(3, 16, 1, 0.5, 0.5), mlp(2, 4, 1, 0)}) {
      CHECK(parse_config_string(serialize_network(s)).network.build() == s);
    }
  }

  TEST_CASE("errors carry line and field") {
    try {
      parse_config_string("seed = 1\n\nnetwork.depth = ten\n");
      FAIL("expected error");
    } catch (const ConfigError& e) {
      CHECK(e.line() == 3);
      CHECK(e.field() == "network.depth");
    }
    CHECK_THROWS_AS(parse_config_string("no equals sign"), ConfigError);
    CHECK_THROWS_AS(parse_config_string("network.colour = red"), ConfigError);
    CHECK_THROWS_AS(parse_config_string("tune.loss = mse"), ConfigError);
    CHECK_THROWS_AS(validate_config(parse_config_string("network.preset = custom\nnetwork.input = 4\n"
                                                        "network.block = dense fan_in=4 boundary")),
                    ConfigError);
    CHECK_THROWS_AS(parse_config_string("scan.axis = tune.eta 1 2"), ConfigError);
    try {
      parse_config_string("network.block = dense fan_in=4 fan_out=4 colour=1");
      FAIL("expected error");
    } catch (const ConfigError& e) {
      CHECK(e.line() == 1);
      CHECK(e.field() == "network.block");
    }
  }

  TEST_CASE("validation") {
    ExperimentConfig c{};
    CHECK_NOTHROW(validate_config(c));
    c.data.source = "cifar10";
    c.data.path = "/definitely/missing.bin";
    CHECK_THROWS_AS(validate_config(c), ConfigError);
    c = {};
    c.measure.pairs = {{3, 2}};
    CHECK_THROWS_AS(validate_config(c), ConfigError);
    c = {};
    c.tune.steps = 0;
    CHECK_THROWS_AS(validate_config(c), ConfigError);
    c = {};
    c.network.preset = "transformer";
    CHECK_THROWS_AS(validate_config(c), ConfigError);
  }

  TEST_CASE("network.file pulls in another file") {
    const auto dir = std::filesystem::temp_directory_path() / "crit_config_test";
    std::filesystem::create_directories(dir);
    {
      std::ofstream f(dir / "net.cfg");
      f << serialize_network(mlp(3, 8, 1.5, 0.0));
    }
    {
      std::ofstream f(dir / "main.cfg");
      f << "seed = 3\nnetwork.file = net.cfg\n";
    }
    const ExperimentConfig c = load_config(dir / "main.cfg");
    CHECK(c.network.build() == mlp(3, 8, 1.5, 0.0));
    CHECK_THROWS_AS(load_config(dir / "absent.cfg"), ConfigError);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("set_config_value") {
    ExperimentConfig c{};
    set_config_value(c, "tune.eta", "0.125");
    set_config_value(c, "network.sigma_b", "2");
    CHECK(c.tune.eta == 0.125);
    CHECK(c.network.sigma_b == 2.0);
    CHECK_THROWS_AS(set_config_value(c, "network.nothing", "1"), ConfigError);
  }
}
