#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "crit/blocks.hpp"
#include "crit/cifar.hpp"
#include "crit/error.hpp"

using namespace crit;

namespace {

std::filesystem::path write_records(const std::string& name, std::size_t records, std::size_t extra = 0,
                                    unsigned char label = 3) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream f(p, std::ios::binary);
  for (std::size_t r = 0; r < records; ++r) {
    f.put(char(label));
    for (std::size_t i = 0; i < cifar_image_bytes; ++i) f.put(char((i * 7 + r * 13) % 256));
  }
  for (std::size_t i = 0; i < extra; ++i) f.put(0);
  return p;
}

}  // namespace

TEST_SUITE("cifar") {
  TEST_CASE("loads records as CHW images in [0, 1]") {
    const auto p = write_records("crit_cifar_ok.bin", 300);
    const Tensor t = load_cifar10(p, 256, false);
    CHECK(t.shape() == Shape{256, 3, 32, 32});
    CHECK(t[0] == 0.0);
    CHECK(t[1] == doctest::Approx(7.0 / 255.0));
    CHECK(t[cifar_image_bytes] == doctest::Approx(13.0 / 255.0));
    for (double v : t.data()) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
    std::filesystem::remove(p);
  }

  TEST_CASE("normalization is per sample") {
    const auto p = write_records("crit_cifar_norm.bin", 4);
    const Tensor t = load_cifar10(p, 4, true);
    for (std::size_t b = 0; b < 4; ++b) {
      double m = 0.0, v = 0.0;
      for (std::size_t i = 0; i < cifar_image_bytes; ++i) m += t[b * cifar_image_bytes + i];
      m /= double(cifar_image_bytes);
      for (std::size_t i = 0; i < cifar_image_bytes; ++i) v += std::pow(t[b * cifar_image_bytes + i] - m, 2);
      v /= double(cifar_image_bytes);
      CHECK(std::abs(m) <= 1e-10);
      CHECK(std::abs(v - 1.0) <= 1e-10);
    }
    std::filesystem::remove(p);
  }

  TEST_CASE("format errors") {
    const auto trunc = write_records("crit_cifar_trunc.bin", 2, 100);
    CHECK_THROWS_AS(load_cifar10(trunc, 1), FormatError);
    const auto few = write_records("crit_cifar_few.bin", 2);
    CHECK_THROWS_AS(load_cifar10(few, 3), FormatError);
    CHECK_THROWS_AS(load_cifar10(few, 0), InvalidArgument);
    const auto bad = write_records("crit_cifar_label.bin", 1, 0, 12);
    CHECK_THROWS_AS(load_cifar10(bad, 1), FormatError);
    CHECK_THROWS_AS(load_cifar10("/no/such/cifar.bin", 1), FormatError);
    for (const auto& p : {trunc, few, bad}) std::filesystem::remove(p);
  }

  TEST_CASE("data root") {
    const auto p = write_records("crit_cifar_root.bin", 1);
    setenv("CRIT_TUNER_DATA", p.parent_path().c_str(), 1);
    CHECK(resolve_data_path("crit_cifar_root.bin") == p);
    CHECK(resolve_data_path("/abs/x.bin") == std::filesystem::path("/abs/x.bin"));
    unsetenv("CRIT_TUNER_DATA");
    std::filesystem::remove(p);
  }

  TEST_CASE("gaussian batch of the same shape goes through the same network") {
    const NetworkSpec spec = mini_vgg({3, 32, {4, 4, 8, 8, 8, 8}, 1.0, 0.0, 10});
    const ParamSet params = init_params(spec, RngStream(0, 0));
    const auto p = write_records("crit_cifar_net.bin", 2);
    const Tensor img = load_cifar10(p, 2, true);
    RngStream r(0, 1);
    const Tensor g = standardize_samples(gaussian_batch(spec, 2, r));
    CHECK(img.shape() == g.shape());
    CHECK(forward_output(spec, params, AuxScalars::ones(spec.size()), img).shape() ==
          forward_output(spec, params, AuxScalars::ones(spec.size()), g).shape());
    std::filesystem::remove(p);
    CHECK_THROWS_AS(standardize_samples(Tensor({1, 4}, 2.0)), Error);
  }
}
