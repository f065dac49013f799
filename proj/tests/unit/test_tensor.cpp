#include <doctest.h>

#include <cmath>

#include "crit/error.hpp"
#include "crit/rng.hpp"
#include "crit/tensor.hpp"

using namespace crit;

TEST_SUITE("tensor") {
  TEST_CASE("flatten keeps row-major order") {
    const Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor fa = flatten(a);
    CHECK(fa.shape() == Shape{6});
    for (std::size_t i = 0; i < 6; ++i) CHECK(fa[i] == double(i + 1));

    const Tensor v({5}, {1, 2, 3, 4, 5});
    CHECK(flatten(v) == v);

    std::vector<double> d(8);
    for (std::size_t i = 0; i < 8; ++i) d[i] = double(i + 1);
    const Tensor c({2, 2, 2}, d);
    CHECK(flatten(c).data().size() == 8);
    CHECK(std::equal(d.begin(), d.end(), flatten(c).data().begin()));
  }

  TEST_CASE("construction checks") {
    CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), Error);
    CHECK_THROWS_AS(Tensor({2, 0}), Error);
    CHECK_THROWS_AS(Tensor({2, 3}).reshaped({4}), Error);
    CHECK(Tensor({2, 3}).reshaped({3, 2}).shape() == Shape{3, 2});
  }

  TEST_CASE("gaussian with zero std is all zeros") {
    RngStream r(1, 2);
    const Tensor t = gaussian({4}, 0.0, 0.0, r);
    for (double v : t.data()) CHECK(v == 0.0);
  }

  TEST_CASE("streams are deterministic") {
    RngStream a(42, 7), b(42, 7);
    CHECK(gaussian({100}, 0, 1, a) == gaussian({100}, 0, 1, b));
    RngStream c(42, 8);
    RngStream d(42, 7);
    CHECK_FALSE(gaussian({100}, 0, 1, c) == gaussian({100}, 0, 1, d));
    CHECK(RngStream(3, 4).split(5).next_u64() == RngStream(3, 4).split(5).next_u64());
    CHECK(RngStream(3, 4).split(5).next_u64() != RngStream(3, 4).split(6).next_u64());
  }

  TEST_CASE("gaussian moments") {
    RngStream r(0, 0);
    const Tensor t = gaussian({1000000}, 0.0, 1.0, r);
    double m = 0.0, v = 0.0;
    for (double x : t.data()) m += x;
    m /= double(t.size());
    for (double x : t.data()) v += (x - m) * (x - m);
    v /= double(t.size() - 1);
    CHECK(std::abs(m) < 3e-3);
    CHECK(std::abs(v - 1.0) < 0.01);
  }

  TEST_CASE("uniform stays inside (0, 1)") {
    RngStream r(9, 9);
    for (int i = 0; i < 100000; ++i) {
      const double u = r.uniform();
      REQUIRE(u > 0.0);
      REQUIRE(u < 1.0);
    }
  }

  TEST_CASE("sums of squares") {
    const std::vector<double> v{1, 2, 3};
    CHECK(sum_of_squares(v) == 14.0);
    CHECK(mean_of_squares(v) == doctest::Approx(14.0 / 3.0));
  }
}
