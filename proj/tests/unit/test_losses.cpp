#include <doctest.h>

#include <cmath>
#include <numbers>

#include "crit/error.hpp"
#include "crit/losses.hpp"

using namespace crit;

TEST_SUITE("losses") {
  TEST_CASE("jll") {
    CHECK(jll(std::vector<double>{1, 1, 1}).total == 0.0);
    CHECK(jll(std::vector<double>{std::numbers::e}).total == doctest::Approx(0.5));
    CHECK(jll(std::vector<double>{std::numbers::e, 1 / std::numbers::e}).total == doctest::Approx(1.0));
    CHECK_THROWS_AS(jll(std::vector<double>{0.0}), Error);
    CHECK(jll(std::vector<double>{2, 3}).terms.size() == 2);
  }

  TEST_CASE("jsl") {
    CHECK(jsl(std::vector<double>{1, 1}).total == 0.0);
    CHECK(jsl(std::vector<double>{2}).total == 0.5);
    CHECK(jsl(std::vector<double>{3, 0}).total == 2.5);
  }

  TEST_CASE("jkl") {
    CHECK(jkl(std::vector<double>{1, 1}, std::vector<double>{2, 2, 2}, 0.7).total == 0.0);
    CHECK(jkl(std::vector<double>{1}, std::vector<double>{1, 4}, 0.5).total ==
          doctest::Approx(0.25 * std::pow(std::log(4.0), 2)));
    CHECK(jkl(std::vector<double>{1}, std::vector<double>{1, 4}, 0.5).total == doctest::Approx(0.4805).epsilon(1e-4));
    CHECK_THROWS_AS(jkl(std::vector<double>{1, 1}, std::vector<double>{1, 1}, 0.5), Error);
  }

  TEST_CASE("jkl reduces to (1 + lambda) jll when K ratios equal J") {
    const std::vector<double> j{0.5, 2.0, 1.3, 0.9};
    std::vector<double> k{1.7};
    for (double v : j) k.push_back(k.back() * v);
    for (double lambda : {0.0, 0.05, 0.5, 2.0}) {
      CHECK(jkl(j, k, lambda).total == doctest::Approx((1 + lambda) * jll(j).total).epsilon(1e-13));
      const std::vector<double> tail(j.begin() + 1, j.end());
      CHECK(jkl(j, k, lambda, PairRange::interior_only).total ==
            doctest::Approx((1 + lambda) * jll(tail).total).epsilon(1e-13));
    }
  }

  TEST_CASE("pair range names") {
    CHECK(parse_pair_range(to_string(PairRange::interior_only)) == PairRange::interior_only);
    CHECK(parse_pair_range("include-io") == PairRange::include_io);
    CHECK_THROWS(parse_pair_range("all"));
  }
}
