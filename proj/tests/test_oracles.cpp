#include <doctest.h>

#include <cmath>
#include <vector>

#include "o2o/tabular.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace o2o;

TEST_SUITE("oracles") {

TEST_CASE("expectile at tau one-half is the sample mean") {
  const std::vector<double> xs = {-2.0, -0.5, 0.25, 1.0, 3.75};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  CHECK(oracle::expectile_1d(xs, 0.5) == doctest::Approx(mean).epsilon(1e-9));
}

TEST_CASE("two-point expectile has the closed form tau") {
  // For samples {0, 1}: tau * (1 - e) = (1 - tau) * e, so e = tau.
  const std::vector<double> xs = {0.0, 1.0};
  CHECK(oracle::expectile_1d(xs, 0.7) == doctest::Approx(0.7).epsilon(1e-9));
  CHECK(oracle::expectile_1d(xs, 0.9) == doctest::Approx(0.9).epsilon(1e-9));
  CHECK(oracle::expectile_1d(xs, 0.5) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("constant samples give that constant at any tau") {
  const std::vector<double> xs = {4.2, 4.2, 4.2};
  for (double tau : {0.1, 0.5, 0.9}) {
    CHECK(oracle::expectile_1d(xs, tau) == doctest::Approx(4.2).epsilon(1e-12));
  }
}

TEST_CASE("expectile is monotone in tau and brackets the data") {
  Rng rng(42);
  std::vector<double> xs;
  for (int i = 0; i < 31; ++i) xs.push_back(rng.uniform(-3.0, 5.0));
  double prev = -1e300;
  for (double tau : {0.1, 0.3, 0.5, 0.7, 0.9, 0.99}) {
    const double e = oracle::expectile_1d(xs, tau);
    CHECK(e > prev);
    CHECK(e >= -3.0);
    CHECK(e <= 5.0);
    prev = e;
  }
}

TEST_CASE("expectile rejects empty samples and bad tau") {
  CHECK_THROWS_AS(oracle::expectile_1d({}, 0.5), std::runtime_error);
  CHECK_THROWS_AS(oracle::expectile_1d({1.0}, 0.0), std::runtime_error);
  CHECK_THROWS_AS(oracle::expectile_1d({1.0}, 1.0), std::runtime_error);
}

TEST_CASE("horizon zero enumerates to zero") {
  Rng rng(7);
  const TabularMdp mdp = test_util::random_mdp(3, 2, rng);
  const Mat policy = test_util::uniform_policy(3, 2);
  const Mat q = Mat::Ones(3, 2);
  CHECK(oracle::enumerate_amq(mdp, policy, q, 0) == 0.0);
}

TEST_CASE("deterministic chain gives the closed-form q sum") {
  // Cycle 0 -> 1 -> 2; q(s, 0) = s; start at 0. Three steps visit 0, 1, 2.
  const TabularMdp mdp = test_util::chain_mdp(3);
  const Mat policy = test_util::uniform_policy(3, 1);
  Mat q(3, 1);
  q << 0.0, 1.0, 2.0;
  CHECK(oracle::enumerate_amq(mdp, policy, q, 1) == doctest::Approx(0.0));
  CHECK(oracle::enumerate_amq(mdp, policy, q, 2) == doctest::Approx(1.0));
  CHECK(oracle::enumerate_amq(mdp, policy, q, 3) == doctest::Approx(3.0));
  CHECK(oracle::enumerate_amq(mdp, policy, q, 5) ==
        doctest::Approx(0.0 + 1.0 + 2.0 + 0.0 + 1.0));
}

TEST_CASE("enumeration guard trips on oversized trees") {
  Rng rng(9);
  const TabularMdp mdp = test_util::random_mdp(6, 4, rng);
  const Mat policy = test_util::uniform_policy(6, 4);
  const Mat q = Mat::Zero(6, 4);
  // (6 * 4)^5 ~ 8e6 > 1e6.
  CHECK_THROWS_AS(oracle::enumerate_amq(mdp, policy, q, 5), std::runtime_error);
}

TEST_CASE("identical gaussians have zero divergence") {
  CHECK(oracle::gaussian_kl_1d(0.3, 1.7, 0.3, 1.7) == doctest::Approx(0.0));
}

TEST_CASE("unit-std mean shift of one gives half a nat each direction") {
  CHECK(oracle::gaussian_kl_1d(0.0, 1.0, 1.0, 1.0) == doctest::Approx(0.5));
  CHECK(oracle::gaussian_kl_1d(1.0, 1.0, 0.0, 1.0) == doctest::Approx(0.5));
  const double sym = oracle::gaussian_kl_1d(0.0, 1.0, 1.0, 1.0) +
                     oracle::gaussian_kl_1d(1.0, 1.0, 0.0, 1.0);
  CHECK(sym == doctest::Approx(1.0));
}

TEST_CASE("doubled std at the same mean") {
  // log 2 + 1/8 - 1/2 = 0.31814718...
  const double expect = std::log(2.0) + 0.125 - 0.5;
  CHECK(oracle::gaussian_kl_1d(0.0, 1.0, 0.0, 2.0) ==
        doctest::Approx(expect).epsilon(1e-12));
  CHECK(expect == doctest::Approx(0.31815).epsilon(1e-4));
}

TEST_CASE("gaussian kl rejects non-positive stds") {
  CHECK_THROWS_AS(oracle::gaussian_kl_1d(0.0, 0.0, 0.0, 1.0),
                  std::runtime_error);
  CHECK_THROWS_AS(oracle::gaussian_kl_1d(0.0, 1.0, 0.0, -1.0),
                  std::runtime_error);
}

}  // TEST_SUITE
