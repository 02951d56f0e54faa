#include <doctest.h>

#include <cmath>

#include "o2o/mlp.hpp"

using namespace o2o;

TEST_SUITE("mlp") {

TEST_CASE("rng streams are pure splits and deterministic") {
  const Rng root(123);
  Rng a1 = root.split(5);
  Rng a2 = root.split(5);
  Rng b = root.split(6);
  const double x1 = a1.normal();
  const double x2 = a2.normal();
  CHECK(x1 == x2);            // same tag, same stream
  CHECK(b.normal() != x1);    // different tag, different stream
  // Splitting does not advance the parent's own stream.
  Rng p1 = root;
  Rng p2 = root;
  (void)p1.split(77);
  CHECK(p1.normal() == p2.normal());
}

TEST_CASE("uniform_int stays in range and covers the range") {
  Rng rng(3);
  bool seen[5] = {false, false, false, false, false};
  for (int i = 0; i < 500; ++i) {
    const std::int64_t v = rng.uniform_int(5);
    REQUIRE(v >= 0);
    REQUIRE(v < 5);
    seen[v] = true;
  }
  for (bool s : seen) CHECK(s);
  CHECK_THROWS_AS(rng.uniform_int(0), ConfigError);
}

TEST_CASE("orthogonal init gives orthonormal columns scaled by the gain") {
  Rng rng(11);
  const double gain = std::sqrt(2.0);
  const Mat w = orthogonal_init(16, 8, gain, rng);
  const Mat gram = w.transpose() * w;
  const Mat expect = (gain * gain) * Mat::Identity(8, 8);
  CHECK((gram - expect).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("orthogonal init is deterministic under the same stream") {
  Rng r1(77), r2(77);
  const Mat a = orthogonal_init(6, 4, 1.0, r1);
  const Mat b = orthogonal_init(6, 4, 1.0, r2);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward matches a hand-computed two-layer tanh net") {
  Mlp net = make_mlp({1, 2, 1});
  net.weights[0] << 1.0, -1.0;  // 2 x 1
  net.biases[0] << 0.5, 0.0;
  net.weights[1] << 2.0, 3.0;  // 1 x 2
  net.biases[1] << -0.25;
  Mat x(1, 1);
  x << 0.7;
  const double h0 = std::tanh(1.0 * 0.7 + 0.5);
  const double h1 = std::tanh(-1.0 * 0.7);
  const double y = 2.0 * h0 + 3.0 * h1 - 0.25;
  const Mat out = mlp_forward(net, x);
  CHECK(out(0, 0) == doctest::Approx(y).epsilon(1e-15));
}

TEST_CASE("flatten and unflatten round trip exactly") {
  Rng rng(5);
  Mlp net = make_mlp({3, 7, 4});
  init_mlp(net, rng, std::sqrt(2.0), 0.3);
  const Vec theta = flatten(net);
  Mlp net2 = make_mlp({3, 7, 4});
  unflatten(net2, theta);
  CHECK((flatten(net2) - theta).cwiseAbs().maxCoeff() == 0.0);
  const Mat x = rng.normal_mat(5, 3);
  CHECK((mlp_forward(net, x) - mlp_forward(net2, x)).cwiseAbs().maxCoeff() ==
        0.0);
}

TEST_CASE("backward gradients agree with central differences") {
  Rng rng(9);
  Mlp net = make_mlp({2, 6, 6, 3});
  init_mlp(net, rng, std::sqrt(2.0), 1.0);
  const Mat x = rng.normal_mat(4, 2);
  const Mat target = rng.normal_mat(4, 3);
  auto loss_at = [&](const Vec& theta) {
    Mlp n2 = net;
    unflatten(n2, theta);
    return (mlp_forward(n2, x) - target).squaredNorm();
  };
  MlpCache cache;
  const Mat out = mlp_forward(net, x, cache);
  MlpGrads grads = make_grads(net);
  mlp_backward(net, cache, 2.0 * (out - target), grads);
  const GradCheckReport rep =
      finite_diff_gradcheck(loss_at, flatten(net), flatten_grads(net, grads));
  CHECK(rep.pass());
  CHECK(rep.max_relative_error < 1e-6);
}

TEST_CASE("backward returns the input gradient as well") {
  Rng rng(13);
  Mlp net = make_mlp({3, 5, 2});
  init_mlp(net, rng, std::sqrt(2.0), 1.0);
  Mat x = rng.normal_mat(1, 3);
  MlpCache cache;
  const Mat out = mlp_forward(net, x, cache);
  MlpGrads grads = make_grads(net);
  // Loss = sum of outputs; dX via backward vs central differences.
  const Mat dx = mlp_backward(net, cache, Mat::Ones(1, 2), grads);
  for (int d = 0; d < 3; ++d) {
    Mat xp = x, xm = x;
    const double h = 1e-6;
    xp(0, d) += h;
    xm(0, d) -= h;
    const double num =
        (mlp_forward(net, xp).sum() - mlp_forward(net, xm).sum()) / (2 * h);
    CHECK(dx(0, d) == doctest::Approx(num).epsilon(1e-5));
  }
}

TEST_CASE("gradcheck rejects a corrupted gradient") {
  const Vec theta = Vec::Constant(3, 0.5);
  auto f = [](const Vec& t) { return t.squaredNorm(); };
  Vec good = 2.0 * theta;
  CHECK(finite_diff_gradcheck(f, theta, good).pass());
  Vec bad = good;
  bad(1) += 0.05;
  CHECK_FALSE(finite_diff_gradcheck(f, theta, bad).pass());
}

TEST_CASE("first adam step on a unit gradient moves by minus the rate") {
  Adam adam;
  adam.init(3);
  Vec theta = Vec::Zero(3);
  adam.step(theta, Vec::Ones(3), 1e-3);
  for (int i = 0; i < 3; ++i) {
    CHECK(theta(i) == doctest::Approx(-1e-3).epsilon(1e-6));
  }
  CHECK(adam.step_count == 1);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  Adam adam;
  adam.init(4);
  Vec theta = Vec::LinSpaced(4, 1.0, 4.0);
  const Vec before = theta;
  Rng rng(2);
  adam.step(theta, rng.normal_mat(4, 1).col(0), 0.0);
  CHECK((theta - before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam rejects non-finite gradients with the offending index") {
  Adam adam;
  adam.init(3);
  Vec theta = Vec::Zero(3);
  Vec g = Vec::Ones(3);
  g(2) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(adam.step(theta, g, 1e-3), NumericError);
}

TEST_CASE("adam descends a quadratic") {
  Adam adam;
  adam.init(2);
  Vec theta(2);
  theta << 3.0, -2.0;
  for (int i = 0; i < 2000; ++i) {
    adam.step(theta, 2.0 * theta, 1e-2);
  }
  CHECK(theta.cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("linear decay endpoints and range checks") {
  CHECK(decay_schedule(3e-4, 0.0) == doctest::Approx(3e-4));
  CHECK(decay_schedule(3e-4, 0.5) == doctest::Approx(1.5e-4));
  CHECK(decay_schedule(3e-4, 1.0) == doctest::Approx(0.0));
  CHECK_THROWS_AS(decay_schedule(1.0, -0.1), ConfigError);
  CHECK_THROWS_AS(decay_schedule(1.0, 1.1), ConfigError);
}

}  // TEST_SUITE
