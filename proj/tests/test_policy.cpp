#include <doctest.h>

#include <cmath>

#include "o2o/mlp.hpp"
#include "o2o/policy.hpp"

using namespace o2o;

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

GaussianPolicy small_policy(std::uint64_t seed, double log_std_init = -0.5) {
  Rng rng(seed);
  const Vec lo = Vec::Constant(2, -1.0);
  const Vec hi = Vec::Constant(2, 1.0);
  return make_policy(3, lo, hi, {8, 8}, rng, std::sqrt(2.0), 0.5, log_std_init);
}

double manual_logprob(const GaussianPolicy& p, const Vec& obs, const Vec& act) {
  const Vec mu = policy_mean(p, obs.transpose()).row(0).transpose();
  double lp = 0.0;
  for (Eigen::Index d = 0; d < act.size(); ++d) {
    const double sigma = std::exp(p.log_std(d));
    const double z = (act(d) - mu(d)) / sigma;
    lp += -0.5 * z * z - p.log_std(d) - 0.5 * kLog2Pi;
  }
  return lp;
}

}  // namespace

TEST_SUITE("policy") {

TEST_CASE("constructed means stay strictly inside the action box") {
  const GaussianPolicy p = small_policy(1);
  Rng rng(2);
  const Mat obs = rng.normal_mat(64, 3) * 3.0;
  const Mat mu = policy_mean(p, obs);
  CHECK(mu.minCoeff() > -1.0);
  CHECK(mu.maxCoeff() < 1.0);

  Vec lo = Vec::Constant(2, 1.0);
  Vec hi = Vec::Constant(2, -1.0);
  Rng r2(3);
  CHECK_THROWS_AS(make_policy(3, lo, hi, {4}, r2, 1.0, 1.0, 0.0), ConfigError);
}

TEST_CASE("log density is the diagonal gaussian at the raw action") {
  const GaussianPolicy p = small_policy(5);
  Rng rng(7);
  for (int i = 0; i < 10; ++i) {
    const Vec obs = rng.normal_vec(3);
    const Vec act = rng.normal_vec(2);  // may sit outside the box on purpose
    CHECK(log_prob(p, obs, act) ==
          doctest::Approx(manual_logprob(p, obs, act)).epsilon(1e-12));
  }
  const Mat obs = rng.normal_mat(6, 3);
  const Mat act = rng.normal_mat(6, 2);
  const Vec batch = log_prob_batch(p, obs, act);
  const Vec from_mean = log_prob_from_mean(p, policy_mean(p, obs), act);
  for (int b = 0; b < 6; ++b) {
    CHECK(batch(b) == doctest::Approx(log_prob(p, obs.row(b).transpose(),
                                               act.row(b).transpose()))
                          .epsilon(1e-12));
    CHECK(batch(b) == from_mean(b));
  }
}

TEST_CASE("flat parameter round trip is exact and order-stable") {
  GaussianPolicy p = small_policy(11);
  const Vec theta = p.flatten_params();
  CHECK(theta.size() == p.n_params());
  CHECK(theta.tail(2) == p.log_std);
  GaussianPolicy q = small_policy(13);  // different weights
  CHECK((q.flatten_params() - theta).cwiseAbs().maxCoeff() > 0.0);
  q.unflatten_params(theta);
  CHECK((q.flatten_params() - theta).cwiseAbs().maxCoeff() == 0.0);
  Rng rng(17);
  const Mat obs = rng.normal_mat(4, 3);
  CHECK((policy_mean(q, obs) - policy_mean(p, obs)).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(q.unflatten_params(Vec::Zero(3)), ShapeError);
}

TEST_CASE("log-std clamps to its legal band") {
  GaussianPolicy p = small_policy(19);
  p.log_std = Vec::Constant(2, -9.0);
  p.clamp_log_std();
  CHECK(p.log_std(0) == GaussianPolicy::kLogStdMin);
  p.log_std = Vec::Constant(2, 11.0);
  p.clamp_log_std();
  CHECK(p.log_std(1) == GaussianPolicy::kLogStdMax);
  Rng rng(21);
  const GaussianPolicy init = make_policy(3, Vec::Constant(2, -1.0),
                                          Vec::Constant(2, 1.0), {4}, rng, 1.0,
                                          1.0, -7.0);
  CHECK(init.log_std(0) == GaussianPolicy::kLogStdMin);
}

TEST_CASE("sampling adds scaled noise and clips to the box") {
  GaussianPolicy p = small_policy(23, 0.0);
  Rng rng(29);
  Mat mu(2, 2);
  mu << 0.9, -0.9, 0.0, 0.0;
  Mat eps(2, 2);
  eps << 1.0, -1.0, 0.25, 0.5;
  p.log_std = Vec::Constant(2, std::log(0.4));
  const Mat a = sample_batch_with_eps(p, mu, eps);
  CHECK(a(0, 0) == doctest::Approx(1.0));   // 0.9 + 0.4 clips
  CHECK(a(0, 1) == doctest::Approx(-1.0));  // -0.9 - 0.4 clips
  CHECK(a(1, 0) == doctest::Approx(0.1));
  CHECK(a(1, 1) == doctest::Approx(0.2));

  // Tiny std: samples collapse onto the mean action.
  p.log_std = Vec::Constant(2, GaussianPolicy::kLogStdMin);
  const Vec obs = rng.normal_vec(3);
  const Vec s = sample(p, obs, rng);
  CHECK((s - mean_action(p, obs)).cwiseAbs().maxCoeff() < 1e-1);
  CHECK_THROWS_AS(sample_batch_with_eps(p, mu, Mat::Zero(3, 2)), ShapeError);
}

TEST_CASE("weighted logprob gradients agree with finite differences") {
  GaussianPolicy p = small_policy(31);
  Rng rng(37);
  const Mat obs = rng.normal_mat(5, 3);
  const Mat act = rng.normal_mat(5, 2) * 0.5;
  Vec w = rng.normal_vec(5);

  auto objective = [&](const Vec& theta) {
    GaussianPolicy q = p;
    q.unflatten_params(theta);
    return w.dot(log_prob_batch(q, obs, act));
  };
  PolicyGrads g = make_policy_grads(p);
  const PolicyForward fwd = policy_forward(p, obs);
  logprob_backward(p, fwd, act, w, g);
  const Vec analytic = flatten_policy_grads(p, g);
  const GradCheckReport rep =
      finite_diff_gradcheck(objective, p.flatten_params(), analytic);
  CHECK(rep.pass());
  CHECK(rep.max_relative_error < 1e-6);
}

TEST_CASE("ensemble construction gives distinct members and frozen copies") {
  Rng rng(41);
  const Vec lo = Vec::Constant(2, -1.0), hi = Vec::Constant(2, 1.0);
  Ensemble e = init_ensemble(3, 0.1, 3, lo, hi, {8}, rng, 1.0, 0.5, 0.0);
  CHECK(e.n() == 3);
  CHECK(e.alpha == 0.1);
  CHECK_NOTHROW(e.check());
  for (int i = 0; i < 3; ++i) {
    CHECK(e.iteration_counts[static_cast<std::size_t>(i)] == 0);
    CHECK((e.members[static_cast<std::size_t>(i)].flatten_params() -
           e.snapshots[static_cast<std::size_t>(i)].flatten_params())
              .cwiseAbs()
              .maxCoeff() == 0.0);
    for (int j = i + 1; j < 3; ++j) {
      CHECK((e.members[static_cast<std::size_t>(i)].flatten_params() -
             e.members[static_cast<std::size_t>(j)].flatten_params())
                .cwiseAbs()
                .maxCoeff() > 0.0);
    }
  }
  e.snapshots.pop_back();
  CHECK_THROWS_AS(e.check(), ShapeError);
  Rng r2(43);
  CHECK_THROWS_AS(init_ensemble(0, 0.1, 3, lo, hi, {8}, r2, 1.0, 0.5, 0.0),
                  ConfigError);
}

TEST_CASE("max log density takes the pointwise max over snapshots") {
  Rng rng(47);
  const Vec lo = Vec::Constant(2, -1.0), hi = Vec::Constant(2, 1.0);
  Ensemble e = init_ensemble(3, 0.0, 3, lo, hi, {8}, rng, 1.0, 0.5, -0.3);
  const Vec obs = rng.normal_vec(3);
  const Vec act = rng.normal_vec(2) * 0.3;
  double expect = -1e300;
  for (const auto& snap : e.snapshots) {
    expect = std::max(expect, log_prob(snap, obs, act));
  }
  CHECK(max_log_density(e, obs, act) == doctest::Approx(expect).epsilon(1e-14));
  const Mat obs_b = rng.normal_mat(4, 3);
  const Mat act_b = rng.normal_mat(4, 2) * 0.3;
  const Vec batch = max_log_density_batch(e, obs_b, act_b);
  for (int b = 0; b < 4; ++b) {
    CHECK(batch(b) == doctest::Approx(max_log_density(
                          e, obs_b.row(b).transpose(), act_b.row(b).transpose()))
                          .epsilon(1e-14));
  }
}

TEST_CASE("cloning loss composes nll and the specialization pull") {
  Rng rng(53);
  const Vec lo = Vec::Constant(2, -1.0), hi = Vec::Constant(2, 1.0);
  Ensemble e = init_ensemble(2, 0.0, 3, lo, hi, {8}, rng, 1.0, 0.5, -0.2);
  const Mat obs = rng.normal_mat(16, 3);
  const Mat act = rng.normal_mat(16, 2) * 0.4;

  const Vec lp0 = log_prob_batch(e.members[0], obs, act);
  const BcBatchResult plain = bc_member_loss(e, 0, obs, act, nullptr);
  CHECK(plain.loss == doctest::Approx(-lp0.mean()).epsilon(1e-12));
  CHECK(plain.mean_logprob == doctest::Approx(lp0.mean()).epsilon(1e-12));

  e.alpha = 0.3;
  const Vec lp_other = log_prob_batch(e.snapshots[1], obs, act);
  double pulled = 0.0;
  for (int b = 0; b < 16; ++b) pulled += std::max(lp0(b), lp_other(b));
  pulled /= 16.0;
  const BcBatchResult mixed = bc_member_loss(e, 0, obs, act, nullptr);
  CHECK(mixed.loss ==
        doctest::Approx(-(1.0 - 0.3) * lp0.mean() - 0.3 * pulled).epsilon(1e-12));
}

TEST_CASE("cloning fits a two-mode dataset and separates with the penalty") {
  // Mode A: action = +0.5 at obs x > 0; mode B: action = -0.5 at x < 0.
  Rng data_rng(59);
  const int N = 512;
  Mat obs(N, 1), act(N, 1);
  for (int i = 0; i < N; ++i) {
    const double x = data_rng.uniform(-1.0, 1.0);
    obs(i, 0) = x;
    act(i, 0) = (i % 2 == 0 ? 0.5 : -0.5) + 0.02 * data_rng.normal();
  }
  BcConfig cfg;
  cfg.n_members = 2;
  cfg.alpha = 0.0;
  cfg.hidden = {16};
  cfg.steps = 400;
  cfg.batch_size = 128;
  cfg.snapshot_refresh_interval = 10;

  std::vector<double> first_losses, last_losses;
  Rng rng_a(61);
  Ensemble plain = bc_train(obs, act, Vec::Constant(1, -1.0), Vec::Constant(1, 1.0),
                            cfg, rng_a, [&](int step, const std::vector<double>& l) {
                              if (step == 0) first_losses = l;
                              last_losses = l;
                            });
  REQUIRE(first_losses.size() == 2);
  CHECK(last_losses[0] < first_losses[0]);
  CHECK(last_losses[1] < first_losses[1]);
  // Snapshots freeze the final members with reset counters.
  for (int i = 0; i < 2; ++i) {
    CHECK((plain.members[static_cast<std::size_t>(i)].flatten_params() -
           plain.snapshots[static_cast<std::size_t>(i)].flatten_params())
              .cwiseAbs()
              .maxCoeff() == 0.0);
    CHECK(plain.iteration_counts[static_cast<std::size_t>(i)] == 0);
  }

  cfg.alpha = 0.25;
  Rng rng_b(61);
  Ensemble spread = bc_train(obs, act, Vec::Constant(1, -1.0),
                             Vec::Constant(1, 1.0), cfg, rng_b);
  Rng kl_rng(67);
  const Mat probe = obs.topRows(64);
  const double kl_plain =
      mean_offdiag(kl_pairwise_estimate(plain, probe, 64, kl_rng));
  Rng kl_rng2(67);
  const double kl_spread =
      mean_offdiag(kl_pairwise_estimate(spread, probe, 64, kl_rng2));
  CHECK(kl_spread > kl_plain);

  // Same seed, same config: training is bit-reproducible.
  Rng rng_c(61);
  Ensemble again = bc_train(obs, act, Vec::Constant(1, -1.0),
                            Vec::Constant(1, 1.0), cfg, rng_c);
  CHECK((again.members[0].flatten_params() -
         spread.members[0].flatten_params())
            .cwiseAbs()
            .maxCoeff() == 0.0);
}

TEST_CASE("pairwise divergence matrix is symmetric with a zero diagonal") {
  Rng rng(71);
  const Vec lo = Vec::Constant(1, -1.0), hi = Vec::Constant(1, 1.0);
  Ensemble e = init_ensemble(3, 0.0, 2, lo, hi, {8}, rng, 1.0, 0.9, -0.5);
  const Mat states = rng.normal_mat(32, 2);
  Rng kl_rng(73);
  const Mat kl = kl_pairwise_estimate(e, states, 128, kl_rng);
  REQUIRE(kl.rows() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(kl(i, i) == 0.0);
    for (int j = 0; j < 3; ++j) {
      CHECK(kl(i, j) == doctest::Approx(kl(j, i)).epsilon(1e-12));
      if (i != j) CHECK(kl(i, j) > 0.0);
    }
  }
  Mat fixed(3, 3);
  fixed << 0, 2, 4, 2, 0, 6, 4, 6, 0;
  CHECK(mean_offdiag(fixed) == doctest::Approx(4.0));

  // Identical members: divergence collapses to zero.
  Ensemble same = e;
  same.members[1] = same.members[0];
  same.members[2] = same.members[0];
  Rng kl_rng2(73);
  const Mat kl0 = kl_pairwise_estimate(same, states, 64, kl_rng2);
  CHECK(mean_offdiag(kl0) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("normalization bound sits in [1, n] and hits both edges") {
  Rng rng(79);
  const Vec lo = Vec::Constant(1, -1.0), hi = Vec::Constant(1, 1.0);
  Ensemble e = init_ensemble(2, 0.0, 2, lo, hi, {8}, rng, 1.0, 0.5, -1.0);
  const Vec obs = rng.normal_vec(2);

  // Identical members: the max coincides with one density, Z = 1.
  Ensemble same = e;
  same.members[1] = same.members[0];
  const ZBoundResult z1 = zbound_check(same, obs);
  CHECK(z1.pass);
  CHECK(z1.z == doctest::Approx(1.0).epsilon(1e-6));

  // Far-separated tight modes: the max covers both, Z = 2.
  Ensemble split = e;
  for (int i = 0; i < 2; ++i) {
    auto& m = split.members[static_cast<std::size_t>(i)];
    m.log_std = Vec::Constant(1, std::log(0.05));
    // Push the mean nets toward opposite saturated outputs.
    auto& net = m.mean_net;
    net.weights.back().setZero();
    net.biases.back().setConstant(i == 0 ? 5.0 : -5.0);
  }
  const ZBoundResult z2 = zbound_check(split, obs);
  CHECK(z2.pass);
  CHECK(z2.z == doctest::Approx(2.0).epsilon(1e-3));

  const ZBoundResult zr = zbound_check(e, obs);
  CHECK(zr.pass);
  CHECK(zr.z >= 1.0 - 1e-3);
  CHECK(zr.z <= 2.0 + 1e-3);
}

}  // TEST_SUITE
