#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "o2o/offline.hpp"

using namespace o2o;

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Terminal 1-D bandit whose reward peaks at action 0.4: every row is its own
// episode at the single state 0, with actions on a fixed grid so the critic
// fit is easy and exact enough for improvement tests.
struct BanditRig {
  Dataset data;
  NormStats stats;
  ValueHeads heads;
  GaussianDynamics dynamics;
};

BanditRig make_bandit_rig() {
  const int levels = 9, repeats = 8;
  const int n = levels * repeats;
  Dataset d;
  d.obs = Mat::Zero(n, 1);
  d.act = Mat(n, 1);
  d.reward = Vec(n);
  d.next_obs = Mat::Zero(n, 1);
  int row = 0;
  for (int j = 0; j < levels; ++j) {
    const double a = -1.0 + 2.0 * static_cast<double>(j) / (levels - 1);
    for (int r = 0; r < repeats; ++r, ++row) {
      d.act(row, 0) = a;
      d.reward(row) = -(a - 0.4) * (a - 0.4);
      d.terminal.push_back(1);
      d.timeout.push_back(0);
      d.episode_starts.push_back(static_cast<std::uint64_t>(row));
    }
  }
  d.check();

  BanditRig rig;
  rig.stats = identity_stats(1);
  ValueFitConfig vcfg;
  vcfg.hidden = {16, 16};
  vcfg.tau = 0.7;
  vcfg.steps = 3000;
  vcfg.batch_size = 64;
  vcfg.lr = 3e-3;
  vcfg.polyak_rate = 0.02;
  Rng vrng(101);
  rig.heads = fit_values(d.obs, d.act, d.reward, d.next_obs, d.terminal, vcfg, vrng);
  Rng drng(103);
  rig.dynamics = init_dynamics(1, 1, {8}, drng);  // unused at horizon 1
  rig.data = std::move(d);
  return rig;
}

Ensemble bandit_ensemble(int n, double alpha, std::uint64_t seed) {
  Rng rng(seed);
  return init_ensemble(n, alpha, 1, Vec::Constant(1, -1.0), Vec::Constant(1, 1.0),
                       {8, 8}, rng, std::sqrt(2.0), 0.01, 0.0);
}

OPEConfig bandit_ope() {
  OPEConfig cfg;
  cfg.horizon = 1;
  cfg.n_rollouts = 64;
  return cfg;
}

}  // namespace

TEST_SUITE("offline") {

TEST_CASE("pointwise surrogate matches the clipped-min closed form") {
  CHECK(clipped_surrogate(1.5, 1.0, 0.25) == doctest::Approx(1.25));
  CHECK(clipped_surrogate(1.5, -1.0, 0.25) == doctest::Approx(-1.5));
  CHECK(clipped_surrogate(0.5, 1.0, 0.25) == doctest::Approx(0.5));
  // Below the clip with negative advantage: the clipped ratio 0.75 wins the
  // pessimistic min.
  CHECK(clipped_surrogate(0.5, -1.0, 0.25) == doctest::Approx(-0.75));
  CHECK(clipped_surrogate(1.0, 2.0, 0.25) == doctest::Approx(2.0));
  CHECK(clipped_surrogate(1.1, 0.0, 0.25) == 0.0);
}

TEST_CASE("batched surrogate reports objective, clip share, and weights") {
  Vec ratio(4), adv(4);
  ratio << 1.5, 0.5, 1.0, 0.7;
  adv << 1.0, -1.0, 2.0, 1.0;
  Vec w;
  const SurrogateStats s = clipped_surrogate_batch(ratio, adv, 0.25, w);
  // Sample surrogates: 1.25 (clipped), -0.75 (clipped), 2.0, 0.7.
  CHECK(s.objective == doctest::Approx((1.25 - 0.75 + 2.0 + 0.7) / 4.0));
  CHECK(s.clip_fraction == doctest::Approx(0.5));
  CHECK(w(0) == 0.0);  // clipped branch: no gradient
  CHECK(w(1) == 0.0);
  CHECK(w(2) == doctest::Approx(-1.0 * 2.0 / 4.0));
  CHECK(w(3) == doctest::Approx(-0.7 * 1.0 / 4.0));

  CHECK_THROWS_AS(clipped_surrogate_batch(Vec(0), Vec(0), 0.25, w), ShapeError);
  CHECK_THROWS_AS(clipped_surrogate_batch(Vec::Ones(2), Vec::Ones(3), 0.25, w),
                  ShapeError);
}

TEST_CASE("infinite clip width reproduces the vanilla weighted gradient") {
  Rng rng(7);
  const int n = 32;
  Vec ratio(n), adv(n);
  for (int i = 0; i < n; ++i) {
    ratio(i) = std::exp(rng.normal());
    adv(i) = rng.normal();
  }
  Vec w;
  const double inf = std::numeric_limits<double>::infinity();
  const SurrogateStats s = clipped_surrogate_batch(ratio, adv, inf, w);
  CHECK(s.clip_fraction == 0.0);
  CHECK(s.objective ==
        doctest::Approx(ratio.cwiseProduct(adv).mean()).epsilon(1e-15));
  for (int i = 0; i < n; ++i) {
    CHECK(w(i) == -ratio(i) * adv(i) / static_cast<double>(n));
  }
}

TEST_CASE("unit ratios sit on the raw branch with unclipped weights") {
  Rng rng(11);
  const int n = 16;
  const Vec ratio = Vec::Ones(n);
  Vec adv(n);
  for (int i = 0; i < n; ++i) adv(i) = rng.normal();
  Vec w;
  const SurrogateStats s = clipped_surrogate_batch(ratio, adv, 0.2, w);
  CHECK(s.objective == doctest::Approx(adv.mean()).epsilon(1e-15));
  CHECK(s.clip_fraction == 0.0);
  for (int i = 0; i < n; ++i) {
    CHECK(w(i) == -adv(i) / static_cast<double>(n));
  }
}

TEST_CASE("disagreement margin matches a by-hand evaluation") {
  Rng rng(13);
  const Vec lo = Vec::Constant(2, -1.0), hi = Vec::Constant(2, 1.0);
  Ensemble e = init_ensemble(3, 0.1, 2, lo, hi, {8}, rng, 1.0, 0.8, -0.4);
  const Mat S = rng.normal_mat(6, 2);
  const Mat eps = rng.normal_mat(6, 2);
  const GaussianPolicy& live = e.members[0];
  const PolicyForward fwd = policy_forward(live, S);
  PolicyGrads grads = make_policy_grads(live);
  const double d = disagreement_term(e, 0, S, fwd, eps, 0.5, grads);

  const Vec sigma = live.std();
  double expect = 0.0;
  for (int b = 0; b < 6; ++b) {
    Vec a = fwd.mu.row(b).transpose();
    a += sigma.cwiseProduct(eps.row(b).transpose());
    const double lp_own = -0.5 * eps.row(b).squaredNorm() - live.log_std.sum() -
                          0.5 * 2.0 * kLog2Pi;
    double best = -std::numeric_limits<double>::infinity();
    for (int j = 1; j < 3; ++j) {
      best = std::max(best, log_prob(e.snapshots[static_cast<std::size_t>(j)],
                                     S.row(b).transpose(), a));
    }
    expect += lp_own - best;
  }
  expect /= 6.0;
  CHECK(d == doctest::Approx(expect).epsilon(1e-12));

  // Sanity on the accumulated gradient: nonzero and finite.
  const Vec g = flatten_policy_grads(live, grads);
  CHECK(g.allFinite());
  CHECK(g.cwiseAbs().maxCoeff() > 0.0);

  Ensemble solo = bandit_ensemble(1, 0.0, 17);
  const PolicyForward sf = policy_forward(solo.members[0], Mat::Zero(2, 1));
  PolicyGrads sg = make_policy_grads(solo.members[0]);
  CHECK_THROWS_AS(
      disagreement_term(solo, 0, Mat::Zero(2, 1), sf, Mat::Zero(2, 1), 0.5, sg),
      ConfigError);
  CHECK_THROWS_AS(disagreement_term(e, 5, S, fwd, eps, 0.5, grads), ConfigError);
  CHECK_THROWS_AS(disagreement_term(e, 0, S, fwd, Mat::Zero(6, 1), 0.5, grads),
                  ShapeError);
}

TEST_CASE("improvement run walks the bandit policy toward the peak") {
  const BanditRig rig = make_bandit_rig();
  Ensemble e = bandit_ensemble(2, 0.0, 19);
  OfflineOptConfig cfg;
  cfg.clip_epsilon = 0.25;
  cfg.gate_interval = 25;
  cfg.total_steps = 300;
  cfg.minibatch_size = 64;
  cfg.actions_per_state = 4;
  cfg.lr = 3e-3;

  std::vector<double> first_surr(2, 0.0), last_surr(2, 0.0);
  const OfflineResult res = run_offline(
      e, rig.heads, rig.dynamics, rig.data, rig.stats, cfg, bandit_ope(),
      Rng(23), [&](int member, int step, double surr) {
        if (step == 0) first_surr[static_cast<std::size_t>(member)] = surr;
        last_surr[static_cast<std::size_t>(member)] = surr;
      });

  // floor(300 / 25) = 12 events per member, steps 25, 50, ..., 300.
  REQUIRE(res.gate_log.size() == 24);
  for (std::size_t k = 0; k < res.gate_log.size(); ++k) {
    const GateEvent& ev = res.gate_log[k];
    CHECK(ev.step % 25 == 0);
    CHECK(ev.step >= 25);
    CHECK(ev.step <= 300);
  }

  // Some replacements must fire, and each member ends near the peak.
  for (int i = 0; i < 2; ++i) {
    CHECK(e.iteration_counts[static_cast<std::size_t>(i)] > 0);
    const double mean_a =
        mean_action(e.members[static_cast<std::size_t>(i)], Vec::Zero(1))(0);
    CHECK(std::abs(mean_a - 0.4) < 0.12);
  }
  (void)first_surr;
  (void)last_surr;
}

TEST_CASE("accepted gate estimates increase strictly and chain by pairing") {
  const BanditRig rig = make_bandit_rig();
  Ensemble e = bandit_ensemble(2, 0.0, 29);
  OfflineOptConfig cfg;
  cfg.gate_interval = 20;
  cfg.total_steps = 240;
  cfg.minibatch_size = 64;
  cfg.actions_per_state = 2;
  cfg.lr = 2e-3;
  const OfflineResult res = run_offline(e, rig.heads, rig.dynamics, rig.data,
                                        rig.stats, cfg, bandit_ope(), Rng(31));
  REQUIRE(res.gate_log.size() == 2 * 12);

  for (int member = 0; member < 2; ++member) {
    double last_accepted = -std::numeric_limits<double>::infinity();
    bool any_accepted = false;
    std::int64_t k_prev = 0;
    for (const GateEvent& ev : res.gate_log) {
      if (ev.member != member) continue;
      if (any_accepted) {
        // Paired evaluation: the snapshot re-scores exactly as it did when
        // it was accepted.
        CHECK(ev.j_snapshot == last_accepted);
      }
      if (ev.accepted) {
        CHECK(ev.j_live > ev.j_snapshot);
        CHECK(ev.j_live > last_accepted);
        last_accepted = ev.j_live;
        any_accepted = true;
        CHECK(ev.k_after == k_prev + 1);
      } else {
        CHECK(ev.j_live <= ev.j_snapshot);
        CHECK(ev.k_after == k_prev);
      }
      k_prev = ev.k_after;
    }
    CHECK(any_accepted);
    CHECK(e.iteration_counts[static_cast<std::size_t>(member)] == k_prev);
  }
}

TEST_CASE("a gate period beyond the run leaves snapshots untouched") {
  const BanditRig rig = make_bandit_rig();
  Ensemble e = bandit_ensemble(1, 0.0, 37);
  const Vec snap0 = e.snapshots[0].flatten_params();
  OfflineOptConfig cfg;
  cfg.gate_interval = 1000;
  cfg.total_steps = 40;
  cfg.minibatch_size = 32;
  cfg.lr = 1e-3;
  const OfflineResult res = run_offline(e, rig.heads, rig.dynamics, rig.data,
                                        rig.stats, cfg, bandit_ope(), Rng(41));
  CHECK(res.gate_log.empty());
  CHECK(e.iteration_counts[0] == 0);
  CHECK((e.snapshots[0].flatten_params() - snap0).cwiseAbs().maxCoeff() == 0.0);
  // The live member still trained away from the frozen snapshot.
  CHECK((e.members[0].flatten_params() - snap0).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("improvement runs are bit-reproducible") {
  const BanditRig rig = make_bandit_rig();
  OfflineOptConfig cfg;
  cfg.gate_interval = 10;
  cfg.total_steps = 50;
  cfg.minibatch_size = 32;
  cfg.lr = 2e-3;

  Ensemble e1 = bandit_ensemble(2, 0.0, 43);
  Ensemble e2 = bandit_ensemble(2, 0.0, 43);
  const OfflineResult r1 = run_offline(e1, rig.heads, rig.dynamics, rig.data,
                                       rig.stats, cfg, bandit_ope(), Rng(47));
  const OfflineResult r2 = run_offline(e2, rig.heads, rig.dynamics, rig.data,
                                       rig.stats, cfg, bandit_ope(), Rng(47));
  REQUIRE(r1.gate_log.size() == r2.gate_log.size());
  for (std::size_t k = 0; k < r1.gate_log.size(); ++k) {
    CHECK(r1.gate_log[k].j_live == r2.gate_log[k].j_live);
    CHECK(r1.gate_log[k].accepted == r2.gate_log[k].accepted);
  }
  for (int i = 0; i < 2; ++i) {
    CHECK((e1.members[static_cast<std::size_t>(i)].flatten_params() -
           e2.members[static_cast<std::size_t>(i)].flatten_params())
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
}

TEST_CASE("config validation rejects out-of-range knobs at ingress") {
  const BanditRig rig = make_bandit_rig();
  Ensemble e = bandit_ensemble(2, 0.0, 53);
  OfflineOptConfig good;
  good.total_steps = 1;
  good.gate_interval = 5;
  good.minibatch_size = 8;

  auto run = [&](const OfflineOptConfig& cfg) {
    Ensemble copy = e;
    return run_offline(copy, rig.heads, rig.dynamics, rig.data, rig.stats, cfg,
                       bandit_ope(), Rng(1));
  };
  CHECK_NOTHROW(run(good));

  OfflineOptConfig bad = good;
  bad.clip_epsilon = 0.0;
  CHECK_THROWS_AS(run(bad), ConfigError);
  bad = good;
  bad.clip_epsilon = 1.0;
  CHECK_THROWS_AS(run(bad), ConfigError);
  bad = good;
  bad.gate_interval = 0;
  CHECK_THROWS_AS(run(bad), ConfigError);
  bad = good;
  bad.total_steps = 0;
  CHECK_THROWS_AS(run(bad), ConfigError);
  bad = good;
  bad.minibatch_size = 0;
  CHECK_THROWS_AS(run(bad), ConfigError);
  bad = good;
  bad.actions_per_state = 0;
  CHECK_THROWS_AS(run(bad), ConfigError);
  bad = good;
  bad.disagreement_alpha_offline = -0.1;
  CHECK_THROWS_AS(run(bad), ConfigError);
  bad = good;
  bad.lr = 0.0;
  CHECK_THROWS_AS(run(bad), ConfigError);

  // The disagreement term requires rivals.
  Ensemble solo = bandit_ensemble(1, 0.0, 59);
  OfflineOptConfig dis = good;
  dis.disagreement_alpha_offline = 0.2;
  CHECK_THROWS_AS(run_offline(solo, rig.heads, rig.dynamics, rig.data, rig.stats,
                              dis, bandit_ope(), Rng(1)),
                  ConfigError);
}

TEST_CASE("selection picks the best estimate with deterministic tiebreaks") {
  Ensemble e = bandit_ensemble(3, 0.0, 61);
  std::vector<OPEReport> reports(3);
  for (int i = 0; i < 3; ++i) reports[static_cast<std::size_t>(i)].policy_id = i;
  reports[0].j_hat = 0.2;
  reports[1].j_hat = 0.8;
  reports[2].j_hat = 0.8;
  const FinalizeResult top1 = finalize(e, reports, 1);
  CHECK(top1.selected == 1);
  CHECK(top1.shortlist == std::vector<int>{1});
  const FinalizeResult top3 = finalize(e, reports, 3);
  CHECK(top3.shortlist == std::vector<int>{1, 2, 0});
  CHECK(top3.selected == 1);
  reports.pop_back();
  CHECK_THROWS_AS(finalize(e, reports, 1), ConfigError);
}

}  // TEST_SUITE
