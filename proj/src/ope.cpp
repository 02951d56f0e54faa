#include "o2o/ope.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace o2o {

OPEReport amq_rollout_estimate(const GaussianPolicy& policy,
                               const GaussianDynamics& dynamics,
                               const ValueHeads& heads, const Mat& start_pool_n,
                               const OPEConfig& cfg, Rng rng, OpCounts* counts) {
  if (start_pool_n.rows() < 1) throw ConfigError("ope: empty start-state pool");
  if (cfg.horizon < 1 || cfg.n_rollouts < 1)
    throw ConfigError("ope: horizon and n_rollouts must be >= 1");
  const int N = cfg.n_rollouts;
  const int H = cfg.horizon;
  const int act_dim = policy.act_dim();
  const int obs_dim = static_cast<int>(start_pool_n.cols());

  // Independent stream per rollout; stream draw order per rollout:
  // start index, then per step act_dim policy eps (+ obs_dim dynamics eps in
  // sample mode).
  std::vector<Rng> streams;
  streams.reserve(static_cast<std::size_t>(N));
  for (int r = 0; r < N; ++r) streams.push_back(rng.split(static_cast<std::uint64_t>(r)));

  Mat s(N, obs_dim);
  for (int r = 0; r < N; ++r) {
    const auto i = streams[static_cast<std::size_t>(r)].uniform_int(start_pool_n.rows());
    s.row(r) = start_pool_n.row(i);
  }

  Vec ret = Vec::Zero(N);
  for (int t = 0; t < H; ++t) {
    const Mat mu = policy_mean(policy, s);
    Mat eps(N, act_dim);
    for (int r = 0; r < N; ++r)
      eps.row(r) = streams[static_cast<std::size_t>(r)].normal_vec(act_dim).transpose();
    const Mat a = sample_batch_with_eps(policy, mu, eps);
    ret += q_batch(heads.q_net, s, a);
    if (counts) {
      counts->policy_samples += N;
      counts->q_evals += N;
    }
    if (t + 1 < H) {
      if (cfg.rollout_mode == RolloutMode::Sample) {
        Mat deps(N, obs_dim);
        for (int r = 0; r < N; ++r)
          deps.row(r) =
              streams[static_cast<std::size_t>(r)].normal_vec(obs_dim).transpose();
        s = predict_next_batch(dynamics, s, a, RolloutMode::Sample, &deps);
      } else {
        s = predict_next_batch(dynamics, s, a, RolloutMode::Mean, nullptr);
      }
      if (counts) counts->dynamics_steps += N;
    }
  }

  OPEReport rep;
  rep.j_hat = ret.mean();
  require_finite(rep.j_hat, "ope estimate");
  if (N > 1) {
    const double var = (ret.array() - rep.j_hat).square().sum() / static_cast<double>(N - 1);
    rep.std_err = std::sqrt(var / static_cast<double>(N));
  }
  rep.n_rollouts = N;
  rep.horizon = H;
  return rep;
}

OPEReport amq_estimate(const GaussianPolicy& policy, const GaussianDynamics& dynamics,
                       const ValueHeads& heads, const Dataset& data,
                       const NormStats& stats, const OPEConfig& cfg, Rng rng,
                       OpCounts* counts) {
  Mat pool;
  if (cfg.start_state_source == StartStateSource::DatasetInitials) {
    pool = initial_states(data);
  } else {
    pool = data.obs;
  }
  if (pool.rows() < 1) throw ConfigError("ope: dataset provides no start states");
  return amq_rollout_estimate(policy, dynamics, heads, normalize_obs(stats, pool),
                              cfg, rng, counts);
}

bool accept_replacement(const OPEReport& report_new, const OPEReport& report_old) {
  if (report_new.n_rollouts != report_old.n_rollouts ||
      report_new.horizon != report_old.horizon)
    throw ConfigError("accept_replacement: reports computed under different configs");
  return report_new.j_hat > report_old.j_hat;
}

std::vector<int> select_top_k(const std::vector<OPEReport>& reports, int k) {
  const int n = static_cast<int>(reports.size());
  if (k < 1 || k > n) throw ConfigError("select_top_k: k out of range");
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const auto& ra = reports[static_cast<std::size_t>(a)];
    const auto& rb = reports[static_cast<std::size_t>(b)];
    if (ra.j_hat != rb.j_hat) return ra.j_hat > rb.j_hat;
    return ra.policy_id < rb.policy_id;
  });
  std::vector<int> ids(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i)
    ids[static_cast<std::size_t>(i)] = reports[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])].policy_id;
  return ids;
}

BoundCheck thm2_bound_check(const TabularMdp& mdp, const TabularMdp& perturbed,
                            const Mat& policy, double q_max, int H) {
  if (mdp.n_states != perturbed.n_states || mdp.n_actions != perturbed.n_actions)
    throw ConfigError("thm2_bound_check: mismatched state/action spaces");
  if (H < 1) throw ConfigError("thm2_bound_check: H must be >= 1");
  Mat q = dp_optimal_q_discounted(mdp);
  q = q.cwiseMax(-q_max).cwiseMin(q_max);

  BoundCheck out;
  out.q_max = q_max;
  out.lhs = std::abs(exact_amq(mdp, policy, q, H) - exact_amq(perturbed, policy, q, H));
  if (H == 1) {
    out.kl = 0.0;
    out.rhs = 0.0;
  } else {
    out.kl = transition_kl(mdp, perturbed, visitation_sa(mdp, policy, H));
    out.rhs = std::isinf(out.kl)
                  ? std::numeric_limits<double>::infinity()
                  : q_max * static_cast<double>(H) * static_cast<double>(H - 1) / 2.0 *
                        std::sqrt(2.0 * out.kl);
  }
  out.pass = out.lhs <= out.rhs + 1e-9;
  return out;
}

}  // namespace o2o
