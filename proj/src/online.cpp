#include "o2o/online.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "o2o/offline.hpp"  // clipped_surrogate_batch
#include "o2o/values.hpp"   // value_batch

namespace o2o {

namespace {

void validate_online_config(const OnlineConfig& cfg) {
  if (!(cfg.clip_epsilon > 0.0 && cfg.clip_epsilon < 1.0))
    throw ConfigError("online: clip_epsilon must lie in (0, 1)");
  if (!(cfg.gamma >= 0.0 && cfg.gamma <= 1.0))
    throw ConfigError("online: gamma must lie in [0, 1]");
  if (!(cfg.gae_lambda >= 0.0 && cfg.gae_lambda <= 1.0))
    throw ConfigError("online: gae_lambda must lie in [0, 1]");
  if (cfg.rollout_horizon < 1)
    throw ConfigError("online: rollout_horizon must be >= 1");
  if (cfg.epochs_per_batch < 1)
    throw ConfigError("online: epochs_per_batch must be >= 1");
  if (cfg.minibatch_size < 1)
    throw ConfigError("online: minibatch_size must be >= 1");
  if (!(cfg.lr > 0.0)) throw ConfigError("online: lr must be > 0");
  if (cfg.total_env_steps < 0)
    throw ConfigError("online: total_env_steps must be >= 0");
  if (cfg.entropy_coef < 0.0)
    throw ConfigError("online: entropy_coef must be >= 0");
  if (cfg.eval_interval < 1)
    throw ConfigError("online: eval_interval must be >= 1");
  if (cfg.eval_episodes < 1)
    throw ConfigError("online: eval_episodes must be >= 1");
}

Vec normalize_adv(const Vec& adv) {
  const double mean = adv.mean();
  const double sd = std::sqrt((adv.array() - mean).square().sum() /
                              static_cast<double>(adv.size()));
  return (adv.array() - mean).matrix() / std::max(sd, 1e-8);
}

}  // namespace

GaeResult gae(const Vec& rewards, const Vec& values,
              const std::vector<std::uint8_t>& terminals, double gamma,
              double lambda) {
  const Eigen::Index T = rewards.size();
  if (values.size() != T + 1)
    throw ShapeError("gae: values must have length len(rewards) + 1");
  if (static_cast<Eigen::Index>(terminals.size()) != T)
    throw ShapeError("gae: terminals must have length len(rewards)");
  GaeResult out;
  out.advantages = Vec::Zero(T);
  double running = 0.0;
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const double mask = terminals[static_cast<std::size_t>(t)] ? 0.0 : 1.0;
    const double delta = rewards(t) + gamma * mask * values(t + 1) - values(t);
    running = delta + gamma * lambda * mask * running;
    out.advantages(t) = running;
  }
  out.targets = out.advantages + values.head(T);
  return out;
}

double RewardScaler::std() const {
  if (count < 2) return 0.0;
  return std::sqrt(m2 / static_cast<double>(count));
}

double RewardScaler::scale(double r) {
  running_return = gamma * running_return + r;
  ++count;
  const double delta = running_return - mean;
  mean += delta / static_cast<double>(count);
  m2 += delta * (running_return - mean);
  const double sd = std();
  if (count >= 2 && sd > 1e-4) return r / std::max(sd, 1e-8);
  return r;
}

void RunningNorm::init(int dim) {
  count = 0;
  mean = Vec::Zero(dim);
  m2 = Vec::Zero(dim);
}

void RunningNorm::update(const Vec& obs) {
  if (obs.size() != mean.size()) throw ShapeError("RunningNorm: dim mismatch");
  ++count;
  const Vec delta = obs - mean;
  mean += delta / static_cast<double>(count);
  m2 += delta.cwiseProduct(obs - mean);
}

NormStats RunningNorm::stats() const {
  NormStats s;
  s.mean = count > 0 ? mean : Vec::Zero(mean.size());
  if (count > 0) {
    s.std = (m2 / static_cast<double>(count)).cwiseSqrt().cwiseMax(1e-8);
  } else {
    s.std = Vec::Ones(mean.size());
  }
  return s;
}

void compute_gae_segments(RolloutBatch& batch, double gamma, double lambda) {
  const Eigen::Index T = batch.reward.size();
  batch.advantages = Vec::Zero(T);
  batch.targets = Vec::Zero(T);
  Eigen::Index start = 0;
  while (start < T) {
    Eigen::Index end = start;  // inclusive chunk end
    while (end + 1 < T && !batch.boundary[static_cast<std::size_t>(end)]) ++end;
    const Eigen::Index len = end - start + 1;
    Vec values(len + 1);
    values.head(len) = batch.old_value.segment(start, len);
    values(len) = batch.boot(end);
    std::vector<std::uint8_t> terms(static_cast<std::size_t>(len), 0);
    terms.back() = batch.terminal[static_cast<std::size_t>(end)];
    const GaeResult g =
        gae(batch.reward.segment(start, len), values, terms, gamma, lambda);
    batch.advantages.segment(start, len) = g.advantages;
    batch.targets.segment(start, len) = g.targets;
    start = end + 1;
  }
}

PpoStats ppo_update(GaussianPolicy& policy, Mlp& v_net, Adam& adam_pi,
                    Adam& adam_v, const RolloutBatch& batch,
                    const OnlineConfig& cfg, double lr_now, double clip_now,
                    Rng& rng) {
  const Eigen::Index T = batch.obs.rows();
  if (T < 1) throw ConfigError("ppo_update: empty batch");
  PpoStats stats;
  int n_minibatches = 0;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(T));
  for (Eigen::Index i = 0; i < T; ++i) order[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < cfg.epochs_per_batch; ++epoch) {
    // Fisher-Yates shuffle.
    for (Eigen::Index i = T - 1; i > 0; --i) {
      const Eigen::Index j = rng.uniform_int(i + 1);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    for (Eigen::Index lo = 0; lo < T; lo += cfg.minibatch_size) {
      const Eigen::Index B = std::min<Eigen::Index>(cfg.minibatch_size, T - lo);
      Mat S(B, batch.obs.cols());
      Mat A(B, batch.act.cols());
      Vec old_lp(B), adv(B), target(B), v_old(B);
      for (Eigen::Index b = 0; b < B; ++b) {
        const Eigen::Index r = order[static_cast<std::size_t>(lo + b)];
        S.row(b) = batch.obs.row(r);
        A.row(b) = batch.act.row(r);
        old_lp(b) = batch.old_logprob(r);
        adv(b) = batch.advantages(r);
        target(b) = batch.targets(r);
        v_old(b) = batch.old_value(r);
      }
      adv = normalize_adv(adv);

      // Policy step.
      const PolicyForward fwd = policy_forward(policy, S);
      const Vec lp = log_prob_from_mean(policy, fwd.mu, A);
      Vec ratio(B);
      for (Eigen::Index b = 0; b < B; ++b) {
        ratio(b) = std::exp(lp(b) - old_lp(b));
        if (!std::isfinite(ratio(b)))
          throw NumericError("ppo_update: non-finite ratio at batch row " +
                             std::to_string(static_cast<long long>(b)));
      }
      Vec w;
      const SurrogateStats surr = clipped_surrogate_batch(ratio, adv, clip_now, w);
      PolicyGrads pgrads = make_policy_grads(policy);
      logprob_backward(policy, fwd, A, w, pgrads);
      if (cfg.entropy_coef > 0.0)
        pgrads.d_log_std.array() -= cfg.entropy_coef;
      Vec theta = policy.flatten_params();
      adam_pi.step(theta, flatten_policy_grads(policy, pgrads), lr_now);
      policy.unflatten_params(theta);
      policy.clamp_log_std();

      // Value step: per-sample max of raw and clipped squared errors.
      MlpCache vcache;
      const Vec v = mlp_forward(v_net, S, vcache).col(0);
      Mat d_v = Mat::Zero(B, 1);
      double vloss = 0.0;
      const double inv_b = 1.0 / static_cast<double>(B);
      for (Eigen::Index b = 0; b < B; ++b) {
        const double err_raw = v(b) - target(b);
        const double se_raw = err_raw * err_raw;
        if (cfg.value_clip) {
          const double vc =
              std::clamp(v(b), v_old(b) - clip_now, v_old(b) + clip_now);
          const double err_clip = vc - target(b);
          const double se_clip = err_clip * err_clip;
          if (se_raw >= se_clip) {
            vloss += se_raw;
            d_v(b, 0) = 2.0 * err_raw * inv_b;
          } else {
            vloss += se_clip;  // clip active: no gradient through the clamp
          }
        } else {
          vloss += se_raw;
          d_v(b, 0) = 2.0 * err_raw * inv_b;
        }
      }
      vloss *= inv_b;
      MlpGrads vgrads = make_grads(v_net);
      mlp_backward(v_net, vcache, d_v, vgrads);
      Vec vtheta = flatten(v_net);
      adam_v.step(vtheta, flatten_grads(v_net, vgrads), lr_now);
      unflatten(v_net, vtheta);

      stats.policy_loss += -surr.objective;
      stats.value_loss += vloss;
      stats.clip_fraction += surr.clip_fraction;
      ++n_minibatches;
    }
  }
  stats.policy_loss /= n_minibatches;
  stats.value_loss /= n_minibatches;
  stats.clip_fraction /= n_minibatches;

  const Vec lp_after = log_prob_batch(policy, batch.obs, batch.act);
  stats.kl_estimate = (batch.old_logprob - lp_after).mean();
  return stats;
}

double evaluate_policy(const GaussianPolicy& policy, Env& env,
                       const NormStats& stats, int episodes, Rng& rng) {
  if (episodes < 1) throw ConfigError("evaluate_policy: episodes must be >= 1");
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    Vec obs = env.reset(rng);
    while (true) {
      const Vec a = mean_action(policy, normalize_obs(stats, obs));
      const StepResult sr = env.step(a, rng);
      total += sr.reward;
      if (sr.terminal || sr.timeout) break;
      obs = sr.next_obs;
    }
  }
  return total / static_cast<double>(episodes);
}

OnlineResult run_online(GaussianPolicy& policy, Mlp& v_net, Env& env,
                        Env& eval_env, const OnlineConfig& cfg,
                        const NormStats& norm_stats, Rng rng,
                        const OnlineStepCallback& update_cb) {
  validate_online_config(cfg);
  const EnvSpec& spec = env.spec();
  if (policy.obs_dim() != spec.obs_dim || policy.act_dim() != spec.act_dim)
    throw ConfigError("run_online: policy does not match env dimensions");
  if (v_net.in_dim() != spec.obs_dim || v_net.out_dim() != 1)
    throw ConfigError("run_online: v_net must map obs_dim -> 1");

  Rng col_rng = rng.split(streams::kCollect);
  Rng upd_rng = rng.split(0x0B22u);
  const Rng eval_base = rng.split(streams::kEval);

  RunningNorm running;
  if (cfg.use_running_stats) running.init(spec.obs_dim);
  const auto stats_now = [&]() -> NormStats {
    return cfg.use_running_stats ? running.stats() : norm_stats;
  };

  Adam adam_pi, adam_v;
  adam_pi.init(policy.n_params());
  adam_v.init(v_net.n_params());
  RewardScaler scaler;
  scaler.gamma = cfg.gamma;

  OnlineResult out;
  std::int64_t env_steps = 0;
  const auto run_eval = [&]() {
    Rng er = eval_base.split(static_cast<std::uint64_t>(env_steps));
    out.evals.push_back(EvalRecord{
        env_steps,
        evaluate_policy(policy, eval_env, stats_now(), cfg.eval_episodes, er)});
  };
  run_eval();

  const int T = cfg.rollout_horizon;
  const std::int64_t n_updates = cfg.total_env_steps / T;

  Vec cur_raw = env.reset(col_rng);
  if (cfg.use_running_stats) running.update(cur_raw);
  Vec cur_n = normalize_obs(stats_now(), cur_raw);

  for (std::int64_t u = 0; u < n_updates; ++u) {
    const double frac =
        cfg.lr_and_clip_decay
            ? static_cast<double>(env_steps) / static_cast<double>(cfg.total_env_steps)
            : 0.0;
    const double lr_now = decay_schedule(cfg.lr, frac);
    const double clip_now = decay_schedule(cfg.clip_epsilon, frac);

    RolloutBatch batch;
    batch.obs.resize(T, spec.obs_dim);
    batch.act.resize(T, spec.act_dim);
    batch.reward.resize(T);
    batch.old_logprob.resize(T);
    batch.terminal.assign(static_cast<std::size_t>(T), 0);
    batch.boundary.assign(static_cast<std::size_t>(T), 0);
    Mat next_obs_n(T, spec.obs_dim);
    double raw_reward_sum = 0.0;

    for (int t = 0; t < T; ++t) {
      batch.obs.row(t) = cur_n.transpose();
      const Vec a = sample(policy, cur_n, col_rng);
      batch.act.row(t) = a.transpose();
      batch.old_logprob(t) = log_prob(policy, cur_n, a);
      const StepResult sr = env.step(a, col_rng);
      raw_reward_sum += sr.reward;
      batch.reward(t) = cfg.reward_scaling ? scaler.scale(sr.reward) : sr.reward;
      next_obs_n.row(t) = normalize_obs(stats_now(), sr.next_obs).transpose();
      batch.terminal[static_cast<std::size_t>(t)] = sr.terminal ? 1 : 0;
      const bool boundary = sr.terminal || sr.timeout;
      batch.boundary[static_cast<std::size_t>(t)] = boundary ? 1 : 0;
      cur_raw = boundary ? env.reset(col_rng) : sr.next_obs;
      if (cfg.use_running_stats) running.update(cur_raw);
      cur_n = normalize_obs(stats_now(), cur_raw);
    }

    batch.old_value = value_batch(v_net, batch.obs);
    batch.boot = value_batch(v_net, next_obs_n);
    compute_gae_segments(batch, cfg.gamma, cfg.gae_lambda);

    const PpoStats ps =
        ppo_update(policy, v_net, adam_pi, adam_v, batch, cfg, lr_now, clip_now, upd_rng);
    const std::int64_t prev_steps = env_steps;
    env_steps += T;

    OnlineUpdateRecord rec;
    rec.env_steps = env_steps;
    rec.policy_loss = ps.policy_loss;
    rec.value_loss = ps.value_loss;
    rec.clip_fraction = ps.clip_fraction;
    rec.kl_estimate = ps.kl_estimate;
    rec.lr_now = lr_now;
    rec.clip_now = clip_now;
    rec.mean_batch_reward = raw_reward_sum / static_cast<double>(T);
    out.updates.push_back(rec);
    if (update_cb) update_cb(rec);

    if (env_steps / cfg.eval_interval > prev_steps / cfg.eval_interval) run_eval();
  }

  if (out.evals.empty() || out.evals.back().env_steps != env_steps) run_eval();
  out.final_stats = stats_now();
  return out;
}

}  // namespace o2o
