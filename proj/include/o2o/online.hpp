#pragma once

// On-policy PPO fine-tuning: generalized advantage estimation, reward
// scaling, clipped policy and value updates, and the batch-collect / update
// loop. The same code path serves the warm start (offline policy + fitted
// value head, observation statistics frozen from the offline dataset) and the
// from-scratch baseline (fresh nets, running observation statistics); the two
// normalization modes never mix within a run.

#include <functional>
#include <optional>
#include <vector>

#include "o2o/common.hpp"
#include "o2o/dataset.hpp"
#include "o2o/env.hpp"
#include "o2o/mlp.hpp"
#include "o2o/policy.hpp"

namespace o2o {

struct OnlineConfig {
  double clip_epsilon = 0.1;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  int rollout_horizon = 2048;  // env steps per update batch
  int epochs_per_batch = 10;
  int minibatch_size = 64;
  double lr = 3e-4;
  bool value_clip = true;
  bool reward_scaling = true;
  bool lr_and_clip_decay = true;
  std::int64_t total_env_steps = 300000;
  double entropy_coef = 0.0;
  std::int64_t eval_interval = 10000;  // env steps between evaluation rounds
  int eval_episodes = 10;
  bool use_running_stats = false;  // scratch mode: running obs statistics
};

// Generalized advantage estimation over one episode-contiguous segment.
// values has length len(rewards)+1 with the bootstrap appended; terminals[t]
// zeroes the bootstrap for step t and breaks the lambda-chain after it.
// Callers split collected segments at episode boundaries, so within a call a
// true entry only ever appears at the last index. Targets are advantages +
// values.
struct GaeResult {
  Vec advantages;
  Vec targets;
};
GaeResult gae(const Vec& rewards, const Vec& values,
              const std::vector<std::uint8_t>& terminals, double gamma,
              double lambda);

// Rolling discounted-return reward scaler: running_return accumulates
// gamma-discounted rewards across the whole run (never reset), a Welford
// accumulator tracks its spread, and rewards are divided by the running
// standard deviation. Identity until the accumulator has seen at least two
// values and its std exceeds 1e-4 (constant-reward streams pass through
// unscaled); the divisor is floored at 1e-8.
struct RewardScaler {
  double gamma = 0.99;
  double running_return = 0.0;
  std::int64_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  double scale(double r);
  double std() const;
};

// Per-dimension running observation statistics for the scratch baseline;
// update-then-normalize.
struct RunningNorm {
  std::int64_t count = 0;
  Vec mean;
  Vec m2;

  void init(int dim);
  void update(const Vec& obs);
  NormStats stats() const;  // population std, floored at 1e-8
};

// One collected update batch. obs rows are already normalized; rewards are
// already scaled. boundary[t] marks an episode end after step t (terminal or
// timeout); terminal[t] marks only true terminals. boot(t) is the value of
// step t's successor observation (at timeouts that is the pre-reset
// observation); gae zeroes it where terminal[t] is set, so timeouts bootstrap
// and terminals do not.
struct RolloutBatch {
  Mat obs;   // T x obs_dim, normalized
  Mat act;   // T x act_dim
  Vec reward;
  Vec old_logprob;
  Vec old_value;
  Vec boot;
  std::vector<std::uint8_t> terminal;
  std::vector<std::uint8_t> boundary;
  Vec advantages;  // filled by compute_gae_segments
  Vec targets;
};

// Splits the batch at episode boundaries and runs gae per chunk.
void compute_gae_segments(RolloutBatch& batch, double gamma, double lambda);

struct PpoStats {
  double policy_loss = 0.0;  // negated mean surrogate, averaged over minibatches
  double value_loss = 0.0;
  double clip_fraction = 0.0;
  double kl_estimate = 0.0;  // mean(old_logprob - new_logprob) after the update
};

// epochs_per_batch shuffled minibatch passes: clipped-surrogate ascent on the
// policy (advantages re-normalized per minibatch) and descent on the value
// error; with value_clip the per-sample error is
// max((v - target)^2, (clip(v, v_old +- clip_now) - target)^2). lr_now and
// clip_now are the already-decayed values for this update.
PpoStats ppo_update(GaussianPolicy& policy, Mlp& v_net, Adam& adam_pi,
                    Adam& adam_v, const RolloutBatch& batch,
                    const OnlineConfig& cfg, double lr_now, double clip_now,
                    Rng& rng);

struct OnlineUpdateRecord {
  std::int64_t env_steps = 0;  // cumulative steps after this update
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double clip_fraction = 0.0;
  double kl_estimate = 0.0;
  double lr_now = 0.0;
  double clip_now = 0.0;
  double mean_batch_reward = 0.0;  // raw (unscaled) per-step reward mean
};

struct EvalRecord {
  std::int64_t env_steps = 0;
  double mean_return = 0.0;  // raw undiscounted return, deterministic policy
};

struct OnlineResult {
  std::vector<OnlineUpdateRecord> updates;
  std::vector<EvalRecord> evals;
  // Observation statistics in force at the end of the run: the frozen stats
  // in warm mode, the final running statistics in scratch mode.
  NormStats final_stats;
};

// Deterministic-policy evaluation: episodes full episodes, raw rewards.
double evaluate_policy(const GaussianPolicy& policy, Env& env,
                       const NormStats& stats, int episodes, Rng& rng);

// The full fine-tuning loop. Evaluates at step 0, then after any update that
// crosses an eval_interval multiple, and always after the final update.
// norm_stats is the frozen offline statistics for the warm start; with
// use_running_stats the argument is ignored beyond its dimension and running
// statistics (updated on every observed raw observation, then applied) take
// its place. Only whole rollout_horizon batches run: total_env_steps below
// one horizon means zero updates.
using OnlineStepCallback = std::function<void(const OnlineUpdateRecord&)>;
OnlineResult run_online(GaussianPolicy& policy, Mlp& v_net, Env& env,
                        Env& eval_env, const OnlineConfig& cfg,
                        const NormStats& norm_stats, Rng rng,
                        const OnlineStepCallback& update_cb = nullptr);

}  // namespace o2o
