#pragma once

// Diagonal-Gaussian MLP policies, the behavior ensemble, and the ensemble
// behavior-cloning stage with its disagreement penalty, KL diagnostics, and
// the 1-D normalization-bound check.
//
// Density convention: the policy mean is squashed into action bounds
// (center + half * tanh(net_out)) but the log-density is the plain diagonal
// Gaussian evaluated at the raw action — no squash Jacobian. Sampling adds
// std * eps to the mean and clips to bounds.

#include "o2o/common.hpp"
#include "o2o/mlp.hpp"

namespace o2o {

struct GaussianPolicy {
  Mlp mean_net;   // obs -> act_dim, tanh hidden, tanh output
  Vec log_std;    // state-independent, clamped to [kLogStdMin, kLogStdMax]
  Vec act_low, act_high;

  static constexpr double kLogStdMin = -5.0;
  static constexpr double kLogStdMax = 2.0;

  int obs_dim() const { return mean_net.in_dim(); }
  int act_dim() const { return mean_net.out_dim(); }
  Vec center() const { return 0.5 * (act_low + act_high); }
  Vec half_range() const { return 0.5 * (act_high - act_low); }
  Vec std() const { return log_std.array().exp().matrix(); }
  void clamp_log_std() {
    log_std = log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  }

  // Flat parameter vector: [mean_net params; log_std].
  std::int64_t n_params() const { return mean_net.n_params() + log_std.size(); }
  Vec flatten_params() const;
  void unflatten_params(const Vec& theta);
};

GaussianPolicy make_policy(int obs_dim, const Vec& act_low, const Vec& act_high,
                           const std::vector<int>& hidden, Rng& rng,
                           double hidden_gain, double output_gain,
                           double log_std_init);

// Batched mean: mu = center + half * tanh_net(obs). obs is pre-normalized.
Mat policy_mean(const GaussianPolicy& p, const Mat& obs);

double log_prob(const GaussianPolicy& p, const Vec& obs, const Vec& act);
Vec log_prob_batch(const GaussianPolicy& p, const Mat& obs, const Mat& act);
// Log-probs given a precomputed mean matrix (avoids re-running the net).
Vec log_prob_from_mean(const GaussianPolicy& p, const Mat& mu, const Mat& act);

Vec sample(const GaussianPolicy& p, const Vec& obs, Rng& rng);
Vec mean_action(const GaussianPolicy& p, const Vec& obs);
// Batched: actions = clip(mu + std * eps); eps is batch x act_dim.
Mat sample_batch_with_eps(const GaussianPolicy& p, const Mat& mu, const Mat& eps);

// ---------------------------------------------------------------------------
// Shared gradient core. Every policy loss in the repo is a function of the
// per-sample log-probs, so its parameter gradient is assembled from
// dLoss/dlogprob weights via this routine.
// ---------------------------------------------------------------------------
struct PolicyGrads {
  MlpGrads net;
  Vec d_log_std;
};
PolicyGrads make_policy_grads(const GaussianPolicy& p);
Vec flatten_policy_grads(const GaussianPolicy& p, const PolicyGrads& g);

// Forward pass that keeps the cache needed for the backward call.
struct PolicyForward {
  MlpCache cache;
  Mat mu;  // batch x act_dim
};
PolicyForward policy_forward(const GaussianPolicy& p, const Mat& obs);

// Accumulates d(sum_b w_b * logprob_b)/d(theta) into grads.
void logprob_backward(const GaussianPolicy& p, const PolicyForward& fwd,
                      const Mat& act, const Vec& w, PolicyGrads& grads);

// ---------------------------------------------------------------------------
// Ensemble
// ---------------------------------------------------------------------------
struct Ensemble {
  std::vector<GaussianPolicy> members;
  std::vector<GaussianPolicy> snapshots;     // frozen behavior policies
  std::vector<std::int64_t> iteration_counts;  // replacement counters
  double alpha = 0.1;

  int n() const { return static_cast<int>(members.size()); }
  void check() const;
};

Ensemble init_ensemble(int n, double alpha, int obs_dim, const Vec& act_low,
                       const Vec& act_high, const std::vector<int>& hidden,
                       Rng& rng, double hidden_gain, double output_gain,
                       double log_std_init);

// Max over the frozen snapshot set of log-densities at (obs, act).
double max_log_density(const Ensemble& e, const Vec& obs, const Vec& act);
Vec max_log_density_batch(const Ensemble& e, const Mat& obs, const Mat& act);

// Per-member behavior-cloning loss on a batch. With alpha = 0 this is plain
// negative log-likelihood. With alpha > 0 the member is pulled toward the
// pointwise-max density of {itself (live), other members' snapshots}: samples
// some other member explains better are down-weighted to (1 - alpha), which
// drives specialization.  loss_i =
//   -(1-alpha) * mean lp_i - alpha * mean max(lp_i, max_{j!=i} snap_lp_j).
struct BcBatchResult {
  double loss = 0.0;
  double mean_logprob = 0.0;
};
BcBatchResult bc_member_loss(const Ensemble& e, int member, const Mat& obs,
                             const Mat& act, PolicyGrads* grads);

struct BcConfig {
  int n_members = 4;
  double alpha = 0.1;
  std::vector<int> hidden = {32, 32};
  int steps = 4000;
  int batch_size = 256;
  double lr = 1e-3;
  bool lr_decay = true;
  int snapshot_refresh_interval = 25;
  double hidden_gain = 1.4142135623730951;
  double output_gain = 0.01;
  double log_std_init = 0.0;
};

// Trains the ensemble on (normalized obs, raw action) pairs. All members
// share each step's minibatch; penalty snapshots refresh every
// snapshot_refresh_interval steps; after training, behavior snapshots are the
// final members with iteration counts 0. step_cb (optional) observes
// (step, per-member losses).
using BcStepCallback = std::function<void(int, const std::vector<double>&)>;
Ensemble bc_train(const Mat& obs_n, const Mat& act, const Vec& act_low,
                  const Vec& act_high, const BcConfig& cfg, Rng& rng,
                  const BcStepCallback& step_cb = nullptr);

// Monte-Carlo symmetric KL (both directions summed) between member pairs,
// averaged over the given (normalized) states, m action samples per state.
Mat kl_pairwise_estimate(const Ensemble& e, const Mat& states, int m, Rng& rng);
double mean_offdiag(const Mat& kl);

// 1-D normalization-bound diagnostic: Z(s) = integral of max_j pi_j(a|s) da
// by adaptive Simpson quadrature; pass iff 1 - 1e-3 <= Z <= n + 1e-3.
struct ZBoundResult {
  double z = 0.0;
  bool pass = false;
};
ZBoundResult zbound_check(const Ensemble& e, const Vec& obs);

}  // namespace o2o
