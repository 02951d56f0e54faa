#pragma once

// Offline policy evaluation: the rollout-sum estimator over the learned
// dynamics (sum of Q along H-step model rollouts), the strict-improvement
// replacement gate, top-k selection, and the tabular model-gap bound checker.
//
// Estimator indexing: H action draws, H-1 dynamics transitions. Rollouts run
// in lockstep batches, but every rollout consumes its own RNG stream split
// from the estimate's seed, so batching never changes the estimate. Callers
// pass the Rng by value: evaluating two policies with the same Rng value
// yields paired (common-random-numbers) estimates.

#include "o2o/common.hpp"
#include "o2o/dataset.hpp"
#include "o2o/dynamics.hpp"
#include "o2o/policy.hpp"
#include "o2o/tabular.hpp"
#include "o2o/values.hpp"

namespace o2o {

enum class StartStateSource { DatasetInitials, DatasetUniform };

struct OPEConfig {
  int horizon = 5;
  int n_rollouts = 512;
  StartStateSource start_state_source = StartStateSource::DatasetInitials;
  RolloutMode rollout_mode = RolloutMode::Mean;

  bool operator==(const OPEConfig&) const = default;
};

struct OPEReport {
  int policy_id = 0;
  double j_hat = 0.0;
  double std_err = 0.0;
  int n_rollouts = 0;
  int horizon = 0;
};

// Operation-count instrumentation backing the O(N*H) complexity property.
struct OpCounts {
  std::int64_t q_evals = 0;
  std::int64_t dynamics_steps = 0;
  std::int64_t policy_samples = 0;
};

// Core estimator over a pre-normalized start-state pool (rows). Each rollout
// draws its start state uniformly from the pool with its own stream.
OPEReport amq_rollout_estimate(const GaussianPolicy& policy,
                               const GaussianDynamics& dynamics,
                               const ValueHeads& heads, const Mat& start_pool_n,
                               const OPEConfig& cfg, Rng rng,
                               OpCounts* counts = nullptr);

/// Dataset-facing wrapper: builds the start pool per cfg.start_state_source
// (episode starts or uniform rows), normalizes with stats, then estimates.
OPEReport amq_estimate(const GaussianPolicy& policy, const GaussianDynamics& dynamics,
                       const ValueHeads& heads, const Dataset& data,
                       const NormStats& stats, const OPEConfig& cfg, Rng rng,
                       OpCounts* counts = nullptr);

// Strict-improvement gate. Reports must come from identical configs.
bool accept_replacement(const OPEReport& report_new, const OPEReport& report_old);

// Policy ids sorted by j_hat descending; ties broken by lower id.
std::vector<int> select_top_k(const std::vector<OPEReport>& reports, int k);

/// Tabular model-gap bound: |J(pi,T) - J(pi,T_hat)| vs
// q_max * H(H-1)/2 * sqrt(2 * KL), with Q the capped discounted DP table of
// the true model and KL the transition KL weighted by the true-model
// visitation over the rollout's transition-consuming steps. An
// absolute-continuity failure makes the right side infinite (reported pass).
struct BoundCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double q_max = 0.0;
  double kl = 0.0;
  bool pass = false;
};
BoundCheck thm2_bound_check(const TabularMdp& mdp, const TabularMdp& perturbed,
                            const Mat& policy, double q_max, int H);

}  // namespace o2o
