#pragma once

// Offline multi-step policy improvement: per-member clipped-surrogate ascent
// against the fitted expectile critic, with a strict model-based-evaluation
// gate every gate_interval steps that decides whether the live member
// replaces its own behavior snapshot (the ratio denominator and the action
// sampler). Rejected members keep training from their current parameters; no
// rollback.

#include <functional>
#include <vector>

#include "o2o/common.hpp"
#include "o2o/dataset.hpp"
#include "o2o/dynamics.hpp"
#include "o2o/mlp.hpp"
#include "o2o/ope.hpp"
#include "o2o/policy.hpp"
#include "o2o/values.hpp"

namespace o2o {

struct OfflineOptConfig {
  double clip_epsilon = 0.25;
  int gate_interval = 100;  // evaluation-gate period, in optimizer steps
  int total_steps = 10000;  // per member
  int minibatch_size = 256;
  int actions_per_state = 1;
  bool adv_normalize = true;
  // Ensemble-disagreement coefficient for the offline stage; 0 disables the
  // term (it is only used when offline improvement follows online
  // pretraining).
  double disagreement_alpha_offline = 0.0;
  double lr = 1e-4;
};

// min(r * adv, clip(r, 1-eps, 1+eps) * adv) — the maximized quantity.
double clipped_surrogate(double ratio, double adv, double eps);

// Batched surrogate with per-sample dLoss/dlogprob weights (loss = -mean
// surrogate). Ties between the raw and clipped branches take the raw branch,
// so eps = +inf reproduces the vanilla importance-weighted gradient exactly.
struct SurrogateStats {
  double objective = 0.0;      // mean surrogate (maximized sense)
  double clip_fraction = 0.0;  // fraction of samples on the clipped branch
};
SurrogateStats clipped_surrogate_batch(const Vec& ratio, const Vec& adv,
                                       double eps, Vec& w_out);

// Reparameterized disagreement term for member i at states S_n (normalized):
// draws a~ = mu_live + std_live * eps (unclipped) and measures
//   D = mean_b [ log p_i(a~_b | s_b) - max_{j != i} log p_j_snapshot(a~_b | s_b) ],
// the margin by which the member's own samples are better explained by itself
// than by the best rival snapshot. D is maximized with weight alpha_off: the
// call adds -alpha_off * dD/dtheta_i into grads (winning rival branch only)
// and returns D.
double disagreement_term(const Ensemble& e, int member, const Mat& S_n,
                         const PolicyForward& fwd, const Mat& eps,
                         double alpha_off, PolicyGrads& grads);

// One optimizer step for one member: draw minibatch_size states uniformly
// from obs_n (normalized dataset observations), sample actions_per_state
// actions per state from the member's snapshot, score advantages
// q(s,a) - v(s) with the fitted heads (normalized per minibatch when
// configured), ascend the clipped surrogate (+ the disagreement term when
// enabled), and apply the member's Adam state. Returns the mean surrogate.
//
// Stream order (one rng, consumed in this order): batch_indices, then
// normal_mat(B*aps, act_dim) for the snapshot's action noise, then — only if
// disagreement_alpha_offline > 0 — normal_mat(B*aps, act_dim) for the
// reparameterized samples.
double offline_epoch(Ensemble& e, int member, const ValueHeads& heads,
                     const Mat& obs_n, const OfflineOptConfig& cfg, Adam& adam,
                     Rng& rng);

// One gate-log record per member per gate event.
struct GateEvent {
  int step = 0;  // 1-based optimizer step at which the gate fired
  int member = 0;
  double j_live = 0.0;
  double j_snapshot = 0.0;
  bool accepted = false;
  std::int64_t k_after = 0;  // member's replacement count after this event
};

struct OfflineResult {
  std::vector<GateEvent> gate_log;
};

// member, step (0-based), mean surrogate for that step.
using OfflineStepCallback = std::function<void(int, int, double)>;

// Full offline improvement run. All members advance in lockstep (so rival
// snapshots are consistent when the disagreement term is enabled); every
// gate_interval steps each member and its snapshot are evaluated with the
// model-based estimator under one fixed evaluation stream shared by every
// gate event of the run (paired comparisons, common random numbers), and the
// snapshot is replaced iff the live estimate is strictly greater. The gate
// log gains exactly floor(total_steps / gate_interval) records per member.
OfflineResult run_offline(Ensemble& e, const ValueHeads& heads,
                          const GaussianDynamics& dynamics, const Dataset& data,
                          const NormStats& stats, const OfflineOptConfig& cfg,
                          const OPEConfig& ope_cfg, Rng rng,
                          const OfflineStepCallback& step_cb = nullptr);

// Selection over the final per-member evaluation reports: shortlist of the
// top k ids (j_hat descending, ties to lower id); selected = shortlist front.
// Callers may re-rank a k > 1 shortlist with environment rollouts.
struct FinalizeResult {
  int selected = 0;
  std::vector<int> shortlist;
};
FinalizeResult finalize(const Ensemble& e, const std::vector<OPEReport>& reports,
                        int k = 1);

}  // namespace o2o
