#pragma once

// Stage orchestration over the artifact directory: dataset collection,
// offline training (cloning -> values -> dynamics -> improvement ->
// selection), online fine-tuning (warm or scratch), online pretraining for
// the online-offline-online ordering, the evaluation-accuracy study, and
// ablation sweeps. Every stage re-derives its random streams from the config
// seed, so runs are pure functions of (config, seed) and reruns reproduce
// artifacts and metrics byte for byte. Artifacts carry sidecar meta files
// recording the config hash; a write under a different hash fails without
// force.

#include <string>
#include <vector>

#include "o2o/config.hpp"
#include "o2o/dataset.hpp"
#include "o2o/offline.hpp"
#include "o2o/online.hpp"

namespace o2o {

struct ArtifactPaths {
  std::string dir;
  std::string dataset;       // dataset.uo4d
  std::string stats;         // norm.uo4n
  std::string values;        // values.uo4v
  std::string dynamics;      // dynamics.uo4t
  std::string selected;      // policy_selected.uo4p
  std::string pretrained;    // policy_pretrained.uo4p
  std::string pretrained_stats;      // norm_pretrain.uo4n
  std::string final_policy;  // policy_final.uo4p
  std::string final_policy_scratch;  // policy_final_scratch.uo4p

  std::string member(int i) const;
  std::string pool(int i) const;  // evaluation-study pool entries
  std::string metrics(const std::string& stage) const;
  std::string timings(const std::string& stage) const;
  std::string summary(const std::string& stage) const;
};
ArtifactPaths artifact_paths(const RunConfig& cfg);

// Content addressing: refuse to overwrite path if its meta records a
// different config hash (force overrides); record the hash after writing.
void guard_artifact(const std::string& path, std::uint64_t hash, bool force);
void write_meta(const std::string& path, const std::string& stage,
                std::uint64_t hash);

struct CollectOutcome {
  std::int64_t n = 0;
  std::int64_t episodes = 0;
  double mean_return = 0.0;
  double min_return = 0.0;
  double max_return = 0.0;
};

// Scripted-mixture collection; writes dataset.uo4d + norm.uo4n + summary.
CollectOutcome stage_collect(const RunConfig& cfg, bool force);

// Collection driven by a stochastic policy checkpoint (the ooo chain's
// second stage). The policy's own normalization statistics (stats_path) are
// used to drive it and are copied to norm.uo4n so the downstream offline
// stage trains in the same normalized space.
CollectOutcome stage_collect_with_policy(const RunConfig& cfg,
                                         const std::string& policy_path,
                                         const std::string& stats_path,
                                         bool force);

struct OfflineOutcome {
  int selected = 0;
  std::vector<int> shortlist;
  std::vector<double> final_j;  // per-member estimates on the final snapshots
  double selected_env_return = 0.0;
  std::int64_t replacements = 0;
  std::int64_t gate_queries = 0;
  double mean_pairwise_kl = 0.0;  // member-diversity diagnostic
};

// Full offline pipeline from the stored dataset. With pretrained nonempty,
// behavior cloning is skipped and every ensemble member starts as that
// checkpoint (the ooo ordering; pair with stage_collect_with_policy).
OfflineOutcome stage_train_offline(const RunConfig& cfg, bool force,
                                   const std::string& pretrained = "");

struct OnlineOutcome {
  double first_eval = 0.0;
  double final_eval = 0.0;
  std::int64_t env_steps = 0;
  std::vector<EvalRecord> evals;
};

// Online fine-tuning. Warm mode loads the selected policy, the fitted value
// head, and the frozen statistics; scratch mode builds fresh nets and uses
// running statistics.
OnlineOutcome stage_finetune_online(const RunConfig& cfg, bool scratch,
                                    bool force);

// Scratch pretraining whose policy and statistics seed the ooo chain.
OnlineOutcome stage_pretrain_online(const RunConfig& cfg, bool force);

// --- evaluation-accuracy study --------------------------------------------

struct OpeAccuracyReport {
  int pairs = 0;  // comparable (non-tied) pairs
  double exact_acc = 0.0;
  double acc_within_10 = 0.0;
  double acc_within_20 = 0.0;
};

// Pairwise ordering agreement between estimates and ground-truth returns.
// Ties in true returns are excluded; within-delta counts a pair correct when
// the ordering matches or the true gap is below delta (relative to the larger
// magnitude). Vacuously 1 with zero comparable pairs.
OpeAccuracyReport ope_accuracy_pairs(const std::vector<double>& j_hat,
                                     const std::vector<double>& true_returns);

// Builds a graded pool of >= 6 policies (random inits, cloning runs of
// varying length, the improved policy), scores each by simulation and by the
// model-based estimator, and reports ordering accuracy. Requires the offline
// stage's artifacts.
OpeAccuracyReport stage_ope_accuracy(const RunConfig& cfg, bool force);

// --- ablation sweep --------------------------------------------------------

struct SweepRow {
  double value = 0.0;
  double selected_env_return = 0.0;
  double mean_pairwise_kl = 0.0;
  std::int64_t replacements = 0;
};

// axis is one of: alpha, ensemble_n, ope_interval, tau. Each value runs the
// collect + offline pipeline under cfg with that axis overridden, in its own
// subdirectory, sharing the config seed.
std::vector<SweepRow> stage_sweep(const RunConfig& cfg, const std::string& axis,
                                  const std::vector<double>& values, bool force);

}  // namespace o2o
