#pragma once

// Declarative run configuration: nested per-module blocks, JSON files layered
// over fully-tuned per-env presets, and a stable content hash used for
// artifact addressing. Unknown keys are rejected so typos fail loudly.

#include <string>
#include <vector>

#include "o2o/common.hpp"
#include "o2o/dynamics.hpp"
#include "o2o/offline.hpp"
#include "o2o/online.hpp"
#include "o2o/ope.hpp"
#include "o2o/policy.hpp"
#include "o2o/values.hpp"

namespace o2o {

struct MixtureEntry {
  std::string kind;        // scripted-policy kind, see make_scripted_policy
  double noise_std = 0.0;  // additive action noise where the kind uses one
  double weight = 1.0;     // positive mixture weight
};

struct CollectConfig {
  std::int64_t n_transitions = 20000;
  std::vector<MixtureEntry> mixture;
};

struct RunConfig {
  std::string env = "pointmass2d";
  std::uint64_t seed = 1;
  std::string out_dir = "runs/default";
  CollectConfig collect;
  BcConfig bc;
  ValueFitConfig value;
  DynamicsFitConfig dynamics;
  OPEConfig ope;
  OfflineOptConfig offline;
  OnlineConfig online;
  int finalize_k = 1;            // shortlist size at selection
  int offline_eval_episodes = 10;  // env episodes scoring the selected policy
};

// Fully tuned defaults for: pointmass2d, pointmass2d-shifted, gridworld5,
// pendulum-lite. Unknown env -> config error.
RunConfig preset_config(const std::string& env);

// "preset:NAME" resolves a built-in preset; anything else is read as a JSON
// file whose keys override the preset selected by its "env" entry.
RunConfig load_run_config(const std::string& spec);

// Canonical JSON (stable key order); the layered parse inverse; FNV-1a hash
// of the canonical form.
std::string config_to_json(const RunConfig& cfg);
RunConfig config_from_json_text(const std::string& text);
std::uint64_t config_hash(const RunConfig& cfg);

void validate_run_config(const RunConfig& cfg);

}  // namespace o2o
