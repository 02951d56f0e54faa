#pragma once

// Offline transition datasets: collection from scripted policies, the UO4D
// binary format, normalization statistics, and episode bookkeeping.

#include "o2o/common.hpp"
#include "o2o/env.hpp"

#include <cstdint>
#include <utility>

namespace o2o {

struct Dataset {
  Mat obs;        // N x obs_dim
  Mat act;        // N x act_dim
  Vec reward;     // N
  Mat next_obs;   // N x obs_dim
  std::vector<std::uint8_t> terminal;  // N, 0/1
  std::vector<std::uint8_t> timeout;   // N, 0/1
  std::vector<std::uint64_t> episode_starts;  // sorted; contains 0 when N > 0

  std::int64_t n() const { return obs.rows(); }
  std::int64_t n_episodes() const {
    return static_cast<std::int64_t>(episode_starts.size());
  }
  void check() const;  // invariant validation, throws FormatError
};

// Episode-at-a-time collection: each episode is run by one policy drawn from
// the weighted mixture; collection stops at the first episode boundary at or
// beyond n_transitions (whole episodes only).
Dataset collect(Env& env,
                const std::vector<std::pair<ScriptedPolicy*, double>>& mixture,
                std::int64_t n_transitions, Rng& rng);

// UO4D v1, little-endian: "UO4D" magic, u32 version, u64 N, u32 obs_dim,
// u32 act_dim; float32 payloads for obs, act, reward, next_obs; u8 terminal,
// timeout; u64 episode-start count then u64 indices.
void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

struct NormStats {
  Vec mean;
  Vec std;  // population std, floored at 1e-8
};

NormStats compute_norm_stats(const Dataset& d);  // needs N >= 2
NormStats identity_stats(int dim);

Vec normalize_obs(const NormStats& s, const Vec& obs);
Mat normalize_obs(const NormStats& s, const Mat& obs);
Vec denormalize_obs(const NormStats& s, const Vec& obs);
Mat denormalize_obs(const NormStats& s, const Mat& obs);

// Observation rows at episode starts (k x obs_dim).
Mat initial_states(const Dataset& d);

// Per-episode undiscounted return sums (length n_episodes).
Vec episode_returns(const Dataset& d);

// Stats persistence shares the dataset container format ("UO4N" v1).
void save_norm_stats(const NormStats& s, const std::string& path);
NormStats load_norm_stats(const std::string& path);

}  // namespace o2o
