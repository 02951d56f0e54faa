#include "o2o/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "o2o/checkpoint.hpp"
#include "o2o/metrics.hpp"
#include "o2o/offline.hpp"
#include "o2o/ope.hpp"

namespace fs = std::filesystem;

namespace o2o {

namespace {

using nlohmann::ordered_json;

// Wall-clock phase timer feeding the timings sidecar (never the metrics file).
class PhaseTimer {
 public:
  PhaseTimer() : t0_(std::chrono::steady_clock::now()) {}
  double lap_ms() {
    const auto t1 = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(t1 - t0_).count();
    t0_ = t1;
    return ms;
  }

 private:
  std::chrono::steady_clock::time_point t0_;
};

void write_summary_file(const std::string& path, const ordered_json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("cannot open summary file for writing: " + path);
  f << j.dump(2) << '\n';
  f.flush();
  if (!f) throw FormatError("write failed for summary file: " + path);
}

void require_artifact(const std::string& path, const std::string& producer) {
  if (!fs::exists(path)) {
    throw ConfigError("missing artifact: " + path + " (run " + producer +
                      " first)");
  }
}

std::string fmt_axis_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// Wraps a Gaussian policy checkpoint as a collection policy: normalizes the
// raw observation with the stats it was trained under, then samples.
class PolicyAdapter final : public ScriptedPolicy {
 public:
  PolicyAdapter(GaussianPolicy p, NormStats s)
      : policy_(std::move(p)), stats_(std::move(s)) {}
  Vec act(const Vec& obs, Rng& rng) override {
    return sample(policy_, normalize_obs(stats_, obs), rng);
  }

 private:
  GaussianPolicy policy_;
  NormStats stats_;
};

// Monte-Carlo return of the stochastic policy (ground-truth side of the
// estimator-accuracy study; evaluate_policy is the deterministic counterpart).
double stochastic_return(const GaussianPolicy& policy, Env& env,
                         const NormStats& stats, int episodes, Rng& rng) {
  if (episodes < 1) throw ConfigError("stochastic_return: episodes must be >= 1");
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    Vec obs = env.reset(rng);
    double ep_return = 0.0;
    for (;;) {
      const Vec a = sample(policy, normalize_obs(stats, obs), rng);
      const StepResult sr = env.step(a, rng);
      ep_return += sr.reward;
      if (sr.terminal || sr.timeout) break;
      obs = sr.next_obs;
    }
    total += ep_return;
  }
  return total / static_cast<double>(episodes);
}

std::vector<std::unique_ptr<ScriptedPolicy>> build_mixture_policies(
    const CollectConfig& cc, const Env& env) {
  std::vector<std::unique_ptr<ScriptedPolicy>> out;
  out.reserve(cc.mixture.size());
  for (const MixtureEntry& m : cc.mixture) {
    out.push_back(make_scripted_policy(m.kind, m.noise_std, env));
  }
  return out;
}

CollectOutcome summarize_dataset(const Dataset& data) {
  CollectOutcome out;
  out.n = data.n();
  out.episodes = data.n_episodes();
  const Vec rets = episode_returns(data);
  if (rets.size() > 0) {
    out.mean_return = rets.mean();
    out.min_return = rets.minCoeff();
    out.max_return = rets.maxCoeff();
  }
  return out;
}

void write_collect_outputs(const RunConfig& cfg, const ArtifactPaths& paths,
                           const Dataset& data, const NormStats& stats,
                           const CollectOutcome& out, double wall_ms) {
  const std::uint64_t hash = config_hash(cfg);
  save_dataset(data, paths.dataset);
  write_meta(paths.dataset, "collect", hash);
  save_norm_stats(stats, paths.stats);
  write_meta(paths.stats, "collect", hash);

  MetricsWriter mw(paths.metrics("collect"), paths.timings("collect"));
  mw.record("collect", 0,
            {{"n", static_cast<double>(out.n)},
             {"episodes", static_cast<double>(out.episodes)},
             {"mean_return", out.mean_return},
             {"min_return", out.min_return},
             {"max_return", out.max_return}});
  mw.timing("collect", 0, wall_ms);
  mw.close();

  ordered_json j;
  j["stage"] = "collect";
  j["env"] = cfg.env;
  j["seed"] = cfg.seed;
  j["config_hash"] = to_hex(hash);
  j["n_transitions"] = out.n;
  j["n_episodes"] = out.episodes;
  j["mean_return"] = out.mean_return;
  j["min_return"] = out.min_return;
  j["max_return"] = out.max_return;
  write_summary_file(paths.summary("collect"), j);
}

}  // namespace

// ---------------------------------------------------------------------------
// Paths and artifact guards
// ---------------------------------------------------------------------------

std::string ArtifactPaths::member(int i) const {
  return dir + "/policy_member" + std::to_string(i) + ".uo4p";
}

std::string ArtifactPaths::pool(int i) const {
  return dir + "/policy_pool" + std::to_string(i) + ".uo4p";
}

std::string ArtifactPaths::metrics(const std::string& stage) const {
  return dir + "/metrics_" + stage + ".jsonl";
}

std::string ArtifactPaths::timings(const std::string& stage) const {
  return dir + "/timings_" + stage + ".jsonl";
}

std::string ArtifactPaths::summary(const std::string& stage) const {
  return dir + "/summary_" + stage + ".json";
}

ArtifactPaths artifact_paths(const RunConfig& cfg) {
  ArtifactPaths p;
  p.dir = cfg.out_dir;
  p.dataset = cfg.out_dir + "/dataset.uo4d";
  p.stats = cfg.out_dir + "/norm.uo4n";
  p.values = cfg.out_dir + "/values.uo4v";
  p.dynamics = cfg.out_dir + "/dynamics.uo4t";
  p.selected = cfg.out_dir + "/policy_selected.uo4p";
  p.pretrained = cfg.out_dir + "/policy_pretrained.uo4p";
  p.pretrained_stats = cfg.out_dir + "/norm_pretrain.uo4n";
  p.final_policy = cfg.out_dir + "/policy_final.uo4p";
  p.final_policy_scratch = cfg.out_dir + "/policy_final_scratch.uo4p";
  return p;
}

void write_meta(const std::string& path, const std::string& stage,
                std::uint64_t hash) {
  ordered_json j;
  j["stage"] = stage;
  j["config_hash"] = to_hex(hash);
  write_summary_file(path + ".meta.json", j);
}

void guard_artifact(const std::string& path, std::uint64_t hash, bool force) {
  if (force || !fs::exists(path)) return;
  const std::string meta_path = path + ".meta.json";
  if (!fs::exists(meta_path)) {
    throw ConfigError("artifact exists without provenance sidecar: " + path +
                      " (pass --force to overwrite)");
  }
  std::ifstream f(meta_path);
  if (!f) throw FormatError("cannot open meta sidecar: " + meta_path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError("bad meta sidecar " + meta_path + ": " + ex.what());
  }
  if (!j.contains("config_hash") || !j["config_hash"].is_string()) {
    throw FormatError("meta sidecar missing config_hash: " + meta_path);
  }
  const std::string existing = j["config_hash"].get<std::string>();
  if (existing != to_hex(hash)) {
    throw ConfigError("artifact " + path + " was produced under config hash " +
                      existing + ", current config hashes to " + to_hex(hash) +
                      " (pass --force to overwrite)");
  }
  // Same config: the rerun reproduces the artifact byte for byte.
}

// ---------------------------------------------------------------------------
// collect
// ---------------------------------------------------------------------------

CollectOutcome stage_collect(const RunConfig& cfg, bool force) {
  validate_run_config(cfg);
  const ArtifactPaths paths = artifact_paths(cfg);
  fs::create_directories(paths.dir);
  const std::uint64_t hash = config_hash(cfg);
  guard_artifact(paths.dataset, hash, force);
  guard_artifact(paths.stats, hash, force);

  PhaseTimer timer;
  auto env = make_env(cfg.env);
  auto owners = build_mixture_policies(cfg.collect, *env);
  std::vector<std::pair<ScriptedPolicy*, double>> mixture;
  mixture.reserve(owners.size());
  for (std::size_t i = 0; i < owners.size(); ++i) {
    mixture.emplace_back(owners[i].get(), cfg.collect.mixture[i].weight);
  }

  Rng rng = Rng(cfg.seed).split(streams::kCollect);
  const Dataset data = collect(*env, mixture, cfg.collect.n_transitions, rng);
  data.check();
  const NormStats stats = compute_norm_stats(data);

  const CollectOutcome out = summarize_dataset(data);
  write_collect_outputs(cfg, paths, data, stats, out, timer.lap_ms());
  return out;
}

CollectOutcome stage_collect_with_policy(const RunConfig& cfg,
                                         const std::string& policy_path,
                                         const std::string& stats_path,
                                         bool force) {
  validate_run_config(cfg);
  require_artifact(policy_path, "pretrain-online");
  require_artifact(stats_path, "pretrain-online");
  const ArtifactPaths paths = artifact_paths(cfg);
  fs::create_directories(paths.dir);
  const std::uint64_t hash = config_hash(cfg);
  guard_artifact(paths.dataset, hash, force);
  guard_artifact(paths.stats, hash, force);

  PhaseTimer timer;
  auto env = make_env(cfg.env);
  const EnvSpec& spec = env->spec();
  const NormStats stats = load_norm_stats(stats_path);
  PolicyAdapter adapter(load_policy(policy_path, spec.action_low, spec.action_high),
                        stats);
  std::vector<std::pair<ScriptedPolicy*, double>> mixture = {{&adapter, 1.0}};

  Rng rng = Rng(cfg.seed).split(streams::kCollect);
  const Dataset data = collect(*env, mixture, cfg.collect.n_transitions, rng);
  data.check();

  // The downstream offline run keeps working in the collection policy's
  // normalized observation space, so the collector's stats are written as the
  // run's stats artifact instead of freshly computed ones.
  const CollectOutcome out = summarize_dataset(data);
  write_collect_outputs(cfg, paths, data, stats, out, timer.lap_ms());
  return out;
}

// ---------------------------------------------------------------------------
// train-offline
// ---------------------------------------------------------------------------

OfflineOutcome stage_train_offline(const RunConfig& cfg, bool force,
                                   const std::string& pretrained) {
  validate_run_config(cfg);
  const ArtifactPaths paths = artifact_paths(cfg);
  fs::create_directories(paths.dir);
  require_artifact(paths.dataset, "collect");
  require_artifact(paths.stats, "collect");
  if (!pretrained.empty()) require_artifact(pretrained, "pretrain-online");

  const std::uint64_t hash = config_hash(cfg);
  guard_artifact(paths.values, hash, force);
  guard_artifact(paths.dynamics, hash, force);
  guard_artifact(paths.selected, hash, force);
  for (int i = 0; i < cfg.bc.n_members; ++i) {
    guard_artifact(paths.member(i), hash, force);
  }

  const Dataset data = load_dataset(paths.dataset);
  data.check();
  const NormStats stats = load_norm_stats(paths.stats);
  auto env = make_env(cfg.env);
  const EnvSpec& spec = env->spec();

  MetricsWriter mw(paths.metrics("offline"), paths.timings("offline"));
  const Rng root(cfg.seed);
  const Mat obs_n = normalize_obs(stats, data.obs);
  const Mat next_obs_n = normalize_obs(stats, data.next_obs);

  PhaseTimer timer;

  // --- behavior ensemble -----------------------------------------------
  Ensemble e;
  if (pretrained.empty()) {
    Rng bc_rng = root.split(streams::kBc);
    const int last_bc_step = cfg.bc.steps - 1;
    auto bc_cb = [&](int step, const std::vector<double>& losses) {
      if (step % 50 != 0 && step != last_bc_step) return;
      ScalarMap row;
      for (std::size_t i = 0; i < losses.size(); ++i) {
        row["loss.m" + std::to_string(i)] = losses[i];
      }
      mw.record("bc", step, row);
    };
    e = bc_train(obs_n, data.act, spec.action_low, spec.action_high, cfg.bc,
                 bc_rng, bc_cb);
  } else {
    // Online-first ordering: every member starts from the pretrained policy
    // and the cloning stage is skipped; the offline disagreement term is what
    // separates the copies.
    GaussianPolicy base =
        load_policy(pretrained, spec.action_low, spec.action_high);
    e.alpha = cfg.bc.alpha;
    e.members.assign(cfg.bc.n_members, base);
    e.snapshots.assign(cfg.bc.n_members, base);
    e.iteration_counts.assign(cfg.bc.n_members, 0);
    e.check();
  }
  mw.timing("bc", 0, timer.lap_ms());

  // --- value heads ---------------------------------------------------------
  Rng v_rng = root.split(streams::kValues);
  const int last_v = cfg.value.steps - 1;
  auto v_cb = [&](int step, double v_loss, double q_loss) {
    if (step % 200 != 0 && step != last_v) return;
    mw.record("value", step, {{"v_loss", v_loss}, {"q_loss", q_loss}});
  };
  const ValueHeads heads = fit_values(obs_n, data.act, data.reward, next_obs_n,
                                      data.terminal, cfg.value, v_rng, v_cb);
  save_value_heads(heads, paths.values);
  write_meta(paths.values, "train-offline", hash);
  mw.timing("value", 0, timer.lap_ms());

  // --- dynamics model --------------------------------------------------------
  Rng d_rng = root.split(streams::kDynamics);
  const int last_d = cfg.dynamics.steps - 1;
  auto d_cb = [&](int step, double nll) {
    if (step % 200 != 0 && step != last_d) return;
    mw.record("dynamics", step, {{"nll", nll}});
  };
  const GaussianDynamics dyn =
      fit_dynamics(obs_n, data.act, next_obs_n, cfg.dynamics, d_rng, d_cb);
  save_dynamics(dyn, paths.dynamics);
  write_meta(paths.dynamics, "train-offline", hash);
  mw.timing("dynamics", 0, timer.lap_ms());

  // --- gated offline improvement ---------------------------------------------
  const Rng off_rng = root.split(streams::kOffline);
  const int last_off = cfg.offline.total_steps - 1;
  auto off_cb = [&](int member, int step, double surrogate) {
    if (step % 50 != 0 && step != last_off) return;
    mw.record("offline.m" + std::to_string(member), step,
              {{"surrogate", surrogate}});
  };
  const OfflineResult off_res = run_offline(e, heads, dyn, data, stats,
                                            cfg.offline, cfg.ope, off_rng,
                                            off_cb);
  for (const GateEvent& g : off_res.gate_log) {
    mw.record("gate.m" + std::to_string(g.member), g.step,
              {{"j_live", g.j_live},
               {"j_snapshot", g.j_snapshot},
               {"accepted", g.accepted ? 1.0 : 0.0},
               {"k_after", static_cast<double>(g.k_after)}});
  }
  mw.timing("offline", 0, timer.lap_ms());

  // --- final evaluation and selection ----------------------------------------
  // The final per-member reports reuse the same evaluation stream the gate
  // used, so they are comparable with the gate log.
  std::vector<OPEReport> reports;
  reports.reserve(static_cast<std::size_t>(e.n()));
  const Rng gate_rng = off_rng.split(streams::kOpe);
  for (int i = 0; i < e.n(); ++i) {
    OPEReport rep = amq_estimate(e.snapshots[static_cast<std::size_t>(i)], dyn,
                                 heads, data, stats, cfg.ope, gate_rng);
    rep.policy_id = i;
    reports.push_back(rep);
  }
  const FinalizeResult fin = finalize(e, reports, cfg.finalize_k);

  OfflineOutcome out;
  out.shortlist = fin.shortlist;
  for (const OPEReport& r : reports) out.final_j.push_back(r.j_hat);
  out.gate_queries = static_cast<std::int64_t>(off_res.gate_log.size());
  for (std::int64_t k : e.iteration_counts) out.replacements += k;

  // A shortlist longer than one is re-ranked with environment rollouts; ties
  // keep the estimator's order.
  const Rng eval_base = root.split(streams::kEval);
  int best_id = fin.selected;
  double best_return = 0.0;
  bool have_best = false;
  for (int id : fin.shortlist) {
    Rng er = eval_base.split(static_cast<std::uint64_t>(id));
    const double ret =
        evaluate_policy(e.snapshots[static_cast<std::size_t>(id)], *env, stats,
                        cfg.offline_eval_episodes, er);
    if (!have_best || ret > best_return) {
      have_best = true;
      best_return = ret;
      best_id = id;
    }
  }
  out.selected = best_id;
  out.selected_env_return = best_return;

  // Member-diversity diagnostic at (a capped set of) episode-start states.
  if (e.n() > 1) {
    const Mat starts = normalize_obs(stats, initial_states(data));
    const Eigen::Index cap = std::min<Eigen::Index>(starts.rows(), 128);
    Rng kl_rng = root.split(0x5EED);
    const Mat kl = kl_pairwise_estimate(e, starts.topRows(cap), 256, kl_rng);
    out.mean_pairwise_kl = mean_offdiag(kl);
  }

  for (int i = 0; i < e.n(); ++i) {
    save_policy(e.snapshots[static_cast<std::size_t>(i)], paths.member(i));
    write_meta(paths.member(i), "train-offline", hash);
  }
  save_policy(e.snapshots[static_cast<std::size_t>(out.selected)],
              paths.selected);
  write_meta(paths.selected, "train-offline", hash);
  mw.timing("finalize", 0, timer.lap_ms());
  mw.close();

  ordered_json j;
  j["stage"] = "train-offline";
  j["env"] = cfg.env;
  j["seed"] = cfg.seed;
  j["config_hash"] = to_hex(hash);
  j["pretrained_init"] = !pretrained.empty();
  j["selected"] = out.selected;
  j["shortlist"] = out.shortlist;
  j["final_j"] = out.final_j;
  j["selected_env_return"] = out.selected_env_return;
  j["replacements"] = out.replacements;
  j["gate_queries"] = out.gate_queries;
  j["mean_pairwise_kl"] = out.mean_pairwise_kl;
  ordered_json per_member = ordered_json::array();
  for (int i = 0; i < e.n(); ++i) {
    per_member.push_back(
        {{"member", i},
         {"j_hat", reports[static_cast<std::size_t>(i)].j_hat},
         {"std_err", reports[static_cast<std::size_t>(i)].std_err},
         {"replacements", e.iteration_counts[static_cast<std::size_t>(i)]}});
  }
  j["members"] = per_member;
  write_summary_file(paths.summary("offline"), j);
  return out;
}

// ---------------------------------------------------------------------------
// finetune-online / pretrain-online
// ---------------------------------------------------------------------------

namespace {

struct OnlineSetup {
  GaussianPolicy policy;
  Mlp v_net;
  NormStats stats;
};

OnlineSetup scratch_setup(const RunConfig& cfg, const EnvSpec& spec,
                          std::uint64_t init_tag) {
  Rng init_rng = Rng(cfg.seed).split(streams::kInit).split(init_tag);
  OnlineSetup s{make_policy(spec.obs_dim, spec.action_low, spec.action_high,
                            cfg.bc.hidden, init_rng, cfg.bc.hidden_gain,
                            cfg.bc.output_gain, cfg.bc.log_std_init),
                Mlp{}, identity_stats(spec.obs_dim)};
  std::vector<int> sizes;
  sizes.push_back(spec.obs_dim);
  for (int h : cfg.value.hidden) sizes.push_back(h);
  sizes.push_back(1);
  s.v_net = make_mlp(sizes);
  init_mlp(s.v_net, init_rng, std::sqrt(2.0), 1.0);
  return s;
}

OnlineOutcome run_online_stage(const RunConfig& cfg, OnlineSetup setup,
                               const OnlineConfig& oc, Rng rng,
                               const std::string& stage_tag,
                               const std::string& policy_out,
                               const std::string& stats_out, bool force) {
  const ArtifactPaths paths = artifact_paths(cfg);
  fs::create_directories(paths.dir);
  const std::uint64_t hash = config_hash(cfg);
  guard_artifact(policy_out, hash, force);
  if (!stats_out.empty()) guard_artifact(stats_out, hash, force);

  auto env = make_env(cfg.env);
  auto eval_env = make_env(cfg.env);

  MetricsWriter mw(paths.metrics(stage_tag), paths.timings(stage_tag));
  PhaseTimer timer;
  auto cb = [&](const OnlineUpdateRecord& r) {
    mw.record("online.update", r.env_steps,
              {{"policy_loss", r.policy_loss},
               {"value_loss", r.value_loss},
               {"clip_fraction", r.clip_fraction},
               {"kl_estimate", r.kl_estimate},
               {"lr_now", r.lr_now},
               {"clip_now", r.clip_now},
               {"mean_batch_reward", r.mean_batch_reward}});
  };
  OnlineResult res = run_online(setup.policy, setup.v_net, *env, *eval_env, oc,
                                setup.stats, rng, cb);
  for (const EvalRecord& ev : res.evals) {
    mw.record("online.eval", ev.env_steps, {{"mean_return", ev.mean_return}});
  }
  mw.timing(stage_tag, 0, timer.lap_ms());
  mw.close();

  save_policy(setup.policy, policy_out);
  write_meta(policy_out, stage_tag, hash);
  if (!stats_out.empty()) {
    save_norm_stats(res.final_stats, stats_out);
    write_meta(stats_out, stage_tag, hash);
  }

  OnlineOutcome out;
  out.evals = res.evals;
  out.first_eval = res.evals.front().mean_return;
  out.final_eval = res.evals.back().mean_return;
  out.env_steps = res.updates.empty() ? 0 : res.updates.back().env_steps;

  ordered_json j;
  j["stage"] = stage_tag;
  j["env"] = cfg.env;
  j["seed"] = cfg.seed;
  j["config_hash"] = to_hex(hash);
  j["env_steps"] = out.env_steps;
  j["n_updates"] = res.updates.size();
  j["first_eval"] = out.first_eval;
  j["final_eval"] = out.final_eval;
  ordered_json evals = ordered_json::array();
  for (const EvalRecord& ev : res.evals) {
    evals.push_back({{"env_steps", ev.env_steps}, {"mean_return", ev.mean_return}});
  }
  j["evals"] = evals;
  write_summary_file(paths.summary(stage_tag), j);
  return out;
}

}  // namespace

OnlineOutcome stage_finetune_online(const RunConfig& cfg, bool scratch,
                                    bool force) {
  validate_run_config(cfg);
  const ArtifactPaths paths = artifact_paths(cfg);
  OnlineConfig oc = cfg.online;
  oc.use_running_stats = scratch;

  OnlineSetup setup;
  if (scratch) {
    auto env = make_env(cfg.env);
    setup = scratch_setup(cfg, env->spec(), 0);
  } else {
    require_artifact(paths.selected, "train-offline");
    require_artifact(paths.values, "train-offline");
    require_artifact(paths.stats, "collect");
    auto env = make_env(cfg.env);
    const EnvSpec& spec = env->spec();
    setup.policy = load_policy(paths.selected, spec.action_low, spec.action_high);
    setup.v_net = load_value_heads(paths.values).v_net;
    setup.stats = load_norm_stats(paths.stats);
  }

  const Rng rng = Rng(cfg.seed).split(streams::kOnline);
  return run_online_stage(cfg, std::move(setup), oc, rng,
                          scratch ? "online_scratch" : "online",
                          scratch ? paths.final_policy_scratch
                                  : paths.final_policy,
                          "", force);
}

OnlineOutcome stage_pretrain_online(const RunConfig& cfg, bool force) {
  validate_run_config(cfg);
  const ArtifactPaths paths = artifact_paths(cfg);
  constexpr std::uint64_t kPretrainTag = 0x00E0;

  auto env = make_env(cfg.env);
  OnlineSetup setup = scratch_setup(cfg, env->spec(), kPretrainTag);
  OnlineConfig oc = cfg.online;
  oc.use_running_stats = true;

  const Rng rng = Rng(cfg.seed).split(streams::kOnline).split(kPretrainTag);
  return run_online_stage(cfg, std::move(setup), oc, rng, "pretrain",
                          paths.pretrained, paths.pretrained_stats, force);
}

// ---------------------------------------------------------------------------
// Estimator-accuracy study
// ---------------------------------------------------------------------------

OpeAccuracyReport ope_accuracy_pairs(const std::vector<double>& j_hat,
                                     const std::vector<double>& true_returns) {
  if (j_hat.size() != true_returns.size()) {
    throw ConfigError("ope_accuracy_pairs: length mismatch");
  }
  const std::size_t n = j_hat.size();
  int pairs = 0, exact = 0, within10 = 0, within20 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dt = true_returns[i] - true_returns[j];
      if (dt == 0.0) continue;  // incomparable pair
      ++pairs;
      const bool ordered = (j_hat[i] - j_hat[j]) * dt > 0.0;
      if (ordered) ++exact;
      // Tolerant ordering: a miss is forgiven when the true returns are
      // within delta of each other, relative to the larger magnitude.
      const double scale =
          std::max(std::abs(true_returns[i]), std::abs(true_returns[j]));
      if (ordered || std::abs(dt) <= 0.10 * scale) ++within10;
      if (ordered || std::abs(dt) <= 0.20 * scale) ++within20;
    }
  }
  OpeAccuracyReport rep;
  rep.pairs = pairs;
  if (pairs == 0) {
    rep.exact_acc = rep.acc_within_10 = rep.acc_within_20 = 1.0;
    return rep;
  }
  rep.exact_acc = static_cast<double>(exact) / pairs;
  rep.acc_within_10 = static_cast<double>(within10) / pairs;
  rep.acc_within_20 = static_cast<double>(within20) / pairs;
  return rep;
}

OpeAccuracyReport stage_ope_accuracy(const RunConfig& cfg, bool force) {
  validate_run_config(cfg);
  const ArtifactPaths paths = artifact_paths(cfg);
  require_artifact(paths.dataset, "collect");
  require_artifact(paths.stats, "collect");
  require_artifact(paths.values, "train-offline");
  require_artifact(paths.dynamics, "train-offline");
  require_artifact(paths.selected, "train-offline");
  const std::uint64_t hash = config_hash(cfg);

  const Dataset data = load_dataset(paths.dataset);
  const NormStats stats = load_norm_stats(paths.stats);
  const ValueHeads heads = load_value_heads(paths.values);
  const GaussianDynamics dyn = load_dynamics(paths.dynamics);
  auto env = make_env(cfg.env);
  const EnvSpec& spec = env->spec();
  const Mat obs_n = normalize_obs(stats, data.obs);

  const Rng root(cfg.seed);
  const Rng pool_rng = root.split(0x0ACC);

  // Graded pool: two random initializations, three cloning runs of increasing
  // length, the trained ensemble members, and the gated selection.
  std::vector<GaussianPolicy> pool;
  std::vector<std::string> labels;
  for (int k = 0; k < 2; ++k) {
    Rng r = pool_rng.split(static_cast<std::uint64_t>(1 + k));
    pool.push_back(make_policy(spec.obs_dim, spec.action_low, spec.action_high,
                               cfg.bc.hidden, r, cfg.bc.hidden_gain,
                               cfg.bc.output_gain, cfg.bc.log_std_init));
    labels.push_back("random" + std::to_string(k));
  }
  const int bc_steps[3] = {300, 1000, cfg.bc.steps};
  for (int k = 0; k < 3; ++k) {
    BcConfig bc = cfg.bc;
    bc.n_members = 1;
    bc.alpha = 0.0;
    bc.steps = bc_steps[k];
    Rng r = pool_rng.split(static_cast<std::uint64_t>(10 + k));
    Ensemble e = bc_train(obs_n, data.act, spec.action_low, spec.action_high,
                          bc, r);
    pool.push_back(e.members[0]);
    labels.push_back("bc" + std::to_string(bc_steps[k]));
  }
  for (int i = 0; i < cfg.bc.n_members; ++i) {
    require_artifact(paths.member(i), "train-offline");
    pool.push_back(load_policy(paths.member(i), spec.action_low, spec.action_high));
    labels.push_back("member" + std::to_string(i));
  }
  pool.push_back(load_policy(paths.selected, spec.action_low, spec.action_high));
  labels.push_back("selected");

  // Estimates share one evaluation stream (paired comparisons); ground truth
  // is the Monte-Carlo stochastic return in the real environment.
  const Rng ope_rng = root.split(streams::kOpe);
  const Rng truth_base = root.split(streams::kEval);
  std::vector<double> j_hat, truth;
  MetricsWriter mw(paths.metrics("ope_accuracy"), paths.timings("ope_accuracy"));
  PhaseTimer timer;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    OPEReport rep = amq_estimate(pool[i], dyn, heads, data, stats, cfg.ope,
                                 ope_rng);
    rep.policy_id = static_cast<int>(i);
    Rng tr = truth_base.split(static_cast<std::uint64_t>(500 + i));
    const double tv = stochastic_return(pool[i], *env, stats, 100, tr);
    j_hat.push_back(rep.j_hat);
    truth.push_back(tv);
    mw.record("ope_accuracy", static_cast<std::int64_t>(i),
              {{"j_hat", rep.j_hat},
               {"std_err", rep.std_err},
               {"true_return", tv}});
    guard_artifact(paths.pool(static_cast<int>(i)), hash, force);
    save_policy(pool[i], paths.pool(static_cast<int>(i)));
    write_meta(paths.pool(static_cast<int>(i)), "ope-accuracy", hash);
  }
  const OpeAccuracyReport rep = ope_accuracy_pairs(j_hat, truth);
  mw.timing("ope_accuracy", 0, timer.lap_ms());
  mw.close();

  ordered_json j;
  j["stage"] = "ope-accuracy";
  j["env"] = cfg.env;
  j["seed"] = cfg.seed;
  j["config_hash"] = to_hex(hash);
  j["pool_size"] = pool.size();
  j["pairs"] = rep.pairs;
  j["exact_acc"] = rep.exact_acc;
  j["acc_within_10"] = rep.acc_within_10;
  j["acc_within_20"] = rep.acc_within_20;
  ordered_json rows = ordered_json::array();
  for (std::size_t i = 0; i < pool.size(); ++i) {
    rows.push_back({{"policy", labels[i]},
                    {"j_hat", j_hat[i]},
                    {"true_return", truth[i]}});
  }
  j["policies"] = rows;
  write_summary_file(paths.summary("ope_accuracy"), j);
  return rep;
}

// ---------------------------------------------------------------------------
// Ablation sweep
// ---------------------------------------------------------------------------

std::vector<SweepRow> stage_sweep(const RunConfig& cfg, const std::string& axis,
                                  const std::vector<double>& values,
                                  bool force) {
  validate_run_config(cfg);
  if (values.empty()) throw ConfigError("sweep: needs at least one value");

  auto as_positive_int = [&](double v, const char* what) {
    const auto n = static_cast<std::int64_t>(std::llround(v));
    if (n < 1 || std::abs(v - static_cast<double>(n)) > 1e-9) {
      throw ConfigError(std::string("sweep: ") + what +
                        " must be a positive integer, got " + fmt_axis_value(v));
    }
    return static_cast<int>(n);
  };

  std::vector<SweepRow> rows;
  for (double v : values) {
    RunConfig sub = cfg;
    if (axis == "alpha") {
      if (v < 0.0 || v > 1.0) {
        throw ConfigError("sweep: alpha must lie in [0, 1], got " +
                          fmt_axis_value(v));
      }
      sub.bc.alpha = v;
    } else if (axis == "ensemble_n") {
      sub.bc.n_members = as_positive_int(v, "ensemble_n");
      sub.finalize_k = std::min(sub.finalize_k, sub.bc.n_members);
      if (sub.bc.n_members < 2) sub.offline.disagreement_alpha_offline = 0.0;
    } else if (axis == "ope_interval") {
      sub.offline.gate_interval = as_positive_int(v, "ope_interval");
    } else if (axis == "tau") {
      if (v <= 0.0 || v >= 1.0) {
        throw ConfigError("sweep: tau must lie in (0, 1), got " +
                          fmt_axis_value(v));
      }
      sub.value.tau = v;
    } else {
      throw ConfigError("sweep: unknown axis '" + axis +
                        "' (expected alpha, ensemble_n, ope_interval, tau)");
    }
    sub.out_dir = cfg.out_dir + "/sweep_" + axis + "_" + fmt_axis_value(v);

    stage_collect(sub, force);
    const OfflineOutcome out = stage_train_offline(sub, force);
    SweepRow row;
    row.value = v;
    row.selected_env_return = out.selected_env_return;
    row.mean_pairwise_kl = out.mean_pairwise_kl;
    row.replacements = out.replacements;
    rows.push_back(row);
  }

  fs::create_directories(cfg.out_dir);
  ordered_json j;
  j["stage"] = "sweep";
  j["axis"] = axis;
  j["env"] = cfg.env;
  j["seed"] = cfg.seed;
  ordered_json arr = ordered_json::array();
  for (const SweepRow& r : rows) {
    arr.push_back({{"value", r.value},
                   {"selected_env_return", r.selected_env_return},
                   {"mean_pairwise_kl", r.mean_pairwise_kl},
                   {"replacements", r.replacements}});
  }
  j["rows"] = arr;
  write_summary_file(cfg.out_dir + "/summary_sweep_" + axis + ".json", j);
  return rows;
}

}  // namespace o2o
