// o2orl: offline-to-online RL pipeline driver.
//
// Subcommands: collect, train-offline, evaluate-ope, ope-accuracy,
// finetune-online, pretrain-online, sweep, gradcheck, report.
// Exit codes: 0 success, 2 config error, 3 data/format error, 4 numeric error.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "o2o/checkpoint.hpp"
#include "o2o/config.hpp"
#include "o2o/metrics.hpp"
#include "o2o/offline.hpp"
#include "o2o/online.hpp"
#include "o2o/ope.hpp"
#include "o2o/pipeline.hpp"

namespace fs = std::filesystem;
using namespace o2o;

namespace {

struct GlobalOpts {
  std::string config_spec = "preset:pointmass2d";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool force = false;
};

void add_common(CLI::App* cmd, GlobalOpts& g) {
  cmd->add_option("--config", g.config_spec,
                  "Config source: preset:NAME or a JSON file path");
  cmd->add_option("--seed", g.seed, "Master seed (overrides the config's)");
  cmd->add_option("--out", g.out, "Output directory (overrides the config's)");
  cmd->add_flag("--force", g.force,
                "Overwrite artifacts produced under a different config");
}

RunConfig resolve_config(const GlobalOpts& g) {
  RunConfig cfg = load_run_config(g.config_spec);
  if (g.seed) cfg.seed = *g.seed;
  if (g.out) cfg.out_dir = *g.out;
  return cfg;
}

int cmd_collect(const GlobalOpts& g, const std::string& policy_path,
                const std::string& policy_stats, bool from_pretrained) {
  const RunConfig cfg = resolve_config(g);
  const ArtifactPaths paths = artifact_paths(cfg);
  CollectOutcome out;
  if (!policy_path.empty() || from_pretrained) {
    const std::string pol =
        policy_path.empty() ? paths.pretrained : policy_path;
    const std::string sts =
        policy_stats.empty() ? paths.pretrained_stats : policy_stats;
    out = stage_collect_with_policy(cfg, pol, sts, g.force);
  } else {
    out = stage_collect(cfg, g.force);
  }
  std::printf("collect: %lld transitions, %lld episodes -> %s\n",
              static_cast<long long>(out.n), static_cast<long long>(out.episodes),
              paths.dataset.c_str());
  std::printf("  episode return mean %.4f  min %.4f  max %.4f\n",
              out.mean_return, out.min_return, out.max_return);
  return 0;
}

int cmd_train_offline(const GlobalOpts& g, const std::string& pretrained) {
  const RunConfig cfg = resolve_config(g);
  const OfflineOutcome out = stage_train_offline(cfg, g.force, pretrained);
  std::printf("train-offline: selected member %d (env return %.4f over %d episodes)\n",
              out.selected, out.selected_env_return, cfg.offline_eval_episodes);
  for (std::size_t i = 0; i < out.final_j.size(); ++i) {
    std::printf("  member %zu: J_hat %.6f\n", i, out.final_j[i]);
  }
  std::printf("  gate queries %lld, replacements %lld, mean pairwise KL %.4f\n",
              static_cast<long long>(out.gate_queries),
              static_cast<long long>(out.replacements), out.mean_pairwise_kl);
  return 0;
}

int cmd_evaluate_ope(const GlobalOpts& g) {
  const RunConfig cfg = resolve_config(g);
  const ArtifactPaths paths = artifact_paths(cfg);
  const Dataset data = load_dataset(paths.dataset);
  const NormStats stats = load_norm_stats(paths.stats);
  const ValueHeads heads = load_value_heads(paths.values);
  const GaussianDynamics dyn = load_dynamics(paths.dynamics);
  auto env = make_env(cfg.env);
  const EnvSpec& spec = env->spec();

  std::vector<std::pair<std::string, std::string>> entries;
  for (int i = 0; i < cfg.bc.n_members; ++i) {
    entries.emplace_back("member" + std::to_string(i), paths.member(i));
  }
  if (fs::exists(paths.selected)) {
    entries.emplace_back("selected", paths.selected);
  }
  const Rng ope_rng = Rng(cfg.seed).split(streams::kOpe);
  std::printf("evaluate-ope: N=%d rollouts, H=%d\n", cfg.ope.n_rollouts,
              cfg.ope.horizon);
  for (const auto& [label, path] : entries) {
    const GaussianPolicy p = load_policy(path, spec.action_low, spec.action_high);
    const OPEReport rep =
        amq_estimate(p, dyn, heads, data, stats, cfg.ope, ope_rng);
    std::printf("  %-10s J_hat %.6f  (stderr %.6f)\n", label.c_str(), rep.j_hat,
                rep.std_err);
  }
  return 0;
}

int cmd_ope_accuracy(const GlobalOpts& g) {
  const RunConfig cfg = resolve_config(g);
  const OpeAccuracyReport rep = stage_ope_accuracy(cfg, g.force);
  std::printf("ope-accuracy: %d comparable pairs\n", rep.pairs);
  std::printf("  exact ordering   %.1f%%\n", 100.0 * rep.exact_acc);
  std::printf("  within 10%%       %.1f%%\n", 100.0 * rep.acc_within_10);
  std::printf("  within 20%%       %.1f%%\n", 100.0 * rep.acc_within_20);
  return 0;
}

int cmd_online(const GlobalOpts& g, bool scratch, bool pretrain) {
  const RunConfig cfg = resolve_config(g);
  const OnlineOutcome out = pretrain ? stage_pretrain_online(cfg, g.force)
                                     : stage_finetune_online(cfg, scratch, g.force);
  const char* what = pretrain ? "pretrain-online"
                              : (scratch ? "finetune-online (scratch)"
                                         : "finetune-online (warm)");
  std::printf("%s: %lld env steps\n", what, static_cast<long long>(out.env_steps));
  std::printf("  first eval %.4f -> final eval %.4f\n", out.first_eval,
              out.final_eval);
  return 0;
}

int cmd_sweep(const GlobalOpts& g, const std::string& axis,
              const std::vector<double>& values) {
  const RunConfig cfg = resolve_config(g);
  const std::vector<SweepRow> rows = stage_sweep(cfg, axis, values, g.force);
  std::printf("sweep over %s (%zu values)\n", axis.c_str(), rows.size());
  std::printf("  %-12s %-14s %-16s %s\n", "value", "env_return",
              "mean_pairwise_kl", "replacements");
  for (const SweepRow& r : rows) {
    std::printf("  %-12g %-14.4f %-16.4f %lld\n", r.value,
                r.selected_env_return, r.mean_pairwise_kl,
                static_cast<long long>(r.replacements));
  }
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck: finite-difference verification of every analytic gradient.
// ---------------------------------------------------------------------------

struct CheckRow {
  std::string name;
  GradCheckReport report;
};

// The value-head clipped regression used by the online update, restated as a
// standalone objective for the checker.
double value_clip_objective(const Mlp& v_net, const Mat& obs, const Vec& v_old,
                            const Vec& target, double clip) {
  const Vec v = mlp_forward(v_net, obs).col(0);
  double total = 0.0;
  for (Eigen::Index b = 0; b < v.size(); ++b) {
    const double vc =
        v_old(b) + std::clamp(v(b) - v_old(b), -clip, clip);
    const double raw = (v(b) - target(b)) * (v(b) - target(b));
    const double clipped = (vc - target(b)) * (vc - target(b));
    total += std::max(raw, clipped);
  }
  return total / static_cast<double>(v.size());
}

std::vector<CheckRow> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<CheckRow> rows;
  const Rng root(seed);
  const int B = 6, obs_dim = 3, act_dim = 2;

  Rng data_rng = root.split(1);
  const Mat obs = data_rng.normal_mat(B, obs_dim);
  const Mat act = 0.5 * data_rng.normal_mat(B, act_dim);
  const Vec act_low = Vec::Constant(act_dim, -1.0);
  const Vec act_high = Vec::Constant(act_dim, 1.0);

  // 1. MLP mean-squared regression.
  {
    Rng r = root.split(2);
    Mlp net = make_mlp({obs_dim, 8, 8, act_dim});
    init_mlp(net, r, std::sqrt(2.0), 1.0);
    const Mat target = data_rng.normal_mat(B, act_dim);
    auto loss_at = [&](const Vec& theta) {
      Mlp n2 = net;
      unflatten(n2, theta);
      const Mat out = mlp_forward(n2, obs);
      return (out - target).squaredNorm() / static_cast<double>(B);
    };
    MlpCache cache;
    const Mat out = mlp_forward(net, obs, cache);
    MlpGrads grads = make_grads(net);
    mlp_backward(net, cache, 2.0 * (out - target) / static_cast<double>(B),
                 grads);
    rows.push_back({"mlp_regression",
                    finite_diff_gradcheck(loss_at, flatten(net),
                                          flatten_grads(net, grads))});
  }

  // 2.-4. Policy losses: mean log-prob, cloning loss with the specialization
  // term, and the offline disagreement term.
  {
    Rng r = root.split(3);
    Ensemble e = init_ensemble(3, 0.3, obs_dim, act_low, act_high, {8, 8}, r,
                               std::sqrt(2.0), 0.01, -0.3);
    // Perturb the snapshots so rival densities are not trivially tied.
    for (std::size_t i = 0; i < e.snapshots.size(); ++i) {
      Rng pr = root.split(40 + i);
      Vec theta = e.snapshots[i].flatten_params();
      theta += 0.05 * pr.normal_mat(theta.size(), 1).col(0);
      e.snapshots[i].unflatten_params(theta);
    }

    auto logprob_at = [&](const Vec& theta) {
      GaussianPolicy p = e.members[0];
      p.unflatten_params(theta);
      return log_prob_batch(p, obs, act).mean();
    };
    {
      const GaussianPolicy& p = e.members[0];
      const PolicyForward fwd = policy_forward(p, obs);
      PolicyGrads grads = make_policy_grads(p);
      logprob_backward(p, fwd, act, Vec::Constant(B, 1.0 / B), grads);
      rows.push_back({"policy_logprob",
                      finite_diff_gradcheck(logprob_at, p.flatten_params(),
                                            flatten_policy_grads(p, grads))});
    }

    auto bc_at = [&](const Vec& theta) {
      Ensemble e2 = e;
      e2.members[0].unflatten_params(theta);
      return bc_member_loss(e2, 0, obs, act, nullptr).loss;
    };
    {
      PolicyGrads grads = make_policy_grads(e.members[0]);
      bc_member_loss(e, 0, obs, act, &grads);
      rows.push_back(
          {"bc_member_loss",
           finite_diff_gradcheck(bc_at, e.members[0].flatten_params(),
                                 flatten_policy_grads(e.members[0], grads))});
    }

    const double alpha_off = 0.7;
    const Mat eps = data_rng.normal_mat(B, act_dim);
    auto disagreement_at = [&](const Vec& theta) {
      Ensemble e2 = e;
      e2.members[0].unflatten_params(theta);
      const PolicyForward fwd = policy_forward(e2.members[0], obs);
      PolicyGrads scratch = make_policy_grads(e2.members[0]);
      return -alpha_off *
             disagreement_term(e2, 0, obs, fwd, eps, alpha_off, scratch);
    };
    {
      const PolicyForward fwd = policy_forward(e.members[0], obs);
      PolicyGrads grads = make_policy_grads(e.members[0]);
      disagreement_term(e, 0, obs, fwd, eps, alpha_off, grads);
      rows.push_back(
          {"disagreement_term",
           finite_diff_gradcheck(disagreement_at,
                                 e.members[0].flatten_params(),
                                 flatten_policy_grads(e.members[0], grads))});
    }

    // 5. Clipped-surrogate policy objective (raw-branch gradient).
    {
      const GaussianPolicy& p = e.members[0];
      const GaussianPolicy& snap = e.snapshots[0];
      const Vec lp_snap = log_prob_batch(snap, obs, act);
      const Vec adv = data_rng.normal_mat(B, 1).col(0);
      const double clip_eps = 0.2;
      auto surrogate_at = [&](const Vec& theta) {
        GaussianPolicy p2 = p;
        p2.unflatten_params(theta);
        const Vec lp = log_prob_batch(p2, obs, act);
        double total = 0.0;
        for (Eigen::Index b = 0; b < lp.size(); ++b) {
          total -= clipped_surrogate(std::exp(lp(b) - lp_snap(b)), adv(b),
                                     clip_eps);
        }
        return total / static_cast<double>(B);
      };
      const PolicyForward fwd = policy_forward(p, obs);
      const Vec ratio =
          (log_prob_from_mean(p, fwd.mu, act) - lp_snap).array().exp().matrix();
      Vec w(B);
      clipped_surrogate_batch(ratio, adv, clip_eps, w);
      PolicyGrads grads = make_policy_grads(p);
      logprob_backward(p, fwd, act, w, grads);
      rows.push_back({"clipped_surrogate",
                      finite_diff_gradcheck(surrogate_at, p.flatten_params(),
                                            flatten_policy_grads(p, grads))});
    }
  }

  // 6. Expectile value loss; 7. bootstrapped expectile Q loss.
  {
    Rng r = root.split(4);
    ValueHeads h = init_value_heads(obs_dim, act_dim, {8, 8}, 0.7, 0.005, r);
    // Decorrelate the target head from the live Q head.
    {
      Rng tr = root.split(41);
      init_mlp(h.target_q, tr, std::sqrt(2.0), 1.0);
    }
    const Mat next_obs = data_rng.normal_mat(B, obs_dim);
    const Vec reward = data_rng.normal_mat(B, 1).col(0);
    std::vector<std::uint8_t> terminal(B, 0);
    terminal[1] = 1;

    auto v_at = [&](const Vec& theta) {
      ValueHeads h2 = h;
      unflatten(h2.v_net, theta);
      return v_expectile_loss(h2, obs, act, nullptr);
    };
    MlpGrads v_grads = make_grads(h.v_net);
    v_expectile_loss(h, obs, act, &v_grads);
    rows.push_back({"expectile_v_loss",
                    finite_diff_gradcheck(v_at, flatten(h.v_net),
                                          flatten_grads(h.v_net, v_grads))});

    auto q_at = [&](const Vec& theta) {
      ValueHeads h2 = h;
      unflatten(h2.q_net, theta);
      return q_bootstrap_loss(h2, obs, act, reward, next_obs, terminal, 0.99,
                              nullptr);
    };
    MlpGrads q_grads = make_grads(h.q_net);
    q_bootstrap_loss(h, obs, act, reward, next_obs, terminal, 0.99, &q_grads);
    rows.push_back({"expectile_q_loss",
                    finite_diff_gradcheck(q_at, flatten(h.q_net),
                                          flatten_grads(h.q_net, q_grads))});
  }

  // 8. Dynamics negative log-likelihood.
  {
    Rng r = root.split(5);
    GaussianDynamics dyn = init_dynamics(obs_dim, act_dim, {8, 8}, r);
    const Mat next_obs = data_rng.normal_mat(B, obs_dim);
    auto nll_at = [&](const Vec& theta) {
      GaussianDynamics d2 = dyn;
      unflatten(d2.net, theta);
      return dynamics_nll_loss(d2, obs, act, next_obs, nullptr);
    };
    MlpGrads grads = make_grads(dyn.net);
    dynamics_nll_loss(dyn, obs, act, next_obs, &grads);
    rows.push_back({"dynamics_nll",
                    finite_diff_gradcheck(nll_at, flatten(dyn.net),
                                          flatten_grads(dyn.net, grads))});
  }

  // 9. Clipped value regression (the online critic loss).
  {
    Rng r = root.split(6);
    Mlp v_net = make_mlp({obs_dim, 8, 8, 1});
    init_mlp(v_net, r, std::sqrt(2.0), 1.0);
    const Vec target = data_rng.normal_mat(B, 1).col(0);
    const Vec v_now = mlp_forward(v_net, obs).col(0);
    // Old values offset from the current ones so both branches are exercised.
    const Vec v_old = v_now + 0.3 * data_rng.normal_mat(B, 1).col(0);
    const double clip = 0.2;
    auto loss_at = [&](const Vec& theta) {
      Mlp n2 = v_net;
      unflatten(n2, theta);
      return value_clip_objective(n2, obs, v_old, target, clip);
    };
    MlpCache cache;
    const Vec v = mlp_forward(v_net, obs, cache).col(0);
    Mat d_v = Mat::Zero(B, 1);
    for (int b = 0; b < B; ++b) {
      const double vc = v_old(b) + std::clamp(v(b) - v_old(b), -clip, clip);
      const double raw = (v(b) - target(b)) * (v(b) - target(b));
      const double clipped = (vc - target(b)) * (vc - target(b));
      if (raw >= clipped) d_v(b, 0) = 2.0 * (v(b) - target(b)) / B;
    }
    MlpGrads grads = make_grads(v_net);
    mlp_backward(v_net, cache, d_v, grads);
    rows.push_back({"value_clip_loss",
                    finite_diff_gradcheck(loss_at, flatten(v_net),
                                          flatten_grads(v_net, grads))});
  }

  return rows;
}

int cmd_gradcheck(const GlobalOpts& g) {
  const std::uint64_t seed = g.seed.value_or(1);
  const std::vector<CheckRow> rows = run_gradcheck_suite(seed);
  bool all_pass = true;
  for (const CheckRow& row : rows) {
    const bool ok = row.report.pass();
    all_pass = all_pass && ok;
    std::printf("  %-20s max rel err %.3e (worst index %lld)  %s\n",
                row.name.c_str(), row.report.max_relative_error,
                static_cast<long long>(row.report.worst_parameter_index),
                ok ? "ok" : "FAIL");
  }
  if (!all_pass) {
    std::fprintf(stderr, "gradcheck: at least one analytic gradient disagrees "
                         "with central differences\n");
    return 4;
  }
  std::printf("gradcheck: all %zu kernels ok\n", rows.size());
  return 0;
}

int cmd_report(const GlobalOpts& g) {
  const RunConfig cfg = resolve_config(g);
  const std::string dir = cfg.out_dir;
  if (!fs::exists(dir)) {
    throw ConfigError("report: no such directory: " + dir);
  }
  bool any = false;
  std::vector<fs::path> summaries, metric_files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("summary_", 0) == 0) summaries.push_back(entry.path());
    if (name.rfind("metrics_", 0) == 0) metric_files.push_back(entry.path());
  }
  std::sort(summaries.begin(), summaries.end());
  std::sort(metric_files.begin(), metric_files.end());
  for (const fs::path& p : summaries) {
    any = true;
    std::ifstream f(p);
    nlohmann::json j;
    f >> j;
    std::printf("== %s ==\n%s\n", p.filename().string().c_str(),
                j.dump(2).c_str());
  }
  for (const fs::path& p : metric_files) {
    any = true;
    const auto records = read_metrics(p.string());
    std::printf("%s: %zu records\n", p.filename().string().c_str(),
                records.size());
  }
  if (!any) std::printf("report: no artifacts in %s\n", dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"offline-to-online RL pipeline"};
  app.require_subcommand(1);
  GlobalOpts g;

  std::string collect_policy, collect_policy_stats;
  bool collect_from_pretrained = false;
  CLI::App* c_collect = app.add_subcommand(
      "collect", "Roll out the scripted mixture and write the dataset");
  add_common(c_collect, g);
  c_collect->add_option("--policy", collect_policy,
                        "Collect with this policy checkpoint instead");
  c_collect->add_option("--policy-stats", collect_policy_stats,
                        "Normalization stats for --policy (default: the "
                        "pretraining stats in the output directory)");
  c_collect->add_flag("--from-pretrained", collect_from_pretrained,
                      "Collect with this directory's pretrained policy");

  std::string pretrained_path;
  CLI::App* c_offline = app.add_subcommand(
      "train-offline", "Cloning, value/dynamics fitting, gated improvement");
  add_common(c_offline, g);
  c_offline->add_option("--pretrained", pretrained_path,
                        "Seed the ensemble from this policy checkpoint and "
                        "skip the cloning stage");

  CLI::App* c_eval_ope = app.add_subcommand(
      "evaluate-ope", "Score the trained members with the model-based estimator");
  add_common(c_eval_ope, g);

  CLI::App* c_ope_acc = app.add_subcommand(
      "ope-accuracy", "Estimator-vs-simulation ordering study over a policy pool");
  add_common(c_ope_acc, g);

  bool scratch = false;
  CLI::App* c_finetune = app.add_subcommand(
      "finetune-online", "On-policy fine-tuning of the selected policy");
  add_common(c_finetune, g);
  c_finetune->add_flag("--scratch", scratch,
                       "Random initialization + running obs stats baseline");

  CLI::App* c_pretrain = app.add_subcommand(
      "pretrain-online", "Scratch on-policy run that seeds later stages");
  add_common(c_pretrain, g);

  std::string axis;
  std::vector<double> axis_values;
  CLI::App* c_sweep = app.add_subcommand("sweep", "Ablation sweep over one axis");
  add_common(c_sweep, g);
  c_sweep->add_option("--axis", axis, "alpha | ensemble_n | ope_interval | tau")
      ->required();
  c_sweep->add_option("--values", axis_values, "Comma-separated axis values")
      ->required()
      ->delimiter(',');

  CLI::App* c_gradcheck = app.add_subcommand(
      "gradcheck", "Finite-difference check of every analytic gradient");
  add_common(c_gradcheck, g);

  CLI::App* c_report = app.add_subcommand(
      "report", "Print the summaries and metrics inventory of a run directory");
  add_common(c_report, g);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*c_collect) {
      return cmd_collect(g, collect_policy, collect_policy_stats,
                         collect_from_pretrained);
    }
    if (*c_offline) return cmd_train_offline(g, pretrained_path);
    if (*c_eval_ope) return cmd_evaluate_ope(g);
    if (*c_ope_acc) return cmd_ope_accuracy(g);
    if (*c_finetune) return cmd_online(g, scratch, false);
    if (*c_pretrain) return cmd_online(g, false, true);
    if (*c_sweep) return cmd_sweep(g, axis, axis_values);
    if (*c_gradcheck) return cmd_gradcheck(g);
    if (*c_report) return cmd_report(g);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return 3;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "shape error: %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
