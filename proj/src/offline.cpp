#include "o2o/offline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace o2o {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void validate_offline_config(const OfflineOptConfig& cfg) {
  if (!(cfg.clip_epsilon > 0.0 && cfg.clip_epsilon < 1.0))
    throw ConfigError("offline: clip_epsilon must lie in (0, 1)");
  if (cfg.gate_interval < 1) throw ConfigError("offline: gate_interval must be >= 1");
  if (cfg.total_steps < 1) throw ConfigError("offline: total_steps must be >= 1");
  if (cfg.minibatch_size < 1)
    throw ConfigError("offline: minibatch_size must be >= 1");
  if (cfg.actions_per_state < 1)
    throw ConfigError("offline: actions_per_state must be >= 1");
  if (cfg.disagreement_alpha_offline < 0.0)
    throw ConfigError("offline: disagreement_alpha_offline must be >= 0");
  if (!(cfg.lr > 0.0)) throw ConfigError("offline: lr must be > 0");
}

}  // namespace

double clipped_surrogate(double ratio, double adv, double eps) {
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * adv, clipped * adv);
}

SurrogateStats clipped_surrogate_batch(const Vec& ratio, const Vec& adv,
                                       double eps, Vec& w_out) {
  if (ratio.size() != adv.size())
    throw ShapeError("clipped_surrogate_batch: ratio/adv length mismatch");
  const auto n = ratio.size();
  if (n < 1) throw ShapeError("clipped_surrogate_batch: empty batch");
  w_out.resize(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  SurrogateStats out;
  for (Eigen::Index b = 0; b < n; ++b) {
    const double surr_raw = ratio(b) * adv(b);
    const double clipped = std::clamp(ratio(b), 1.0 - eps, 1.0 + eps);
    const double surr_clip = clipped * adv(b);
    if (surr_raw <= surr_clip) {
      out.objective += surr_raw;
      w_out(b) = -ratio(b) * adv(b) * inv_n;
    } else {
      out.objective += surr_clip;
      w_out(b) = 0.0;
      out.clip_fraction += 1.0;
    }
  }
  out.objective *= inv_n;
  out.clip_fraction *= inv_n;
  return out;
}

double disagreement_term(const Ensemble& e, int member, const Mat& S_n,
                         const PolicyForward& fwd, const Mat& eps,
                         double alpha_off, PolicyGrads& grads) {
  if (e.n() < 2)
    throw ConfigError("disagreement_term: needs an ensemble of at least 2 members");
  if (member < 0 || member >= e.n())
    throw ConfigError("disagreement_term: member index out of range");
  const GaussianPolicy& live = e.members[static_cast<std::size_t>(member)];
  const Eigen::Index B = S_n.rows();
  const int D = live.act_dim();
  if (fwd.mu.rows() != B || eps.rows() != B || eps.cols() != D)
    throw ShapeError("disagreement_term: batch shape mismatch");

  const Vec sigma = live.std();
  Mat a_tilde = fwd.mu;
  for (Eigen::Index b = 0; b < B; ++b)
    a_tilde.row(b) += (eps.row(b).transpose().cwiseProduct(sigma)).transpose();

  // Best rival snapshot per sample.
  Vec lp_best = Vec::Constant(B, -std::numeric_limits<double>::infinity());
  Mat mu_best = Mat::Zero(B, D);
  std::vector<const GaussianPolicy*> winner(static_cast<std::size_t>(B), nullptr);
  for (int j = 0; j < e.n(); ++j) {
    if (j == member) continue;
    const GaussianPolicy& rival = e.snapshots[static_cast<std::size_t>(j)];
    const Mat mu_j = policy_mean(rival, S_n);
    const Vec lp_j = log_prob_from_mean(rival, mu_j, a_tilde);
    for (Eigen::Index b = 0; b < B; ++b) {
      if (lp_j(b) > lp_best(b)) {
        lp_best(b) = lp_j(b);
        mu_best.row(b) = mu_j.row(b);
        winner[static_cast<std::size_t>(b)] = &rival;
      }
    }
  }

  // Own log-density at the reparameterized sample, closed form in eps.
  const double log_sigma_sum = live.log_std.sum();
  double term = 0.0;
  const double inv_b = 1.0 / static_cast<double>(B);
  Mat d_mu = Mat::Zero(B, D);
  Vec d_log_std_extra = Vec::Zero(D);
  for (Eigen::Index b = 0; b < B; ++b) {
    const double lp_own = -0.5 * eps.row(b).squaredNorm() - log_sigma_sum -
                          0.5 * static_cast<double>(D) * std::log(kTwoPi);
    term += lp_own - lp_best(b);
    const GaussianPolicy& w = *winner[static_cast<std::size_t>(b)];
    const Vec sigma_w = w.std();
    for (int d = 0; d < D; ++d) {
      // g = d(log p_rival)/da at a~.
      const double g = -(a_tilde(b, d) - mu_best(b, d)) / (sigma_w(d) * sigma_w(d));
      // Loss = -alpha_off * mean D; dD/dmu = -g, dD/dlog_std_d has the own
      // entropy part -1 plus the rival chain -g * sigma_d * eps.
      d_mu(b, d) += alpha_off * inv_b * g;
      d_log_std_extra(d) += alpha_off * inv_b * (1.0 + g * sigma(d) * eps(b, d));
    }
  }
  term *= inv_b;

  // Chain through mu = center + half * tanh_out: mlp_backward applies the
  // output-tanh derivative itself, so feed d(loss)/d(tanh_out).
  const Vec half = live.half_range();
  Mat d_y(B, D);
  for (Eigen::Index b = 0; b < B; ++b)
    for (int d = 0; d < D; ++d) d_y(b, d) = d_mu(b, d) * half(d);
  mlp_backward(live.mean_net, fwd.cache, d_y, grads.net);
  grads.d_log_std += d_log_std_extra;
  return term;
}

double offline_epoch(Ensemble& e, int member, const ValueHeads& heads,
                     const Mat& obs_n, const OfflineOptConfig& cfg, Adam& adam,
                     Rng& rng) {
  if (member < 0 || member >= e.n())
    throw ConfigError("offline_epoch: member index out of range");
  if (obs_n.rows() < 1) throw ConfigError("offline_epoch: empty state pool");
  GaussianPolicy& live = e.members[static_cast<std::size_t>(member)];
  const GaussianPolicy& snap = e.snapshots[static_cast<std::size_t>(member)];
  const int aps = cfg.actions_per_state;
  const int B = cfg.minibatch_size * aps;
  const int D = live.act_dim();

  const std::vector<Eigen::Index> idx =
      rng.batch_indices(obs_n.rows(), cfg.minibatch_size);
  Mat S(B, obs_n.cols());
  for (int b = 0; b < cfg.minibatch_size; ++b)
    for (int r = 0; r < aps; ++r)
      S.row(static_cast<Eigen::Index>(b) * aps + r) = obs_n.row(idx[static_cast<std::size_t>(b)]);

  const Mat eps_act = rng.normal_mat(B, D);
  const Mat mu_snap = policy_mean(snap, S);
  const Mat act = sample_batch_with_eps(snap, mu_snap, eps_act);
  const Vec lp_snap = log_prob_from_mean(snap, mu_snap, act);

  Vec adv = advantage_batch(heads, S, act);
  if (cfg.adv_normalize) {
    const double mean = adv.mean();
    const double sd =
        std::sqrt((adv.array() - mean).square().sum() / static_cast<double>(B));
    adv = (adv.array() - mean).matrix() / std::max(sd, 1e-8);
  }

  const PolicyForward fwd = policy_forward(live, S);
  const Vec lp_live = log_prob_from_mean(live, fwd.mu, act);
  Vec ratio(B);
  for (int b = 0; b < B; ++b) {
    ratio(b) = std::exp(lp_live(b) - lp_snap(b));
    if (!std::isfinite(ratio(b)))
      throw NumericError("offline_epoch: non-finite ratio at state index " +
                         std::to_string(idx[static_cast<std::size_t>(b / aps)]));
  }

  Vec w;
  const SurrogateStats stats = clipped_surrogate_batch(ratio, adv, cfg.clip_epsilon, w);
  PolicyGrads grads = make_policy_grads(live);
  logprob_backward(live, fwd, act, w, grads);
  if (cfg.disagreement_alpha_offline > 0.0) {
    const Mat eps_dis = rng.normal_mat(B, D);
    disagreement_term(e, member, S, fwd, eps_dis, cfg.disagreement_alpha_offline,
                      grads);
  }

  Vec theta = live.flatten_params();
  const Vec g = flatten_policy_grads(live, grads);
  adam.step(theta, g, cfg.lr);
  live.unflatten_params(theta);
  live.clamp_log_std();
  return stats.objective;
}

OfflineResult run_offline(Ensemble& e, const ValueHeads& heads,
                          const GaussianDynamics& dynamics, const Dataset& data,
                          const NormStats& stats, const OfflineOptConfig& cfg,
                          const OPEConfig& ope_cfg, Rng rng,
                          const OfflineStepCallback& step_cb) {
  validate_offline_config(cfg);
  e.check();
  if (cfg.disagreement_alpha_offline > 0.0 && e.n() < 2)
    throw ConfigError("run_offline: disagreement term needs >= 2 members");
  const Mat obs_n = normalize_obs(stats, data.obs);

  // One fixed evaluation stream reused (by value) for every gate query of the
  // run: paired live-vs-snapshot comparisons, and accepted estimates form a
  // strictly increasing sequence per member by construction.
  const Rng gate_rng = rng.split(streams::kOpe);

  std::vector<Rng> member_rng;
  std::vector<Adam> adams(static_cast<std::size_t>(e.n()));
  member_rng.reserve(static_cast<std::size_t>(e.n()));
  for (int i = 0; i < e.n(); ++i) {
    member_rng.push_back(rng.split(0xA110u + static_cast<std::uint64_t>(i)));
    adams[static_cast<std::size_t>(i)].init(
        e.members[static_cast<std::size_t>(i)].n_params());
  }

  OfflineResult out;
  for (int t = 0; t < cfg.total_steps; ++t) {
    for (int i = 0; i < e.n(); ++i) {
      const double surrogate = offline_epoch(e, i, heads, obs_n, cfg,
                                             adams[static_cast<std::size_t>(i)],
                                             member_rng[static_cast<std::size_t>(i)]);
      if (step_cb) step_cb(i, t, surrogate);
    }
    if ((t + 1) % cfg.gate_interval != 0) continue;
    for (int i = 0; i < e.n(); ++i) {
      OPEReport live = amq_estimate(e.members[static_cast<std::size_t>(i)], dynamics,
                                    heads, data, stats, ope_cfg, gate_rng);
      OPEReport snap = amq_estimate(e.snapshots[static_cast<std::size_t>(i)], dynamics,
                                    heads, data, stats, ope_cfg, gate_rng);
      live.policy_id = i;
      snap.policy_id = i;
      const bool accepted = accept_replacement(live, snap);
      if (accepted) {
        e.snapshots[static_cast<std::size_t>(i)] = e.members[static_cast<std::size_t>(i)];
        ++e.iteration_counts[static_cast<std::size_t>(i)];
      }
      out.gate_log.push_back(GateEvent{t + 1, i, live.j_hat, snap.j_hat, accepted,
                                       e.iteration_counts[static_cast<std::size_t>(i)]});
    }
  }
  return out;
}

FinalizeResult finalize(const Ensemble& e, const std::vector<OPEReport>& reports,
                        int k) {
  if (static_cast<int>(reports.size()) != e.n())
    throw ConfigError("finalize: one report per ensemble member required");
  FinalizeResult out;
  out.shortlist = select_top_k(reports, k);
  out.selected = out.shortlist.front();
  return out;
}

}  // namespace o2o
