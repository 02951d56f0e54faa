#include "o2o/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace o2o {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

Vec GaussianPolicy::flatten_params() const {
  Vec net = o2o::flatten(mean_net);
  Vec theta(net.size() + log_std.size());
  theta << net, log_std;
  return theta;
}

void GaussianPolicy::unflatten_params(const Vec& theta) {
  if (theta.size() != n_params()) throw ShapeError("policy unflatten: size mismatch");
  o2o::unflatten(mean_net, theta.head(mean_net.n_params()));
  log_std = theta.tail(log_std.size());
}

GaussianPolicy make_policy(int obs_dim, const Vec& act_low, const Vec& act_high,
                           const std::vector<int>& hidden, Rng& rng,
                           double hidden_gain, double output_gain,
                           double log_std_init) {
  if (act_low.size() != act_high.size()) throw ShapeError("make_policy: bounds mismatch");
  if ((act_high - act_low).minCoeff() <= 0.0)
    throw ConfigError("make_policy: action_low must be < action_high elementwise");
  const int act_dim = static_cast<int>(act_low.size());
  std::vector<int> sizes;
  sizes.push_back(obs_dim);
  for (int h : hidden) sizes.push_back(h);
  sizes.push_back(act_dim);
  GaussianPolicy p;
  p.mean_net = make_mlp(sizes, Activation::Tanh, Activation::Tanh);
  init_mlp(p.mean_net, rng, hidden_gain, output_gain);
  p.log_std = Vec::Constant(act_dim, log_std_init);
  p.act_low = act_low;
  p.act_high = act_high;
  p.clamp_log_std();
  return p;
}

Mat policy_mean(const GaussianPolicy& p, const Mat& obs) {
  Mat y = mlp_forward(p.mean_net, obs);
  return (y.array().rowwise() * p.half_range().transpose().array()).matrix().rowwise() +
         p.center().transpose();
}

Vec log_prob_from_mean(const GaussianPolicy& p, const Mat& mu, const Mat& act) {
  if (mu.rows() != act.rows() || mu.cols() != act.cols())
    throw ShapeError("log_prob: mean/action shape mismatch");
  const Vec sigma = p.std();
  Vec lp = Vec::Zero(mu.rows());
  for (Eigen::Index b = 0; b < mu.rows(); ++b) {
    double acc = 0.0;
    for (Eigen::Index d = 0; d < mu.cols(); ++d) {
      const double z = (act(b, d) - mu(b, d)) / sigma(d);
      acc += -0.5 * z * z - p.log_std(d) - 0.5 * kLog2Pi;
    }
    lp(b) = acc;
  }
  return lp;
}

Vec log_prob_batch(const GaussianPolicy& p, const Mat& obs, const Mat& act) {
  return log_prob_from_mean(p, policy_mean(p, obs), act);
}

double log_prob(const GaussianPolicy& p, const Vec& obs, const Vec& act) {
  Mat o = obs.transpose();
  Mat a = act.transpose();
  return log_prob_batch(p, o, a)(0);
}

Vec mean_action(const GaussianPolicy& p, const Vec& obs) {
  Mat o = obs.transpose();
  Vec mu = policy_mean(p, o).row(0).transpose();
  return mu.cwiseMax(p.act_low).cwiseMin(p.act_high);
}

Mat sample_batch_with_eps(const GaussianPolicy& p, const Mat& mu, const Mat& eps) {
  if (mu.rows() != eps.rows() || mu.cols() != eps.cols())
    throw ShapeError("sample: eps shape mismatch");
  Mat a = mu + (eps.array().rowwise() * p.std().transpose().array()).matrix();
  for (Eigen::Index b = 0; b < a.rows(); ++b)
    a.row(b) =
        a.row(b).cwiseMax(p.act_low.transpose()).cwiseMin(p.act_high.transpose());
  return a;
}

Vec sample(const GaussianPolicy& p, const Vec& obs, Rng& rng) {
  Mat o = obs.transpose();
  Mat mu = policy_mean(p, o);
  Mat eps = rng.normal_mat(1, p.act_dim());
  return sample_batch_with_eps(p, mu, eps).row(0).transpose();
}

PolicyGrads make_policy_grads(const GaussianPolicy& p) {
  PolicyGrads g;
  g.net = make_grads(p.mean_net);
  g.d_log_std = Vec::Zero(p.log_std.size());
  return g;
}

Vec flatten_policy_grads(const GaussianPolicy& p, const PolicyGrads& g) {
  Vec net = flatten_grads(p.mean_net, g.net);
  Vec out(net.size() + g.d_log_std.size());
  out << net, g.d_log_std;
  return out;
}

PolicyForward policy_forward(const GaussianPolicy& p, const Mat& obs) {
  PolicyForward f;
  Mat y = mlp_forward(p.mean_net, obs, f.cache);
  f.mu = (y.array().rowwise() * p.half_range().transpose().array()).matrix().rowwise() +
         p.center().transpose();
  return f;
}

void logprob_backward(const GaussianPolicy& p, const PolicyForward& fwd,
                      const Mat& act, const Vec& w, PolicyGrads& grads) {
  const Eigen::Index B = fwd.mu.rows();
  if (act.rows() != B || w.size() != B) throw ShapeError("logprob_backward: shapes");
  const Vec sigma = p.std();
  const Vec half = p.half_range();
  Mat d_y(B, fwd.mu.cols());
  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index d = 0; d < fwd.mu.cols(); ++d) {
      const double diff = act(b, d) - fwd.mu(b, d);
      const double inv_var = 1.0 / (sigma(d) * sigma(d));
      // d logprob / d mu = diff / sigma^2 ; d mu / d net_out = half.
      d_y(b, d) = w(b) * diff * inv_var * half(d);
      // d logprob / d log_std = diff^2 / sigma^2 - 1.
      grads.d_log_std(d) += w(b) * (diff * diff * inv_var - 1.0);
    }
  }
  mlp_backward(p.mean_net, fwd.cache, d_y, grads.net);
}

// ---------------------------------------------------------------------------
// Ensemble
// ---------------------------------------------------------------------------

void Ensemble::check() const {
  const std::size_t k = members.size();
  if (snapshots.size() != k || iteration_counts.size() != k)
    throw ShapeError("ensemble: members/snapshots/counts lengths disagree");
  if (alpha < 0.0) throw ConfigError("ensemble: alpha must be nonnegative");
}

Ensemble init_ensemble(int n, double alpha, int obs_dim, const Vec& act_low,
                       const Vec& act_high, const std::vector<int>& hidden,
                       Rng& rng, double hidden_gain, double output_gain,
                       double log_std_init) {
  if (n <= 0) throw ConfigError("init_ensemble: n must be positive");
  Ensemble e;
  e.alpha = alpha;
  for (int i = 0; i < n; ++i) {
    Rng member_rng = rng.split(static_cast<std::uint64_t>(i));
    e.members.push_back(make_policy(obs_dim, act_low, act_high, hidden, member_rng,
                                    hidden_gain, output_gain, log_std_init));
  }
  e.snapshots = e.members;
  e.iteration_counts.assign(static_cast<std::size_t>(n), 0);
  e.check();
  return e;
}

Vec max_log_density_batch(const Ensemble& e, const Mat& obs, const Mat& act) {
  e.check();
  if (e.snapshots.empty()) throw ConfigError("max_log_density: empty ensemble");
  Vec best = log_prob_batch(e.snapshots[0], obs, act);
  for (std::size_t j = 1; j < e.snapshots.size(); ++j)
    best = best.cwiseMax(log_prob_batch(e.snapshots[j], obs, act));
  return best;
}

double max_log_density(const Ensemble& e, const Vec& obs, const Vec& act) {
  Mat o = obs.transpose();
  Mat a = act.transpose();
  return max_log_density_batch(e, o, a)(0);
}

BcBatchResult bc_member_loss(const Ensemble& e, int member, const Mat& obs,
                             const Mat& act, PolicyGrads* grads) {
  e.check();
  if (member < 0 || member >= e.n()) throw ConfigError("bc_member_loss: bad member");
  const GaussianPolicy& pol = e.members[static_cast<std::size_t>(member)];
  const double alpha = e.alpha;
  const Eigen::Index B = obs.rows();

  PolicyForward fwd = policy_forward(pol, obs);
  const Vec lp = log_prob_from_mean(pol, fwd.mu, act);

  // Max of the *other* members' frozen snapshots; -inf when n = 1 so the
  // member always attains the max and the loss is exactly plain BC.
  Vec others = Vec::Constant(B, -std::numeric_limits<double>::infinity());
  for (int j = 0; j < e.n(); ++j) {
    if (j == member) continue;
    others = others.cwiseMax(
        log_prob_batch(e.snapshots[static_cast<std::size_t>(j)], obs, act));
  }

  double loss = 0.0;
  Vec w = Vec::Zero(B);
  const double inv_b = 1.0 / static_cast<double>(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const bool own = lp(b) >= others(b);
    const double mx = own ? lp(b) : others(b);
    loss += -(1.0 - alpha) * lp(b) * inv_b - alpha * mx * inv_b;
    w(b) = -((1.0 - alpha) + (own ? alpha : 0.0)) * inv_b;
  }
  if (grads) logprob_backward(pol, fwd, act, w, *grads);

  BcBatchResult r;
  r.loss = loss;
  r.mean_logprob = lp.mean();
  return r;
}

Ensemble bc_train(const Mat& obs_n, const Mat& act, const Vec& act_low,
                  const Vec& act_high, const BcConfig& cfg, Rng& rng,
                  const BcStepCallback& step_cb) {
  if (obs_n.rows() != act.rows()) throw ShapeError("bc_train: data length mismatch");
  if (obs_n.rows() < 1) throw ConfigError("bc_train: empty dataset");
  const std::int64_t N = obs_n.rows();

  Rng init_rng = rng.split(streams::kInit);
  Ensemble e = init_ensemble(cfg.n_members, cfg.alpha, static_cast<int>(obs_n.cols()),
                             act_low, act_high, cfg.hidden, init_rng, cfg.hidden_gain,
                             cfg.output_gain, cfg.log_std_init);

  std::vector<Adam> opt(static_cast<std::size_t>(cfg.n_members));
  for (int i = 0; i < cfg.n_members; ++i)
    opt[static_cast<std::size_t>(i)].init(e.members[static_cast<std::size_t>(i)].n_params());

  Rng batch_rng = rng.split(0xBA7C);
  std::vector<double> losses(static_cast<std::size_t>(cfg.n_members), 0.0);
  for (int t = 0; t < cfg.steps; ++t) {
    if (cfg.snapshot_refresh_interval > 0 && t % cfg.snapshot_refresh_interval == 0)
      e.snapshots = e.members;
    const auto idx = batch_rng.batch_indices(N, cfg.batch_size);
    Mat ob(cfg.batch_size, obs_n.cols());
    Mat ab(cfg.batch_size, act.cols());
    for (int b = 0; b < cfg.batch_size; ++b) {
      ob.row(b) = obs_n.row(idx[static_cast<std::size_t>(b)]);
      ab.row(b) = act.row(idx[static_cast<std::size_t>(b)]);
    }
    const double lr_now =
        cfg.lr_decay
            ? decay_schedule(cfg.lr, static_cast<double>(t) / static_cast<double>(cfg.steps))
            : cfg.lr;
    for (int i = 0; i < cfg.n_members; ++i) {
      GaussianPolicy& pol = e.members[static_cast<std::size_t>(i)];
      PolicyGrads g = make_policy_grads(pol);
      const BcBatchResult res = bc_member_loss(e, i, ob, ab, &g);
      losses[static_cast<std::size_t>(i)] = res.loss;
      Vec theta = pol.flatten_params();
      opt[static_cast<std::size_t>(i)].step(theta, flatten_policy_grads(pol, g), lr_now);
      pol.unflatten_params(theta);
      pol.clamp_log_std();
    }
    if (step_cb) step_cb(t, losses);
  }

  // Final behavior snapshots are the trained members; replacement counters
  // start at zero for the offline-improvement stage.
  e.snapshots = e.members;
  std::fill(e.iteration_counts.begin(), e.iteration_counts.end(), 0);
  return e;
}

Mat kl_pairwise_estimate(const Ensemble& e, const Mat& states, int m, Rng& rng) {
  e.check();
  if (states.rows() < 1) throw ConfigError("kl_pairwise_estimate: need >= 1 state");
  if (m < 1) throw ConfigError("kl_pairwise_estimate: need m >= 1");
  const int n = e.n();
  const Eigen::Index S = states.rows();
  const int act_dim = e.members[0].act_dim();

  // Forward every member once over the state set.
  std::vector<Mat> mu(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    mu[static_cast<std::size_t>(i)] = policy_mean(e.members[static_cast<std::size_t>(i)], states);

  // kl(i -> j) estimated with m unclipped Gaussian samples from member i per
  // state; densities are closed-form diagonal Gaussians at those samples.
  Mat kl = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    Rng stream = rng.split(static_cast<std::uint64_t>(i) + 1);
    const Vec sig_i = e.members[static_cast<std::size_t>(i)].std();
    const Vec ls_i = e.members[static_cast<std::size_t>(i)].log_std;
    for (Eigen::Index s = 0; s < S; ++s) {
      for (int k = 0; k < m; ++k) {
        const Vec eps = stream.normal_vec(act_dim);
        // log p_i at its own sample has closed form in eps.
        double lp_i = 0.0;
        for (int d = 0; d < act_dim; ++d)
          lp_i += -0.5 * eps(d) * eps(d) - ls_i(d) - 0.5 * kLog2Pi;
        for (int j = 0; j < n; ++j) {
          if (j == i) continue;
          const Vec sig_j = e.members[static_cast<std::size_t>(j)].std();
          const Vec ls_j = e.members[static_cast<std::size_t>(j)].log_std;
          double lp_j = 0.0;
          for (int d = 0; d < act_dim; ++d) {
            const double a = mu[static_cast<std::size_t>(i)](s, d) + sig_i(d) * eps(d);
            const double z = (a - mu[static_cast<std::size_t>(j)](s, d)) / sig_j(d);
            lp_j += -0.5 * z * z - ls_j(d) - 0.5 * kLog2Pi;
          }
          kl(i, j) += lp_i - lp_j;
        }
      }
    }
  }
  kl /= static_cast<double>(S) * static_cast<double>(m);
  // Symmetrize: entry (i,j) = KL(i||j) + KL(j||i); diagonal exactly zero.
  Mat sym = kl + kl.transpose();
  sym.diagonal().setZero();
  return sym;
}

double mean_offdiag(const Mat& kl) {
  const Eigen::Index n = kl.rows();
  if (n < 2) return 0.0;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) acc += kl(i, j);
  return acc / static_cast<double>(n * (n - 1));
}

namespace {

double max_density_1d(const std::vector<double>& mus,
                      const std::vector<double>& sigmas, double a) {
  double best = 0.0;
  for (std::size_t j = 0; j < mus.size(); ++j) {
    const double z = (a - mus[j]) / sigmas[j];
    const double p = std::exp(-0.5 * z * z) / (sigmas[j] * std::sqrt(2.0 * 3.14159265358979323846));
    best = std::max(best, p);
  }
  return best;
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                        double fa, double fm, double fb, double whole, double tol,
                        int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace

ZBoundResult zbound_check(const Ensemble& e, const Vec& obs) {
  e.check();
  if (e.members[0].act_dim() != 1)
    throw ConfigError("zbound_check: diagnostic supports act_dim = 1 only");
  Mat o = obs.transpose();
  std::vector<double> mus, sigmas;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < e.n(); ++j) {
    const double mu = policy_mean(e.members[static_cast<std::size_t>(j)], o)(0, 0);
    const double sig = e.members[static_cast<std::size_t>(j)].std()(0);
    mus.push_back(mu);
    sigmas.push_back(sig);
    lo = std::min(lo, mu - 12.0 * sig);
    hi = std::max(hi, mu + 12.0 * sig);
  }
  auto f = [&](double a) { return max_density_1d(mus, sigmas, a); };
  const double fa = f(lo), fb = f(hi), fm = f(0.5 * (lo + hi));
  const double whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
  ZBoundResult r;
  r.z = adaptive_simpson(f, lo, hi, fa, fm, fb, whole, 1e-9, 40);
  r.pass = r.z >= 1.0 - 1e-3 && r.z <= static_cast<double>(e.n()) + 1e-3;
  return r;
}

}  // namespace o2o
