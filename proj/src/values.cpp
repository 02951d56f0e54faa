#include "o2o/values.hpp"

#include <cmath>

namespace o2o {

double expectile_loss(double u, double tau) {
  const double w = (u < 0.0) ? std::abs(tau - 1.0) : tau;
  return w * u * u;
}

double expectile_grad(double u, double tau) {
  if (u == 0.0) return 0.0;
  const double w = (u < 0.0) ? std::abs(tau - 1.0) : tau;
  return 2.0 * w * u;
}

ValueHeads init_value_heads(int obs_dim, int act_dim, const std::vector<int>& hidden,
                            double tau, double polyak_rate, Rng& rng) {
  if (tau < 0.5 || tau >= 1.0) throw ConfigError("value heads: tau must be in [0.5, 1)");
  if (polyak_rate <= 0.0 || polyak_rate > 1.0)
    throw ConfigError("value heads: polyak_rate must be in (0, 1]");
  ValueHeads h;
  std::vector<int> q_sizes, v_sizes;
  q_sizes.push_back(obs_dim + act_dim);
  v_sizes.push_back(obs_dim);
  for (int hd : hidden) {
    q_sizes.push_back(hd);
    v_sizes.push_back(hd);
  }
  q_sizes.push_back(1);
  v_sizes.push_back(1);
  h.q_net = make_mlp(q_sizes, Activation::Tanh, Activation::Identity);
  h.v_net = make_mlp(v_sizes, Activation::Tanh, Activation::Identity);
  Rng q_rng = rng.split(1);
  Rng v_rng = rng.split(2);
  init_mlp(h.q_net, q_rng, std::sqrt(2.0), 1.0);
  init_mlp(h.v_net, v_rng, std::sqrt(2.0), 1.0);
  h.target_q = h.q_net;
  h.tau = tau;
  h.polyak_rate = polyak_rate;
  return h;
}

Mat concat_sa(const Mat& obs, const Mat& act) {
  if (obs.rows() != act.rows()) throw ShapeError("concat_sa: row mismatch");
  Mat sa(obs.rows(), obs.cols() + act.cols());
  sa << obs, act;
  return sa;
}

double v_expectile_loss(const ValueHeads& h, const Mat& obs, const Mat& act,
                        MlpGrads* v_grads) {
  const Eigen::Index B = obs.rows();
  const Vec q_t = q_batch(h.target_q, obs, act);
  MlpCache cache;
  const Vec v = mlp_forward(h.v_net, obs, cache).col(0);
  double loss = 0.0;
  Mat d_v(B, 1);
  for (Eigen::Index b = 0; b < B; ++b) {
    const double u = q_t(b) - v(b);
    loss += expectile_loss(u, h.tau);
    d_v(b, 0) = -expectile_grad(u, h.tau);  // du/dv = -1
  }
  loss /= static_cast<double>(B);
  if (v_grads) {
    d_v /= static_cast<double>(B);
    mlp_backward(h.v_net, cache, d_v, *v_grads);
  }
  return loss;
}

double q_bootstrap_loss(const ValueHeads& h, const Mat& obs, const Mat& act,
                        const Vec& reward, const Mat& next_obs,
                        const std::vector<std::uint8_t>& terminal, double gamma,
                        MlpGrads* q_grads) {
  const Eigen::Index B = obs.rows();
  if (reward.size() != B || next_obs.rows() != B ||
      static_cast<Eigen::Index>(terminal.size()) != B)
    throw ShapeError("q_bootstrap_loss: batch shapes disagree");
  const Vec v_next = value_batch(h.v_net, next_obs);
  MlpCache cache;
  const Vec q = mlp_forward(h.q_net, concat_sa(obs, act), cache).col(0);
  double loss = 0.0;
  Mat d_q(B, 1);
  for (Eigen::Index b = 0; b < B; ++b) {
    const double target =
        reward(b) +
        gamma * (terminal[static_cast<std::size_t>(b)] ? 0.0 : v_next(b));
    const double err = q(b) - target;
    loss += err * err;
    d_q(b, 0) = 2.0 * err;
  }
  loss /= static_cast<double>(B);
  if (q_grads) {
    d_q /= static_cast<double>(B);
    mlp_backward(h.q_net, cache, d_q, *q_grads);
  }
  return loss;
}

void polyak_update(ValueHeads& h) {
  const double rho = h.polyak_rate;
  for (int l = 0; l < h.q_net.n_layers(); ++l) {
    h.target_q.weights[static_cast<std::size_t>(l)] =
        (1.0 - rho) * h.target_q.weights[static_cast<std::size_t>(l)] +
        rho * h.q_net.weights[static_cast<std::size_t>(l)];
    h.target_q.biases[static_cast<std::size_t>(l)] =
        (1.0 - rho) * h.target_q.biases[static_cast<std::size_t>(l)] +
        rho * h.q_net.biases[static_cast<std::size_t>(l)];
  }
}

Vec value_batch(const Mlp& v_net, const Mat& obs) {
  return mlp_forward(v_net, obs).col(0);
}

Vec q_batch(const Mlp& q_net, const Mat& obs, const Mat& act) {
  return mlp_forward(q_net, concat_sa(obs, act)).col(0);
}

Vec advantage_batch(const ValueHeads& h, const Mat& obs, const Mat& act) {
  return q_batch(h.q_net, obs, act) - value_batch(h.v_net, obs);
}

double advantage(const ValueHeads& h, const Vec& obs, const Vec& act) {
  Mat o = obs.transpose();
  Mat a = act.transpose();
  return advantage_batch(h, o, a)(0);
}

ValueHeads fit_values(const Mat& obs_n, const Mat& act, const Vec& reward,
                      const Mat& next_obs_n, const std::vector<std::uint8_t>& terminal,
                      const ValueFitConfig& cfg, Rng& rng,
                      const ValueStepCallback& cb) {
  const std::int64_t N = obs_n.rows();
  if (N < 1) throw ConfigError("fit_values: empty dataset");
  Rng init_rng = rng.split(streams::kInit);
  ValueHeads h = init_value_heads(static_cast<int>(obs_n.cols()),
                                  static_cast<int>(act.cols()), cfg.hidden, cfg.tau,
                                  cfg.polyak_rate, init_rng);
  Adam v_opt, q_opt;
  v_opt.init(h.v_net.n_params());
  q_opt.init(h.q_net.n_params());
  Rng batch_rng = rng.split(0xBA7C);
  for (int t = 0; t < cfg.steps; ++t) {
    const auto idx = batch_rng.batch_indices(N, cfg.batch_size);
    Mat ob(cfg.batch_size, obs_n.cols());
    Mat ab(cfg.batch_size, act.cols());
    Mat nob(cfg.batch_size, next_obs_n.cols());
    Vec rb(cfg.batch_size);
    std::vector<std::uint8_t> tb(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto i = idx[static_cast<std::size_t>(b)];
      ob.row(b) = obs_n.row(i);
      ab.row(b) = act.row(i);
      nob.row(b) = next_obs_n.row(i);
      rb(b) = reward(i);
      tb[static_cast<std::size_t>(b)] = terminal[static_cast<std::size_t>(i)];
    }
    MlpGrads vg = make_grads(h.v_net);
    const double v_loss = v_expectile_loss(h, ob, ab, &vg);
    Vec v_theta = flatten(h.v_net);
    v_opt.step(v_theta, flatten_grads(h.v_net, vg), cfg.lr);
    unflatten(h.v_net, v_theta);

    MlpGrads qg = make_grads(h.q_net);
    const double q_loss =
        q_bootstrap_loss(h, ob, ab, rb, nob, tb, cfg.gamma, &qg);
    Vec q_theta = flatten(h.q_net);
    q_opt.step(q_theta, flatten_grads(h.q_net, qg), cfg.lr);
    unflatten(h.q_net, q_theta);

    polyak_update(h);
    if (cb) cb(t, v_loss, q_loss);
  }
  return h;
}

}  // namespace o2o
