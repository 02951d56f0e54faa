#include "o2o/dynamics.hpp"

#include "o2o/values.hpp"  // concat_sa

#include <cmath>

namespace o2o {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

GaussianDynamics init_dynamics(int obs_dim, int act_dim,
                               const std::vector<int>& hidden, Rng& rng) {
  std::vector<int> sizes;
  sizes.push_back(obs_dim + act_dim);
  for (int h : hidden) sizes.push_back(h);
  sizes.push_back(2 * obs_dim);
  GaussianDynamics m;
  m.net = make_mlp(sizes, Activation::Tanh, Activation::Identity);
  init_mlp(m.net, rng, std::sqrt(2.0), 0.01);
  return m;
}

DynamicsPrediction dynamics_forward(const GaussianDynamics& m, const Mat& obs,
                                    const Mat& act) {
  const Mat out = mlp_forward(m.net, concat_sa(obs, act));
  const int d = m.obs_dim();
  DynamicsPrediction p;
  p.delta_mean = out.leftCols(d);
  p.log_std = out.rightCols(d)
                  .cwiseMax(GaussianDynamics::kLogStdMin)
                  .cwiseMin(GaussianDynamics::kLogStdMax);
  return p;
}

double dynamics_nll_loss(const GaussianDynamics& m, const Mat& obs, const Mat& act,
                         const Mat& next_obs, MlpGrads* grads) {
  const Eigen::Index B = obs.rows();
  const int d = m.obs_dim();
  if (next_obs.rows() != B || next_obs.cols() != d)
    throw ShapeError("dynamics_nll_loss: next_obs shape mismatch");
  MlpCache cache;
  const Mat out = mlp_forward(m.net, concat_sa(obs, act), cache);
  double loss = 0.0;
  Mat d_out = Mat::Zero(B, 2 * d);
  const double inv_b = 1.0 / static_cast<double>(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (int k = 0; k < d; ++k) {
      const double delta = next_obs(b, k) - obs(b, k);
      const double mean = out(b, k);
      const double ls_raw = out(b, d + k);
      const bool clamped_lo = ls_raw < GaussianDynamics::kLogStdMin;
      const bool clamped_hi = ls_raw > GaussianDynamics::kLogStdMax;
      const double ls = clamped_lo ? GaussianDynamics::kLogStdMin
                        : clamped_hi ? GaussianDynamics::kLogStdMax
                                     : ls_raw;
      const double sigma = std::exp(ls);
      const double z = (delta - mean) / sigma;
      loss += (0.5 * z * z + ls + 0.5 * kLog2Pi) * inv_b;
      d_out(b, k) = -z / sigma * inv_b;
      if (!clamped_lo && !clamped_hi) d_out(b, d + k) = (1.0 - z * z) * inv_b;
    }
  }
  require_finite(loss, "dynamics nll");
  if (grads) mlp_backward(m.net, cache, d_out, *grads);
  return loss;
}

Mat predict_next_batch(const GaussianDynamics& m, const Mat& obs, const Mat& act,
                       RolloutMode mode, const Mat* eps) {
  const DynamicsPrediction p = dynamics_forward(m, obs, act);
  Mat next = obs + p.delta_mean;
  if (mode == RolloutMode::Sample) {
    if (!eps) throw ConfigError("predict_next: sample mode needs eps");
    if (eps->rows() != obs.rows() || eps->cols() != m.obs_dim())
      throw ShapeError("predict_next: eps shape mismatch");
    next += eps->cwiseProduct(p.log_std.array().exp().matrix());
  }
  return next;
}

Vec predict_next(const GaussianDynamics& m, const Vec& obs, const Vec& act,
                 RolloutMode mode, Rng& rng) {
  Mat o = obs.transpose();
  Mat a = act.transpose();
  if (mode == RolloutMode::Sample) {
    Mat eps = rng.normal_mat(1, m.obs_dim());
    return predict_next_batch(m, o, a, mode, &eps).row(0).transpose();
  }
  return predict_next_batch(m, o, a, mode, nullptr).row(0).transpose();
}

GaussianDynamics fit_dynamics(const Mat& obs_n, const Mat& act, const Mat& next_obs_n,
                              const DynamicsFitConfig& cfg, Rng& rng,
                              const DynStepCallback& cb) {
  const std::int64_t N = obs_n.rows();
  if (N < 1) throw ConfigError("fit_dynamics: empty dataset");
  Rng init_rng = rng.split(streams::kInit);
  GaussianDynamics m = init_dynamics(static_cast<int>(obs_n.cols()),
                                     static_cast<int>(act.cols()), cfg.hidden, init_rng);
  Adam opt;
  opt.init(m.net.n_params());
  Rng batch_rng = rng.split(0xBA7C);
  for (int t = 0; t < cfg.steps; ++t) {
    const auto idx = batch_rng.batch_indices(N, cfg.batch_size);
    Mat ob(cfg.batch_size, obs_n.cols());
    Mat ab(cfg.batch_size, act.cols());
    Mat nob(cfg.batch_size, next_obs_n.cols());
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto i = idx[static_cast<std::size_t>(b)];
      ob.row(b) = obs_n.row(i);
      ab.row(b) = act.row(i);
      nob.row(b) = next_obs_n.row(i);
    }
    MlpGrads g = make_grads(m.net);
    const double loss = dynamics_nll_loss(m, ob, ab, nob, &g);
    Vec theta = flatten(m.net);
    opt.step(theta, flatten_grads(m.net, g), cfg.lr);
    unflatten(m.net, theta);
    if (cb) cb(t, loss);
  }
  return m;
}

}  // namespace o2o
