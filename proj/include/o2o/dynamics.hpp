#pragma once

// Learned Gaussian transition model: predicts the next-state delta
// distribution in normalized observation space. One MLP outputs
// [delta_mean, per-dim log-std], log-std hard-clamped to [-7, 1].

#include "o2o/common.hpp"
#include "o2o/mlp.hpp"

namespace o2o {

struct GaussianDynamics {
  Mlp net;  // (obs_n || act) -> 2 * obs_dim
  static constexpr double kLogStdMin = -7.0;
  static constexpr double kLogStdMax = 1.0;

  int obs_dim() const { return net.out_dim() / 2; }
  int act_dim() const { return net.in_dim() - obs_dim(); }
};

GaussianDynamics init_dynamics(int obs_dim, int act_dim,
                               const std::vector<int>& hidden, Rng& rng);

struct DynamicsPrediction {
  Mat delta_mean;  // batch x obs_dim
  Mat log_std;     // batch x obs_dim, clamped
};
DynamicsPrediction dynamics_forward(const GaussianDynamics& m, const Mat& obs,
                                    const Mat& act);

// Mean Gaussian negative log-likelihood of (next_obs - obs) under the
// predicted delta distribution; gradients accumulated when non-null.
// Clamped log-std dims contribute zero gradient through the clamp.
double dynamics_nll_loss(const GaussianDynamics& m, const Mat& obs, const Mat& act,
                         const Mat& next_obs, MlpGrads* grads);

enum class RolloutMode { Mean, Sample };

// Next states: obs + delta_mean (+ sigma * eps in sample mode; eps must be
// batch x obs_dim and may be null in mean mode).
Mat predict_next_batch(const GaussianDynamics& m, const Mat& obs, const Mat& act,
                       RolloutMode mode, const Mat* eps);
Vec predict_next(const GaussianDynamics& m, const Vec& obs, const Vec& act,
                 RolloutMode mode, Rng& rng);

struct DynamicsFitConfig {
  std::vector<int> hidden = {64, 64};
  int steps = 10000;
  int batch_size = 256;
  double lr = 1e-3;
};

using DynStepCallback = std::function<void(int, double)>;
GaussianDynamics fit_dynamics(const Mat& obs_n, const Mat& act, const Mat& next_obs_n,
                              const DynamicsFitConfig& cfg, Rng& rng,
                              const DynStepCallback& cb = nullptr);

}  // namespace o2o
