#pragma once

// Expectile value fitting: V fitted toward the target-Q head with an
// asymmetric L2 loss, Q fitted by one-step bootstrapped MSE, target Q tracked
// by polyak averaging. The offline advantage is q_net(s,a) - v_net(s).

#include "o2o/common.hpp"
#include "o2o/mlp.hpp"

namespace o2o {

struct ValueHeads {
  Mlp q_net;     // (obs_n || act) -> 1
  Mlp v_net;     // obs_n -> 1
  Mlp target_q;  // frozen copy of q_net, polyak-tracked
  double tau = 0.7;
  double polyak_rate = 0.005;

  int obs_dim() const { return v_net.in_dim(); }
  int act_dim() const { return q_net.in_dim() - v_net.in_dim(); }
};

// |tau - 1(u < 0)| * u^2, subgradient 0 at u = 0.
double expectile_loss(double u, double tau);
// d expectile_loss / du.
double expectile_grad(double u, double tau);

ValueHeads init_value_heads(int obs_dim, int act_dim, const std::vector<int>& hidden,
                            double tau, double polyak_rate, Rng& rng);

Mat concat_sa(const Mat& obs, const Mat& act);

// Loss values + gradients (pure; gradients accumulated when non-null).
// V side: mean expectile loss of (target_q(s,a) - v(s)), target side constant.
double v_expectile_loss(const ValueHeads& h, const Mat& obs, const Mat& act,
                        MlpGrads* v_grads);
// Q side: mean squared error of q(s,a) against r + gamma*(1-terminal)*v(s'),
// v side constant; timeouts bootstrap normally.
double q_bootstrap_loss(const ValueHeads& h, const Mat& obs, const Mat& act,
                        const Vec& reward, const Mat& next_obs,
                        const std::vector<std::uint8_t>& terminal, double gamma,
                        MlpGrads* q_grads);

void polyak_update(ValueHeads& h);  // target <- (1-rho)*target + rho*q

Vec value_batch(const Mlp& v_net, const Mat& obs);
Vec q_batch(const Mlp& q_net, const Mat& obs, const Mat& act);
Vec advantage_batch(const ValueHeads& h, const Mat& obs, const Mat& act);
double advantage(const ValueHeads& h, const Vec& obs, const Vec& act);

struct ValueFitConfig {
  std::vector<int> hidden = {64, 64};
  double tau = 0.7;
  double polyak_rate = 0.005;
  int steps = 20000;  // each step: one V update, one Q update, one polyak
  int batch_size = 256;
  double lr = 1e-3;
  double gamma = 0.99;
};

using ValueStepCallback = std::function<void(int, double, double)>;  // step, v, q
ValueHeads fit_values(const Mat& obs_n, const Mat& act, const Vec& reward,
                      const Mat& next_obs_n, const std::vector<std::uint8_t>& terminal,
                      const ValueFitConfig& cfg, Rng& rng,
                      const ValueStepCallback& cb = nullptr);

}  // namespace o2o
