#include "oracles.hpp"

#include <algorithm>
#include <cmath>

namespace oracle {

namespace {

// Imbalance at e: positive while e sits below the expectile. Strictly
// decreasing in e, so bisection applies.
double expectile_residual(const std::vector<double>& xs, double tau, double e) {
  double above = 0.0, below = 0.0;
  for (double x : xs) {
    if (x > e) above += x - e;
    if (x < e) below += e - x;
  }
  return tau * above - (1.0 - tau) * below;
}

}  // namespace

double expectile_1d(const std::vector<double>& samples, double tau) {
  if (samples.empty()) throw std::runtime_error("expectile_1d: empty samples");
  if (!(tau > 0.0 && tau < 1.0)) {
    throw std::runtime_error("expectile_1d: tau outside (0, 1)");
  }
  double lo = *std::min_element(samples.begin(), samples.end());
  double hi = *std::max_element(samples.begin(), samples.end());
  if (hi - lo < 1e-15) return lo;  // constant samples
  for (int it = 0; it < 200 && hi - lo > 1e-10; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (expectile_residual(samples, tau, mid) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

namespace {

void expand_branches(const o2o::TabularMdp& mdp, const o2o::Mat& policy,
                     const o2o::Mat& q, int H, int s, int h, double prob,
                     double q_sum, double& total) {
  if (h == H) {
    total += prob * q_sum;
    return;
  }
  for (int a = 0; a < mdp.n_actions; ++a) {
    const double pa = policy(s, a);
    if (pa == 0.0) continue;
    const double branch_q = q_sum + q(s, a);
    if (h == H - 1) {
      // Last action draw: no further transition is consumed.
      total += prob * pa * branch_q;
      continue;
    }
    for (int s2 = 0; s2 < mdp.n_states; ++s2) {
      const double ps = mdp.transition[static_cast<std::size_t>(a)](s, s2);
      if (ps == 0.0) continue;
      expand_branches(mdp, policy, q, H, s2, h + 1, prob * pa * ps, branch_q,
                      total);
    }
  }
}

}  // namespace

double enumerate_amq(const o2o::TabularMdp& mdp, const o2o::Mat& policy,
                     const o2o::Mat& q, int H) {
  if (H < 0) throw std::runtime_error("enumerate_amq: negative horizon");
  if (H == 0) return 0.0;
  const double branches =
      std::pow(static_cast<double>(mdp.n_states) * mdp.n_actions, H);
  if (branches > 1e6) {
    throw std::runtime_error("enumerate_amq: branch count exceeds 1e6");
  }
  double total = 0.0;
  for (int s0 = 0; s0 < mdp.n_states; ++s0) {
    const double p0 = mdp.initial_dist(s0);
    if (p0 == 0.0) continue;
    expand_branches(mdp, policy, q, H, s0, 0, p0, 0.0, total);
  }
  return total;
}

double gaussian_kl_1d(double mu1, double s1, double mu2, double s2) {
  if (!(s1 > 0.0) || !(s2 > 0.0)) {
    throw std::runtime_error("gaussian_kl_1d: stds must be positive");
  }
  const double d = mu1 - mu2;
  return std::log(s2 / s1) + (s1 * s1 + d * d) / (2.0 * s2 * s2) - 0.5;
}

}  // namespace oracle
