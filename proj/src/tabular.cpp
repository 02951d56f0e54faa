#include "o2o/tabular.hpp"

#include <cmath>
#include <limits>

namespace o2o {

void TabularMdp::validate(double tol) const {
  if (n_states <= 0 || n_actions <= 0)
    throw ConfigError("TabularMdp: state/action counts must be positive");
  if (static_cast<int>(transition.size()) != n_actions)
    throw ShapeError("TabularMdp: one transition matrix per action required");
  for (const auto& p : transition) {
    if (p.rows() != n_states || p.cols() != n_states)
      throw ShapeError("TabularMdp: transition matrix shape mismatch");
    for (int s = 0; s < n_states; ++s) {
      if (p.row(s).minCoeff() < -tol)
        throw NumericError("TabularMdp: negative transition probability");
      if (std::abs(p.row(s).sum() - 1.0) > tol)
        throw NumericError("TabularMdp: transition row does not sum to 1");
    }
  }
  if (reward.rows() != n_states || reward.cols() != n_actions)
    throw ShapeError("TabularMdp: reward shape mismatch");
  if (initial_dist.size() != n_states)
    throw ShapeError("TabularMdp: initial distribution size mismatch");
  if (initial_dist.minCoeff() < -tol || std::abs(initial_dist.sum() - 1.0) > tol)
    throw NumericError("TabularMdp: initial distribution invalid");
}

std::vector<Mat> dp_optimal_q_finite(const TabularMdp& mdp, int horizon) {
  if (horizon <= 0) throw ConfigError("dp_optimal_q_finite: horizon must be positive");
  std::vector<Mat> q(static_cast<std::size_t>(horizon));
  Vec v_next = Vec::Zero(mdp.n_states);  // V_H = 0
  for (int h = horizon - 1; h >= 0; --h) {
    Mat qh(mdp.n_states, mdp.n_actions);
    for (int a = 0; a < mdp.n_actions; ++a)
      qh.col(a) = mdp.reward.col(a) + mdp.gamma * (mdp.transition[a] * v_next);
    q[static_cast<std::size_t>(h)] = qh;
    v_next = qh.rowwise().maxCoeff();
  }
  return q;
}

Mat dp_optimal_q_discounted(const TabularMdp& mdp, double tol) {
  if (mdp.gamma >= 1.0)
    throw ConfigError("dp_optimal_q_discounted: requires gamma < 1");
  Mat q = Mat::Zero(mdp.n_states, mdp.n_actions);
  for (int iter = 0; iter < 10'000'000; ++iter) {
    Vec v = q.rowwise().maxCoeff();
    Mat q_new(mdp.n_states, mdp.n_actions);
    for (int a = 0; a < mdp.n_actions; ++a)
      q_new.col(a) = mdp.reward.col(a) + mdp.gamma * (mdp.transition[a] * v);
    const double delta = (q_new - q).cwiseAbs().maxCoeff();
    q = q_new;
    if (delta < tol * (1.0 - mdp.gamma) / std::max(mdp.gamma, 1e-12)) break;
  }
  return q;
}

Mat greedy_policy(const Mat& q) {
  Mat pi = Mat::Zero(q.rows(), q.cols());
  for (Eigen::Index s = 0; s < q.rows(); ++s) {
    Eigen::Index best;
    q.row(s).maxCoeff(&best);
    pi(s, best) = 1.0;
  }
  return pi;
}

double exact_amq(const TabularMdp& mdp, const Mat& policy, const Mat& q, int H) {
  if (H < 0) throw ConfigError("exact_amq: negative horizon");
  if (policy.rows() != mdp.n_states || policy.cols() != mdp.n_actions)
    throw ShapeError("exact_amq: policy shape mismatch");
  for (int s = 0; s < mdp.n_states; ++s)
    if (std::abs(policy.row(s).sum() - 1.0) > 1e-9)
      throw NumericError("exact_amq: policy row does not sum to 1");
  double j = 0.0;
  Vec occ = mdp.initial_dist;
  for (int t = 0; t < H; ++t) {
    j += (occ.asDiagonal() * policy.cwiseProduct(q)).sum();
    if (t + 1 < H) {
      Vec occ_next = Vec::Zero(mdp.n_states);
      for (int a = 0; a < mdp.n_actions; ++a)
        occ_next += mdp.transition[a].transpose() * occ.cwiseProduct(policy.col(a));
      occ = occ_next;
    }
  }
  return j;
}

Mat visitation_sa(const TabularMdp& mdp, const Mat& policy, int H) {
  if (H < 2) throw ConfigError("visitation_sa: needs H >= 2");
  Mat w = Mat::Zero(mdp.n_states, mdp.n_actions);
  Vec occ = mdp.initial_dist;
  for (int t = 0; t + 1 < H; ++t) {
    w += occ.asDiagonal() * policy;
    Vec occ_next = Vec::Zero(mdp.n_states);
    for (int a = 0; a < mdp.n_actions; ++a)
      occ_next += mdp.transition[a].transpose() * occ.cwiseProduct(policy.col(a));
    occ = occ_next;
  }
  return w / static_cast<double>(H - 1);
}

double transition_kl(const TabularMdp& mdp, const TabularMdp& mdp_hat, const Mat& w) {
  if (mdp.n_states != mdp_hat.n_states || mdp.n_actions != mdp_hat.n_actions)
    throw ShapeError("transition_kl: mismatched spaces");
  double kl = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      const double weight = w(s, a);
      if (weight <= 0.0) continue;
      double row_kl = 0.0;
      for (int sp = 0; sp < mdp.n_states; ++sp) {
        const double p = mdp.transition[static_cast<std::size_t>(a)](s, sp);
        const double ph = mdp_hat.transition[static_cast<std::size_t>(a)](s, sp);
        if (p <= 0.0) continue;
        if (ph <= 0.0) return std::numeric_limits<double>::infinity();
        row_kl += p * std::log(p / ph);
      }
      kl += weight * row_kl;
    }
  }
  return std::max(kl, 0.0);
}

}  // namespace o2o
