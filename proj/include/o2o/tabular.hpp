#pragma once

// Exact tabular MDP machinery: validation, dynamic-programming Q solvers,
// and the exact rollout-sum functional used as ground truth by the offline
// policy evaluator's tests.

#include "o2o/common.hpp"

namespace o2o {

struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  std::vector<Mat> transition;  // transition[a](s, s') = P(s' | s, a)
  Mat reward;                   // reward(s, a): expected immediate reward
  Vec initial_dist;             // d0 over states
  double gamma = 0.99;

  void validate(double tol = 1e-12) const;
};

// Finite-horizon backward induction. Returns H tables; q[h](s,a) is the
// optimal value of taking a at s with H-h steps remaining (q[H-1] is the
// one-step table).
std::vector<Mat> dp_optimal_q_finite(const TabularMdp& mdp, int horizon);

// Infinite-horizon discounted optimal Q by value iteration to sup-norm tol.
Mat dp_optimal_q_discounted(const TabularMdp& mdp, double tol = 1e-10);

// Greedy policy (ties to lower action index) as a deterministic row-stochastic
// table.
Mat greedy_policy(const Mat& q);

// Exact value of the rollout-sum functional
//   J = E[ sum_{t=0}^{H-1} q(s_t, a_t) ],  s_0 ~ d0, a_t ~ policy, s_{t+1} ~ mdp
// computed by forward propagation of state-occupancy vectors: H action draws,
// H-1 transitions, no sampling. policy is n_states x n_actions, rows sum to 1.
double exact_amq(const TabularMdp& mdp, const Mat& policy, const Mat& q, int H);

// State-action occupancy averaged over the transition-consuming steps
// t = 0..H-2 under (mdp, policy); used by the model-gap bound checker.
// Returns an n_states x n_actions matrix summing to 1 (H >= 2).
Mat visitation_sa(const TabularMdp& mdp, const Mat& policy, int H);

// Exact KL between transition kernels weighted by a state-action
// distribution: sum_{s,a} w(s,a) * KL(P(.|s,a) || P_hat(.|s,a)).
// Returns +inf when P > 0 somewhere P_hat = 0 (absolute-continuity failure).
double transition_kl(const TabularMdp& mdp, const TabularMdp& mdp_hat, const Mat& w);

}  // namespace o2o
