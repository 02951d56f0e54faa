#pragma once

// Independent brute-force references used only by the test and acceptance
// binaries. Deliberately naive: none of these share code with the library's
// numeric kernels.

#include <stdexcept>
#include <vector>

#include "o2o/tabular.hpp"

namespace oracle {

// Solves tau * sum_{x > e} (x - e) = (1 - tau) * sum_{x < e} (e - x) by
// bisection over [min, max] to 1e-10.
double expectile_1d(const std::vector<double>& samples, double tau);

// Exact H-step expectation of the Q-sum functional by full trajectory-tree
// expansion (every (s0, a0, s1, ..., a_{H-1}) branch visited explicitly).
// Throws std::runtime_error when (|S| * |A|)^H exceeds 1e6 branches.
double enumerate_amq(const o2o::TabularMdp& mdp, const o2o::Mat& policy,
                     const o2o::Mat& q, int H);

// Closed-form KL( N(mu1, s1^2) || N(mu2, s2^2) ).
double gaussian_kl_1d(double mu1, double s1, double mu2, double s2);

}  // namespace oracle
