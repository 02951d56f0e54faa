#pragma once

// Checkpoint formats, all little-endian with float32 payloads:
//   UO4P v1  policy: layer sizes, mean-net parameters, log-std
//   UO4V v1  value heads: q net, v net, target-q parameters, tau, polyak rate
//   UO4T v1  dynamics net
// Action bounds are not stored; they come from the env spec at load time.

#include <string>

#include "o2o/dynamics.hpp"
#include "o2o/policy.hpp"
#include "o2o/values.hpp"

namespace o2o {

void save_policy(const GaussianPolicy& p, const std::string& path);
GaussianPolicy load_policy(const std::string& path, const Vec& act_low,
                           const Vec& act_high);

void save_value_heads(const ValueHeads& h, const std::string& path);
ValueHeads load_value_heads(const std::string& path);

void save_dynamics(const GaussianDynamics& d, const std::string& path);
GaussianDynamics load_dynamics(const std::string& path);

}  // namespace o2o
