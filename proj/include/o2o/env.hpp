#pragma once

// Desk-scale environments and scripted data-collection policies.
//
//   pointmass2d          2-D navigation, two fixed goals, dense reward
//   pointmass2d-shifted  same physics, goals mirrored to the -x side
//   gridworld5           5x5 sparse-reward grid backed by an exact TabularMdp
//   pendulum-lite        torque-limited pendulum stabilization
//
// Gridworld actions are continuous 4-vectors decoded by argmax so Gaussian
// policies drive every env through one code path.

#include "o2o/common.hpp"
#include "o2o/tabular.hpp"

#include <memory>

namespace o2o {

struct EnvSpec {
  std::string name;
  int obs_dim = 0;
  int act_dim = 0;
  Vec action_low, action_high;
  int max_episode_steps = 0;
  double gamma = 0.99;
};

struct StepResult {
  Vec next_obs;
  double reward = 0.0;
  bool terminal = false;
  bool timeout = false;
};

class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual Vec reset(Rng& rng) = 0;
  // Clips the action to bounds internally. terminal and timeout are mutually
  // exclusive; terminal wins when both conditions coincide.
  virtual StepResult step(const Vec& action, Rng& rng) = 0;
};

std::unique_ptr<Env> make_env(const std::string& name);

// ---------------------------------------------------------------------------
// Concrete envs (exposed so scripted policies and tests can reach internals).
// ---------------------------------------------------------------------------

class PointMass2D final : public Env {
 public:
  explicit PointMass2D(bool shifted);
  const EnvSpec& spec() const override { return spec_; }
  Vec reset(Rng& rng) override;
  StepResult step(const Vec& action, Rng& rng) override;

  Vec goal_upper() const { return goals_[0]; }
  Vec goal_lower() const { return goals_[1]; }
  static constexpr double kStepScale = 0.1;
  static constexpr double kGoalRadius = 0.1;
  static constexpr double kResetNoise = 0.05;

 private:
  Vec obs() const;
  EnvSpec spec_;
  Vec goals_[2];
  Vec pos_, goal_;
  int t_ = 0;
};

class Gridworld5 final : public Env {
 public:
  Gridworld5();
  const EnvSpec& spec() const override { return spec_; }
  Vec reset(Rng& rng) override;
  StepResult step(const Vec& action, Rng& rng) override;

  const TabularMdp& mdp() const { return mdp_; }
  static constexpr int kSide = 5;
  static constexpr int kStart = 0;                   // top-left
  static constexpr int kGoal = kSide * kSide - 1;    // bottom-right
  static constexpr double kSlip = 0.1;

  static Vec one_hot(int s);
  static int decode_action(const Vec& action);  // argmax over 4 dims

 private:
  EnvSpec spec_;
  TabularMdp mdp_;
  int state_ = kStart;
  int t_ = 0;
};

// Exact transition table of the gridworld (0.9 intended direction, 0.1
// uniform over all four; off-grid moves stay put; goal absorbing with zero
// reward after entry; entering the goal pays reward 1).
TabularMdp build_gridworld_mdp();

class PendulumLite final : public Env {
 public:
  PendulumLite();
  const EnvSpec& spec() const override { return spec_; }
  Vec reset(Rng& rng) override;
  StepResult step(const Vec& action, Rng& rng) override;

  static constexpr double kDt = 0.05;
  static constexpr double kGravity = 10.0;
  static constexpr double kTorqueGain = 2.0;

 private:
  Vec obs() const;
  EnvSpec spec_;
  double theta_ = 0.0, theta_dot_ = 0.0;
  int t_ = 0;
};

// ---------------------------------------------------------------------------
// Scripted collection policies.
// ---------------------------------------------------------------------------

class ScriptedPolicy {
 public:
  virtual ~ScriptedPolicy() = default;
  virtual Vec act(const Vec& obs, Rng& rng) = 0;
};

// Kinds: pointmass-upper-mode, pointmass-lower-mode, pointmass-noisy-medium,
// pendulum-energy-pump, pendulum-random, gridworld-epsilon-greedy(EPS).
// noise_std is the additive Gaussian action noise where the kind uses one.
// The env supplies goal locations / the DP policy where needed.
std::unique_ptr<ScriptedPolicy> make_scripted_policy(const std::string& kind,
                                                     double noise_std,
                                                     const Env& env);

double wrap_angle(double theta);  // to (-pi, pi]

}  // namespace o2o
