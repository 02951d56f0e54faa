#include "o2o/env.hpp"

#include <cmath>

namespace o2o {

namespace {

Vec clip_to(const Vec& a, const Vec& lo, const Vec& hi) {
  return a.cwiseMax(lo).cwiseMin(hi);
}

constexpr double kPi = 3.14159265358979323846;

}  // namespace

double wrap_angle(double theta) {
  double w = std::fmod(theta + kPi, 2.0 * kPi);
  if (w <= 0.0) w += 2.0 * kPi;
  return w - kPi;
}

// ---------------------------------------------------------------------------
// PointMass2D
// ---------------------------------------------------------------------------

PointMass2D::PointMass2D(bool shifted) {
  const double gx = shifted ? -0.5 : 0.5;
  goals_[0] = Vec(2);
  goals_[0] << gx, 0.5;
  goals_[1] = Vec(2);
  goals_[1] << gx, -0.5;
  spec_.name = shifted ? "pointmass2d-shifted" : "pointmass2d";
  spec_.obs_dim = 4;
  spec_.act_dim = 2;
  spec_.action_low = Vec::Constant(2, -1.0);
  spec_.action_high = Vec::Constant(2, 1.0);
  spec_.max_episode_steps = 60;
  spec_.gamma = 0.99;
  pos_ = Vec::Zero(2);
  goal_ = goals_[0];
}

Vec PointMass2D::obs() const {
  Vec o(4);
  o << pos_(0), pos_(1), goal_(0), goal_(1);
  return o;
}

Vec PointMass2D::reset(Rng& rng) {
  pos_ = kResetNoise * rng.normal_vec(2);
  goal_ = goals_[rng.uniform_int(2)];
  t_ = 0;
  return obs();
}

StepResult PointMass2D::step(const Vec& action, Rng& rng) {
  (void)rng;  // deterministic transitions
  if (action.size() != 2) throw ShapeError("pointmass2d: action dim mismatch");
  const Vec a = clip_to(action, spec_.action_low, spec_.action_high);
  pos_ += kStepScale * a;
  ++t_;
  StepResult r;
  r.next_obs = obs();
  const double dist = (pos_ - goal_).norm();
  r.reward = -dist;
  r.terminal = dist < kGoalRadius;
  r.timeout = !r.terminal && t_ >= spec_.max_episode_steps;
  return r;
}

// ---------------------------------------------------------------------------
// Gridworld5
// ---------------------------------------------------------------------------

TabularMdp build_gridworld_mdp() {
  constexpr int side = Gridworld5::kSide;
  constexpr int n = side * side;
  constexpr int goal = Gridworld5::kGoal;
  auto move = [&](int s, int dir) {
    int row = s / side, col = s % side;
    switch (dir) {
      case 0: row -= 1; break;  // N
      case 1: col += 1; break;  // E
      case 2: row += 1; break;  // S
      case 3: col -= 1; break;  // W
      default: throw ConfigError("gridworld direction out of range");
    }
    if (row < 0 || row >= side || col < 0 || col >= side) return s;  // wall
    return row * side + col;
  };
  TabularMdp mdp;
  mdp.n_states = n;
  mdp.n_actions = 4;
  mdp.gamma = 0.99;
  mdp.transition.assign(4, Mat::Zero(n, n));
  mdp.reward = Mat::Zero(n, 4);
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < 4; ++a) {
      if (s == goal) {  // absorbing, no further reward
        mdp.transition[static_cast<std::size_t>(a)](s, s) = 1.0;
        continue;
      }
      // 0.9 intended + 0.1 spread uniformly over all four directions.
      for (int d = 0; d < 4; ++d) {
        const double p = (d == a ? 0.9 : 0.0) + Gridworld5::kSlip / 4.0;
        mdp.transition[static_cast<std::size_t>(a)](s, move(s, d)) += p;
      }
      mdp.reward(s, a) = mdp.transition[static_cast<std::size_t>(a)](s, goal);
    }
  }
  mdp.initial_dist = Vec::Zero(n);
  mdp.initial_dist(Gridworld5::kStart) = 1.0;
  mdp.validate(1e-9);
  return mdp;
}

Gridworld5::Gridworld5() : mdp_(build_gridworld_mdp()) {
  spec_.name = "gridworld5";
  spec_.obs_dim = kSide * kSide;
  spec_.act_dim = 4;
  spec_.action_low = Vec::Constant(4, -1.0);
  spec_.action_high = Vec::Constant(4, 1.0);
  spec_.max_episode_steps = 40;
  spec_.gamma = 0.99;
}

Vec Gridworld5::one_hot(int s) {
  Vec o = Vec::Zero(kSide * kSide);
  o(s) = 1.0;
  return o;
}

int Gridworld5::decode_action(const Vec& action) {
  if (action.size() != 4) throw ShapeError("gridworld5: action dim mismatch");
  Eigen::Index best;
  action.maxCoeff(&best);
  return static_cast<int>(best);
}

Vec Gridworld5::reset(Rng& rng) {
  (void)rng;
  state_ = kStart;
  t_ = 0;
  return one_hot(state_);
}

StepResult Gridworld5::step(const Vec& action, Rng& rng) {
  const int a = decode_action(clip_to(action, spec_.action_low, spec_.action_high));
  const auto& row = mdp_.transition[static_cast<std::size_t>(a)];
  const double u = rng.uniform();
  double cdf = 0.0;
  int next = mdp_.n_states - 1;
  for (int sp = 0; sp < mdp_.n_states; ++sp) {
    cdf += row(state_, sp);
    if (u < cdf) {
      next = sp;
      break;
    }
  }
  StepResult r;
  r.reward = (state_ != kGoal && next == kGoal) ? 1.0 : 0.0;
  state_ = next;
  ++t_;
  r.next_obs = one_hot(state_);
  r.terminal = state_ == kGoal;
  r.timeout = !r.terminal && t_ >= spec_.max_episode_steps;
  return r;
}

// ---------------------------------------------------------------------------
// PendulumLite
// ---------------------------------------------------------------------------

PendulumLite::PendulumLite() {
  spec_.name = "pendulum-lite";
  spec_.obs_dim = 3;
  spec_.act_dim = 1;
  spec_.action_low = Vec::Constant(1, -2.0);
  spec_.action_high = Vec::Constant(1, 2.0);
  spec_.max_episode_steps = 200;
  spec_.gamma = 0.99;
}

Vec PendulumLite::obs() const {
  Vec o(3);
  o << std::cos(theta_), std::sin(theta_), theta_dot_;
  return o;
}

Vec PendulumLite::reset(Rng& rng) {
  theta_ = rng.uniform(-kPi, kPi);
  theta_dot_ = rng.uniform(-1.0, 1.0);
  t_ = 0;
  return obs();
}

StepResult PendulumLite::step(const Vec& action, Rng& rng) {
  (void)rng;
  if (action.size() != 1) throw ShapeError("pendulum-lite: action dim mismatch");
  const double u =
      std::min(std::max(action(0), spec_.action_low(0)), spec_.action_high(0));
  const double theta_ddot = -kGravity * std::sin(theta_) + kTorqueGain * u;
  theta_dot_ += kDt * theta_ddot;  // semi-implicit Euler
  theta_ += kDt * theta_dot_;
  ++t_;
  const double tw = wrap_angle(theta_);
  StepResult r;
  r.next_obs = obs();
  r.reward = -(tw * tw + 0.1 * theta_dot_ * theta_dot_ + 0.001 * u * u);
  r.terminal = false;
  r.timeout = t_ >= spec_.max_episode_steps;
  return r;
}

std::unique_ptr<Env> make_env(const std::string& name) {
  if (name == "pointmass2d") return std::make_unique<PointMass2D>(false);
  if (name == "pointmass2d-shifted") return std::make_unique<PointMass2D>(true);
  if (name == "gridworld5") return std::make_unique<Gridworld5>();
  if (name == "pendulum-lite") return std::make_unique<PendulumLite>();
  throw ConfigError("unknown env: " + name);
}

// ---------------------------------------------------------------------------
// Scripted policies
// ---------------------------------------------------------------------------

namespace {

class PointMassMode final : public ScriptedPolicy {
 public:
  PointMassMode(Vec target, double noise, Vec lo, Vec hi)
      : target_(std::move(target)), noise_(noise), lo_(std::move(lo)), hi_(std::move(hi)) {}
  Vec act(const Vec& obs, Rng& rng) override {
    const Vec pos = obs.head(2);
    Vec a = clip_to(4.0 * (target_ - pos), lo_, hi_);
    a += noise_ * rng.normal_vec(2);
    return clip_to(a, lo_, hi_);
  }

 private:
  Vec target_;
  double noise_;
  Vec lo_, hi_;
};

// Chases the episode's own goal (read from the observation) with heavy noise.
class PointMassMedium final : public ScriptedPolicy {
 public:
  PointMassMedium(double noise, Vec lo, Vec hi)
      : noise_(noise), lo_(std::move(lo)), hi_(std::move(hi)) {}
  Vec act(const Vec& obs, Rng& rng) override {
    const Vec pos = obs.head(2);
    const Vec goal = obs.segment(2, 2);
    Vec a = clip_to(4.0 * (goal - pos), lo_, hi_);
    a += noise_ * rng.normal_vec(2);
    return clip_to(a, lo_, hi_);
  }

 private:
  double noise_;
  Vec lo_, hi_;
};

class PendulumPump final : public ScriptedPolicy {
 public:
  explicit PendulumPump(double noise) : noise_(noise) {}
  Vec act(const Vec& obs, Rng& rng) override {
    const double theta_dot = obs(2);
    Vec a(1);
    a(0) = 2.0 * std::tanh(4.0 * theta_dot) + noise_ * rng.normal();
    a(0) = std::min(std::max(a(0), -2.0), 2.0);
    return a;
  }

 private:
  double noise_;
};

class PendulumRandom final : public ScriptedPolicy {
 public:
  Vec act(const Vec& obs, Rng& rng) override {
    (void)obs;
    Vec a(1);
    a(0) = rng.uniform(-2.0, 2.0);
    return a;
  }
};

class GridworldEpsGreedy final : public ScriptedPolicy {
 public:
  GridworldEpsGreedy(double eps, double noise, Mat dp_policy)
      : eps_(eps), noise_(noise), dp_policy_(std::move(dp_policy)) {}
  Vec act(const Vec& obs, Rng& rng) override {
    Eigen::Index s;
    obs.maxCoeff(&s);
    int dir;
    if (rng.uniform() < eps_) {
      dir = static_cast<int>(rng.uniform_int(4));
    } else {
      Eigen::Index best;
      dp_policy_.row(s).maxCoeff(&best);
      dir = static_cast<int>(best);
    }
    Vec a = Vec::Zero(4);
    a(dir) = 1.0;
    a += noise_ * rng.normal_vec(4);
    return clip_to(a, Vec::Constant(4, -1.0), Vec::Constant(4, 1.0));
  }

 private:
  double eps_;
  double noise_;
  Mat dp_policy_;
};

}  // namespace

std::unique_ptr<ScriptedPolicy> make_scripted_policy(const std::string& kind,
                                                     double noise_std,
                                                     const Env& env) {
  const auto& sp = env.spec();
  if (kind == "pointmass-upper-mode" || kind == "pointmass-lower-mode") {
    const auto* pm = dynamic_cast<const PointMass2D*>(&env);
    if (!pm) throw ConfigError("scripted policy '" + kind + "' needs a pointmass env");
    Vec target = (kind == "pointmass-upper-mode") ? pm->goal_upper() : pm->goal_lower();
    return std::make_unique<PointMassMode>(std::move(target), noise_std,
                                           sp.action_low, sp.action_high);
  }
  if (kind == "pointmass-noisy-medium") {
    if (!dynamic_cast<const PointMass2D*>(&env))
      throw ConfigError("scripted policy '" + kind + "' needs a pointmass env");
    return std::make_unique<PointMassMedium>(noise_std, sp.action_low, sp.action_high);
  }
  if (kind == "pendulum-energy-pump") {
    if (!dynamic_cast<const PendulumLite*>(&env))
      throw ConfigError("scripted policy '" + kind + "' needs pendulum-lite");
    return std::make_unique<PendulumPump>(noise_std);
  }
  if (kind == "pendulum-random") {
    if (!dynamic_cast<const PendulumLite*>(&env))
      throw ConfigError("scripted policy '" + kind + "' needs pendulum-lite");
    return std::make_unique<PendulumRandom>();
  }
  const std::string prefix = "gridworld-epsilon-greedy(";
  if (kind.rfind(prefix, 0) == 0 && kind.back() == ')') {
    const std::string inner = kind.substr(prefix.size(), kind.size() - prefix.size() - 1);
    double eps;
    try {
      eps = std::stod(inner);
    } catch (const std::exception&) {
      throw ConfigError("bad epsilon in scripted policy kind: " + kind);
    }
    if (eps < 0.0 || eps > 1.0) throw ConfigError("epsilon outside [0,1]: " + kind);
    const auto* gw = dynamic_cast<const Gridworld5*>(&env);
    if (!gw) throw ConfigError("scripted policy '" + kind + "' needs gridworld5");
    const Mat q = dp_optimal_q_discounted(gw->mdp());
    return std::make_unique<GridworldEpsGreedy>(eps, noise_std, greedy_policy(q));
  }
  throw ConfigError("unknown scripted policy kind: " + kind);
}

}  // namespace o2o
