#include "o2o/dataset.hpp"

#include "o2o/binio.hpp"

#include <algorithm>
#include <cmath>

namespace o2o {

void Dataset::check() const {
  const std::int64_t N = n();
  if (act.rows() != N || reward.size() != N || next_obs.rows() != N ||
      static_cast<std::int64_t>(terminal.size()) != N ||
      static_cast<std::int64_t>(timeout.size()) != N)
    throw FormatError("dataset arrays disagree on length");
  if (next_obs.cols() != obs.cols()) throw FormatError("dataset obs dims disagree");
  if (N > 0) {
    if (episode_starts.empty() || episode_starts.front() != 0)
      throw FormatError("dataset episode_starts must begin with 0");
    for (std::size_t i = 0; i < episode_starts.size(); ++i) {
      if (episode_starts[i] >= static_cast<std::uint64_t>(N))
        throw FormatError("dataset episode_start index out of range");
      if (i > 0 && episode_starts[i] <= episode_starts[i - 1])
        throw FormatError("dataset episode_starts must be strictly increasing");
    }
  }
  for (std::int64_t i = 0; i < N; ++i)
    if (terminal[static_cast<std::size_t>(i)] && timeout[static_cast<std::size_t>(i)])
      throw FormatError("dataset row flags terminal and timeout simultaneously");
}

Dataset collect(Env& env,
                const std::vector<std::pair<ScriptedPolicy*, double>>& mixture,
                std::int64_t n_transitions, Rng& rng) {
  if (mixture.empty()) throw ConfigError("collect: empty policy mixture");
  if (n_transitions <= 0) throw ConfigError("collect: n_transitions must be positive");
  double total = 0.0;
  for (const auto& [p, w] : mixture) {
    if (!p) throw ConfigError("collect: null policy in mixture");
    if (w <= 0.0) throw ConfigError("collect: mixture weights must be positive");
    total += w;
  }

  const int obs_dim = env.spec().obs_dim;
  const int act_dim = env.spec().act_dim;
  std::vector<Vec> obs_rows, act_rows, next_rows;
  std::vector<double> rewards;
  std::vector<std::uint8_t> terminals, timeouts;
  std::vector<std::uint64_t> starts;

  while (static_cast<std::int64_t>(obs_rows.size()) < n_transitions) {
    // Pick the episode's policy from the mixture.
    double u = rng.uniform() * total;
    ScriptedPolicy* policy = mixture.back().first;
    for (const auto& [p, w] : mixture) {
      if (u < w) {
        policy = p;
        break;
      }
      u -= w;
    }
    starts.push_back(static_cast<std::uint64_t>(obs_rows.size()));
    Vec o = env.reset(rng);
    while (true) {
      const Vec a = policy->act(o, rng);
      const StepResult r = env.step(a, rng);
      obs_rows.push_back(o);
      act_rows.push_back(a);
      rewards.push_back(r.reward);
      next_rows.push_back(r.next_obs);
      terminals.push_back(r.terminal ? 1 : 0);
      timeouts.push_back(r.timeout ? 1 : 0);
      o = r.next_obs;
      if (r.terminal || r.timeout) break;
    }
  }

  const std::int64_t N = static_cast<std::int64_t>(obs_rows.size());
  Dataset d;
  d.obs = Mat(N, obs_dim);
  d.act = Mat(N, act_dim);
  d.next_obs = Mat(N, obs_dim);
  d.reward = Vec(N);
  for (std::int64_t i = 0; i < N; ++i) {
    d.obs.row(i) = obs_rows[static_cast<std::size_t>(i)].transpose();
    d.act.row(i) = act_rows[static_cast<std::size_t>(i)].transpose();
    d.next_obs.row(i) = next_rows[static_cast<std::size_t>(i)].transpose();
    d.reward(i) = rewards[static_cast<std::size_t>(i)];
  }
  d.terminal = std::move(terminals);
  d.timeout = std::move(timeouts);
  d.episode_starts = std::move(starts);
  d.check();
  return d;
}

void save_dataset(const Dataset& d, const std::string& path) {
  d.check();
  BinWriter w(path);
  w.magic("UO4D");
  w.u32(1);
  w.u64(static_cast<std::uint64_t>(d.n()));
  w.u32(static_cast<std::uint32_t>(d.obs.cols()));
  w.u32(static_cast<std::uint32_t>(d.act.cols()));
  auto write_mat = [&w](const Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) w.f32(m(i, j));
  };
  write_mat(d.obs);
  write_mat(d.act);
  for (Eigen::Index i = 0; i < d.reward.size(); ++i) w.f32(d.reward(i));
  write_mat(d.next_obs);
  for (auto b : d.terminal) w.u8(b);
  for (auto b : d.timeout) w.u8(b);
  w.u64(d.episode_starts.size());
  for (auto s : d.episode_starts) w.u64(s);
  w.close();
}

Dataset load_dataset(const std::string& path) {
  BinReader r(path);
  r.expect_magic("UO4D", "dataset");
  const std::uint32_t version = r.u32();
  if (version != 1)
    throw FormatError("unsupported dataset version " + std::to_string(version) +
                      " at offset 4 in " + path);
  const std::uint64_t n = r.u64();
  const std::uint32_t obs_dim = r.u32();
  const std::uint32_t act_dim = r.u32();
  Dataset d;
  const auto ni = static_cast<Eigen::Index>(n);
  d.obs = Mat(ni, obs_dim);
  d.act = Mat(ni, act_dim);
  d.reward = Vec(ni);
  d.next_obs = Mat(ni, obs_dim);
  auto read_mat = [&r](Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.f32();
  };
  read_mat(d.obs);
  read_mat(d.act);
  for (Eigen::Index i = 0; i < ni; ++i) d.reward(i) = r.f32();
  read_mat(d.next_obs);
  d.terminal.resize(n);
  for (auto& b : d.terminal) b = r.u8();
  d.timeout.resize(n);
  for (auto& b : d.timeout) b = r.u8();
  const std::uint64_t n_eps = r.u64();
  d.episode_starts.resize(n_eps);
  for (auto& s : d.episode_starts) s = r.u64();
  r.expect_eof("dataset");
  d.check();
  return d;
}

NormStats compute_norm_stats(const Dataset& d) {
  if (d.n() < 2) throw ConfigError("compute_norm_stats: need at least 2 rows");
  NormStats s;
  s.mean = d.obs.colwise().mean().transpose();
  Mat centered = d.obs.rowwise() - s.mean.transpose();
  // Population std (divide by N).
  s.std = (centered.array().square().colwise().mean()).sqrt().transpose().matrix();
  s.std = s.std.cwiseMax(1e-8);
  return s;
}

NormStats identity_stats(int dim) {
  NormStats s;
  s.mean = Vec::Zero(dim);
  s.std = Vec::Ones(dim);
  return s;
}

Vec normalize_obs(const NormStats& s, const Vec& obs) {
  if (obs.size() != s.mean.size()) throw ShapeError("normalize_obs: dim mismatch");
  return (obs - s.mean).cwiseQuotient(s.std);
}

Mat normalize_obs(const NormStats& s, const Mat& obs) {
  if (obs.cols() != s.mean.size()) throw ShapeError("normalize_obs: dim mismatch");
  return (obs.rowwise() - s.mean.transpose()).array().rowwise() /
         s.std.transpose().array();
}

Vec denormalize_obs(const NormStats& s, const Vec& obs) {
  return obs.cwiseProduct(s.std) + s.mean;
}

Mat denormalize_obs(const NormStats& s, const Mat& obs) {
  return (obs.array().rowwise() * s.std.transpose().array()).matrix().rowwise() +
         s.mean.transpose();
}

Mat initial_states(const Dataset& d) {
  Mat out(static_cast<Eigen::Index>(d.episode_starts.size()), d.obs.cols());
  for (std::size_t i = 0; i < d.episode_starts.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) =
        d.obs.row(static_cast<Eigen::Index>(d.episode_starts[i]));
  return out;
}

Vec episode_returns(const Dataset& d) {
  const std::int64_t k = d.n_episodes();
  Vec ret = Vec::Zero(k);
  for (std::int64_t e = 0; e < k; ++e) {
    const std::int64_t lo = static_cast<std::int64_t>(d.episode_starts[static_cast<std::size_t>(e)]);
    const std::int64_t hi = (e + 1 < k)
        ? static_cast<std::int64_t>(d.episode_starts[static_cast<std::size_t>(e + 1)])
        : d.n();
    for (std::int64_t i = lo; i < hi; ++i) ret(e) += d.reward(i);
  }
  return ret;
}

void save_norm_stats(const NormStats& s, const std::string& path) {
  BinWriter w(path);
  w.magic("UO4N");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(s.mean.size()));
  for (Eigen::Index i = 0; i < s.mean.size(); ++i) w.f64(s.mean(i));
  for (Eigen::Index i = 0; i < s.std.size(); ++i) w.f64(s.std(i));
  w.close();
}

NormStats load_norm_stats(const std::string& path) {
  BinReader r(path);
  r.expect_magic("UO4N", "norm-stats");
  const std::uint32_t version = r.u32();
  if (version != 1)
    throw FormatError("unsupported norm-stats version in " + path);
  const std::uint32_t dim = r.u32();
  NormStats s;
  s.mean = Vec(dim);
  s.std = Vec(dim);
  for (std::uint32_t i = 0; i < dim; ++i) s.mean(i) = r.f64();
  for (std::uint32_t i = 0; i < dim; ++i) s.std(i) = r.f64();
  r.expect_eof("norm-stats");
  return s;
}

}  // namespace o2o
