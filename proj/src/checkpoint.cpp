#include "o2o/checkpoint.hpp"

#include "o2o/binio.hpp"

namespace o2o {

namespace {

constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxLayers = 64;
constexpr std::uint32_t kMaxWidth = 1u << 20;

void write_mlp(BinWriter& w, const Mlp& m) {
  w.u32(static_cast<std::uint32_t>(m.layer_sizes.size()));
  for (const int s : m.layer_sizes) w.u32(static_cast<std::uint32_t>(s));
  const Vec theta = flatten(m);
  for (Eigen::Index i = 0; i < theta.size(); ++i) w.f32(theta(i));
}

Mlp read_mlp(BinReader& r, Activation hidden, Activation output) {
  const std::uint32_t n_sizes = r.u32();
  if (n_sizes < 2 || n_sizes > kMaxLayers)
    throw FormatError("checkpoint: implausible layer count at offset " +
                      std::to_string(r.offset()));
  std::vector<int> sizes(n_sizes);
  for (auto& s : sizes) {
    const std::uint32_t v = r.u32();
    if (v < 1 || v > kMaxWidth)
      throw FormatError("checkpoint: implausible layer width at offset " +
                        std::to_string(r.offset()));
    s = static_cast<int>(v);
  }
  Mlp m = make_mlp(sizes, hidden, output);
  Vec theta(m.n_params());
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = r.f32();
  unflatten(m, theta);
  return m;
}

}  // namespace

void save_policy(const GaussianPolicy& p, const std::string& path) {
  BinWriter w(path);
  w.magic("UO4P");
  w.u32(kVersion);
  write_mlp(w, p.mean_net);
  for (Eigen::Index i = 0; i < p.log_std.size(); ++i) w.f32(p.log_std(i));
  w.close();
}

GaussianPolicy load_policy(const std::string& path, const Vec& act_low,
                           const Vec& act_high) {
  BinReader r(path);
  r.expect_magic("UO4P", "policy");
  const std::uint32_t ver = r.u32();
  if (ver != kVersion)
    throw FormatError("policy checkpoint: unsupported version " +
                      std::to_string(ver) + " in " + path);
  GaussianPolicy p;
  p.mean_net = read_mlp(r, Activation::Tanh, Activation::Tanh);
  const int act_dim = p.mean_net.out_dim();
  if (act_low.size() != act_dim || act_high.size() != act_dim)
    throw ConfigError("load_policy: action bounds do not match checkpoint");
  p.log_std.resize(act_dim);
  for (int i = 0; i < act_dim; ++i) p.log_std(i) = r.f32();
  r.expect_eof("policy checkpoint");
  p.act_low = act_low;
  p.act_high = act_high;
  p.clamp_log_std();
  return p;
}

void save_value_heads(const ValueHeads& h, const std::string& path) {
  BinWriter w(path);
  w.magic("UO4V");
  w.u32(kVersion);
  write_mlp(w, h.q_net);
  write_mlp(w, h.v_net);
  const Vec target = flatten(h.target_q);
  for (Eigen::Index i = 0; i < target.size(); ++i) w.f32(target(i));
  w.f64(h.tau);
  w.f64(h.polyak_rate);
  w.close();
}

ValueHeads load_value_heads(const std::string& path) {
  BinReader r(path);
  r.expect_magic("UO4V", "value-heads");
  const std::uint32_t ver = r.u32();
  if (ver != kVersion)
    throw FormatError("value checkpoint: unsupported version " +
                      std::to_string(ver) + " in " + path);
  ValueHeads h;
  h.q_net = read_mlp(r, Activation::Tanh, Activation::Identity);
  h.v_net = read_mlp(r, Activation::Tanh, Activation::Identity);
  h.target_q = h.q_net;
  Vec target(h.target_q.n_params());
  for (Eigen::Index i = 0; i < target.size(); ++i) target(i) = r.f32();
  unflatten(h.target_q, target);
  h.tau = r.f64();
  h.polyak_rate = r.f64();
  r.expect_eof("value checkpoint");
  return h;
}

void save_dynamics(const GaussianDynamics& d, const std::string& path) {
  BinWriter w(path);
  w.magic("UO4T");
  w.u32(kVersion);
  write_mlp(w, d.net);
  w.close();
}

GaussianDynamics load_dynamics(const std::string& path) {
  BinReader r(path);
  r.expect_magic("UO4T", "dynamics");
  const std::uint32_t ver = r.u32();
  if (ver != kVersion)
    throw FormatError("dynamics checkpoint: unsupported version " +
                      std::to_string(ver) + " in " + path);
  GaussianDynamics d;
  d.net = read_mlp(r, Activation::Tanh, Activation::Identity);
  if (d.net.out_dim() % 2 != 0)
    throw FormatError("dynamics checkpoint: output width must be even in " + path);
  r.expect_eof("dynamics checkpoint");
  return d;
}

}  // namespace o2o
