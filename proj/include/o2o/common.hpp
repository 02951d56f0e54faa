#pragma once

// Core scalar/matrix types, error taxonomy, and the deterministic RNG used
// everywhere. All internal arithmetic is double precision; files store
// float32 payloads (see dataset/checkpoint modules).

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace o2o {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;  // row-major semantics: row = sample

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these to process exit codes:
//   ConfigError -> 2, FormatError -> 3, NumericError -> 4.
// ---------------------------------------------------------------------------
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in ") + what);
}

// ---------------------------------------------------------------------------
// Deterministic RNG.
//
// A master seed splits into independent named streams via a splitmix64-style
// mix of (root_seed, tag). split() is pure: it does not advance the parent,
// so stream addressing is stable — the same (seed, tag path) always denotes
// the same stream regardless of call order. Draw order within a stream is
// part of the determinism contract.
// ---------------------------------------------------------------------------
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : root_(seed), gen_(mix64(seed)) {}

  // Derive an independent stream; pure (parent state untouched).
  Rng split(std::uint64_t tag) const {
    return Rng(mix64(root_ ^ mix64(tag + 0x5851f42d4c957f2dULL)));
  }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1): 53 mantissa bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n). Desk-scale: modulo bias is negligible and determinism
  // is what matters, but use rejection anyway for exactness.
  std::int64_t uniform_int(std::int64_t n) {
    if (n <= 0) throw ConfigError("uniform_int: n must be positive");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t x = gen_();
    while (x >= limit) x = gen_();
    return static_cast<std::int64_t>(x % un);
  }

  // Standard normal via Box-Muller, cosine branch only: every draw consumes
  // exactly two uniforms, which keeps consumption patterns trivially
  // predictable across refactors.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  Vec normal_vec(int n) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = normal();
    return v;
  }

  // Row-major fill order (row 0 left-to-right, then row 1, ...).
  Mat normal_mat(Eigen::Index rows, Eigen::Index cols) {
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal();
    return m;
  }

  // Sample k distinct-with-replacement row indices (minibatch draw).
  std::vector<std::int64_t> batch_indices(std::int64_t n, int k) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(k));
    for (auto& i : idx) i = uniform_int(n);
    return idx;
  }

 private:
  std::uint64_t root_;
  std::mt19937_64 gen_;
};

// Named stream tags for the master-seed split tree (orchestrator contract:
// one master seed -> per-stage -> per-member/worker streams).
namespace streams {
constexpr std::uint64_t kCollect = 0x11;
constexpr std::uint64_t kBc = 0x22;
constexpr std::uint64_t kValues = 0x33;
constexpr std::uint64_t kDynamics = 0x44;
constexpr std::uint64_t kOffline = 0x55;
constexpr std::uint64_t kOpe = 0x66;
constexpr std::uint64_t kOnline = 0x77;
constexpr std::uint64_t kEval = 0x88;
constexpr std::uint64_t kInit = 0x99;
}  // namespace streams

// FNV-1a 64-bit, used for config content-addressing of stage outputs.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string to_hex(std::uint64_t v);

}  // namespace o2o
