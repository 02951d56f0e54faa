#pragma once

// Dense MLP with hand-derived reverse-mode gradients, flat-parameter views
// for the optimizer and finite-difference checks, orthogonal initialization,
// and the Adam optimizer. No autodiff tape: each loss in the repo composes
// mlp_backward with its own closed-form output gradient.

#include "o2o/common.hpp"

#include <functional>

namespace o2o {

enum class Activation { Identity, Tanh, Relu };

struct Mlp {
  std::vector<int> layer_sizes;          // [in, h1, ..., out]
  std::vector<Mat> weights;              // weights[l]: sizes[l+1] x sizes[l]
  std::vector<Vec> biases;               // biases[l]: sizes[l+1]
  Activation hidden_activation = Activation::Tanh;
  Activation output_activation = Activation::Identity;

  int n_layers() const { return static_cast<int>(weights.size()); }
  int in_dim() const { return layer_sizes.front(); }
  int out_dim() const { return layer_sizes.back(); }
  std::int64_t n_params() const;

  void check_shapes() const;  // throws ShapeError on inconsistency
};

Mlp make_mlp(const std::vector<int>& layer_sizes,
             Activation hidden = Activation::Tanh,
             Activation output = Activation::Identity);

// Orthogonal init (Householder QR of a Gaussian draw, sign-corrected so the
// factor is unique, scaled by gain). Hidden layers use gain sqrt(2); policy
// output layers typically use a small gain (see policy module). Biases zero.
Mat orthogonal_init(Eigen::Index rows, Eigen::Index cols, double gain, Rng& rng);
void init_mlp(Mlp& mlp, Rng& rng, double hidden_gain, double output_gain);

// Forward cache: layer inputs needed by backward. inputs[0] is the batch X;
// inputs[l] is the post-activation output of layer l-1.
struct MlpCache {
  std::vector<Mat> inputs;      // n_layers+1 entries
  std::vector<Mat> preacts;     // n_layers entries (pre-activation Z_l)
};

// Batched forward: X is batch x in_dim; returns batch x out_dim.
Mat mlp_forward(const Mlp& mlp, const Mat& X);
Mat mlp_forward(const Mlp& mlp, const Mat& X, MlpCache& cache);

// Gradients, same shapes as parameters.
struct MlpGrads {
  std::vector<Mat> d_weights;
  std::vector<Vec> d_biases;
  void setZero();
};
MlpGrads make_grads(const Mlp& mlp);

// Reverse pass: d_out is batch x out_dim (dL/dY). Accumulates parameter
// gradients into `grads` (+=) and returns dL/dX (batch x in_dim).
Mat mlp_backward(const Mlp& mlp, const MlpCache& cache, const Mat& d_out,
                 MlpGrads& grads);

// Flat-parameter plumbing (layer order, each weight row-major, then bias).
Vec flatten(const Mlp& mlp);
void unflatten(Mlp& mlp, const Vec& theta);
Vec flatten_grads(const Mlp& mlp, const MlpGrads& grads);

// ---------------------------------------------------------------------------
// Adam on a flat parameter vector. Standard bias-corrected update.
// ---------------------------------------------------------------------------
struct Adam {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Vec m, v;
  std::int64_t step_count = 0;

  void init(Eigen::Index n) {
    m = Vec::Zero(n);
    v = Vec::Zero(n);
    step_count = 0;
  }
  bool initialized() const { return m.size() > 0; }

  // lr_now overrides the stored lr (decay schedules); throws NumericError on
  // non-finite gradients, naming the first offending index.
  void step(Vec& theta, const Vec& grad, double lr_now);
  void step(Vec& theta, const Vec& grad) { step(theta, grad, lr); }
};

// Linear decay: initial * (1 - fraction_done), fraction_done in [0, 1].
inline double decay_schedule(double initial, double fraction_done) {
  if (fraction_done < 0.0 || fraction_done > 1.0)
    throw ConfigError("decay_schedule: fraction_done outside [0,1]");
  return initial * (1.0 - fraction_done);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check (central differences).
// ---------------------------------------------------------------------------
struct GradCheckReport {
  double max_relative_error = 0.0;
  Eigen::Index worst_parameter_index = -1;
  double tolerance = 1e-4;
  bool pass() const { return max_relative_error < tolerance; }
};

// f must be deterministic. Compares analytic_grad against central differences
// with step h; relative error per coordinate is |a-n| / max(|a|,|n|,1).
GradCheckReport finite_diff_gradcheck(const std::function<double(const Vec&)>& f,
                                      const Vec& theta, const Vec& analytic_grad,
                                      double h = 1e-5, double tolerance = 1e-4);

}  // namespace o2o
