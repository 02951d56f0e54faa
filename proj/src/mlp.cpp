#include "o2o/mlp.hpp"

namespace o2o {

namespace {

Mat apply_activation(const Mat& z, Activation act) {
  switch (act) {
    case Activation::Identity:
      return z;
    case Activation::Tanh:
      return z.array().tanh().matrix();
    case Activation::Relu:
      return z.cwiseMax(0.0);
  }
  throw ConfigError("unknown activation");
}

// dL/dZ given dL/dA and the pre-activation Z.
Mat activation_backward(const Mat& z, const Mat& d_act, Activation act) {
  switch (act) {
    case Activation::Identity:
      return d_act;
    case Activation::Tanh: {
      Mat t = z.array().tanh().matrix();
      return (d_act.array() * (1.0 - t.array().square())).matrix();
    }
    case Activation::Relu:
      return (d_act.array() * (z.array() > 0.0).cast<double>()).matrix();
  }
  throw ConfigError("unknown activation");
}

}  // namespace

std::int64_t Mlp::n_params() const {
  std::int64_t n = 0;
  for (int l = 0; l < n_layers(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

void Mlp::check_shapes() const {
  if (layer_sizes.size() < 2) throw ShapeError("mlp needs at least 2 layer sizes");
  if (weights.size() + 1 != layer_sizes.size() || biases.size() != weights.size())
    throw ShapeError("mlp layer count mismatch");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows() != layer_sizes[l + 1] || weights[l].cols() != layer_sizes[l])
      throw ShapeError("mlp weight shape inconsistent with layer_sizes");
    if (biases[l].size() != layer_sizes[l + 1])
      throw ShapeError("mlp bias shape inconsistent with layer_sizes");
  }
  for (const auto& w : weights)
    if (!w.allFinite()) throw NumericError("mlp weights contain non-finite values");
  for (const auto& b : biases)
    if (!b.allFinite()) throw NumericError("mlp biases contain non-finite values");
}

Mlp make_mlp(const std::vector<int>& layer_sizes, Activation hidden, Activation output) {
  if (layer_sizes.size() < 2) throw ShapeError("mlp needs at least 2 layer sizes");
  for (int s : layer_sizes)
    if (s <= 0) throw ShapeError("mlp layer sizes must be positive");
  Mlp mlp;
  mlp.layer_sizes = layer_sizes;
  mlp.hidden_activation = hidden;
  mlp.output_activation = output;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    mlp.weights.emplace_back(Mat::Zero(layer_sizes[l + 1], layer_sizes[l]));
    mlp.biases.emplace_back(Vec::Zero(layer_sizes[l + 1]));
  }
  return mlp;
}

Mat orthogonal_init(Eigen::Index rows, Eigen::Index cols, double gain, Rng& rng) {
  // QR of a Gaussian matrix; operate on the tall orientation, then transpose
  // back so the shorter side is orthonormal.
  const bool transpose = rows < cols;
  const Eigen::Index r = transpose ? cols : rows;
  const Eigen::Index c = transpose ? rows : cols;
  Mat a = rng.normal_mat(r, c);
  Eigen::HouseholderQR<Mat> qr(a);
  Mat q = qr.householderQ() * Mat::Identity(r, c);
  // Sign fix: make diag(R) positive so the factorization (and thus the
  // initialization) is unique for a given Gaussian draw.
  Mat r_mat = qr.matrixQR().topLeftCorner(c, c).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < c; ++j)
    if (r_mat(j, j) < 0.0) q.col(j) *= -1.0;
  if (transpose) return gain * q.transpose();
  return gain * q;
}

void init_mlp(Mlp& mlp, Rng& rng, double hidden_gain, double output_gain) {
  const int L = mlp.n_layers();
  for (int l = 0; l < L; ++l) {
    const double gain = (l == L - 1) ? output_gain : hidden_gain;
    mlp.weights[l] =
        orthogonal_init(mlp.weights[l].rows(), mlp.weights[l].cols(), gain, rng);
    mlp.biases[l].setZero();
  }
}

Mat mlp_forward(const Mlp& mlp, const Mat& X) {
  MlpCache cache;
  return mlp_forward(mlp, X, cache);
}

Mat mlp_forward(const Mlp& mlp, const Mat& X, MlpCache& cache) {
  if (X.cols() != mlp.in_dim()) throw ShapeError("mlp_forward: input dim mismatch");
  const int L = mlp.n_layers();
  cache.inputs.assign(static_cast<std::size_t>(L) + 1, Mat());
  cache.preacts.assign(static_cast<std::size_t>(L), Mat());
  cache.inputs[0] = X;
  Mat h = X;
  for (int l = 0; l < L; ++l) {
    Mat z = h * mlp.weights[l].transpose();
    z.rowwise() += mlp.biases[l].transpose();
    cache.preacts[l] = z;
    const Activation act =
        (l == L - 1) ? mlp.output_activation : mlp.hidden_activation;
    h = apply_activation(z, act);
    cache.inputs[l + 1] = h;
  }
  return h;
}

void MlpGrads::setZero() {
  for (auto& w : d_weights) w.setZero();
  for (auto& b : d_biases) b.setZero();
}

MlpGrads make_grads(const Mlp& mlp) {
  MlpGrads g;
  for (int l = 0; l < mlp.n_layers(); ++l) {
    g.d_weights.emplace_back(Mat::Zero(mlp.weights[l].rows(), mlp.weights[l].cols()));
    g.d_biases.emplace_back(Vec::Zero(mlp.biases[l].size()));
  }
  return g;
}

Mat mlp_backward(const Mlp& mlp, const MlpCache& cache, const Mat& d_out,
                 MlpGrads& grads) {
  const int L = mlp.n_layers();
  if (static_cast<int>(cache.preacts.size()) != L)
    throw ShapeError("mlp_backward: cache/layer mismatch");
  if (d_out.cols() != mlp.out_dim() || d_out.rows() != cache.inputs[0].rows())
    throw ShapeError("mlp_backward: upstream gradient shape mismatch");
  Mat d_act = d_out;
  for (int l = L - 1; l >= 0; --l) {
    const Activation act =
        (l == L - 1) ? mlp.output_activation : mlp.hidden_activation;
    Mat d_z = activation_backward(cache.preacts[l], d_act, act);
    grads.d_weights[l].noalias() += d_z.transpose() * cache.inputs[l];
    grads.d_biases[l].noalias() += d_z.colwise().sum().transpose();
    d_act.noalias() = d_z * mlp.weights[l];
  }
  return d_act;
}

Vec flatten(const Mlp& mlp) {
  Vec theta(mlp.n_params());
  Eigen::Index k = 0;
  for (int l = 0; l < mlp.n_layers(); ++l) {
    const Mat& w = mlp.weights[l];
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) theta(k++) = w(i, j);
    const Vec& b = mlp.biases[l];
    for (Eigen::Index i = 0; i < b.size(); ++i) theta(k++) = b(i);
  }
  return theta;
}

void unflatten(Mlp& mlp, const Vec& theta) {
  if (theta.size() != mlp.n_params()) throw ShapeError("unflatten: size mismatch");
  Eigen::Index k = 0;
  for (int l = 0; l < mlp.n_layers(); ++l) {
    Mat& w = mlp.weights[l];
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = theta(k++);
    Vec& b = mlp.biases[l];
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = theta(k++);
  }
}

Vec flatten_grads(const Mlp& mlp, const MlpGrads& grads) {
  Vec g(mlp.n_params());
  Eigen::Index k = 0;
  for (int l = 0; l < mlp.n_layers(); ++l) {
    const Mat& w = grads.d_weights[l];
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) g(k++) = w(i, j);
    const Vec& b = grads.d_biases[l];
    for (Eigen::Index i = 0; i < b.size(); ++i) g(k++) = b(i);
  }
  return g;
}

void Adam::step(Vec& theta, const Vec& grad, double lr_now) {
  if (!initialized()) init(theta.size());
  if (theta.size() != m.size() || grad.size() != m.size())
    throw ShapeError("adam_step: shape mismatch");
  for (Eigen::Index i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad(i)))
      throw NumericError("adam_step: non-finite gradient at index " +
                         std::to_string(static_cast<long long>(i)));
  }
  ++step_count;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad).eval();
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double m_hat = m(i) / bc1;
    const double v_hat = v(i) / bc2;
    theta(i) -= lr_now * m_hat / (std::sqrt(v_hat) + eps);
  }
}

GradCheckReport finite_diff_gradcheck(const std::function<double(const Vec&)>& f,
                                      const Vec& theta, const Vec& analytic_grad,
                                      double h, double tolerance) {
  if (theta.size() != analytic_grad.size())
    throw ShapeError("gradcheck: grad size mismatch");
  GradCheckReport report;
  report.tolerance = tolerance;
  Vec t = theta;
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    const double orig = t(i);
    t(i) = orig + h;
    const double fp = f(t);
    t(i) = orig - h;
    const double fm = f(t);
    t(i) = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double analytic = analytic_grad(i);
    const double denom = std::max({std::abs(numeric), std::abs(analytic), 1.0});
    const double rel = std::abs(numeric - analytic) / denom;
    if (rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_parameter_index = i;
    }
  }
  return report;
}

}  // namespace o2o
