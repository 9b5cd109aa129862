#include "diffrl/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace diffrl {

int MlpSpec::param_count() const {
  int n = 0;
  for (size_t l = 0; l + 1 < layer_dims.size(); ++l)
    n += (layer_dims[l] + 1) * layer_dims[l + 1];
  return n;
}

void MlpSpec::validate() const {
  if (layer_dims.size() < 2)
    throw std::invalid_argument("mlp: need at least input and output dims");
  for (int d : layer_dims)
    if (d <= 0) throw std::invalid_argument("mlp: layer dims must be positive");
  if (activations.size() + 1 != layer_dims.size())
    throw std::invalid_argument("mlp: need one activation per layer");
}

MlpSpec MlpSpec::standard(int input_dim, int output_dim,
                          const std::vector<int>& hidden) {
  MlpSpec spec;
  spec.layer_dims.push_back(input_dim);
  for (int h : hidden) spec.layer_dims.push_back(h);
  spec.layer_dims.push_back(output_dim);
  // Tanh on the first hidden layer, ReLU after, linear output.
  for (size_t i = 0; i < hidden.size(); ++i)
    spec.activations.push_back(i == 0 ? Activation::Tanh : Activation::ReLU);
  spec.activations.push_back(Activation::Identity);
  spec.validate();
  return spec;
}

Vector init_params(const MlpSpec& spec, RngStream& rng) {
  spec.validate();
  Vector params = Vector::Zero(spec.param_count());
  int offset = 0;
  for (int l = 0; l < spec.layers(); ++l) {
    const int in = spec.layer_dims[l];
    const int out = spec.layer_dims[l + 1];
    const double bound = std::sqrt(6.0 / (in + out));
    for (int i = 0; i < in * out; ++i)
      params[offset + i] = bound * (2.0 * rng.uniform() - 1.0);
    offset += in * out + out;  // biases stay zero
  }
  return params;
}

namespace {

void apply_activation(Activation act, const Matrix& pre, Matrix& post) {
  switch (act) {
    case Activation::Tanh:
      post = pre.array().tanh();
      return;
    case Activation::ReLU:
      post = pre.cwiseMax(0.0);
      return;
    case Activation::Identity:
      post = pre;
      return;
  }
}

// dact/dpre as a coefficient matrix applied elementwise to the cotangent.
Matrix activation_jacobian(Activation act, const Matrix& pre,
                           const Matrix& post) {
  switch (act) {
    case Activation::Tanh:
      return 1.0 - post.array().square();
    case Activation::ReLU:
      return (pre.array() > 0.0).cast<double>();
    case Activation::Identity:
      return Matrix::Ones(pre.rows(), pre.cols());
  }
  return Matrix();
}

}  // namespace

Matrix mlp_forward(const MlpSpec& spec, const Vector& params, const Matrix& x,
                   ForwardTape* tape) {
  if (params.size() != spec.param_count())
    throw std::invalid_argument("mlp: parameter vector size mismatch");
  if (x.rows() != spec.input_dim())
    throw std::invalid_argument("mlp: input dimension mismatch");
  if (tape) {
    tape->input = x;
    tape->pre.clear();
    tape->post.clear();
  }
  Matrix h = x;
  int offset = 0;
  for (int l = 0; l < spec.layers(); ++l) {
    const int in = spec.layer_dims[l];
    const int out = spec.layer_dims[l + 1];
    Eigen::Map<const Matrix> w(params.data() + offset, out, in);
    Eigen::Map<const Vector> b(params.data() + offset + in * out, out);
    offset += (in + 1) * out;
    Matrix pre = (w * h).colwise() + b;
    Matrix post;
    apply_activation(spec.activations[l], pre, post);
    if (tape) {
      tape->pre.push_back(pre);
      tape->post.push_back(post);
    }
    h = std::move(post);
  }
  return h;
}

MlpGradients mlp_backward(const MlpSpec& spec, const Vector& params,
                          const ForwardTape& tape, const Matrix& cotangent) {
  if (static_cast<int>(tape.pre.size()) != spec.layers())
    throw std::invalid_argument("mlp: tape does not match spec");
  if (cotangent.rows() != spec.output_dim() ||
      cotangent.cols() != tape.input.cols())
    throw std::invalid_argument("mlp: cotangent shape mismatch");

  MlpGradients grads;
  grads.param_grad = Vector::Zero(params.size());

  // Offsets of each layer's parameter block.
  std::vector<int> offsets(spec.layers());
  int offset = 0;
  for (int l = 0; l < spec.layers(); ++l) {
    offsets[l] = offset;
    offset += (spec.layer_dims[l] + 1) * spec.layer_dims[l + 1];
  }

  Matrix delta = cotangent;
  for (int l = spec.layers() - 1; l >= 0; --l) {
    const int in = spec.layer_dims[l];
    const int out = spec.layer_dims[l + 1];
    delta = delta.cwiseProduct(
        activation_jacobian(spec.activations[l], tape.pre[l], tape.post[l]));
    const Matrix& below = l > 0 ? tape.post[l - 1] : tape.input;
    Eigen::Map<Matrix> wg(grads.param_grad.data() + offsets[l], out, in);
    Eigen::Map<Vector> bg(grads.param_grad.data() + offsets[l] + in * out, out);
    wg = delta * below.transpose();
    bg = delta.rowwise().sum();
    Eigen::Map<const Matrix> w(params.data() + offsets[l], out, in);
    delta = (w.transpose() * delta).eval();
  }
  grads.input_grad = std::move(delta);
  return grads;
}

AdamState AdamState::create(int param_count, double lr) {
  AdamState s;
  s.lr = lr;
  s.m = Vector::Zero(param_count);
  s.v = Vector::Zero(param_count);
  return s;
}

void adam_step(AdamState& state, Vector& params, const Vector& grad,
               int direction) {
  if (direction != 1 && direction != -1)
    throw std::invalid_argument("adam: direction must be +1 or -1");
  if (grad.size() != params.size() || state.m.size() != params.size())
    throw std::invalid_argument("adam: size mismatch");
  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(state.beta1, state.step);
  const double c2 = 1.0 - std::pow(state.beta2, state.step);
  const Vector mhat = state.m / c1;
  const Vector vhat = state.v / c2;
  params += direction * state.lr *
            (mhat.array() / (vhat.array().sqrt() + state.eps)).matrix();
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::ReLU: return "relu";
    case Activation::Identity: return "identity";
  }
  return "?";
}

Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::ReLU;
  if (name == "identity") return Activation::Identity;
  throw std::invalid_argument("mlp: unknown activation '" + name + "'");
}

}  // namespace diffrl
