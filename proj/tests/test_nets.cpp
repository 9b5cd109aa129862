#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "diffrl/nets.hpp"
#include "diffrl/rng.hpp"

using namespace diffrl;

namespace {

// Scalar objective used by the finite-difference oracles:
// L(params, x) = sum_j <cotangent_j, net(x)_j>.
double fd_loss(const MlpSpec& spec, const Vector& params, const Matrix& x,
               const Matrix& cotangent) {
  return (mlp_forward(spec, params, x).array() * cotangent.array()).sum();
}

Vector fd_param_grad(const MlpSpec& spec, const Vector& params, const Matrix& x,
                     const Matrix& cotangent, double h) {
  Vector g(params.size());
  for (int i = 0; i < params.size(); ++i) {
    Vector p = params, q = params;
    p[i] += h;
    q[i] -= h;
    g[i] = (fd_loss(spec, p, x, cotangent) - fd_loss(spec, q, x, cotangent)) /
           (2.0 * h);
  }
  return g;
}

Matrix fd_input_grad(const MlpSpec& spec, const Vector& params, const Matrix& x,
                     const Matrix& cotangent, double h) {
  Matrix g(x.rows(), x.cols());
  for (int j = 0; j < x.cols(); ++j) {
    for (int i = 0; i < x.rows(); ++i) {
      Matrix p = x, q = x;
      p(i, j) += h;
      q(i, j) -= h;
      g(i, j) = (fd_loss(spec, params, p, cotangent) -
                 fd_loss(spec, params, q, cotangent)) /
                (2.0 * h);
    }
  }
  return g;
}

// Textbook Adam with bias correction, kept independent of the library code.
struct RefAdam {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  long t = 0;
  Vector m, v;

  explicit RefAdam(int n, double lr_) : lr(lr_), m(Vector::Zero(n)), v(Vector::Zero(n)) {}

  void step(Vector& params, const Vector& grad, int direction) {
    ++t;
    for (int i = 0; i < params.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * grad[i];
      v[i] = b2 * v[i] + (1 - b2) * grad[i] * grad[i];
      const double mhat = m[i] / (1 - std::pow(b1, t));
      const double vhat = v[i] / (1 - std::pow(b2, t));
      params[i] += direction * lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
};

}  // namespace

TEST_SUITE("nets") {

TEST_CASE("standard spec shape and parameter count") {
  MlpSpec spec = MlpSpec::standard(3, 2);
  CHECK(spec.layer_dims == std::vector<int>{3, 64, 64, 2});
  CHECK(spec.activations ==
        std::vector<Activation>{Activation::Tanh, Activation::ReLU,
                                Activation::Identity});
  CHECK(spec.input_dim() == 3);
  CHECK(spec.output_dim() == 2);
  CHECK(spec.layers() == 3);
  CHECK(spec.param_count() == (3 + 1) * 64 + (64 + 1) * 64 + (64 + 1) * 2);

  MlpSpec small = MlpSpec::standard(2, 1, {5});
  CHECK(small.layer_dims == std::vector<int>{2, 5, 1});
  CHECK(small.activations ==
        std::vector<Activation>{Activation::Tanh, Activation::Identity});
  CHECK(small.param_count() == (2 + 1) * 5 + (5 + 1) * 1);
}

TEST_CASE("spec validation rejects malformed shapes") {
  MlpSpec spec;
  spec.layer_dims = {3};
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.layer_dims = {3, 0};
  spec.activations = {Activation::Identity};
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.layer_dims = {3, 4, 2};
  spec.activations = {Activation::Identity};
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("initialization bounds weights and zeroes biases") {
  MlpSpec spec = MlpSpec::standard(3, 2, {8});
  RngStream rng(101);
  Vector params = init_params(spec, rng);
  CHECK(params.size() == spec.param_count());

  // Layer blocks: weights (in*out values) then biases (out values).
  int offset = 0;
  for (int l = 0; l < spec.layers(); ++l) {
    const int in = spec.layer_dims[static_cast<size_t>(l)];
    const int out = spec.layer_dims[static_cast<size_t>(l) + 1];
    const double bound = std::sqrt(6.0 / (in + out));
    double max_abs = 0.0;
    for (int i = 0; i < in * out; ++i)
      max_abs = std::max(max_abs, std::abs(params[offset + i]));
    CHECK(max_abs <= bound);
    CHECK(max_abs > 0.3 * bound);  // not degenerate
    for (int i = 0; i < out; ++i) CHECK(params[offset + in * out + i] == 0.0);
    offset += (in + 1) * out;
  }

  RngStream rng2(101);
  CHECK(init_params(spec, rng2) == params);
  RngStream rng3(102);
  CHECK(init_params(spec, rng3) != params);
}

TEST_CASE("forward computes a hand-checked linear layer") {
  MlpSpec spec;
  spec.layer_dims = {2, 2};
  spec.activations = {Activation::Identity};
  // Column-major weight storage: w(i,j) = params[j*out + i], then biases.
  Vector params(6);
  params << 1.0, 3.0, 2.0, 4.0, 5.0, 6.0;  // w = [[1,2],[3,4]], b = (5,6)
  Matrix x(2, 1);
  x << 1.0, 1.0;
  Matrix y = mlp_forward(spec, params, x);
  CHECK(y(0, 0) == doctest::Approx(8.0));
  CHECK(y(1, 0) == doctest::Approx(13.0));
}

TEST_CASE("forward applies tanh and relu where specified") {
  MlpSpec spec;
  spec.layer_dims = {1, 1};
  spec.activations = {Activation::Tanh};
  Vector params(2);
  params << 2.0, 0.5;
  Matrix x(1, 1);
  x << 1.0;
  CHECK(mlp_forward(spec, params, x)(0, 0) == doctest::Approx(std::tanh(2.5)));

  spec.activations = {Activation::ReLU};
  params << 1.0, -3.0;
  CHECK(mlp_forward(spec, params, x)(0, 0) == 0.0);
  params << 1.0, 3.0;
  CHECK(mlp_forward(spec, params, x)(0, 0) == doctest::Approx(4.0));
}

TEST_CASE("batched forward equals per-column forward") {
  MlpSpec spec = MlpSpec::standard(3, 2, {6, 5});
  RngStream rng(7);
  Vector params = init_params(spec, rng);
  Matrix x = rng.normal_matrix(3, 9);
  Matrix batched = mlp_forward(spec, params, x);
  for (int j = 0; j < x.cols(); ++j) {
    Matrix single = mlp_forward(spec, params, x.col(j));
    CHECK((batched.col(j) - single.col(0)).norm() < 1e-14);
  }
}

TEST_CASE("forward rejects mismatched params and inputs") {
  MlpSpec spec = MlpSpec::standard(3, 2, {4});
  Vector bad = Vector::Zero(spec.param_count() + 1);
  Matrix x = Matrix::Zero(3, 1);
  CHECK_THROWS_AS(mlp_forward(spec, bad, x), std::invalid_argument);
  Vector good = Vector::Zero(spec.param_count());
  Matrix badx = Matrix::Zero(4, 1);
  CHECK_THROWS_AS(mlp_forward(spec, good, badx), std::invalid_argument);
}

TEST_CASE("smooth-net gradients match finite differences tightly") {
  // All-tanh network: no kinks, so central differences are accurate.
  MlpSpec spec;
  spec.layer_dims = {3, 5, 4, 2};
  spec.activations = {Activation::Tanh, Activation::Tanh, Activation::Identity};
  RngStream rng(911);
  Vector params = init_params(spec, rng);
  Matrix x = rng.normal_matrix(3, 4);
  Matrix cotangent = rng.normal_matrix(2, 4);

  ForwardTape tape;
  mlp_forward(spec, params, x, &tape);
  MlpGradients grads = mlp_backward(spec, params, tape, cotangent);

  Vector fd_p = fd_param_grad(spec, params, x, cotangent, 1e-6);
  Matrix fd_x = fd_input_grad(spec, params, x, cotangent, 1e-6);
  CHECK((grads.param_grad - fd_p).norm() < 1e-7 * (1.0 + fd_p.norm()));
  CHECK((grads.input_grad - fd_x).norm() < 1e-7 * (1.0 + fd_x.norm()));
}

TEST_CASE("standard-net gradients match finite differences") {
  MlpSpec spec = MlpSpec::standard(4, 3, {8, 8});
  RngStream rng(313);
  Vector params = init_params(spec, rng);
  Matrix x = rng.normal_matrix(4, 5);
  Matrix cotangent = rng.normal_matrix(3, 5);

  ForwardTape tape;
  mlp_forward(spec, params, x, &tape);
  MlpGradients grads = mlp_backward(spec, params, tape, cotangent);

  Vector fd_p = fd_param_grad(spec, params, x, cotangent, 1e-6);
  Matrix fd_x = fd_input_grad(spec, params, x, cotangent, 1e-6);
  CHECK((grads.param_grad - fd_p).norm() < 1e-4 * (1.0 + fd_p.norm()));
  CHECK((grads.input_grad - fd_x).norm() < 1e-4 * (1.0 + fd_x.norm()));
}

TEST_CASE("batched backward equals the sum over columns") {
  MlpSpec spec = MlpSpec::standard(2, 2, {6});
  RngStream rng(17);
  Vector params = init_params(spec, rng);
  Matrix x = rng.normal_matrix(2, 7);
  Matrix cotangent = rng.normal_matrix(2, 7);

  ForwardTape tape;
  mlp_forward(spec, params, x, &tape);
  MlpGradients batched = mlp_backward(spec, params, tape, cotangent);

  Vector sum_p = Vector::Zero(params.size());
  Matrix per_x(2, 7);
  for (int j = 0; j < 7; ++j) {
    ForwardTape t1;
    mlp_forward(spec, params, x.col(j), &t1);
    MlpGradients g1 = mlp_backward(spec, params, t1, cotangent.col(j));
    sum_p += g1.param_grad;
    per_x.col(j) = g1.input_grad.col(0);
  }
  CHECK((batched.param_grad - sum_p).norm() < 1e-12 * (1.0 + sum_p.norm()));
  CHECK((batched.input_grad - per_x).norm() < 1e-12);
}

TEST_CASE("adam matches an independent reference implementation") {
  const int n = 11;
  RngStream rng(23);
  Vector params = rng.normal_vector(n);
  Vector ref_params = params;
  AdamState state = AdamState::create(n, 3e-2);
  RefAdam ref(n, 3e-2);
  for (int step = 0; step < 25; ++step) {
    Vector grad = rng.normal_vector(n);
    const int dir = step % 2 == 0 ? -1 : 1;
    adam_step(state, params, grad, dir);
    ref.step(ref_params, grad, dir);
    CHECK((params - ref_params).norm() < 1e-13 * (1.0 + ref_params.norm()));
  }
}

TEST_CASE("adam descends a quadratic and ascends its negation") {
  Vector p(1);
  p << 5.0;
  AdamState st = AdamState::create(1, 0.1);
  for (int i = 0; i < 500; ++i) {
    Vector grad(1);
    grad << 2.0 * p[0];  // d/dp p^2
    adam_step(st, p, grad, -1);
  }
  CHECK(std::abs(p[0]) < 1e-2);

  p << -4.0;
  AdamState st2 = AdamState::create(1, 0.1);
  for (int i = 0; i < 500; ++i) {
    Vector grad(1);
    grad << -2.0 * p[0];  // gradient of -p^2; ascent drives p to 0
    adam_step(st2, p, grad, 1);
  }
  CHECK(std::abs(p[0]) < 1e-2);

  Vector g(1);
  g << 1.0;
  CHECK_THROWS_AS(adam_step(st2, p, g, 0), std::invalid_argument);
}

TEST_CASE("activation names round-trip") {
  for (Activation a : {Activation::Tanh, Activation::ReLU, Activation::Identity})
    CHECK(activation_from_name(activation_name(a)) == a);
  CHECK_THROWS_AS(activation_from_name("swish"), std::invalid_argument);
}

}  // TEST_SUITE
