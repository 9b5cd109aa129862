#pragma once

#include <string>
#include <vector>

#include "diffrl/rng.hpp"
#include "diffrl/types.hpp"

namespace diffrl {

enum class Activation { Tanh, ReLU, Identity };

// Fully connected feed-forward net.  Parameters live in one flat vector so
// optimizer state and checkpoints stay trivial; layout per layer is the
// column-major weight matrix followed by the bias.
struct MlpSpec {
  std::vector<int> layer_dims;           // >= 2 entries, all positive
  std::vector<Activation> activations;   // one per layer

  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
  int layers() const { return static_cast<int>(activations.size()); }
  int param_count() const;
  void validate() const;

  // input -> Tanh(64) -> ReLU(64) -> linear output.
  static MlpSpec standard(int input_dim, int output_dim,
                          const std::vector<int>& hidden = {64, 64});

  bool operator==(const MlpSpec&) const = default;
};

// Xavier-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.
Vector init_params(const MlpSpec& spec, RngStream& rng);

// Per-column intermediates captured by forward for the backward pass.
struct ForwardTape {
  Matrix input;
  std::vector<Matrix> pre;   // pre-activation per layer
  std::vector<Matrix> post;  // post-activation per layer
};

// Batched forward: x is input_dim x n, result output_dim x n.
Matrix mlp_forward(const MlpSpec& spec, const Vector& params, const Matrix& x,
                   ForwardTape* tape = nullptr);

struct MlpGradients {
  Vector param_grad;
  Matrix input_grad;
};

// Exact reverse-mode gradients of sum_j <cotangent_j, output_j> with respect
// to parameters and inputs.
MlpGradients mlp_backward(const MlpSpec& spec, const Vector& params,
                          const ForwardTape& tape, const Matrix& cotangent);

// Adam with bias correction; direction +1 ascends, -1 descends.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  Vector m, v;

  static AdamState create(int param_count, double lr);
};

void adam_step(AdamState& state, Vector& params, const Vector& grad,
               int direction = -1);

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

}  // namespace diffrl
