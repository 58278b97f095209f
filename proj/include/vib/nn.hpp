#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "vib/numcore.hpp"

namespace vib::nn {

/// y = x W^T + b over a batch (one example per row). Gradient buffers are
/// accumulated by backward() and cleared by zero_grad().
struct AffineLayer {
  Matrix weight;  // out x in
  std::vector<double> bias;
  Matrix weight_grad;
  std::vector<double> bias_grad;

  AffineLayer() = default;
  AffineLayer(std::size_t in, std::size_t out);

  std::size_t in_dim() const noexcept { return weight.cols(); }
  std::size_t out_dim() const noexcept { return weight.rows(); }
  std::size_t num_params() const noexcept { return weight.size() + bias.size(); }

  Matrix forward(const Matrix& x) const;
  // dL/dx only; parameters and their gradients are untouched.
  Matrix backward_input(const Matrix& dy) const;
  void accumulate_grads(const Matrix& x, const Matrix& dy);
  Matrix backward(const Matrix& x, const Matrix& dy);
  void zero_grad();
};

struct MlpSpec {
  // Input width, hidden widths, head width. ReLU between layers, none after the head.
  std::vector<std::size_t> widths;
  void validate() const;
};

std::vector<AffineLayer> xavier_init(Rng& rng, const MlpSpec& spec);
void xavier_init(Rng& rng, AffineLayer& layer);

Matrix relu(const Matrix& x);
Matrix relu_backward(const Matrix& x, const Matrix& dy);

double softplus_biased(double x, double bias);
double sigmoid(double x);

std::vector<double> log_softmax(std::span<const double> logits);
std::vector<double> softmax(std::span<const double> logits);
double entropy(std::span<const double> p);

struct XentResult {
  double loss = 0.0;
  std::vector<double> grad;  // dloss/dlogits
};
XentResult softmax_xent(std::span<const double> logits, std::size_t label);

struct DropoutResult {
  Matrix y;
  Matrix mask;  // 0 or 1/(1-rate); empty in inference mode
};
void validate_dropout_rate(double rate);
DropoutResult dropout(const Matrix& x, double rate, Rng& rng, bool training);
Matrix dropout_backward(const Matrix& mask, const Matrix& dy);

struct DropoutSpec {
  double rate = 0.0;
  Rng* rng = nullptr;  // masks drawn from here when training
  bool training = false;
};

/// Activations kept for the backward pass through an MLP.
struct MlpTrace {
  std::vector<Matrix> layer_inputs;   // input seen by each affine layer
  std::vector<Matrix> pre_activation; // output of each hidden affine layer
  std::vector<Matrix> masks;          // dropout masks per hidden layer (may be empty)
  Matrix output;
};

MlpTrace mlp_forward(std::span<const AffineLayer> layers, const Matrix& x, const DropoutSpec& drop = {});
// Accumulates parameter gradients; returns dL/dx only when input_grad is set.
Matrix mlp_backward(std::span<AffineLayer> layers, const MlpTrace& trace, const Matrix& dout,
                    bool input_grad = false);
Matrix mlp_backward_input(std::span<const AffineLayer> layers, const MlpTrace& trace, const Matrix& dout);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t num_params = 0;
  double tolerance = 0.0;
  bool passed = false;
};

// Loss at theta; when grad is non-null it receives the analytic gradient.
using LossWithGrad = std::function<double(std::span<const double> theta, std::vector<double>* grad)>;

/// Relative error per coordinate is |g - g_fd| / max(1, |g_fd|).
GradCheckReport grad_check(const LossWithGrad& loss, std::span<const double> theta, double tolerance,
                           double h = 1e-5);

}  // namespace vib::nn
