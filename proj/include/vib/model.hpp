#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vib/encoder.hpp"
#include "vib/nn.hpp"
#include "vib/numcore.hpp"

namespace vib {

/// Encoder MLP -> (Gaussian head | deterministic K-vector) -> decoder.
/// The decoder predicts class logits, or reconstructs the input when
/// `reconstruct` is set (unsupervised objective).
struct ModelSpec {
  std::size_t input_dim = 784;
  std::vector<std::size_t> hidden{1024, 1024};
  std::size_t K = 256;
  bool stochastic = true;
  CovarianceMode mode = CovarianceMode::diag;
  double sigma_bias = -5.0;
  double offdiag_scale = 1e-2;
  std::size_t classes = 10;
  bool reconstruct = false;
  std::vector<std::size_t> decoder_hidden;

  void validate() const;
  EncoderHeadSpec head() const { return {K, mode, sigma_bias, offdiag_scale}; }
  std::size_t encoder_out() const { return stochastic ? head().raw_width() : K; }
  std::size_t decoder_out() const { return reconstruct ? input_dim : classes; }
  nn::MlpSpec encoder_mlp() const;
  nn::MlpSpec decoder_mlp() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct Model {
  ModelSpec spec;
  std::vector<nn::AffineLayer> encoder;
  std::vector<nn::AffineLayer> decoder;

  static Model init(const ModelSpec& spec, Rng& rng);

  std::size_t num_params() const;
  std::vector<double> params() const;
  void set_params(std::span<const double> flat);
  std::vector<double> grads() const;
  void zero_grad();
};

/// Encoder pass over a batch. `codes` is filled for stochastic models only.
struct EncodedBatch {
  nn::MlpTrace trace;
  std::vector<GaussianCode> codes;

  std::span<const double> raw(std::size_t i) const { return trace.output.row(i); }
};

EncodedBatch encode_batch(const Model& model, const Matrix& x, const nn::DropoutSpec& drop = {});

/// Bottleneck means (first K raw outputs), one row per example.
Matrix code_means(const Model& model, const EncodedBatch& enc);

/// z for every example under one noise draw (rows of eps are per-example K-vectors).
Matrix sample_codes(const EncodedBatch& enc, const Matrix& eps);

/// Class probabilities averaged over the noise draws (mean mode when `eps` is empty
/// or the model is deterministic).
Matrix predict_proba(const Model& model, const Matrix& x, const std::vector<Matrix>& eps);

}  // namespace vib
