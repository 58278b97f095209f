#pragma once

#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "vib/encoder.hpp"
#include "vib/model.hpp"
#include "vib/numcore.hpp"

namespace vib {

inline constexpr double kLn2 = std::numbers::ln2;

struct VibConfig {
  double beta = 1e-3;
  std::size_t K = 256;
  std::size_t train_samples = 1;
  std::size_t eval_samples = 12;
  CovarianceMode mode = CovarianceMode::diag;
  double sigma_bias = -5.0;

  void validate() const;
  void check_model(const ModelSpec& spec) const;
};

/// total = xent_term + beta * kl_term. `grads` follows Model::params() order.
struct LossBreakdown {
  double total = 0.0;
  double xent_term = 0.0;
  double kl_term = 0.0;
  std::vector<double> grads;
};

using Labels = std::span<const int>;

/// `samples` matrices of shape batch x K, drawn row-major from `rng`.
std::vector<Matrix> draw_noise(Rng& rng, std::size_t samples, std::size_t batch, std::size_t K);

/// Noise keyed by example index: row i of every matrix comes from base.split(first + i),
/// so draws do not depend on how a split is chunked.
std::vector<Matrix> indexed_noise(const Rng& base, std::size_t first, std::size_t rows, std::size_t K,
                                  std::size_t samples);

// -- supervised objectives --------------------------------------------------

/// Mean over the batch of E_eps[-log q(y|z)] + beta * KL[p(z|x) || r(z)], with the
/// expectation replaced by the average over the provided noise draws.
LossBreakdown vib_loss(Model& model, const Matrix& x, Labels y, double beta, const std::vector<Matrix>& eps);
LossBreakdown vib_loss(Model& model, const Matrix& x, Labels y, const VibConfig& cfg, Rng& rng);

/// Deterministic-limit objective J_IB0 (no KL term), evaluated without gradients.
double ib0_objective(const Model& model, const Matrix& x, Labels y, const std::vector<Matrix>& eps);

/// Cross-entropy through the mean head (z = mu). KL is reported as zero.
LossBreakdown deterministic_loss(Model& model, const Matrix& x, Labels y);

/// Deterministic loss with inverted dropout on every hidden encoder activation.
LossBreakdown dropout_loss(Model& model, const Matrix& x, Labels y, double rate, Rng& rng);

/// Cross-entropy minus beta_cp times the predictive entropy.
LossBreakdown confidence_penalty_loss(Model& model, const Matrix& x, Labels y, double beta_cp);

std::vector<double> label_smooth(std::span<const double> onehot, double eps);
LossBreakdown label_smoothing_loss(Model& model, const Matrix& x, Labels y, double eps);

// -- unsupervised -----------------------------------------------------------

/// -log N(x | xhat, I), summed over input dimensions.
double reconstruction_nll(std::span<const double> x, std::span<const double> xhat);

/// Mean over the batch of -log q(x|z) + beta * KL, one reparameterized sample.
LossBreakdown unsup_vib_loss(Model& model, const Matrix& x, double beta, const Matrix& eps);
LossBreakdown unsup_vib_loss(Model& model, const Matrix& x, double beta, Rng& rng);

// -- information estimates (bits) --------------------------------------------

double mi_zx_upper(const Model& model, const Matrix& x);
double label_entropy_bits(Labels y, std::size_t classes);

struct MiZyEstimate {
  double bits = 0.0;
  double label_entropy_bits = 0.0;
  double xent_bits = 0.0;
};
/// H(Y) - E[-log q(y|z)], with the expectation over `samples` draws per example.
MiZyEstimate mi_zy_lower(const Model& model, const Matrix& x, Labels y, std::size_t samples, const Rng& noise);

// -- quadratic bound ---------------------------------------------------------

/// Second-order Taylor lower estimate of E[softmax(W z)] for z ~ code.
std::vector<double> expected_softmax_tse_lower(const Matrix& W, const GaussianCode& code);

}  // namespace vib
