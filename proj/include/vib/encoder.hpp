#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "vib/numcore.hpp"

namespace vib {

enum class CovarianceMode { diag, fullcov2d };

std::string_view to_string(CovarianceMode m);
CovarianceMode parse_covariance_mode(std::string_view s);

struct EncoderHeadSpec {
  std::size_t K = 2;
  CovarianceMode mode = CovarianceMode::diag;
  double sigma_bias = -5.0;
  double offdiag_scale = 1e-2;  // fullcov2d only

  void validate() const;
  /// Raw encoder outputs consumed by the head: 2K (diag) or 6 (fullcov2d).
  std::size_t raw_width() const;
};

/// Gaussian over the bottleneck. `scale` holds K standard deviations (diag)
/// or a row-major K x K lower-triangular Cholesky factor (fullcov2d).
struct GaussianCode {
  std::vector<double> mean;
  std::vector<double> scale;
  CovarianceMode mode = CovarianceMode::diag;

  std::size_t dim() const noexcept { return mean.size(); }
  Matrix cholesky() const;
  Matrix covariance() const;
  double log_det_covariance() const;
  bool valid() const;
};

GaussianCode encode_diag(std::span<const double> raw, const EncoderHeadSpec& spec);
GaussianCode encode_fullcov2d(std::span<const double> raw, const EncoderHeadSpec& spec);
GaussianCode encode(std::span<const double> raw, const EncoderHeadSpec& spec);

/// z = mu + sigma * eps (diag) or mu + L eps (fullcov).
std::vector<double> sample(const GaussianCode& code, std::span<const double> eps);

/// KL[N(mu, Sigma) || N(0, I)] in nats.
double kl_to_prior(const GaussianCode& code);

/// Log density of z under the code, and under the standard normal prior.
double log_density(const GaussianCode& code, std::span<const double> z);
double log_prior_density(std::span<const double> z);

/// Gradient with respect to a code's mean and scale entries.
struct CodeGrad {
  std::vector<double> mean;
  std::vector<double> scale;
  explicit CodeGrad(const GaussianCode& code) : mean(code.mean.size(), 0.0), scale(code.scale.size(), 0.0) {}
};

void accumulate_sample_grad(const GaussianCode& code, std::span<const double> eps, std::span<const double> dz,
                            CodeGrad& g);
void accumulate_kl_grad(const GaussianCode& code, double weight, CodeGrad& g);

/// Chains a code gradient back to the raw head outputs.
std::vector<double> head_raw_grad(std::span<const double> raw, const EncoderHeadSpec& spec, const CodeGrad& g);

}  // namespace vib
