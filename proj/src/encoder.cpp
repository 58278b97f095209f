#include "vib/encoder.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "vib/nn.hpp"

namespace vib {

std::string_view to_string(CovarianceMode m) { return m == CovarianceMode::diag ? "diag" : "fullcov2d"; }

CovarianceMode parse_covariance_mode(std::string_view s) {
  if (s == "diag") return CovarianceMode::diag;
  if (s == "fullcov2d" || s == "fullcov") return CovarianceMode::fullcov2d;
  throw ConfigError("unknown covariance mode '" + std::string(s) + "' (expected diag or fullcov2d)");
}

void EncoderHeadSpec::validate() const {
  if (K == 0) throw ConfigError("bottleneck width K must be positive");
  if (mode == CovarianceMode::fullcov2d && K != 2) throw ConfigError("fullcov2d requires K = 2");
  if (!std::isfinite(sigma_bias)) throw ConfigError("sigma_bias must be finite");
  if (!std::isfinite(offdiag_scale)) throw ConfigError("offdiag_scale must be finite");
}

std::size_t EncoderHeadSpec::raw_width() const { return mode == CovarianceMode::diag ? 2 * K : 6; }

Matrix GaussianCode::cholesky() const {
  const std::size_t k = dim();
  if (mode == CovarianceMode::fullcov2d) return Matrix(k, k, scale);
  Matrix l(k, k);
  for (std::size_t i = 0; i < k; ++i) l(i, i) = scale[i];
  return l;
}

Matrix GaussianCode::covariance() const {
  const Matrix l = cholesky();
  return reference::matmul_nt(l, l);
}

double GaussianCode::log_det_covariance() const {
  const std::size_t k = dim();
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double d = mode == CovarianceMode::diag ? scale[i] : scale[i * k + i];
    s += std::log(d);
  }
  return 2.0 * s;
}

bool GaussianCode::valid() const {
  const std::size_t k = dim();
  if (k == 0) return false;
  for (double m : mean)
    if (!std::isfinite(m)) return false;
  if (mode == CovarianceMode::diag) {
    if (scale.size() != k) return false;
    for (double s : scale)
      if (!(s > 0.0) || !std::isfinite(s)) return false;
    return true;
  }
  if (scale.size() != k * k) return false;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double v = scale[i * k + j];
      if (!std::isfinite(v)) return false;
      if (i == j && !(v > 0.0)) return false;
      if (j > i && v != 0.0) return false;
    }
  return true;
}

GaussianCode encode_diag(std::span<const double> raw, const EncoderHeadSpec& spec) {
  require(spec.mode == CovarianceMode::diag, "encode_diag: head is not diagonal");
  require(raw.size() == 2 * spec.K, "encode_diag: expected " + std::to_string(2 * spec.K) +
                                        " raw outputs, got " + std::to_string(raw.size()));
  GaussianCode c;
  c.mode = CovarianceMode::diag;
  c.mean.assign(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(spec.K));
  c.scale.resize(spec.K);
  for (std::size_t k = 0; k < spec.K; ++k) c.scale[k] = nn::softplus_biased(raw[spec.K + k], spec.sigma_bias);
  return c;
}

GaussianCode encode_fullcov2d(std::span<const double> raw, const EncoderHeadSpec& spec) {
  require(spec.mode == CovarianceMode::fullcov2d && spec.K == 2, "encode_fullcov2d: head is not fullcov2d");
  require(raw.size() == 6, "encode_fullcov2d: expected 6 raw outputs, got " + std::to_string(raw.size()));
  GaussianCode c;
  c.mode = CovarianceMode::fullcov2d;
  c.mean = {raw[0], raw[1]};
  // raw[2..5] is a row-major 2x2 block; raw[3] (upper triangle) is dropped.
  c.scale = {nn::softplus_biased(raw[2], spec.sigma_bias), 0.0, spec.offdiag_scale * raw[4],
             nn::softplus_biased(raw[5], spec.sigma_bias)};
  return c;
}

GaussianCode encode(std::span<const double> raw, const EncoderHeadSpec& spec) {
  return spec.mode == CovarianceMode::diag ? encode_diag(raw, spec) : encode_fullcov2d(raw, spec);
}

std::vector<double> sample(const GaussianCode& code, std::span<const double> eps) {
  const std::size_t k = code.dim();
  require(eps.size() == k, "sample: eps length must equal K");
  std::vector<double> z(code.mean);
  if (code.mode == CovarianceMode::diag) {
    for (std::size_t i = 0; i < k; ++i) z[i] += code.scale[i] * eps[i];
  } else {
    for (std::size_t i = 0; i < k; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j <= i; ++j) s += code.scale[i * k + j] * eps[j];
      z[i] += s;
    }
  }
  return z;
}

double kl_to_prior(const GaussianCode& code) {
  const std::size_t k = code.dim();
  double s = 0.0;
  if (code.mode == CovarianceMode::diag) {
    for (std::size_t i = 0; i < k; ++i) {
      const double sd = code.scale[i];
      s += sd * sd + code.mean[i] * code.mean[i] - 1.0 - 2.0 * std::log(sd);
    }
    return 0.5 * s;
  }
  double trace = 0.0;
  for (double v : code.scale) trace += v * v;
  double mm = 0.0;
  for (double m : code.mean) mm += m * m;
  return 0.5 * (trace + mm - static_cast<double>(k) - code.log_det_covariance());
}

double log_density(const GaussianCode& code, std::span<const double> z) {
  const std::size_t k = code.dim();
  require(z.size() == k, "log_density: dimension mismatch");
  std::vector<double> u(k);
  for (std::size_t i = 0; i < k; ++i) {
    double r = z[i] - code.mean[i];
    if (code.mode == CovarianceMode::diag) {
      u[i] = r / code.scale[i];
    } else {
      for (std::size_t j = 0; j < i; ++j) r -= code.scale[i * k + j] * u[j];
      u[i] = r / code.scale[i * k + i];
    }
  }
  double quad = 0.0;
  for (double v : u) quad += v * v;
  return -0.5 * (static_cast<double>(k) * std::log(2.0 * std::numbers::pi) + code.log_det_covariance() + quad);
}

double log_prior_density(std::span<const double> z) {
  double quad = 0.0;
  for (double v : z) quad += v * v;
  return -0.5 * (static_cast<double>(z.size()) * std::log(2.0 * std::numbers::pi) + quad);
}

void accumulate_sample_grad(const GaussianCode& code, std::span<const double> eps, std::span<const double> dz,
                            CodeGrad& g) {
  const std::size_t k = code.dim();
  for (std::size_t i = 0; i < k; ++i) g.mean[i] += dz[i];
  if (code.mode == CovarianceMode::diag) {
    for (std::size_t i = 0; i < k; ++i) g.scale[i] += dz[i] * eps[i];
  } else {
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j <= i; ++j) g.scale[i * k + j] += dz[i] * eps[j];
  }
}

void accumulate_kl_grad(const GaussianCode& code, double weight, CodeGrad& g) {
  const std::size_t k = code.dim();
  for (std::size_t i = 0; i < k; ++i) g.mean[i] += weight * code.mean[i];
  if (code.mode == CovarianceMode::diag) {
    for (std::size_t i = 0; i < k; ++i) g.scale[i] += weight * (code.scale[i] - 1.0 / code.scale[i]);
  } else {
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        const double l = code.scale[i * k + j];
        g.scale[i * k + j] += weight * (i == j ? l - 1.0 / l : l);
      }
  }
}

std::vector<double> head_raw_grad(std::span<const double> raw, const EncoderHeadSpec& spec, const CodeGrad& g) {
  std::vector<double> d(raw.size(), 0.0);
  if (spec.mode == CovarianceMode::diag) {
    for (std::size_t k = 0; k < spec.K; ++k) {
      d[k] = g.mean[k];
      d[spec.K + k] = g.scale[k] * nn::sigmoid(raw[spec.K + k] + spec.sigma_bias);
    }
    return d;
  }
  d[0] = g.mean[0];
  d[1] = g.mean[1];
  d[2] = g.scale[0] * nn::sigmoid(raw[2] + spec.sigma_bias);
  d[4] = g.scale[2] * spec.offdiag_scale;
  d[5] = g.scale[3] * nn::sigmoid(raw[5] + spec.sigma_bias);
  return d;
}

}  // namespace vib
