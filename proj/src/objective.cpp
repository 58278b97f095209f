#include "vib/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "vib/nn.hpp"

namespace vib {

void VibConfig::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be a finite value >= 0");
  if (train_samples < 1 || eval_samples < 1) throw ConfigError("sample counts must be >= 1");
  EncoderHeadSpec{K, mode, sigma_bias, 1e-2}.validate();
}

void VibConfig::check_model(const ModelSpec& spec) const {
  if (!spec.stochastic) throw ConfigError("VIB objective needs a stochastic encoder");
  if (spec.K != K || spec.mode != mode || spec.sigma_bias != sigma_bias)
    throw ConfigError("VIB config does not match the model's head");
}

std::vector<Matrix> draw_noise(Rng& rng, std::size_t samples, std::size_t batch, std::size_t K) {
  std::vector<Matrix> eps;
  eps.reserve(samples);
  for (std::size_t s = 0; s < samples; ++s) eps.push_back(sample_standard_normal(rng, batch, K));
  return eps;
}

std::vector<Matrix> indexed_noise(const Rng& base, std::size_t first, std::size_t rows, std::size_t K,
                                  std::size_t samples) {
  std::vector<Matrix> eps(samples, Matrix(rows, K));
  for (std::size_t i = 0; i < rows; ++i) {
    Rng r = base.split(first + i);
    for (std::size_t s = 0; s < samples; ++s)
      for (auto& v : eps[s].row(i)) v = r.normal();
  }
  return eps;
}

namespace {

void check_labels(const Matrix& x, Labels y, std::size_t classes) {
  require(x.rows() > 0, "empty batch");
  require(y.size() == x.rows(), "label count " + std::to_string(y.size()) + " != batch size " +
                                    std::to_string(x.rows()));
  for (int l : y)
    if (l < 0 || static_cast<std::size_t>(l) >= classes)
      throw ShapeError("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
}

void check_term(double v, const char* objective, const char* term) {
  if (!std::isfinite(v)) throw NumericError(std::string(objective) + ": non-finite " + term + " term");
}

Matrix first_columns(const Matrix& m, std::size_t k) {
  Matrix out(m.rows(), k);
  for (std::size_t i = 0; i < m.rows(); ++i) std::copy_n(m.row(i).begin(), k, out.row(i).begin());
  return out;
}

// Shared path for objectives that decode z = mu. `row_loss(logits, label, dlogits)`
// returns the per-example loss and writes its logit gradient.
template <typename RowLoss>
LossBreakdown mean_path_loss(Model& model, const Matrix& x, Labels y, const nn::DropoutSpec& drop,
                             const char* name, RowLoss&& row_loss) {
  check_labels(x, y, model.spec.classes);
  require(!model.spec.reconstruct, std::string(name) + ": model is not a classifier");
  model.zero_grad();
  const std::size_t n = x.rows();
  const std::size_t k = model.spec.K;
  const nn::MlpTrace enc = nn::mlp_forward(model.encoder, x, drop);
  const Matrix z = first_columns(enc.output, k);
  const nn::MlpTrace dec = nn::mlp_forward(model.decoder, z);
  Matrix dlogits(n, model.spec.classes);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum += row_loss(dec.output.row(i), static_cast<std::size_t>(y[i]), dlogits.row(i));
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (auto& v : dlogits.values()) v *= inv_n;
  const Matrix dz = nn::mlp_backward(model.decoder, dec, dlogits, true);
  Matrix draw(n, enc.output.cols());
  for (std::size_t i = 0; i < n; ++i) std::copy_n(dz.row(i).begin(), k, draw.row(i).begin());
  nn::mlp_backward(model.encoder, enc, draw);

  LossBreakdown out;
  out.xent_term = sum * inv_n;
  check_term(out.xent_term, name, "cross-entropy");
  out.total = out.xent_term;
  out.grads = model.grads();
  return out;
}

double xent_row(std::span<const double> logits, std::size_t label, std::span<double> d) {
  const auto r = nn::softmax_xent(logits, label);
  std::copy(r.grad.begin(), r.grad.end(), d.begin());
  return r.loss;
}

}  // namespace

LossBreakdown vib_loss(Model& model, const Matrix& x, Labels y, double beta, const std::vector<Matrix>& eps) {
  if (!model.spec.stochastic) throw ConfigError("vib_loss: model has no stochastic head");
  if (!(beta >= 0.0)) throw ConfigError("vib_loss: beta must be >= 0");
  require(!eps.empty(), "vib_loss: need at least one noise draw");
  check_labels(x, y, model.spec.classes);
  const std::size_t n = x.rows();
  const std::size_t k = model.spec.K;
  for (const auto& e : eps) require(e.rows() == n && e.cols() == k, "vib_loss: noise shape must be batch x K");

  model.zero_grad();
  const auto head = model.spec.head();
  const EncodedBatch enc = encode_batch(model, x);
  std::vector<CodeGrad> cg;
  cg.reserve(n);
  for (const auto& c : enc.codes) cg.emplace_back(c);

  const double scale = 1.0 / static_cast<double>(n * eps.size());
  double xent_sum = 0.0;
  for (const auto& e : eps) {
    const Matrix z = sample_codes(enc, e);
    const nn::MlpTrace dec = nn::mlp_forward(model.decoder, z);
    Matrix dlogits(n, model.spec.classes);
    for (std::size_t i = 0; i < n; ++i) {
      xent_sum += xent_row(dec.output.row(i), static_cast<std::size_t>(y[i]), dlogits.row(i));
    }
    for (auto& v : dlogits.values()) v *= scale;
    const Matrix dz = nn::mlp_backward(model.decoder, dec, dlogits, true);
    for (std::size_t i = 0; i < n; ++i) accumulate_sample_grad(enc.codes[i], e.row(i), dz.row(i), cg[i]);
  }

  double kl_sum = 0.0;
  const double kl_weight = beta / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    kl_sum += kl_to_prior(enc.codes[i]);
    accumulate_kl_grad(enc.codes[i], kl_weight, cg[i]);
  }

  Matrix draw(n, head.raw_width());
  for (std::size_t i = 0; i < n; ++i) {
    const auto d = head_raw_grad(enc.raw(i), head, cg[i]);
    std::copy(d.begin(), d.end(), draw.row(i).begin());
  }
  nn::mlp_backward(model.encoder, enc.trace, draw);

  LossBreakdown out;
  out.xent_term = xent_sum * scale;
  out.kl_term = kl_sum / static_cast<double>(n);
  check_term(out.xent_term, "vib_loss", "cross-entropy");
  check_term(out.kl_term, "vib_loss", "KL");
  out.total = out.xent_term + beta * out.kl_term;
  out.grads = model.grads();
  return out;
}

LossBreakdown vib_loss(Model& model, const Matrix& x, Labels y, const VibConfig& cfg, Rng& rng) {
  cfg.validate();
  cfg.check_model(model.spec);
  return vib_loss(model, x, y, cfg.beta, draw_noise(rng, cfg.train_samples, x.rows(), cfg.K));
}

double ib0_objective(const Model& model, const Matrix& x, Labels y, const std::vector<Matrix>& eps) {
  if (!model.spec.stochastic) throw ConfigError("ib0_objective: model has no stochastic head");
  require(model.decoder.size() == 1, "ib0_objective: expects a logistic-regression decoder");
  check_labels(x, y, model.spec.classes);
  const auto& w = model.decoder.front().weight;
  const auto& b = model.decoder.front().bias;
  const EncodedBatch enc = encode_batch(model, x);
  const std::size_t n = x.rows();
  double sum = 0.0;
  for (const auto& e : eps) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto z = sample(enc.codes[i], e.row(i));
      std::vector<double> logits(w.rows());
      for (std::size_t c = 0; c < w.rows(); ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < z.size(); ++j) s += w(c, j) * z[j];
        logits[c] = s + b[c];
      }
      sum += -nn::log_softmax(logits)[static_cast<std::size_t>(y[i])];
    }
  }
  return sum * (1.0 / static_cast<double>(n * eps.size()));
}

LossBreakdown deterministic_loss(Model& model, const Matrix& x, Labels y) {
  return mean_path_loss(model, x, y, {}, "deterministic_loss", xent_row);
}

LossBreakdown dropout_loss(Model& model, const Matrix& x, Labels y, double rate, Rng& rng) {
  nn::validate_dropout_rate(rate);
  return mean_path_loss(model, x, y, {rate, &rng, true}, "dropout_loss", xent_row);
}

LossBreakdown confidence_penalty_loss(Model& model, const Matrix& x, Labels y, double beta_cp) {
  if (!std::isfinite(beta_cp)) throw ConfigError("confidence penalty beta must be finite");
  return mean_path_loss(model, x, y, {}, "confidence_penalty_loss",
                        [beta_cp](std::span<const double> logits, std::size_t label, std::span<double> d) {
                          const auto lp = nn::log_softmax(logits);
                          double h = 0.0;
                          for (double v : lp) h -= std::exp(v) * v;
                          for (std::size_t j = 0; j < lp.size(); ++j) {
                            const double p = std::exp(lp[j]);
                            d[j] = p - (j == label ? 1.0 : 0.0) + beta_cp * p * (lp[j] + h);
                          }
                          return -lp[label] - beta_cp * h;
                        });
}

std::vector<double> label_smooth(std::span<const double> onehot, double eps) {
  if (!(eps >= 0.0) || !std::isfinite(eps)) throw ConfigError("label smoothing eps must be >= 0");
  std::vector<double> t(onehot.begin(), onehot.end());
  double total = 0.0;
  for (auto& v : t) {
    if (v == 0.0) v = eps;
    total += v;
  }
  for (auto& v : t) v /= total;
  return t;
}

LossBreakdown label_smoothing_loss(Model& model, const Matrix& x, Labels y, double eps) {
  const std::size_t c = model.spec.classes;
  return mean_path_loss(model, x, y, {}, "label_smoothing_loss",
                        [eps, c](std::span<const double> logits, std::size_t label, std::span<double> d) {
                          std::vector<double> onehot(c, 0.0);
                          onehot[label] = 1.0;
                          const auto t = label_smooth(onehot, eps);
                          const auto lp = nn::log_softmax(logits);
                          double loss = 0.0;
                          for (std::size_t j = 0; j < c; ++j) {
                            loss -= t[j] * lp[j];
                            d[j] = std::exp(lp[j]) - t[j];
                          }
                          return loss;
                        });
}

double reconstruction_nll(std::span<const double> x, std::span<const double> xhat) {
  require(x.size() == xhat.size(), "reconstruction_nll: length mismatch");
  double sq = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double r = x[j] - xhat[j];
    sq += r * r;
  }
  return 0.5 * sq + 0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi);
}

LossBreakdown unsup_vib_loss(Model& model, const Matrix& x, double beta, const Matrix& eps) {
  if (!model.spec.stochastic || !model.spec.reconstruct)
    throw ConfigError("unsup_vib_loss: needs a stochastic encoder and a reconstruction decoder");
  if (!(beta >= 0.0)) throw ConfigError("unsup_vib_loss: beta must be >= 0");
  const std::size_t n = x.rows();
  require(n > 0, "empty batch");
  require(eps.rows() == n && eps.cols() == model.spec.K, "unsup_vib_loss: noise shape must be batch x K");
  model.zero_grad();
  const auto head = model.spec.head();
  const EncodedBatch enc = encode_batch(model, x);
  const Matrix z = sample_codes(enc, eps);
  const nn::MlpTrace dec = nn::mlp_forward(model.decoder, z);

  const double inv_n = 1.0 / static_cast<double>(n);
  double rec_sum = 0.0;
  double kl_sum = 0.0;
  Matrix dxhat(n, x.cols());
  for (std::size_t i = 0; i < n; ++i) {
    rec_sum += reconstruction_nll(x.row(i), dec.output.row(i));
    kl_sum += kl_to_prior(enc.codes[i]);
    auto d = dxhat.row(i);
    for (std::size_t j = 0; j < d.size(); ++j) d[j] = (dec.output(i, j) - x(i, j)) * inv_n;
  }
  const Matrix dz = nn::mlp_backward(model.decoder, dec, dxhat, true);
  Matrix draw(n, head.raw_width());
  for (std::size_t i = 0; i < n; ++i) {
    CodeGrad g(enc.codes[i]);
    accumulate_sample_grad(enc.codes[i], eps.row(i), dz.row(i), g);
    accumulate_kl_grad(enc.codes[i], beta * inv_n, g);
    const auto d = head_raw_grad(enc.raw(i), head, g);
    std::copy(d.begin(), d.end(), draw.row(i).begin());
  }
  nn::mlp_backward(model.encoder, enc.trace, draw);

  LossBreakdown out;
  out.xent_term = rec_sum * inv_n;
  out.kl_term = kl_sum * inv_n;
  check_term(out.xent_term, "unsup_vib_loss", "reconstruction");
  check_term(out.kl_term, "unsup_vib_loss", "KL");
  out.total = out.xent_term + beta * out.kl_term;
  out.grads = model.grads();
  return out;
}

LossBreakdown unsup_vib_loss(Model& model, const Matrix& x, double beta, Rng& rng) {
  return unsup_vib_loss(model, x, beta, sample_standard_normal(rng, x.rows(), model.spec.K));
}

namespace {
constexpr std::size_t kEvalChunk = 500;

Matrix row_slice(const Matrix& m, std::size_t first, std::size_t count) {
  Matrix out(count, m.cols());
  for (std::size_t i = 0; i < count; ++i) std::copy(m.row(first + i).begin(), m.row(first + i).end(), out.row(i).begin());
  return out;
}
}  // namespace

double mi_zx_upper(const Model& model, const Matrix& x) {
  if (!model.spec.stochastic) throw ConfigError("mi_zx_upper: deterministic encoders have no finite bound");
  require(x.rows() > 0, "mi_zx_upper: empty dataset");
  double kl_sum = 0.0;
  for (std::size_t first = 0; first < x.rows(); first += kEvalChunk) {
    const std::size_t count = std::min(kEvalChunk, x.rows() - first);
    const EncodedBatch enc = encode_batch(model, row_slice(x, first, count));
    for (const auto& c : enc.codes) kl_sum += kl_to_prior(c);
  }
  return kl_sum / static_cast<double>(x.rows()) / kLn2;
}

double label_entropy_bits(Labels y, std::size_t classes) {
  require(!y.empty(), "label_entropy_bits: no labels");
  std::vector<double> freq(classes, 0.0);
  for (int l : y) {
    require(l >= 0 && static_cast<std::size_t>(l) < classes, "label out of range");
    freq[static_cast<std::size_t>(l)] += 1.0;
  }
  double h = 0.0;
  const double n = static_cast<double>(y.size());
  for (double f : freq)
    if (f > 0.0) h -= (f / n) * std::log2(f / n);
  return h;
}

MiZyEstimate mi_zy_lower(const Model& model, const Matrix& x, Labels y, std::size_t samples, const Rng& noise) {
  check_labels(x, y, model.spec.classes);
  require(samples >= 1, "mi_zy_lower: samples must be >= 1");
  double xent_sum = 0.0;
  std::size_t terms = 0;
  for (std::size_t first = 0; first < x.rows(); first += kEvalChunk) {
    const std::size_t count = std::min(kEvalChunk, x.rows() - first);
    const EncodedBatch enc = encode_batch(model, row_slice(x, first, count));
    std::vector<Matrix> zs;
    if (model.spec.stochastic) {
      for (const auto& e : indexed_noise(noise, first, count, model.spec.K, samples)) zs.push_back(sample_codes(enc, e));
    } else {
      zs.push_back(code_means(model, enc));
    }
    for (const auto& z : zs) {
      const Matrix logits = nn::mlp_forward(model.decoder, z).output;
      for (std::size_t i = 0; i < count; ++i) {
        xent_sum -= nn::log_softmax(logits.row(i))[static_cast<std::size_t>(y[first + i])];
        ++terms;
      }
    }
  }
  MiZyEstimate est;
  est.label_entropy_bits = label_entropy_bits(y, model.spec.classes);
  est.xent_bits = xent_sum / static_cast<double>(terms) / kLn2;
  est.bits = est.label_entropy_bits - est.xent_bits;
  return est;
}

std::vector<double> expected_softmax_tse_lower(const Matrix& W, const GaussianCode& code) {
  require(W.cols() == code.dim(), "expected_softmax_tse_lower: W must be C x K");
  const std::size_t c = W.rows();
  std::vector<double> logits(c, 0.0);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < W.cols(); ++j) logits[i] += W(i, j) * code.mean[j];
  const auto s = nn::softmax(logits);
  // A = W Sigma W^T = (W L)(W L)^T
  const Matrix wl = reference::matmul(W, code.cholesky());
  const Matrix a = reference::matmul_nt(wl, wl);
  double q_sqrt = 0.0;
  double q = 0.0;
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      q_sqrt += std::sqrt(s[i]) * a(i, j) * std::sqrt(s[j]);
      q += s[i] * a(i, j) * s[j];
    }
  const double factor = std::exp(-0.5 * q_sqrt + 0.5 * q);
  std::vector<double> out(c);
  for (std::size_t i = 0; i < c; ++i) out[i] = s[i] * factor;
  return out;
}

}  // namespace vib
