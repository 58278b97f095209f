#include "vib/model.hpp"

#include <algorithm>
#include <string>

namespace vib {

void ModelSpec::validate() const {
  if (input_dim == 0) throw ConfigError("model input_dim must be positive");
  if (K == 0) throw ConfigError("model K must be positive");
  for (auto h : hidden)
    if (h == 0) throw ConfigError("hidden widths must be positive");
  for (auto h : decoder_hidden)
    if (h == 0) throw ConfigError("decoder hidden widths must be positive");
  if (!reconstruct && classes < 2) throw ConfigError("classifier needs at least 2 classes");
  if (stochastic) head().validate();
  if (!reconstruct && !decoder_hidden.empty()) throw ConfigError("classifier decoder is a single affine layer");
}

nn::MlpSpec ModelSpec::encoder_mlp() const {
  nn::MlpSpec s;
  s.widths.push_back(input_dim);
  s.widths.insert(s.widths.end(), hidden.begin(), hidden.end());
  s.widths.push_back(encoder_out());
  return s;
}

nn::MlpSpec ModelSpec::decoder_mlp() const {
  nn::MlpSpec s;
  s.widths.push_back(K);
  s.widths.insert(s.widths.end(), decoder_hidden.begin(), decoder_hidden.end());
  s.widths.push_back(decoder_out());
  return s;
}

Model Model::init(const ModelSpec& spec, Rng& rng) {
  spec.validate();
  Model m;
  m.spec = spec;
  m.encoder = nn::xavier_init(rng, spec.encoder_mlp());
  m.decoder = nn::xavier_init(rng, spec.decoder_mlp());
  return m;
}

namespace {

template <typename M, typename F>
void for_each_block(M& model, F&& f) {
  for (auto* layers : {&model.encoder, &model.decoder})
    for (auto& l : *layers) {
      f(l.weight.values(), l.weight_grad.values());
      f(std::span{l.bias}, std::span{l.bias_grad});
    }
}

}  // namespace

std::size_t Model::num_params() const {
  std::size_t n = 0;
  for_each_block(*this, [&](auto v, auto) { n += v.size(); });
  return n;
}

std::vector<double> Model::params() const {
  std::vector<double> out;
  out.reserve(num_params());
  for_each_block(*this, [&](auto v, auto) { out.insert(out.end(), v.begin(), v.end()); });
  return out;
}

void Model::set_params(std::span<const double> flat) {
  require(flat.size() == num_params(), "set_params: expected " + std::to_string(num_params()) +
                                           " values, got " + std::to_string(flat.size()));
  std::size_t off = 0;
  for_each_block(*this, [&](auto v, auto) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), v.size(), v.begin());
    off += v.size();
  });
}

std::vector<double> Model::grads() const {
  std::vector<double> out;
  out.reserve(num_params());
  for_each_block(*this, [&](auto, auto g) { out.insert(out.end(), g.begin(), g.end()); });
  return out;
}

void Model::zero_grad() {
  for (auto& l : encoder) l.zero_grad();
  for (auto& l : decoder) l.zero_grad();
}

EncodedBatch encode_batch(const Model& model, const Matrix& x, const nn::DropoutSpec& drop) {
  EncodedBatch enc;
  enc.trace = nn::mlp_forward(model.encoder, x, drop);
  if (model.spec.stochastic) {
    const auto head = model.spec.head();
    enc.codes.reserve(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) enc.codes.push_back(encode(enc.raw(i), head));
  }
  return enc;
}

Matrix code_means(const Model& model, const EncodedBatch& enc) {
  const std::size_t n = enc.trace.output.rows();
  const std::size_t k = model.spec.K;
  Matrix mu(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = enc.raw(i);
    std::copy_n(r.begin(), k, mu.row(i).begin());
  }
  return mu;
}

Matrix sample_codes(const EncodedBatch& enc, const Matrix& eps) {
  require(eps.rows() == enc.codes.size(), "sample_codes: noise rows must match batch");
  Matrix z(eps.rows(), eps.cols());
  for (std::size_t i = 0; i < eps.rows(); ++i) {
    const auto zi = sample(enc.codes[i], eps.row(i));
    std::copy(zi.begin(), zi.end(), z.row(i).begin());
  }
  return z;
}

Matrix predict_proba(const Model& model, const Matrix& x, const std::vector<Matrix>& eps) {
  require(!model.spec.reconstruct, "predict_proba: model is not a classifier");
  const EncodedBatch enc = encode_batch(model, x);
  const std::size_t n = x.rows();
  const std::size_t c = model.spec.classes;
  Matrix probs(n, c);
  auto accumulate = [&](const Matrix& z, double w) {
    const Matrix logits = nn::mlp_forward(model.decoder, z).output;
    for (std::size_t i = 0; i < n; ++i) {
      const auto p = nn::softmax(logits.row(i));
      auto out = probs.row(i);
      for (std::size_t j = 0; j < c; ++j) out[j] += w * p[j];
    }
  };
  if (!model.spec.stochastic || eps.empty()) {
    accumulate(code_means(model, enc), 1.0);
    return probs;
  }
  const double w = 1.0 / static_cast<double>(eps.size());
  for (const auto& e : eps) accumulate(sample_codes(enc, e), w);
  return probs;
}

}  // namespace vib
