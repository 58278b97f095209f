#include "vib/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace vib::nn {

AffineLayer::AffineLayer(std::size_t in, std::size_t out)
    : weight(out, in), bias(out, 0.0), weight_grad(out, in), bias_grad(out, 0.0) {}

Matrix AffineLayer::forward(const Matrix& x) const {
  require(x.cols() == in_dim(), "affine forward: input width " + std::to_string(x.cols()) +
                                    " != layer input " + std::to_string(in_dim()));
  Matrix y = matmul_nt(x, weight);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    auto r = y.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
  return y;
}

Matrix AffineLayer::backward_input(const Matrix& dy) const {
  require(dy.cols() == out_dim(), "affine backward: upstream width mismatch");
  return matmul(dy, weight);
}

void AffineLayer::accumulate_grads(const Matrix& x, const Matrix& dy) {
  require(dy.cols() == out_dim() && x.cols() == in_dim() && x.rows() == dy.rows(),
          "affine backward: shape mismatch");
  const Matrix gw = matmul_tn(dy, x);
  auto dst = weight_grad.values();
  auto src = gw.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  for (std::size_t i = 0; i < dy.rows(); ++i) {
    auto r = dy.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) bias_grad[j] += r[j];
  }
}

Matrix AffineLayer::backward(const Matrix& x, const Matrix& dy) {
  accumulate_grads(x, dy);
  return backward_input(dy);
}

void AffineLayer::zero_grad() {
  weight_grad.fill(0.0);
  std::fill(bias_grad.begin(), bias_grad.end(), 0.0);
}

void MlpSpec::validate() const {
  if (widths.size() < 2) throw ConfigError("MLP needs at least one layer (two widths)");
  for (auto w : widths)
    if (w == 0) throw ConfigError("MLP widths must be positive");
}

void xavier_init(Rng& rng, AffineLayer& layer) {
  const double fan = static_cast<double>(layer.in_dim() + layer.out_dim());
  const double a = std::sqrt(6.0 / fan);
  for (auto& w : layer.weight.values()) w = (2.0 * rng.uniform() - 1.0) * a;
  std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  layer.zero_grad();
}

std::vector<AffineLayer> xavier_init(Rng& rng, const MlpSpec& spec) {
  spec.validate();
  std::vector<AffineLayer> layers;
  layers.reserve(spec.widths.size() - 1);
  for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
    layers.emplace_back(spec.widths[l], spec.widths[l + 1]);
    xavier_init(rng, layers.back());
  }
  return layers;
}

Matrix relu(const Matrix& x) {
  Matrix y = x;
  for (auto& v : y.values()) v = v <= 0.0 ? 0.0 : v;  // NaN passes through
  return y;
}

Matrix relu_backward(const Matrix& x, const Matrix& dy) {
  require(x.rows() == dy.rows() && x.cols() == dy.cols(), "relu backward: shape mismatch");
  Matrix dx(x.rows(), x.cols());
  auto xv = x.values();
  auto gv = dy.values();
  auto out = dx.values();
  // Subgradient at 0 is 0.
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? gv[i] : 0.0;
  return dx;
}

double softplus_biased(double x, double bias) {
  const double t = x + bias;
  return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double v : logits) s += std::exp(v - m);
  const double lse = m + std::log(s);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  auto p = log_softmax(logits);
  for (auto& v : p) v = std::exp(v);
  return p;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

XentResult softmax_xent(std::span<const double> logits, std::size_t label) {
  require(label < logits.size(), "softmax_xent: label out of range");
  const auto lp = log_softmax(logits);
  XentResult r;
  r.loss = -lp[label];
  r.grad.resize(lp.size());
  for (std::size_t i = 0; i < lp.size(); ++i) r.grad[i] = std::exp(lp[i]);
  r.grad[label] -= 1.0;
  return r;
}

void validate_dropout_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1)");
}

DropoutResult dropout(const Matrix& x, double rate, Rng& rng, bool training) {
  validate_dropout_rate(rate);
  DropoutResult r;
  if (!training || rate == 0.0) {
    r.y = x;
    return r;
  }
  const double keep_scale = 1.0 / (1.0 - rate);
  r.mask = Matrix(x.rows(), x.cols());
  r.y = Matrix(x.rows(), x.cols());
  auto m = r.mask.values();
  auto y = r.y.values();
  auto xv = x.values();
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    y[i] = xv[i] * m[i];
  }
  return r;
}

Matrix dropout_backward(const Matrix& mask, const Matrix& dy) {
  if (mask.empty()) return dy;
  require(mask.rows() == dy.rows() && mask.cols() == dy.cols(), "dropout backward: shape mismatch");
  Matrix dx = dy;
  auto d = dx.values();
  auto m = mask.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] *= m[i];
  return dx;
}

MlpTrace mlp_forward(std::span<const AffineLayer> layers, const Matrix& x, const DropoutSpec& drop) {
  require(!layers.empty(), "mlp_forward: no layers");
  const bool use_dropout = drop.training && drop.rate > 0.0;
  if (use_dropout && drop.rng == nullptr) throw ConfigError("dropout in training mode needs an rng");
  MlpTrace t;
  t.layer_inputs.reserve(layers.size());
  Matrix cur = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix z = layers[l].forward(cur);
    t.layer_inputs.push_back(std::move(cur));
    if (l + 1 == layers.size()) {
      t.output = std::move(z);
      break;
    }
    Matrix a = relu(z);
    t.pre_activation.push_back(std::move(z));
    if (use_dropout) {
      auto d = dropout(a, drop.rate, *drop.rng, true);
      t.masks.push_back(std::move(d.mask));
      cur = std::move(d.y);
    } else {
      t.masks.emplace_back();
      cur = std::move(a);
    }
  }
  return t;
}

namespace {

template <bool Accumulate, typename Layers>
Matrix mlp_backward_impl(Layers layers, const MlpTrace& trace, const Matrix& dout, bool input_grad) {
  Matrix d = dout;
  for (std::size_t l = layers.size(); l-- > 0;) {
    if (l + 1 < layers.size()) {
      d = relu_backward(trace.pre_activation[l], dropout_backward(trace.masks[l], d));
    }
    if constexpr (Accumulate) layers[l].accumulate_grads(trace.layer_inputs[l], d);
    if (l == 0 && !input_grad) return {};
    d = layers[l].backward_input(d);
  }
  return d;
}

}  // namespace

Matrix mlp_backward(std::span<AffineLayer> layers, const MlpTrace& trace, const Matrix& dout, bool input_grad) {
  return mlp_backward_impl<true>(layers, trace, dout, input_grad);
}

Matrix mlp_backward_input(std::span<const AffineLayer> layers, const MlpTrace& trace, const Matrix& dout) {
  return mlp_backward_impl<false>(layers, trace, dout, true);
}

GradCheckReport grad_check(const LossWithGrad& loss, std::span<const double> theta, double tolerance,
                           double h) {
  std::vector<double> analytic;
  loss(theta, &analytic);
  require(analytic.size() == theta.size(), "grad_check: gradient length mismatch");
  const auto fd = finite_diff_grad([&](std::span<const double> t) { return loss(t, nullptr); }, theta, h);
  GradCheckReport rep;
  rep.num_params = theta.size();
  rep.tolerance = tolerance;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double err = std::abs(analytic[i] - fd[i]) / std::max(1.0, std::abs(fd[i]));
    if (!(err <= rep.max_rel_error)) {
      rep.max_rel_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
      rep.worst_index = i;
    }
  }
  rep.passed = rep.max_rel_error < tolerance;
  return rep;
}

}  // namespace vib::nn
