#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "vib/nn.hpp"

using namespace vib;
using namespace vib::nn;

TEST_SUITE("nn") {

TEST_CASE("xavier init bounds, zero bias, variance") {
  Rng rng(1);
  const auto layers = xavier_init(rng, MlpSpec{{784, 1024, 10}});
  REQUIRE(layers.size() == 2);
  const double a = std::sqrt(6.0 / 1808.0);
  double sum = 0.0, sq = 0.0;
  for (double w : layers[0].weight.values()) {
    CHECK(std::abs(w) <= a);
    sum += w;
    sq += w * w;
  }
  for (const auto& l : layers)
    for (double b : l.bias) CHECK(b == 0.0);
  const double n = static_cast<double>(layers[0].weight.size());
  const double var = sq / n - (sum / n) * (sum / n);
  CHECK(std::abs(var / (2.0 / 1808.0) - 1.0) < 0.05);
}

TEST_CASE("mlp spec validation") {
  CHECK_THROWS_AS(MlpSpec{{3}}.validate(), ConfigError);
  CHECK_THROWS_AS((MlpSpec{{3, 0, 2}}.validate()), ConfigError);
}

TEST_CASE("affine identity and backward of sum") {
  AffineLayer l(2, 2);
  l.weight = Matrix::identity(2);
  const Matrix x{{1, -2}, {3, 4}};
  CHECK(l.forward(x) == x);
  const Matrix ones(2, 2, 1.0);
  l.zero_grad();
  l.backward(x, ones);
  // dW[o][i] = sum over batch of x[n][i]
  CHECK(l.weight_grad == Matrix{{4, 2}, {4, 2}});
  CHECK(l.bias_grad == std::vector<double>{2, 2});
}

TEST_CASE("affine gradients match finite differences") {
  Rng rng(4);
  AffineLayer l(4, 3);
  xavier_init(rng, l);
  for (double& b : l.bias) b = rng.normal();
  const Matrix x = test::random_matrix(rng, 5, 4);
  const Matrix w = test::random_matrix(rng, 5, 3);  // L = sum(w .* y)
  std::vector<double> theta(l.weight.values().begin(), l.weight.values().end());
  theta.insert(theta.end(), l.bias.begin(), l.bias.end());
  theta.insert(theta.end(), x.values().begin(), x.values().end());
  const LossWithGrad loss = [&](std::span<const double> t, std::vector<double>* g) {
    AffineLayer m(4, 3);
    std::copy_n(t.begin(), 12, m.weight.values().begin());
    std::copy_n(t.begin() + 12, 3, m.bias.begin());
    Matrix xi(5, 4);
    std::copy_n(t.begin() + 15, 20, xi.values().begin());
    const Matrix y = m.forward(xi);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += w.values()[i] * y.values()[i];
    if (g) {
      m.zero_grad();
      const Matrix dx = m.backward(xi, w);
      g->assign(m.weight_grad.values().begin(), m.weight_grad.values().end());
      g->insert(g->end(), m.bias_grad.begin(), m.bias_grad.end());
      g->insert(g->end(), dx.values().begin(), dx.values().end());
    }
    return s;
  };
  const auto rep = grad_check(loss, theta, 1e-5);
  CHECK(rep.passed);
  CHECK(rep.max_rel_error < 1e-8);
}

TEST_CASE("relu and its subgradient") {
  const Matrix x{{-1, 0, 2}};
  CHECK(relu(x) == Matrix{{0, 0, 2}});
  CHECK(relu_backward(x, Matrix{{1, 1, 1}}) == Matrix{{0, 0, 1}});
}

TEST_CASE("relu gradient check away from zero") {
  const std::vector<double> th{-1.3, 0.7, 2.1, -0.2};
  const LossWithGrad f = [](std::span<const double> t, std::vector<double>* g) {
    Matrix x(1, 4, std::vector<double>(t.begin(), t.end()));
    const Matrix y = relu(x);
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += (i + 1.0) * y.values()[i];
    if (g) {
      const Matrix d = relu_backward(x, Matrix{{1, 2, 3, 4}});
      g->assign(d.values().begin(), d.values().end());
    }
    return s;
  };
  CHECK(grad_check(f, th, 1e-6).passed);
}

TEST_CASE("softplus with bias") {
  CHECK(softplus_biased(0, -5) == doctest::Approx(6.7153e-3).epsilon(1e-4));
  CHECK(softplus_biased(0, -5) == doctest::Approx(std::log1p(std::exp(-5.0))).epsilon(1e-15));
  CHECK(softplus_biased(5, -5) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(softplus_biased(1000, -5) == 995.0);
  for (double x : {-700.0, -40.0, -1.0, 0.0, 3.0, 700.0}) CHECK(softplus_biased(x, 0.0) > 0.0);
}

TEST_CASE("log softmax normalization and cross-entropy") {
  const std::vector<double> eq(10, 0.25);
  CHECK(softmax_xent(eq, 3).loss == doctest::Approx(std::log(10.0)).epsilon(1e-14));
  std::vector<double> sharp(10, 0.0);
  sharp[2] = 30.0;
  CHECK(softmax_xent(sharp, 2).loss < 1e-12);
  Rng rng(8);
  for (double scale : {1.0, 100.0, 1000.0}) {
    std::vector<double> z(7);
    for (double& v : z) v = scale * (2.0 * rng.uniform() - 1.0);
    const auto lp = log_softmax(z);
    double m = *std::max_element(lp.begin(), lp.end()), s = 0.0;
    for (double v : lp) s += std::exp(v - m);
    CHECK(std::abs(m + std::log(s)) < 1e-12);
  }
}

TEST_CASE("softmax cross-entropy gradient") {
  Rng rng(12);
  std::vector<double> z(6);
  for (double& v : z) v = rng.normal();
  const auto r = softmax_xent(z, 4);
  const auto p = softmax(z);
  for (std::size_t i = 0; i < 6; ++i) CHECK(r.grad[i] == doctest::Approx(p[i] - (i == 4)).epsilon(1e-14));
  const LossWithGrad f = [](std::span<const double> t, std::vector<double>* g) {
    auto res = softmax_xent(t, 4);
    if (g) *g = res.grad;
    return res.loss;
  };
  CHECK(grad_check(f, z, 1e-6).passed);
}

TEST_CASE("entropy") {
  CHECK(entropy(std::vector<double>(4, 0.25)) == doctest::Approx(std::log(4.0)));
  CHECK(entropy(std::vector<double>{1.0, 0.0}) == 0.0);
}

TEST_CASE("dropout conventions") {
  Rng rng(3);
  const Matrix x{{1, -2, 3}};
  CHECK(dropout(x, 0.0, rng, true).y == x);
  CHECK(dropout(x, 0.7, rng, false).y == x);
  CHECK(dropout(x, 0.7, rng, false).mask.empty());
  CHECK_THROWS_AS(validate_dropout_rate(1.0), ConfigError);
  CHECK_THROWS_AS(validate_dropout_rate(-0.1), ConfigError);
  CHECK_THROWS_AS(dropout(x, 1.0, rng, true), ConfigError);
}

TEST_CASE("dropout preserves the mean") {
  Rng rng(77);
  const Matrix x(1000, 1000, 1.0);
  const auto r = dropout(x, 0.5, rng, true);
  double s = 0.0;
  std::size_t zeros = 0;
  for (double v : r.y.values()) {
    s += v;
    zeros += v == 0.0;
    CHECK((v == 0.0 || v == 2.0));
  }
  CHECK(std::abs(s / 1e6 - 1.0) < 0.01);
  CHECK(std::abs(static_cast<double>(zeros) / 1e6 - 0.5) < 0.01);
  CHECK(dropout_backward(r.mask, x) == r.y);
}

TEST_CASE("grad_check on linear regression and a corrupted gradient") {
  const Matrix X{{1, 2}, {3, -1}, {0.5, 0.5}};
  const std::vector<double> y{1, 2, 3};
  auto make = [&](double sign) {
    return LossWithGrad([&, sign](std::span<const double> w, std::vector<double>* g) {
      double l = 0.0;
      std::vector<double> gr(2, 0.0);
      for (std::size_t n = 0; n < 3; ++n) {
        const double r = X(n, 0) * w[0] + X(n, 1) * w[1] - y[n];
        l += 0.5 * r * r;
        gr[0] += r * X(n, 0);
        gr[1] += r * X(n, 1);
      }
      if (g) {
        *g = gr;
        (*g)[1] *= sign;
      }
      return l;
    });
  };
  const std::vector<double> w{0.3, -0.7};
  const auto good = grad_check(make(1.0), w, 1e-7);
  CHECK(good.passed);
  CHECK(good.num_params == 2);
  const auto bad = grad_check(make(-1.0), w, 1e-7);
  CHECK_FALSE(bad.passed);
  CHECK(bad.worst_index == 1);
}

TEST_CASE("mlp backward matches finite differences including the input") {
  Rng rng(21);
  auto layers = xavier_init(rng, MlpSpec{{4, 6, 5, 3}});
  for (auto& l : layers)
    for (double& b : l.bias) b = 0.1 * rng.normal();
  const Matrix x = test::random_matrix(rng, 3, 4);
  const Matrix w = test::random_matrix(rng, 3, 3);
  const LossWithGrad f = [&](std::span<const double> t, std::vector<double>* g) {
    Matrix xi(3, 4, std::vector<double>(t.begin(), t.end()));
    const auto tr = mlp_forward(layers, xi);
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w.values()[i] * tr.output.values()[i];
    if (g) {
      const Matrix dx = mlp_backward_input(layers, tr, w);
      g->assign(dx.values().begin(), dx.values().end());
    }
    return s;
  };
  CHECK(grad_check(f, x.values(), 1e-6).passed);
}

}

TEST_SUITE("nn") {
TEST_CASE("relu keeps NaN visible") {
  const Matrix y = relu(Matrix{{NAN, -1.0, 2.0}});
  CHECK(std::isnan(y(0, 0)));
  CHECK(y(0, 1) == 0.0);
  CHECK(y(0, 2) == 2.0);
}
}
