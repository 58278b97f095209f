#include "vib/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace vib {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    std::ostringstream os;
    os << "matrix data length " << data_.size() << " != " << rows_ << "x" << cols_;
    throw ShapeError(os.str());
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericError("non-finite value in " + what);
}

// ---------------------------------------------------------------------------
// RNG

std::uint64_t mix64(std::uint64_t x) noexcept {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

namespace {
constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
}

Rng::Rng(std::uint64_t seed) : seed_(seed), key_(mix64(seed ^ 0x5851f42d4c957f2dULL)) {}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform_open() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform_open();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ConfigError("Rng::below(0)");
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

Rng Rng::split(std::uint64_t tag) const {
  Rng child;
  child.seed_ = seed_;
  child.key_ = mix64(key_ ^ mix64(tag + kGolden));
  return child;
}

Rng Rng::from_state(const State& s) {
  Rng r;
  r.seed_ = s.seed;
  r.key_ = s.key;
  r.counter_ = s.counter;
  r.has_spare_ = s.has_spare;
  r.spare_ = s.spare;
  return r;
}

std::vector<double> sample_standard_normal(Rng& rng, std::size_t n) {
  std::vector<double> out(n);
  for (auto& v : out) v = rng.normal();
  return out;
}

Matrix sample_standard_normal(Rng& rng, std::size_t rows, std::size_t cols) {
  return Matrix(rows, cols, sample_standard_normal(rng, rows * cols));
}

// ---------------------------------------------------------------------------
// Finite differences

std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> theta, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_grad: step must be positive");
  std::vector<double> x(theta.begin(), theta.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_diff_grad: non-finite objective at coordinate " + std::to_string(i));
    }
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace vib
