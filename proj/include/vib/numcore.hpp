#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vib {

enum class ErrorKind { shape, numeric, config, format, io };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ErrorKind::shape, what) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& what) : Error(ErrorKind::format, what) {}
};
struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  void fill(double v);
  bool all_finite() const noexcept;
  Matrix transposed() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// OpenMP kernels. Each output entry is produced by one thread with a fixed
// k-ascending summation order, so results do not depend on the thread count
// and agree bit-for-bit with the serial reference below.
Matrix matmul(const Matrix& a, const Matrix& b);     // a * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b

namespace reference {
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
}  // namespace reference

/// Counter-based generator: the n-th draw of a stream is a pure function of
/// (key, n), and split() derives statistically independent child streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  double uniform();        // [0, 1)
  double uniform_open();   // (0, 1]
  double normal();         // N(0, 1), Box-Muller
  std::uint64_t below(std::uint64_t n);  // uniform integer in [0, n)

  Rng split(std::uint64_t tag) const;
  Rng split(std::uint64_t a, std::uint64_t b) const { return split(a).split(b); }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  struct State {
    std::uint64_t seed, key, counter;
    bool has_spare;
    double spare;
  };
  State state() const noexcept { return {seed_, key_, counter_, has_spare_, spare_}; }
  static Rng from_state(const State& s);

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

std::vector<double> sample_standard_normal(Rng& rng, std::size_t n);
Matrix sample_standard_normal(Rng& rng, std::size_t rows, std::size_t cols);

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central differences per coordinate. Throws NumericError when f is not finite.
std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> theta, double h);

void require(bool cond, const std::string& msg);  // throws ShapeError
void require_finite(double v, const std::string& what);

}  // namespace vib
