#include <algorithm>
#include <cstddef>
#include <string>

#include "vib/numcore.hpp"

namespace vib {

namespace {

constexpr std::size_t kRowBlock = 4;

void check_finite(const Matrix& m, const char* op) {
  if (!m.all_finite()) throw NumericError(std::string(op) + ": non-finite result");
}

// c[i,:] = sum_k a[i,k] * b[k,:] with k ascending; rows [i0, i1) at once so
// each b row is streamed once per block.
void gemm_rows(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i0, std::size_t i1) {
  const std::size_t kdim = a.cols();
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < kdim; ++k) {
    const double* brow = b.row(k).data();
    for (std::size_t i = i0; i < i1; ++i) {
      const double aik = a(i, k);
      double* crow = c.row(i).data();
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ (" + std::to_string(a.cols()) +
                                    " vs " + std::to_string(b.rows()) + ")");
  Matrix c(a.rows(), b.cols());
  const auto blocks = static_cast<std::ptrdiff_t>((a.rows() + kRowBlock - 1) / kRowBlock);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * kRowBlock;
    const std::size_t i1 = std::min(i0 + kRowBlock, a.rows());
    gemm_rows(a, b, c, i0, i1);
  }
  check_finite(c, "matmul");
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ (" + std::to_string(a.cols()) +
                                    " vs " + std::to_string(b.cols()) + ")");
  return matmul(a, b.transposed());
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), "matmul_tn: inner dimensions differ (" + std::to_string(a.rows()) +
                                    " vs " + std::to_string(b.rows()) + ")");
  const std::size_t m = a.cols();
  const std::size_t p = b.cols();
  const std::size_t n = a.rows();
  Matrix c(m, p);
  const auto blocks = static_cast<std::ptrdiff_t>((m + kRowBlock - 1) / kRowBlock);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * kRowBlock;
    const std::size_t i1 = std::min(i0 + kRowBlock, m);
    for (std::size_t r = 0; r < n; ++r) {
      const double* brow = b.row(r).data();
      for (std::size_t i = i0; i < i1; ++i) {
        const double ari = a(r, i);
        double* crow = c.row(i).data();
        for (std::size_t j = 0; j < p; ++j) crow[j] += ari * brow[j];
      }
    }
  }
  check_finite(c, "matmul_tn");
  return c;
}

namespace reference {

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  check_finite(c, "reference::matmul");
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      c(i, j) = s;
    }
  check_finite(c, "reference::matmul_nt");
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), "matmul_tn: inner dimensions differ");
  Matrix c(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.rows(); ++k) s += a(k, i) * b(k, j);
      c(i, j) = s;
    }
  check_finite(c, "reference::matmul_tn");
  return c;
}

}  // namespace reference

}  // namespace vib
