// OpenMP kernels vs the serial reference on layer-sized products.

#include <benchmark/benchmark.h>

#include "vib/numcore.hpp"

namespace {

vib::Matrix random(std::size_t r, std::size_t c, std::uint64_t seed) {
  vib::Rng rng(seed);
  vib::Matrix m(r, c);
  for (double& v : m.values()) v = rng.normal();
  return m;
}

// Forward pass shape: batch x in times (out x in)^T.
template <vib::Matrix (*F)(const vib::Matrix&, const vib::Matrix&)>
void nt(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const vib::Matrix x = random(100, n, 1), w = random(n, n, 2);
  for (auto _ : st) benchmark::DoNotOptimize(F(x, w));
  st.SetItemsProcessed(st.iterations() * 100 * static_cast<std::int64_t>(n * n));
}

// Weight-gradient shape: (batch x out)^T times batch x in.
template <vib::Matrix (*F)(const vib::Matrix&, const vib::Matrix&)>
void tn(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const vib::Matrix g = random(100, n, 3), x = random(100, n, 4);
  for (auto _ : st) benchmark::DoNotOptimize(F(g, x));
  st.SetItemsProcessed(st.iterations() * 100 * static_cast<std::int64_t>(n * n));
}

template <vib::Matrix (*F)(const vib::Matrix&, const vib::Matrix&)>
void nn(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const vib::Matrix g = random(100, n, 5), w = random(n, n, 6);
  for (auto _ : st) benchmark::DoNotOptimize(F(g, w));
  st.SetItemsProcessed(st.iterations() * 100 * static_cast<std::int64_t>(n * n));
}

}  // namespace

BENCHMARK(nt<vib::matmul_nt>)->Name("matmul_nt/omp")->Arg(128)->Arg(784)->Arg(1024);
BENCHMARK(nt<vib::reference::matmul_nt>)->Name("matmul_nt/reference")->Arg(128)->Arg(784)->Arg(1024);
BENCHMARK(tn<vib::matmul_tn>)->Name("matmul_tn/omp")->Arg(128)->Arg(784)->Arg(1024);
BENCHMARK(tn<vib::reference::matmul_tn>)->Name("matmul_tn/reference")->Arg(128)->Arg(784)->Arg(1024);
BENCHMARK(nn<vib::matmul>)->Name("matmul/omp")->Arg(128)->Arg(784)->Arg(1024);
BENCHMARK(nn<vib::reference::matmul>)->Name("matmul/reference")->Arg(128)->Arg(784)->Arg(1024);

BENCHMARK_MAIN();
