// Serial reference kernels against the OpenMP ones at model shapes.
// Sequence length is the benchmark argument.

#include <benchmark/benchmark.h>

#include <random>

#include "editlab/kernels.hpp"
#include "editlab/model.hpp"

namespace {

using namespace editlab;

template <typename T>
Matrix<T> random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix<T> m(r, c);
  for (auto& v : m.flat()) v = static_cast<T>(n(rng));
  return m;
}

constexpr std::size_t kModel = 64, kFf = 256;

template <bool Parallel>
void BM_matmul_nt(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const auto x = random_matrix<double>(t, kModel, 1);
  const auto w = random_matrix<float>(kFf, kModel, 2);
  MatrixD y(t, kFf);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::matmul_nt(x, w, y);
    else
      kernels::reference::matmul_nt(x, w, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_matmul_nn_acc(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const auto dy = random_matrix<double>(t, kFf, 1);
  const auto w = random_matrix<float>(kFf, kModel, 2);
  MatrixD dx(t, kModel);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::matmul_nn_acc(dy, w, dx);
    else
      kernels::reference::matmul_nn_acc(dy, w, dx);
    benchmark::DoNotOptimize(dx.data());
  }
}

template <bool Parallel>
void BM_matmul_tn_acc(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const auto dy = random_matrix<double>(t, kFf, 1);
  const auto x = random_matrix<double>(t, kModel, 2);
  MatrixD dw(kFf, kModel);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::matmul_tn_acc(dy, x, dw);
    else
      kernels::reference::matmul_tn_acc(dy, x, dw);
    benchmark::DoNotOptimize(dw.data());
  }
}

template <bool Parallel>
void BM_attention(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const auto q = random_matrix<double>(t, kModel, 1);
  const auto k = random_matrix<double>(t, kModel, 2);
  const auto v = random_matrix<double>(t, kModel, 3);
  std::vector<MatrixD> att;
  MatrixD ctx(t, kModel);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::causal_attention(q, k, v, 2, att, ctx);
    else
      kernels::reference::causal_attention(q, k, v, 2, att, ctx);
    benchmark::DoNotOptimize(ctx.data());
  }
}

void BM_forward(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const auto model = ModelState::initialise(ArchSpec{}, 1);
  std::vector<TokenId> tokens(t);
  for (std::size_t i = 0; i < t; ++i) tokens[i] = static_cast<TokenId>(i % 200);
  ForwardOptions opts;
  opts.trace = true;
  for (auto _ : state) benchmark::DoNotOptimize(forward(model, tokens, opts).logits.data());
}

}  // namespace

BENCHMARK(BM_matmul_nt<false>)->Arg(8)->Arg(64)->Name("matmul_nt/serial");
BENCHMARK(BM_matmul_nt<true>)->Arg(8)->Arg(64)->Name("matmul_nt/omp");
BENCHMARK(BM_matmul_nn_acc<false>)->Arg(8)->Arg(64)->Name("matmul_nn_acc/serial");
BENCHMARK(BM_matmul_nn_acc<true>)->Arg(8)->Arg(64)->Name("matmul_nn_acc/omp");
BENCHMARK(BM_matmul_tn_acc<false>)->Arg(8)->Arg(64)->Name("matmul_tn_acc/serial");
BENCHMARK(BM_matmul_tn_acc<true>)->Arg(8)->Arg(64)->Name("matmul_tn_acc/omp");
BENCHMARK(BM_attention<false>)->Arg(8)->Arg(64)->Name("attention/serial");
BENCHMARK(BM_attention<true>)->Arg(8)->Arg(64)->Name("attention/omp");
BENCHMARK(BM_forward)->Arg(8)->Arg(64)->Name("forward");

BENCHMARK_MAIN();
