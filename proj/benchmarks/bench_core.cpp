#include <benchmark/benchmark.h>

#include <mda/feature_align.hpp>

using namespace mda;

namespace {

Matrix seeded(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  return rng.gaussian_matrix(rows, cols);
}

void bm_svd(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  const Matrix a = seeded(n, n, 0);
  for (auto _ : state) benchmark::DoNotOptimize(svd(a));
}
BENCHMARK(bm_svd)->Arg(32)->Arg(128)->Arg(512);

void bm_build_etf(benchmark::State& state) {
  const Eigen::Index c = state.range(0);
  for (auto _ : state) benchmark::DoNotOptimize(build_etf(c, 2 * c, 0));
}
BENCHMARK(bm_build_etf)->Arg(16)->Arg(128)->Arg(512);

void bm_shared_subspace(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  std::vector<TaskVector> vectors;
  for (std::uint64_t t = 0; t < 4; ++t) {
    TaskVector v;
    v.layers.emplace("w1", seeded(n, n, t));
    v.layers.emplace("w2", seeded(n, n, 10 + t));
    vectors.push_back(std::move(v));
  }
  MdaConfig cfg;
  cfg.num_classes = 12;
  for (auto _ : state) benchmark::DoNotOptimize(shared_subspace(vectors, cfg));
}
BENCHMARK(bm_shared_subspace)->Arg(32)->Arg(128)->Arg(256);

void bm_procrustes(benchmark::State& state) {
  const Eigen::Index d = state.range(0);
  const Matrix m = seeded(2 * d, d, 1);
  const Matrix target = seeded(2 * d, d, 2);
  for (auto _ : state) benchmark::DoNotOptimize(procrustes(m, target));
}
BENCHMARK(bm_procrustes)->Arg(8)->Arg(32)->Arg(128);

void bm_cayley(benchmark::State& state) {
  const Eigen::Index d = state.range(0);
  const Matrix g = seeded(d, d, 3);
  const Matrix a = 0.5 * (g - g.transpose());
  for (auto _ : state) benchmark::DoNotOptimize(cayley(a));
}
BENCHMARK(bm_cayley)->Arg(8)->Arg(32)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
