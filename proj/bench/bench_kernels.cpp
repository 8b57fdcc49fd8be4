/// Serial level loops vs OpenMP level loops vs the depth-first reference.

#include <benchmark/benchmark.h>

#include "nullctl/scenario.hpp"
#include "nullctl/seed.hpp"
#include "nullctl/spde.hpp"

using namespace nullctl;

namespace {

struct Setup {
  ScenarioTree tree;
  SpatialMesh mesh;
  ForwardProblem fwd;
  BackwardProblem bwd;

  Setup(int N, int M)
      : tree(N, 0.5), mesh(0, 1, M, {0.25, 0.45}, {0.3, 0.4}) {
    Rng rng(17);
    fwd.coef.a = sample_adapted_coefficients(tree, mesh, 3, 0.5, 1.5, 0.5);
    fwd.z0.resize(M);
    for (double& v : fwd.z0) v = rng.normal();
    fwd.phi2 = AdaptedField(tree, M);
    for (double& v : fwd.phi2.raw()) v = rng.normal();
    bwd.coef = fwd.coef;
    bwd.yT = AdaptedField(tree, M);
    for (double& v : bwd.yT.raw()) v = rng.normal();
  }
};

Setup& setup(int N) {
  static Setup s10(10, 101), s14(14, 101);
  return N == 10 ? s10 : s14;
}

void BM_forward(benchmark::State& st) {
  auto& s = setup(static_cast<int>(st.range(0)));
  SchemeOptions opt;
  opt.exec = st.range(1) ? Exec::Parallel : Exec::Serial;
  for (auto _ : st) benchmark::DoNotOptimize(solve_forward(s.fwd, s.tree, s.mesh, opt));
}

void BM_backward(benchmark::State& st) {
  auto& s = setup(static_cast<int>(st.range(0)));
  SchemeOptions opt;
  opt.exec = st.range(1) ? Exec::Parallel : Exec::Serial;
  for (auto _ : st) benchmark::DoNotOptimize(solve_backward(s.bwd, s.tree, s.mesh, opt));
}

void BM_forward_reference(benchmark::State& st) {
  auto& s = setup(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(reference::solve_forward(s.fwd, s.tree, s.mesh, 0.6));
}

void BM_backward_reference(benchmark::State& st) {
  auto& s = setup(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(reference::solve_backward(s.bwd, s.tree, s.mesh, 0.6));
}

}  // namespace

BENCHMARK(BM_forward)->ArgsProduct({{10, 14}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_backward)->ArgsProduct({{10, 14}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_forward_reference)->Arg(10)->Arg(14)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_backward_reference)->Arg(10)->Arg(14)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
