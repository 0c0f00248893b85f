#include <benchmark/benchmark.h>

#include "geofuse/common.hpp"
#include "geofuse/nn.hpp"

using namespace geofuse;

namespace {

void BM_TransformerBlock(benchmark::State& state) {
  const int64_t T = 9, N = state.range(0), C = 16;
  Rng rng(3);
  std::vector<double> x(T * N * C);
  for (auto& v : x) v = rng.uniform(-1, 1);
  ParamSet set;
  Rng init(4);
  TransformerParams block = add_transformer(set, "b", C, 2, init);
  ViewMask mask;
  mask.views = T;
  mask.voxels = N;
  mask.valid.assign(T * N, 1);
  for (auto _ : state) {
    Tensor in = Tensor::constant({T, N, C}, x);
    TransformerOut out = transformer_block(in, block, mask);
    benchmark::DoNotOptimize(out.output.values().data());
  }
}

void BM_TransformerBackward(benchmark::State& state) {
  const int64_t T = 9, N = state.range(0), C = 16;
  Rng rng(3);
  std::vector<double> x(T * N * C);
  for (auto& v : x) v = rng.uniform(-1, 1);
  ParamSet set;
  Rng init(4);
  TransformerParams block = add_transformer(set, "b", C, 2, init);
  ViewMask mask;
  mask.views = T;
  mask.voxels = N;
  mask.valid.assign(T * N, 1);
  for (auto _ : state) {
    set.zero_grads();
    Tensor in = Tensor::constant({T, N, C}, x);
    TransformerOut out = transformer_block(in, block, mask);
    backward(ops::mean_all(out.output));
    benchmark::DoNotOptimize(out.output.values().data());
  }
}

}  // namespace

BENCHMARK(BM_TransformerBlock)->Arg(4096)->Arg(8000);
BENCHMARK(BM_TransformerBackward)->Arg(4096)->Arg(8000);
