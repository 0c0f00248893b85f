#include <benchmark/benchmark.h>

#include "geofuse/common.hpp"
#include "geofuse/metrics.hpp"

using namespace geofuse;

namespace {

void BM_NearestNeighbor(benchmark::State& state) {
  Rng rng(9);
  std::vector<Vec3> cloud(state.range(0));
  for (auto& p : cloud) p = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
  const PointIndex index(cloud, 0.05);
  std::vector<Vec3> queries(1024);
  for (auto& q : queries) q = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
  for (auto _ : state) {
    double acc = 0;
    for (const auto& q : queries) acc += index.nearest(q).second;
    benchmark::DoNotOptimize(acc);
  }
}

}  // namespace

BENCHMARK(BM_NearestNeighbor)->Arg(10000)->Arg(100000);
