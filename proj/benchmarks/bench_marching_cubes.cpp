#include <benchmark/benchmark.h>

#include "geofuse/marching_cubes.hpp"

using namespace geofuse;

namespace {

TsdfVolume sphere_volume(int64_t dims) {
  VoxelGrid grid;
  grid.voxel_size = 2.0 / dims;
  grid.dims = {dims, dims, dims};
  grid.origin = Vec3(-1, -1, -1);
  TsdfVolume vol;
  vol.init(grid, 3 * grid.voxel_size);
  for (int64_t i = 0; i < grid.count(); ++i) {
    const double s = (grid.center_linear(i).norm() - 0.7) / vol.truncation;
    vol.values[i] = std::min(1.0, std::max(-1.0, s));
    vol.observed[i] = 1;
  }
  return vol;
}

void BM_MarchingCubes(benchmark::State& state) {
  const TsdfVolume vol = sphere_volume(state.range(0));
  for (auto _ : state) {
    Mesh mesh = marching_cubes(vol);
    benchmark::DoNotOptimize(mesh.vertices.data());
  }
}

}  // namespace

BENCHMARK(BM_MarchingCubes)->Arg(32)->Arg(64);
