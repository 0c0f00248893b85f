#include <benchmark/benchmark.h>

#include "geofuse/render.hpp"
#include "geofuse/tsdf.hpp"

using namespace geofuse;

namespace {

void BM_TsdfFusion(benchmark::State& state) {
  const Scene scene = generate_scene(5, {});
  const CameraIntrinsics k = default_intrinsics(64, 64);
  std::vector<CameraView> views;
  for (const auto& pose : orbit_poses(scene, 9)) views.push_back(render_view(scene, k, pose));
  VoxelGrid grid;
  const int64_t dims = state.range(0);
  grid.voxel_size = scene.room_extent().maxCoeff() / (dims - 5);
  grid.dims = {dims, dims, dims};
  grid.origin = scene.room_center() - 0.5 * grid.voxel_size * Vec3::Constant(double(dims - 1));
  for (auto _ : state) {
    TsdfVolume vol = fuse_depth_to_tsdf(views, grid, default_truncation(grid));
    benchmark::DoNotOptimize(vol.values.data());
  }
}

}  // namespace

BENCHMARK(BM_TsdfFusion)->Arg(24)->Arg(48);
