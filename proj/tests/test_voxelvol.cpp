#include <doctest.h>

#include <cmath>

#include "geofuse/marching_cubes.hpp"
#include "geofuse/render.hpp"
#include "geofuse/tsdf.hpp"

using namespace geofuse;

namespace {

CameraView flat_depth_view(double depth, int size = 64) {
  CameraView view;
  view.intrinsics = default_intrinsics(size, size);
  const int64_t hw = static_cast<int64_t>(size) * size;
  view.depth.assign(hw, depth);
  view.normal.assign(3 * hw, 0.0);
  for (int64_t i = 0; i < hw; ++i) view.normal[2 * hw + i] = -1.0;  // facing the camera
  return view;
}

}  // namespace

TEST_CASE("fusion rejects an empty view list") {
  VoxelGrid grid;
  grid.dims = {4, 4, 4};
  CHECK_THROWS_AS(fuse_depth_to_tsdf({}, grid, 0.1), ValidationError);
}

TEST_CASE("single flat view: S linear along rays, zero at the surface") {
  const CameraView view = flat_depth_view(1.0);
  VoxelGrid grid;
  grid.voxel_size = 0.02;
  grid.dims = {3, 3, 41};
  grid.origin = Vec3(-0.02, -0.02, 0.6);
  const double trunc = 3 * grid.voxel_size;
  const TsdfVolume vol = fuse_depth_to_tsdf({view}, grid, trunc);

  for (int64_t z = 0; z < grid.dims.nz; ++z) {
    const int64_t i = grid.index(1, 1, z);
    const double depth = grid.center(1, 1, z).z();
    const double sdf = 1.0 - depth;
    if (sdf < -trunc) {
      CHECK(vol.observed[i] == 0);  // unknown behind the surface
      CHECK(vol.values[i] == 1.0);
    } else {
      CHECK(vol.observed[i] == 1);
      CHECK(vol.values[i] == doctest::Approx(std::min(1.0, sdf / trunc)).epsilon(1e-12));
    }
  }
  // zero-crossing at the surface
  const int64_t zs = static_cast<int64_t>(std::lround((1.0 - grid.origin.z()) / 0.02));
  CHECK(std::abs(vol.values[grid.index(1, 1, zs)]) < 1e-9);
}

TEST_CASE("two identical views fuse to the single-view volume") {
  const CameraView view = flat_depth_view(1.2);
  VoxelGrid grid;
  grid.voxel_size = 0.03;
  grid.dims = {5, 5, 21};
  grid.origin = Vec3(-0.06, -0.06, 0.8);
  const TsdfVolume one = fuse_depth_to_tsdf({view}, grid, 0.09);
  const TsdfVolume two = fuse_depth_to_tsdf({view, view}, grid, 0.09);
  for (int64_t i = 0; i < grid.count(); ++i) {
    CHECK(one.values[i] == two.values[i]);
    CHECK(one.observed[i] == two.observed[i]);
    CHECK(two.weights[i] == 2 * one.weights[i]);
  }
}

TEST_CASE("fusion is byte-identical under view permutation") {
  const Scene scene = generate_scene(21, {});
  const CameraIntrinsics k = default_intrinsics(48, 48);
  std::vector<CameraView> views;
  for (const auto& pose : orbit_poses(scene, 6)) views.push_back(render_view(scene, k, pose));
  VoxelGrid grid;
  grid.voxel_size = scene.room_extent().maxCoeff() / 13;
  grid.dims = {12, 12, 12};
  grid.origin = scene.room_center() - 0.5 * grid.voxel_size * Vec3::Constant(11);

  const TsdfVolume a = fuse_depth_to_tsdf(views, grid, 3 * grid.voxel_size);
  std::vector<CameraView> shuffled{views[4], views[1], views[5], views[0], views[3], views[2]};
  const TsdfVolume b = fuse_depth_to_tsdf(shuffled, grid, 3 * grid.voxel_size);
  for (int64_t i = 0; i < grid.count(); ++i) {
    CHECK(a.values[i] == b.values[i]);
    CHECK(a.weights[i] == b.weights[i]);
    CHECK(a.observed[i] == b.observed[i]);
  }
}

TEST_CASE("sphere scene, 9 views: fused zero-crossing within half a voxel of the sphere") {
  Scene scene = generate_scene(22, {.empty_room = true});
  SpherePrim sphere;
  sphere.center = scene.room_center();
  sphere.radius = 0.4;
  scene.spheres.push_back(sphere);

  const CameraIntrinsics k = default_intrinsics(160, 160);
  std::vector<CameraView> views;
  for (const auto& pose : orbit_poses(scene, 9)) views.push_back(render_view(scene, k, pose));

  VoxelGrid grid;
  grid.voxel_size = 0.04;
  grid.dims = {26, 26, 26};
  grid.origin = sphere.center - 0.5 * grid.voxel_size * Vec3::Constant(25);
  const TsdfVolume vol = fuse_depth_to_tsdf(views, grid, 3 * grid.voxel_size);

  // The interpolated zero-crossing (marching cubes vertices near the sphere)
  // must sit within half a voxel of the analytic surface.
  const Mesh mesh = marching_cubes(vol);
  REQUIRE(!mesh.empty());
  int checked = 0;
  for (const auto& v : mesh.vertices) {
    const double r = (v - sphere.center).norm();
    if (r > sphere.radius + 2 * grid.voxel_size) continue;  // room walls etc.
    CHECK(std::abs(r - sphere.radius) <= 0.5 * grid.voxel_size);
    ++checked;
  }
  CHECK(checked > 500);
}

TEST_CASE("tsdf normals: axis-aligned linear field gives +z everywhere defined") {
  VoxelGrid grid;
  grid.voxel_size = 0.05;
  grid.dims = {8, 8, 8};
  grid.origin = Vec3::Zero();
  TsdfVolume vol;
  vol.init(grid, 0.15);
  for (int64_t i = 0; i < grid.count(); ++i) {
    vol.values[i] = (grid.center_linear(i).z() - 0.2) / 0.15;  // unclamped linear field
    vol.observed[i] = 1;
  }
  const NormalVolume nv = tsdf_normals(vol);
  int defined = 0;
  for (int64_t i = 0; i < grid.count(); ++i) {
    if (!nv.defined[i]) continue;
    ++defined;
    CHECK(std::abs(nv.normals[i * 3 + 0]) < 1e-6);
    CHECK(std::abs(nv.normals[i * 3 + 1]) < 1e-6);
    CHECK(nv.normals[i * 3 + 2] == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(defined == 6 * 6 * 6);
}

TEST_CASE("tsdf normals exact for arbitrary linear fields") {
  Rng rng(24);
  VoxelGrid grid;
  grid.voxel_size = 0.04;
  grid.dims = {6, 7, 5};
  grid.origin = Vec3(0.3, -0.2, 0.1);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec3 a(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const double b = rng.uniform(-0.5, 0.5);
    if (a.norm() < 0.1) continue;
    TsdfVolume vol;
    vol.init(grid, 1.0);
    for (int64_t i = 0; i < grid.count(); ++i) {
      vol.values[i] = a.dot(grid.center_linear(i)) + b;
      vol.observed[i] = 1;
    }
    const NormalVolume nv = tsdf_normals(vol);
    const Vec3 expect = a.normalized();
    for (int64_t i = 0; i < grid.count(); ++i) {
      if (!nv.defined[i]) continue;
      const Vec3 n(nv.normals[i * 3], nv.normals[i * 3 + 1], nv.normals[i * 3 + 2]);
      CHECK((n - expect).norm() < 1e-6);
    }
  }
}

TEST_CASE("tsdf normals: constant field has no defined normals") {
  VoxelGrid grid;
  grid.voxel_size = 0.05;
  grid.dims = {6, 6, 6};
  TsdfVolume vol;
  vol.init(grid, 0.15);
  for (int64_t i = 0; i < grid.count(); ++i) {
    vol.values[i] = 0.37;
    vol.observed[i] = 1;
  }
  const NormalVolume nv = tsdf_normals(vol);
  for (int64_t i = 0; i < grid.count(); ++i) CHECK(nv.defined[i] == 0);
}

TEST_CASE("tsdf normals: analytic sphere, mean angular error < 2 degrees on |S| < 0.5") {
  // 32^3 grid at 4 cm voxels.
  VoxelGrid grid;
  grid.voxel_size = 0.04;
  grid.dims = {32, 32, 32};
  grid.origin = -0.5 * grid.voxel_size * Vec3::Constant(31);
  const double radius = 0.45;
  const double trunc = 3 * grid.voxel_size;
  TsdfVolume vol;
  vol.init(grid, trunc);
  for (int64_t i = 0; i < grid.count(); ++i) {
    const double sdf = grid.center_linear(i).norm() - radius;
    vol.values[i] = std::min(1.0, std::max(-1.0, sdf / trunc));
    vol.observed[i] = 1;
  }
  const NormalVolume nv = tsdf_normals(vol);
  double angle_sum = 0.0;
  int count = 0;
  for (int64_t i = 0; i < grid.count(); ++i) {
    if (!nv.defined[i] || std::abs(vol.values[i]) >= 0.5) continue;
    const Vec3 radial = grid.center_linear(i).normalized();
    const Vec3 n(nv.normals[i * 3], nv.normals[i * 3 + 1], nv.normals[i * 3 + 2]);
    const double c = std::min(1.0, std::max(-1.0, n.dot(radial)));
    angle_sum += std::acos(c) * 180.0 / M_PI;
    ++count;
  }
  REQUIRE(count > 500);
  CHECK(angle_sum / count < 2.0);
}

TEST_CASE("tsdf normals undefined next to unobserved voxels and at the boundary") {
  VoxelGrid grid;
  grid.voxel_size = 0.05;
  grid.dims = {7, 7, 7};
  TsdfVolume vol;
  vol.init(grid, 0.15);
  for (int64_t i = 0; i < grid.count(); ++i) {
    vol.values[i] = grid.center_linear(i).x();
    vol.observed[i] = 1;
  }
  vol.observed[grid.index(3, 3, 3)] = 0;
  const NormalVolume nv = tsdf_normals(vol);
  // all 26 neighbors of the hole (and the hole) undefined
  for (int64_t dz = -1; dz <= 1; ++dz)
    for (int64_t dy = -1; dy <= 1; ++dy)
      for (int64_t dx = -1; dx <= 1; ++dx)
        CHECK(nv.defined[grid.index(3 + dx, 3 + dy, 3 + dz)] == 0);
  // boundary voxels undefined
  CHECK(nv.defined[grid.index(0, 3, 3)] == 0);
  CHECK(nv.defined[grid.index(3, 0, 3)] == 0);
  CHECK(nv.defined[grid.index(3, 3, 6)] == 0);
  // far interior voxel defined
  CHECK(nv.defined[grid.index(1, 1, 1)] == 1);
}
