#pragma once

#include "geofuse/common.hpp"
#include "geofuse/ops.hpp"

namespace geofuse {

// Axis-aligned voxel grid. origin is the world position of the center of
// voxel (0,0,0); linear indices run x-fastest: idx = i + nx*(j + ny*k),
// matching the on-disk volume layout.
struct VoxelGrid {
  Vec3 origin = Vec3::Zero();
  double voxel_size = 0.04;
  Dims3 dims;

  void validate() const {
    require(voxel_size > 0.0, "voxel grid: voxel_size must be positive");
    require(dims.nx >= 2 && dims.ny >= 2 && dims.nz >= 2, "voxel grid: dims must be >= 2");
  }

  int64_t count() const { return dims.count(); }
  int64_t index(int64_t i, int64_t j, int64_t k) const {
    return i + dims.nx * (j + dims.ny * k);
  }
  Vec3 center(int64_t i, int64_t j, int64_t k) const {
    return origin + voxel_size * Vec3(static_cast<double>(i), static_cast<double>(j),
                                      static_cast<double>(k));
  }
  Vec3 center_linear(int64_t idx) const {
    const int64_t i = idx % dims.nx;
    const int64_t j = (idx / dims.nx) % dims.ny;
    const int64_t k = idx / (dims.nx * dims.ny);
    return center(i, j, k);
  }
};

}  // namespace geofuse
