#pragma once

#include <vector>

#include "geofuse/camera.hpp"
#include "geofuse/voxel_grid.hpp"

namespace geofuse {

// Truncated signed distance volume; values clamped to [-1, 1] in units of
// the truncation distance, positive in free space. Unobserved voxels carry
// +1 (empty-space prior) and weight 0.
struct TsdfVolume {
  VoxelGrid grid;
  double truncation = 0.12;
  std::vector<double> values;
  std::vector<double> weights;
  std::vector<uint8_t> observed;

  void init(const VoxelGrid& g, double trunc) {
    grid = g;
    truncation = trunc;
    values.assign(g.count(), 1.0);
    weights.assign(g.count(), 0.0);
    observed.assign(g.count(), 0);
  }
};

// Default truncation: 3 voxels on either side of the surface.
inline double default_truncation(const VoxelGrid& g) { return 3.0 * g.voxel_size; }

// Classical weighted-average fusion of per-view projective TSDFs. A view
// contributes to a voxel when the voxel is valid for it and its metric
// signed distance is >= -truncation (space far behind an observed surface is
// unknown, not empty). Per-voxel contributions are reduced in value-sorted
// order with compensated summation, so the result is byte-identical under
// any permutation of the view list.
TsdfVolume fuse_depth_to_tsdf(const std::vector<CameraView>& views, const VoxelGrid& grid,
                              double truncation);

struct NormalVolume {
  VoxelGrid grid;
  std::vector<double> normals;  // N*3 interleaved, unit where defined
  std::vector<uint8_t> defined;
};

// Surface normals as the normalized 3x3x3 smoothed derivative of the TSDF.
// Undefined at grid-boundary voxels, wherever the stencil touches an
// unobserved voxel, and where the gradient magnitude falls under eps_grad.
NormalVolume tsdf_normals(const TsdfVolume& vol, double eps_grad = 1e-6);

// Raw (unnormalized) stencil derivative used by tsdf_normals; exposed for
// supervision code that differentiates through the same stencil. Scale is
// 1 / (2 * voxel_size * 9).
void tsdf_gradient_raw(const std::vector<double>& s, const VoxelGrid& grid,
                       std::vector<double>* grad);

}  // namespace geofuse
