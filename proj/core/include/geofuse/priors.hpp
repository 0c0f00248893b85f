#pragma once

#include <span>
#include <vector>

#include "geofuse/camera.hpp"
#include "geofuse/voxel_grid.hpp"

namespace geofuse {

// Per-view, per-voxel geometric priors. view_dir is the unit camera-to-voxel
// direction in the world frame; proj_depth is camera depth normalized by
// kMaxDepth; view_angle = |cos| between the projected normal and the viewing
// direction (both in the camera frame); proj_normal is the bilinearly sampled,
// renormalized 2D normal (camera frame). Invalid voxels carry zeros.
struct GeoPriors {
  int64_t voxels = 0;
  std::vector<double> view_dir;     // N*3, interleaved
  std::vector<double> proj_depth;   // N, in (0, 1]
  std::vector<double> view_angle;   // N, in [0, 1]
  std::vector<double> proj_normal;  // N*3, interleaved
  std::vector<uint8_t> valid;       // N
};

GeoPriors compute_geo_priors(const VoxelGrid& grid, const CameraView& view);

// Frequency encoding: per input dimension emits
// (sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{L-1} pi x), cos(2^{L-1} pi x)),
// dimension-major, so the output has 2L entries per dimension.
std::vector<double> positional_encode(std::span<const double> x, int levels);

// Pairwise pose distances. rot = sqrt((2/3) tr(I - R_rel)), trans = |t_rel|,
// overall^2 = rot^2 + trans^2; the relative transform is pose_k expressed in
// pose_j's frame.
struct RelPoseDistances {
  int64_t count = 0;
  std::vector<double> rot, trans, overall;  // T*T row-major

  double rot_at(int64_t j, int64_t k) const { return rot[j * count + k]; }
  double trans_at(int64_t j, int64_t k) const { return trans[j * count + k]; }
  double overall_at(int64_t j, int64_t k) const { return overall[j * count + k]; }
};

RelPoseDistances relative_pose_distance(const std::vector<CameraPose>& poses);

// Camera-frame projective TSDF: clamp((depth_map(pi(p)) - z(p)) / t, -1, 1)
// with nearest-pixel depth lookup. Voxels outside the frustum or hitting
// no-surface pixels are invalid.
struct ScalarField {
  std::vector<double> value;
  std::vector<uint8_t> valid;
};

ScalarField projective_tsdf(const VoxelGrid& grid, const CameraView& view, double truncation);

// Indicator functions of the projective TSDF (normalized units): occupancy
// = [|S_p| < band], visibility = [S_p >= 0]. Invalid voxels report 0/0.
struct OccupancyVisibility {
  std::vector<uint8_t> occupancy;
  std::vector<uint8_t> visibility;
};

OccupancyVisibility projective_occupancy_visibility(const ScalarField& field, double band = 1.0);

}  // namespace geofuse
