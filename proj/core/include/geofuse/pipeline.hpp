#pragma once

#include <string>
#include <vector>

#include "geofuse/camera.hpp"
#include "geofuse/nn.hpp"
#include "geofuse/priors.hpp"
#include "geofuse/render.hpp"
#include "geofuse/voxel_grid.hpp"

namespace geofuse {

struct AblationConfig {
  bool transformer = true;
  bool prior_view_dir = true;   // viewing direction (raw + encoded)
  bool prior_depth = true;      // projected depth (raw + encoded)
  bool prior_angle = true;      // viewing angle
  bool prior_normal = true;     // projected normal fed to stage 2
  bool encoding = true;         // frequency encoding of direction/depth
  bool normal_loss = true;
  std::string fusion = "adaptive";  // "adaptive" | "average"
  bool fuse_raw_features = false;   // fuse back-projected features instead of
                                    // stage-2 features
};

struct PipelineConfig {
  int64_t feature_channels = 32;  // per-view voxel feature width
  int views = 9;
  int heads = 2;
  int encode_levels = 4;
  AblationConfig ablation;

  // Geometry-vector width: encoded direction + encoded depth + raw
  // direction, depth, angle.
  int64_t geo_channels() const { return 6 * encode_levels + 2 * encode_levels + 5; }
  int64_t fusion_channels() const { return 9 * static_cast<int64_t>(views); }
};

// All learnable blocks. Construction asserts the channel contract:
// geometry MLP input 37 (L=4) and fusion MLP input 9T.
struct PipelineParams {
  ParamSet set;
  LinearParams stem;                      // pixel features -> C_v
  std::vector<LinearParams> geo_mlp;      // [37, 32, 1], rectifier after each
  LinearParams stage1_reduce;             // C_v + 1 -> C_v
  TransformerParams stage1_block;
  LinearParams stage2_reduce;             // C_v + 3 -> C_v
  TransformerParams stage2_block;
  LinearParams proj_occ_head;             // C_v -> 1
  std::vector<LinearParams> fusion_mlp;   // [9T, 32, 32, T], rectifier after first two
  LinearParams head_conv1, head_conv2;    // dense 3x3x3 convolutions
  LinearParams head_tsdf, head_occ;       // C_v -> 1 each
};

PipelineParams build_pipeline_params(const PipelineConfig& cfg, uint64_t seed);

// Per-scene constants the forward pass consumes; built once per scene and
// reused across training steps.
struct SceneInputs {
  VoxelGrid grid;
  std::vector<CameraView> views;
  std::vector<GeoPriors> priors;
  RelPoseDistances pose_distances;
  ViewMask mask;                       // priors validity, [T, N]
  std::vector<Tensor> pixel_features;  // per view [HW, C_px] constants
  std::vector<BilinearPlan> plans;     // per view, rows = N
  std::vector<double> pose_mean, pose_std;  // 3T each, slot order
  std::vector<double> geo;             // [T, N, 37] constants (ablation-masked)
  std::vector<double> proj_normals;    // [T, N, 3] constants
  // Canonical (pose-sorted) fusion slot order: fusion_order[slot] = view.
  // The fusion stack reads per-view statistics in this order, so its dense
  // layers see the same channels no matter how the caller ordered the views.
  std::vector<int> fusion_order;
};

SceneInputs build_scene_inputs(const std::vector<CameraView>& views, const VoxelGrid& grid,
                               const PipelineConfig& cfg);

struct PipelineOutput {
  Tensor tsdf;        // [N] in (-1, 1)
  Tensor occupancy;   // [N] probabilities
  Tensor proj_occ;    // [T, N] per-view probabilities (unmasked sigmoid)
  Tensor weights;     // [N, T] fusion weights, zero on invalid views
  Tensor fused;       // [N, C]
  Tensor attn_stage1; // [T, T, N] head-averaged
  Tensor attn_stage2; // [T, T, N]
  std::vector<uint8_t> any_valid;  // per voxel: seen by >= 1 view
};

// Full forward pass (differentiable through every learnable block and the
// attention-statistics path).
PipelineOutput run_pipeline(const SceneInputs& in, const PipelineParams& params,
                            const PipelineConfig& cfg);

// Grid covering the scene's room with a fixed cubic resolution plus a
// two-voxel apron outside the walls.
VoxelGrid fit_grid(const Scene& scene, int64_t dims);

}  // namespace geofuse
