#pragma once

#include <vector>

#include "geofuse/pipeline.hpp"
#include "geofuse/priors.hpp"
#include "geofuse/tsdf.hpp"

namespace geofuse {

// 2D planar-region mask: true where the normal image is locally smooth.
// Gradient magnitudes from per-channel 3x3 smoothed derivatives (replicate
// border); pixels over the threshold plus their 8-neighborhoods are
// boundary, the complement is kept. Pixels with no surface count as
// boundary.
struct BoundaryMask2D {
  int width = 0, height = 0;
  std::vector<uint8_t> keep;

  bool at(int x, int y) const { return keep[y * width + x] != 0; }
};

BoundaryMask2D boundary_mask_2d(const CameraView& view, double threshold = 0.3);

// Voxel kept iff it projects validly into >= 1 view and every view seeing it
// samples a kept (planar) pixel (nearest-pixel lookup).
std::vector<uint8_t> backproject_mask(const std::vector<BoundaryMask2D>& masks,
                                      const VoxelGrid& grid,
                                      const std::vector<CameraView>& views);

// Per-voxel agreement between a TSDF-derived normal volume and the
// view-averaged projected normals (camera normals rotated to world).
struct ConsistencyTerms {
  std::vector<double> projected_normal;  // N*3, world frame, renormalized mean
  std::vector<double> similarity;        // N, cos in [-1, 1]
  std::vector<double> weight;            // N, indicator {0,1} or Gaussian (0,1]
  std::vector<uint8_t> defined;          // N
};

ConsistencyTerms consistency_terms(const NormalVolume& normals,
                                   const std::vector<GeoPriors>& priors,
                                   const std::vector<CameraPose>& poses,
                                   bool gaussian_weight = false, double sigma_sq = 0.5);

struct NormalLossValue {
  double value = 0.0;
  int64_t count = 0;  // voxels that actually contributed
};

// Reference (non-differentiable) evaluation of the surface-normal loss:
// 1 - (1/N) sum M3d * W * cos(N_gt, N_pred) over voxels where both normal
// volumes are defined, the boundary mask keeps the voxel, the consistency
// weight is positive, and |S_gt| < 1.
NormalLossValue normal_loss(const TsdfVolume& pred, const TsdfVolume& gt,
                            const std::vector<uint8_t>& mask3d, const ConsistencyTerms& terms);

// Per-voxel weights for the differentiable path (ops::stencil_gradient +
// ops::cosine_direction_loss); grad_pred are the raw stencil values of the
// prediction, used only to gate degenerate rows.
struct NormalLossPlan {
  std::vector<double> weights;     // N; 0 excludes the voxel
  std::vector<double> reference;   // N*3 unit gt normals
  int64_t count = 0;
};

NormalLossPlan normal_loss_plan(const std::vector<double>& grad_pred, const TsdfVolume& gt,
                                const NormalVolume& gt_normals,
                                const std::vector<uint8_t>& mask3d,
                                const ConsistencyTerms& terms, double eps_grad = 1e-6);

// Scene-level supervision targets.
struct GroundTruth {
  TsdfVolume tsdf;
  std::vector<double> occupancy;        // [|S|<1] and observed
  std::vector<uint8_t> observed;        // supervision support
  std::vector<double> proj_occupancy;   // T*N, per-view
  std::vector<uint8_t> proj_valid;      // T*N
  std::vector<uint8_t> mask3d;          // boundary-kept voxels
  NormalVolume gt_normals;
  ConsistencyTerms consistency;
};

struct LossTerms {
  Tensor occupancy;       // BCE on the dense head
  Tensor tsdf;            // masked MAE
  Tensor proj_occupancy;  // BCE on per-view probabilities
  Tensor normal;          // consistent surface-normal loss
  int64_t normal_count = 0;
};

// log_tsdf switches the TSDF regression target/prediction to
// sign(x) * log(1 + |x|) before the MAE.
LossTerms compute_losses(const PipelineOutput& out, const SceneInputs& in,
                         const GroundTruth& gt, bool log_tsdf = false);

struct LossReport {
  double total = 0.0;
  double occupancy = 0.0;
  double tsdf = 0.0;
  double proj_occupancy = 0.0;
  double normal = 0.0;
  int64_t normal_count = 0;
};

struct LossWeights {
  double occupancy = 1.5;
  double tsdf = 1.0;
  double proj_occupancy = 0.5;
  double normal = 0.1;
  int normal_after_epochs = 5;  // normal term active when epoch > this
};

// Weighted total; the normal term joins only after the configured number
// of epochs (and can be ablated away entirely).
Tensor total_loss(const LossTerms& terms, int epoch, const LossWeights& w,
                  bool normal_enabled, LossReport* report);

}  // namespace geofuse
