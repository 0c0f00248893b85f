#pragma once

#include <optional>
#include <string>
#include <vector>

#include "geofuse/losses.hpp"
#include "geofuse/marching_cubes.hpp"
#include "geofuse/pipeline.hpp"
#include "geofuse/scene.hpp"

namespace geofuse {

struct TrainConfig {
  uint64_t seed = 7;
  int epochs = 20;
  int batch = 4;  // scenes per optimizer step
  double learning_rate = 1e-3;
  double rms_decay = 0.95;
  double lr_decay = 1.0;  // per-epoch multiplier
  int scene_count = 8;
  int image_size = 64;
  int64_t grid_dims = 20;
  bool occluder_scenes = true;  // every other scene gets a wall occluder
  PipelineConfig pipeline;
  LossWeights loss_weights;
  bool gaussian_consistency = false;
  bool log_tsdf = false;
  double boundary_threshold = 0.3;
  std::string out_dir = "run";
  std::vector<std::string> scene_files;  // optional; overrides generation
};

// Analytic ground-truth volumes: S = clamp(sdf / t, -1, 1) over the grid,
// occupancy = [|S| < 1]; everything inside the grid counts as observed.
void ground_truth_volumes(const Scene& scene, const VoxelGrid& grid, double truncation,
                          TsdfVolume* tsdf, std::vector<double>* occupancy);

GroundTruth make_ground_truth(const Scene& scene, const SceneInputs& in,
                              const TrainConfig& cfg);

// Momentum-free adaptive per-parameter step (RMS-normalized gradient).
class RmsOptimizer {
 public:
  RmsOptimizer(ParamSet& params, double lr, double decay);
  void step(double scale, double lr_override = -1.0);
  void zero_grad();

 private:
  ParamSet& params_;
  double lr_, decay_;
  std::vector<std::vector<double>> state_;
};

struct TrainResult {
  std::string checkpoint_path;
  std::string log_path;
  int steps = 0;
  double final_loss = 0.0;
};

// Full loop: scene generation (or loading), rendering, forward/backward,
// adaptive updates, per-epoch checkpoints, JSON-lines log. Deterministic
// given the config; aborts (std::runtime_error) on non-finite loss with the
// offending step in the message and the log flushed.
TrainResult train(const TrainConfig& cfg);

struct Reconstruction {
  TsdfVolume volume;
  Mesh mesh;
};

// Forward pass on one scene, masked by predicted occupancy > 0.5, then
// isosurface extraction.
Reconstruction reconstruct(const Scene& scene, const PipelineParams& params,
                           const TrainConfig& cfg);

// F-score etc. of a reconstruction against analytically sampled surfaces.
MeshMetrics evaluate_against_scene(const Mesh& mesh, const Scene& scene, double threshold,
                                   double density = 1e4);

// Deterministic per-scene views for a config (orbit with coverage check).
std::vector<CameraView> scene_views(const Scene& scene, const TrainConfig& cfg);

Scene training_scene(uint64_t base_seed, int index, bool occluders);

}  // namespace geofuse
