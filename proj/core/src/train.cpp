#include "geofuse/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "geofuse/fsio.hpp"
#include "geofuse/threading.hpp"

namespace geofuse {

using nlohmann::json;

void ground_truth_volumes(const Scene& scene, const VoxelGrid& grid, double truncation,
                          TsdfVolume* tsdf, std::vector<double>* occupancy) {
  grid.validate();
  require(truncation > 0, "ground_truth_volumes: truncation must be positive");
  tsdf->init(grid, truncation);
  const int64_t n = grid.count();
  occupancy->assign(n, 0.0);
  parallel_for(n, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const double s = scene_sdf(scene, grid.center_linear(i)) / truncation;
      const double clamped = std::min(1.0, std::max(-1.0, s));
      tsdf->values[i] = clamped;
      tsdf->weights[i] = 1.0;
      tsdf->observed[i] = 1;
      (*occupancy)[i] = std::abs(clamped) < 1.0 ? 1.0 : 0.0;
    }
  });
}

GroundTruth make_ground_truth(const Scene& scene, const SceneInputs& in, const TrainConfig& cfg) {
  GroundTruth gt;
  const double trunc = default_truncation(in.grid);
  ground_truth_volumes(scene, in.grid, trunc, &gt.tsdf, &gt.occupancy);
  gt.observed = gt.tsdf.observed;

  const int64_t t = static_cast<int64_t>(in.views.size());
  const int64_t n = in.grid.count();
  gt.proj_occupancy.assign(t * n, 0.0);
  gt.proj_valid.assign(t * n, 0);
  for (int64_t v = 0; v < t; ++v) {
    const ScalarField field = projective_tsdf(in.grid, in.views[v], trunc);
    const OccupancyVisibility ov = projective_occupancy_visibility(field);
    for (int64_t i = 0; i < n; ++i) {
      gt.proj_occupancy[v * n + i] = ov.occupancy[i];
      gt.proj_valid[v * n + i] = field.valid[i];
    }
  }

  std::vector<BoundaryMask2D> masks;
  masks.reserve(in.views.size());
  for (const auto& view : in.views)
    masks.push_back(boundary_mask_2d(view, cfg.boundary_threshold));
  gt.mask3d = backproject_mask(masks, in.grid, in.views);

  gt.gt_normals = tsdf_normals(gt.tsdf);
  std::vector<CameraPose> poses;
  for (const auto& view : in.views) poses.push_back(view.pose);
  gt.consistency =
      consistency_terms(gt.gt_normals, in.priors, poses, cfg.gaussian_consistency);
  return gt;
}

RmsOptimizer::RmsOptimizer(ParamSet& params, double lr, double decay)
    : params_(params), lr_(lr), decay_(decay) {
  for (auto& [_, t] : params_) state_.emplace_back(t.numel(), 0.0);
}

void RmsOptimizer::zero_grad() { params_.zero_grads(); }

void RmsOptimizer::step(double scale, double lr_override) {
  const double lr = lr_override > 0 ? lr_override : lr_;
  size_t k = 0;
  for (auto& [_, t] : params_) {
    auto& v = state_[k++];
    auto& values = t.raw_values();
    const auto& grad = t.grad();
    for (size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i] * scale;
      v[i] = decay_ * v[i] + (1.0 - decay_) * g * g;
      values[i] -= lr * g / (std::sqrt(v[i]) + 1e-8);
    }
  }
}

std::vector<CameraView> scene_views(const Scene& scene, const TrainConfig& cfg) {
  const CameraIntrinsics k = default_intrinsics(cfg.image_size, cfg.image_size);
  // A sparse ring cannot wrap the walls, so the 2-view coverage guarantee is
  // only enforced for real multi-view setups.
  const bool coverage = cfg.pipeline.views >= 7;
  return make_orbit_views(scene, cfg.pipeline.views, k, coverage);
}

Scene training_scene(uint64_t base_seed, int index, bool occluders) {
  SceneOptions opt;
  opt.occluder = occluders && (index % 2 == 0);
  opt.min_objects = 1;
  opt.max_objects = 3;
  return generate_scene(base_seed + 1000 * static_cast<uint64_t>(index) + 11, opt);
}

namespace {

struct SceneBundle {
  Scene scene;
  SceneInputs inputs;
  GroundTruth gt;
};

SceneBundle load_bundle(const Scene& scene, const TrainConfig& cfg) {
  SceneBundle b;
  b.scene = scene;
  const VoxelGrid grid = fit_grid(scene, cfg.grid_dims);
  b.inputs = build_scene_inputs(scene_views(scene, cfg), grid, cfg.pipeline);
  b.gt = make_ground_truth(scene, b.inputs, cfg);
  return b;
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  require(cfg.epochs >= 1 && cfg.batch >= 1, "train: epochs and batch must be positive");
  require(cfg.scene_count >= 1 || !cfg.scene_files.empty(), "train: no scenes");

  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);

  // Scene set is fixed for the whole run; render and bake supervision once.
  std::vector<SceneBundle> bundles;
  if (!cfg.scene_files.empty()) {
    for (const auto& path : cfg.scene_files)
      bundles.push_back(load_bundle(load_scene_json(path), cfg));
  } else {
    for (int i = 0; i < cfg.scene_count; ++i)
      bundles.push_back(load_bundle(training_scene(cfg.seed, i, cfg.occluder_scenes), cfg));
  }

  PipelineParams params = build_pipeline_params(cfg.pipeline, cfg.seed);
  RmsOptimizer opt(params.set, cfg.learning_rate, cfg.rms_decay);

  std::string log;
  const std::string log_path = cfg.out_dir + "/train_log.jsonl";
  int step = 0;
  double last_total = 0.0;

  auto flush_log = [&]() { write_file_atomic(log_path, log); };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate * std::pow(cfg.lr_decay, epoch - 1);
    for (size_t start = 0; start < bundles.size(); start += cfg.batch) {
      const size_t stop = std::min(bundles.size(), start + cfg.batch);
      opt.zero_grad();
      LossReport avg;
      int count = 0;
      for (size_t s = start; s < stop; ++s) {
        const SceneBundle& b = bundles[s];
        PipelineOutput out = run_pipeline(b.inputs, params, cfg.pipeline);
        LossTerms terms = compute_losses(out, b.inputs, b.gt, cfg.log_tsdf);
        LossReport report;
        Tensor total = total_loss(terms, epoch, cfg.loss_weights,
                                  cfg.pipeline.ablation.normal_loss, &report);
        if (!std::isfinite(report.total)) {
          json line;
          line["step"] = step;
          line["epoch"] = epoch;
          line["event"] = "divergence";
          log += line.dump() + "\n";
          flush_log();
          throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
        }
        backward(total);
        avg.total += report.total;
        avg.occupancy += report.occupancy;
        avg.tsdf += report.tsdf;
        avg.proj_occupancy += report.proj_occupancy;
        avg.normal += report.normal;
        avg.normal_count += report.normal_count;
        ++count;
      }
      opt.step(1.0 / count, lr);

      json line;
      line["step"] = step;
      line["epoch"] = epoch;
      line["total"] = avg.total / count;
      line["occupancy"] = avg.occupancy / count;
      line["tsdf"] = avg.tsdf / count;
      line["proj_occupancy"] = avg.proj_occupancy / count;
      line["normal"] = avg.normal / count;
      line["normal_count"] = avg.normal_count / count;
      log += line.dump() + "\n";
      last_total = avg.total / count;
      ++step;
    }
    require(params.set.all_finite(), "train: parameters became non-finite");
    char name[64];
    std::snprintf(name, sizeof(name), "/ckpt_epoch_%03d.ckpt", epoch);
    save_checkpoint(cfg.out_dir + name, params.set, cfg.seed, step);
  }

  const std::string final_path = cfg.out_dir + "/final.ckpt";
  save_checkpoint(final_path, params.set, cfg.seed, step);
  flush_log();

  TrainResult res;
  res.checkpoint_path = final_path;
  res.log_path = log_path;
  res.steps = step;
  res.final_loss = last_total;
  return res;
}

Reconstruction reconstruct(const Scene& scene, const PipelineParams& params,
                           const TrainConfig& cfg) {
  const VoxelGrid grid = fit_grid(scene, cfg.grid_dims);
  const SceneInputs in = build_scene_inputs(scene_views(scene, cfg), grid, cfg.pipeline);
  const PipelineOutput out = run_pipeline(in, params, cfg.pipeline);

  Reconstruction rec;
  rec.volume.init(grid, default_truncation(grid));
  const auto& shat = out.tsdf.values();
  const auto& occ = out.occupancy.values();
  for (int64_t i = 0; i < grid.count(); ++i) {
    rec.volume.values[i] = shat[i];
    const bool keep = occ[i] > 0.5 && out.any_valid[i];
    rec.volume.observed[i] = keep ? 1 : 0;
    rec.volume.weights[i] = keep ? 1.0 : 0.0;
  }
  rec.mesh = marching_cubes(rec.volume);
  return rec;
}

MeshMetrics evaluate_against_scene(const Mesh& mesh, const Scene& scene, double threshold,
                                   double density) {
  require(!mesh.vertices.empty(), "evaluate_against_scene: empty reconstruction");
  const PointSet pred = sample_mesh(mesh, density, scene.seed ^ 0x9d);
  const PointSet gt = sample_scene_surface(scene, density, scene.seed ^ 0x5e);
  return mesh_metrics(pred, gt, threshold);
}

}  // namespace geofuse
