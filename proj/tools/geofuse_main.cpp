#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "geofuse/config.hpp"
#include "geofuse/fsio.hpp"
#include "geofuse/gradcheck.hpp"
#include "geofuse/mesh_io.hpp"
#include "geofuse/metrics.hpp"
#include "geofuse/priors.hpp"
#include "geofuse/threading.hpp"
#include "geofuse/train.hpp"
#include "geofuse/volume_io.hpp"

namespace fs = std::filesystem;
using namespace geofuse;

namespace {

// Meshes are sampled to point clouds; vertex-only files are used as-is.
PointSet load_point_set(const std::string& path, double density, uint64_t seed) {
  const Mesh mesh = read_mesh(path);
  require(!mesh.vertices.empty(), "empty mesh/point cloud: " + path);
  if (mesh.faces.empty()) {
    PointSet ps;
    ps.points = mesh.vertices;
    ps.normals = mesh.vertex_normals;
    return ps;
  }
  return sample_mesh(mesh, density, seed);
}

int run_synth_gen(uint64_t seed, const std::string& out_dir, int count, bool empty_room,
                  bool occluder) {
  fs::create_directories(out_dir);
  for (int i = 0; i < count; ++i) {
    SceneOptions opt;
    opt.empty_room = empty_room;
    opt.occluder = occluder && (i % 2 == 0);
    const Scene scene = generate_scene(seed + 1000 * static_cast<uint64_t>(i) + 11, opt);
    char name[64];
    std::snprintf(name, sizeof(name), "/scene_%04d.json", i);
    save_scene_json(out_dir + name, scene);
  }
  std::printf("wrote %d scene(s) to %s\n", count, out_dir.c_str());
  return 0;
}

int run_train(const std::string& config_path, const std::string& scenes_dir,
              const std::string& out_dir) {
  TrainConfig cfg = config_path.empty() ? TrainConfig{} : load_train_config(config_path);
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (!scenes_dir.empty()) {
    cfg.scene_files.clear();
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(scenes_dir))
      if (e.path().extension() == ".json") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    require(!files.empty(), "no scene JSON files in " + scenes_dir);
    cfg.scene_files = files;
  }
  // Record the exact configuration next to the artifacts.
  fs::create_directories(cfg.out_dir);
  write_file_atomic(cfg.out_dir + "/config.json", train_config_to_json(cfg));

  const TrainResult res = train(cfg);
  std::printf("trained %d steps; final loss %.6f\ncheckpoint: %s\nlog: %s\n", res.steps,
              res.final_loss, res.checkpoint_path.c_str(), res.log_path.c_str());
  return 0;
}

int run_reconstruct(const std::string& checkpoint, const std::string& scene_path,
                    const std::string& config_path, const std::string& out_mesh,
                    const std::string& out_obj, const std::string& out_volume) {
  TrainConfig cfg = config_path.empty() ? TrainConfig{} : load_train_config(config_path);
  const Scene scene = load_scene_json(scene_path);
  PipelineParams params = build_pipeline_params(cfg.pipeline, cfg.seed);
  load_checkpoint(checkpoint, params.set);
  const Reconstruction rec = reconstruct(scene, params, cfg);
  if (!out_mesh.empty()) write_ply(out_mesh, rec.mesh);
  if (!out_obj.empty()) write_obj(out_obj, rec.mesh);
  if (!out_volume.empty()) write_tsdf_volume(out_volume, rec.volume);
  std::printf("reconstructed %zu vertices / %zu faces\n", rec.mesh.vertices.size(),
              rec.mesh.faces.size());
  return 0;
}

int run_eval(const std::string& pred_path, const std::string& gt_path, double threshold,
             bool with_normals, double density, const std::string& json_out) {
  const PointSet pred = load_point_set(pred_path, density, 101);
  const PointSet gt = load_point_set(gt_path, density, 202);
  const MeshMetrics m = mesh_metrics(pred, gt, threshold);
  NormalMetrics nm;
  const bool normals_ok = with_normals && pred.has_normals() && gt.has_normals();
  if (with_normals)
    require(normals_ok, "eval: --normals requires normals in both inputs");
  if (normals_ok) nm = normal_metrics(pred, gt);
  std::fputs(metrics_to_table(m).c_str(), stdout);
  if (normals_ok)
    for (size_t i = 0; i < nm.thresholds_deg.size(); ++i)
      std::printf("normals@%g: prec %.4f recall %.4f\n", nm.thresholds_deg[i], nm.precision[i],
                  nm.recall[i]);
  if (!json_out.empty())
    write_file_atomic(json_out, metrics_to_json(m, normals_ok ? &nm : nullptr) + "\n");
  return 0;
}

int run_gradcheck_cmd(const std::string& module) {
  const auto results = run_gradchecks(module);
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-32s max_rel_err %.3e  tol %.0e  %s\n", r.name.c_str(), r.max_rel_err,
                r.tolerance, r.pass ? "PASS" : "FAIL");
    ok &= r.pass;
  }
  return ok ? 0 : 2;
}

int run_priors_dump(const std::string& scene_path, const std::string& out_csv, int view_index,
                    int views, int image_size, int64_t grid_dims) {
  const Scene scene = load_scene_json(scene_path);
  TrainConfig cfg;
  cfg.pipeline.views = views;
  cfg.image_size = image_size;
  cfg.grid_dims = grid_dims;
  const VoxelGrid grid = fit_grid(scene, grid_dims);
  const auto view_list = scene_views(scene, cfg);
  require(view_index < static_cast<int>(view_list.size()), "priors-dump: view index out of range");

  std::string csv = "view,i,j,k,x,y,z,valid,dir_x,dir_y,dir_z,depth_norm,angle,nx,ny,nz\n";
  char line[320];
  const int v0 = view_index >= 0 ? view_index : 0;
  const int v1 = view_index >= 0 ? view_index + 1 : static_cast<int>(view_list.size());
  for (int v = v0; v < v1; ++v) {
    const GeoPriors pr = compute_geo_priors(grid, view_list[v]);
    for (int64_t n = 0; n < grid.count(); ++n) {
      const int64_t i = n % grid.dims.nx;
      const int64_t j = (n / grid.dims.nx) % grid.dims.ny;
      const int64_t k = n / (grid.dims.nx * grid.dims.ny);
      const Vec3 c = grid.center_linear(n);
      std::snprintf(line, sizeof(line),
                    "%d,%lld,%lld,%lld,%.6g,%.6g,%.6g,%d,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n",
                    v, static_cast<long long>(i), static_cast<long long>(j),
                    static_cast<long long>(k), c.x(), c.y(), c.z(), pr.valid[n] ? 1 : 0,
                    pr.view_dir[n * 3], pr.view_dir[n * 3 + 1], pr.view_dir[n * 3 + 2],
                    pr.proj_depth[n], pr.view_angle[n], pr.proj_normal[n * 3],
                    pr.proj_normal[n * 3 + 1], pr.proj_normal[n * 3 + 2]);
      csv += line;
    }
  }
  write_file_atomic(out_csv, csv);
  std::printf("wrote %s\n", out_csv.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geofuse: multi-view volumetric reconstruction sandbox"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "cap worker threads (GEOFUSE_THREADS as fallback)");

  // synth-gen
  auto* synth = app.add_subcommand("synth-gen", "generate synthetic scene files");
  uint64_t sg_seed = 7;
  std::string sg_out = "scenes";
  int sg_count = 8;
  bool sg_empty = false, sg_occluder = true;
  synth->add_option("--seed", sg_seed, "generator seed");
  synth->add_option("--out", sg_out, "output directory")->required();
  synth->add_option("--count", sg_count, "number of scenes");
  synth->add_flag("--empty-room", sg_empty, "walls/floor/ceiling only");
  synth->add_flag("!--no-occluders", sg_occluder, "disable wall occluders");

  // train
  auto* tr = app.add_subcommand("train", "train the reconstruction pipeline");
  std::string tr_config, tr_scenes, tr_out;
  tr->add_option("--config", tr_config, "JSON config file");
  tr->add_option("--scenes", tr_scenes, "directory of scene JSON files");
  tr->add_option("--out", tr_out, "output directory (overrides config)");

  // reconstruct
  auto* rc = app.add_subcommand("reconstruct", "run the trained pipeline on a scene");
  std::string rc_ckpt, rc_scene, rc_config, rc_mesh, rc_obj, rc_volume;
  rc->add_option("--checkpoint", rc_ckpt, "parameter checkpoint")->required();
  rc->add_option("--scene", rc_scene, "scene JSON")->required();
  rc->add_option("--config", rc_config, "JSON config used in training");
  rc->add_option("--out-mesh", rc_mesh, "output PLY path");
  rc->add_option("--out-obj", rc_obj, "output OBJ path");
  rc->add_option("--out-volume", rc_volume, "output TSDF volume path");

  // eval
  auto* ev = app.add_subcommand("eval", "mesh / point-cloud reconstruction metrics");
  std::string ev_pred, ev_gt, ev_json;
  double ev_threshold = 0.05, ev_density = 1e4;
  bool ev_normals = false;
  ev->add_option("--pred", ev_pred, "predicted mesh or point cloud")->required();
  ev->add_option("--gt", ev_gt, "ground-truth mesh or point cloud")->required();
  ev->add_option("--threshold", ev_threshold, "distance threshold in meters");
  ev->add_option("--density", ev_density, "sampling density for meshes (points/m^2)");
  ev->add_flag("--normals", ev_normals, "also report normal precision/recall");
  ev->add_option("--json", ev_json, "write metrics JSON to this path");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string gc_module = "all";
  gc->add_option("--module", gc_module, "tensornn | pipeline | supervision | all");

  // priors-dump
  auto* pd = app.add_subcommand("priors-dump", "per-voxel geometric priors as CSV");
  std::string pd_scene, pd_out;
  int pd_view = -1, pd_views = 9, pd_image = 64;
  int64_t pd_grid = 20;
  pd->add_option("--scene", pd_scene, "scene JSON")->required();
  pd->add_option("--out", pd_out, "output CSV path")->required();
  pd->add_option("--view", pd_view, "view index (default: all views)");
  pd->add_option("--views", pd_views, "number of orbit views");
  pd->add_option("--image-size", pd_image, "render resolution");
  pd->add_option("--grid-dims", pd_grid, "voxel grid resolution");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (threads > 0) set_thread_budget(threads);
    if (synth->parsed())
      return run_synth_gen(sg_seed, sg_out, sg_count, sg_empty, sg_occluder);
    if (tr->parsed()) return run_train(tr_config, tr_scenes, tr_out);
    if (rc->parsed())
      return run_reconstruct(rc_ckpt, rc_scene, rc_config, rc_mesh, rc_obj, rc_volume);
    if (ev->parsed())
      return run_eval(ev_pred, ev_gt, ev_threshold, ev_normals, ev_density, ev_json);
    if (gc->parsed()) return run_gradcheck_cmd(gc_module);
    if (pd->parsed())
      return run_priors_dump(pd_scene, pd_out, pd_view, pd_views, pd_image, pd_grid);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
