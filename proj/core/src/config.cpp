#include "geofuse/config.hpp"

#include <set>

#include <nlohmann/json.hpp>

#include "geofuse/fsio.hpp"

namespace geofuse {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, _] : j.items())
    require(known.count(key) != 0, "config: unknown key '" + key + "' in " + where);
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: bad JSON: ") + e.what());
  }
  reject_unknown(j, {"seed", "epochs", "batch", "learning_rate", "rms_decay", "lr_decay",
                     "scene_count", "image_size", "grid_dims", "occluder_scenes",
                     "feature_channels", "views", "heads", "encode_levels", "ablation",
                     "loss_weights", "gaussian_consistency", "log_tsdf",
                     "boundary_threshold", "out_dir", "scene_files"},
                 "top level");

  TrainConfig cfg;
  cfg.seed = j.value("seed", cfg.seed);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch = j.value("batch", cfg.batch);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.rms_decay = j.value("rms_decay", cfg.rms_decay);
  cfg.lr_decay = j.value("lr_decay", cfg.lr_decay);
  cfg.scene_count = j.value("scene_count", cfg.scene_count);
  cfg.image_size = j.value("image_size", cfg.image_size);
  cfg.grid_dims = j.value("grid_dims", cfg.grid_dims);
  cfg.occluder_scenes = j.value("occluder_scenes", cfg.occluder_scenes);
  cfg.pipeline.feature_channels = j.value("feature_channels", cfg.pipeline.feature_channels);
  cfg.pipeline.views = j.value("views", cfg.pipeline.views);
  cfg.pipeline.heads = j.value("heads", cfg.pipeline.heads);
  cfg.pipeline.encode_levels = j.value("encode_levels", cfg.pipeline.encode_levels);
  cfg.gaussian_consistency = j.value("gaussian_consistency", cfg.gaussian_consistency);
  cfg.log_tsdf = j.value("log_tsdf", cfg.log_tsdf);
  cfg.boundary_threshold = j.value("boundary_threshold", cfg.boundary_threshold);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  if (j.contains("scene_files"))
    cfg.scene_files = j.at("scene_files").get<std::vector<std::string>>();

  if (j.contains("ablation")) {
    const json& a = j.at("ablation");
    reject_unknown(a, {"transformer", "view_dir", "depth", "angle", "normal", "encoding",
                       "fusion", "normal_loss", "fuse_raw_features"},
                   "ablation");
    auto& ab = cfg.pipeline.ablation;
    ab.transformer = a.value("transformer", ab.transformer);
    ab.prior_view_dir = a.value("view_dir", ab.prior_view_dir);
    ab.prior_depth = a.value("depth", ab.prior_depth);
    ab.prior_angle = a.value("angle", ab.prior_angle);
    ab.prior_normal = a.value("normal", ab.prior_normal);
    ab.encoding = a.value("encoding", ab.encoding);
    ab.fusion = a.value("fusion", ab.fusion);
    ab.normal_loss = a.value("normal_loss", ab.normal_loss);
    ab.fuse_raw_features = a.value("fuse_raw_features", ab.fuse_raw_features);
    require(ab.fusion == "adaptive" || ab.fusion == "average",
            "config: ablation.fusion must be 'adaptive' or 'average'");
  }

  if (j.contains("loss_weights")) {
    const json& w = j.at("loss_weights");
    reject_unknown(w, {"occupancy", "tsdf", "proj_occupancy", "normal", "normal_after_epochs"},
                   "loss_weights");
    cfg.loss_weights.occupancy = w.value("occupancy", cfg.loss_weights.occupancy);
    cfg.loss_weights.tsdf = w.value("tsdf", cfg.loss_weights.tsdf);
    cfg.loss_weights.proj_occupancy =
        w.value("proj_occupancy", cfg.loss_weights.proj_occupancy);
    cfg.loss_weights.normal = w.value("normal", cfg.loss_weights.normal);
    cfg.loss_weights.normal_after_epochs =
        w.value("normal_after_epochs", cfg.loss_weights.normal_after_epochs);
    require(cfg.loss_weights.occupancy >= 0 && cfg.loss_weights.tsdf >= 0 &&
                cfg.loss_weights.proj_occupancy >= 0 && cfg.loss_weights.normal >= 0,
            "config: loss weights must be nonnegative");
  }

  require(cfg.epochs > 0 && cfg.batch > 0 && cfg.image_size > 0, "config: counts must be positive");
  require(cfg.pipeline.views >= 1, "config: views must be >= 1");
  require(cfg.grid_dims >= 8 && cfg.grid_dims <= 64, "config: grid_dims must be in [8, 64]");
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  return parse_train_config(read_file(path));
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["epochs"] = cfg.epochs;
  j["batch"] = cfg.batch;
  j["learning_rate"] = cfg.learning_rate;
  j["rms_decay"] = cfg.rms_decay;
  j["lr_decay"] = cfg.lr_decay;
  j["scene_count"] = cfg.scene_count;
  j["image_size"] = cfg.image_size;
  j["grid_dims"] = cfg.grid_dims;
  j["occluder_scenes"] = cfg.occluder_scenes;
  j["feature_channels"] = cfg.pipeline.feature_channels;
  j["views"] = cfg.pipeline.views;
  j["heads"] = cfg.pipeline.heads;
  j["encode_levels"] = cfg.pipeline.encode_levels;
  const auto& ab = cfg.pipeline.ablation;
  j["ablation"] = {{"transformer", ab.transformer}, {"view_dir", ab.prior_view_dir},
                   {"depth", ab.prior_depth},       {"angle", ab.prior_angle},
                   {"normal", ab.prior_normal},     {"encoding", ab.encoding},
                   {"fusion", ab.fusion},           {"normal_loss", ab.normal_loss},
                   {"fuse_raw_features", ab.fuse_raw_features}};
  j["loss_weights"] = {{"occupancy", cfg.loss_weights.occupancy},
                       {"tsdf", cfg.loss_weights.tsdf},
                       {"proj_occupancy", cfg.loss_weights.proj_occupancy},
                       {"normal", cfg.loss_weights.normal},
                       {"normal_after_epochs", cfg.loss_weights.normal_after_epochs}};
  j["gaussian_consistency"] = cfg.gaussian_consistency;
  j["log_tsdf"] = cfg.log_tsdf;
  j["boundary_threshold"] = cfg.boundary_threshold;
  j["out_dir"] = cfg.out_dir;
  j["scene_files"] = cfg.scene_files;
  return j.dump(2) + "\n";
}

}  // namespace geofuse
