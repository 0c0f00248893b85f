#include "geofuse/priors.hpp"

#include <cmath>

#include "geofuse/threading.hpp"

namespace geofuse {

GeoPriors compute_geo_priors(const VoxelGrid& grid, const CameraView& view) {
  grid.validate();
  view.intrinsics.validate();
  const int64_t n = grid.count();
  GeoPriors out;
  out.voxels = n;
  out.view_dir.assign(n * 3, 0.0);
  out.proj_depth.assign(n, 0.0);
  out.view_angle.assign(n, 0.0);
  out.proj_normal.assign(n * 3, 0.0);
  out.valid.assign(n, 0);

  const Mat3 r_wc = view.pose.R.transpose();  // world -> camera rotation
  const Vec3 cam_center = view.pose.center();

  parallel_for(n, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const Vec3 p = grid.center_linear(i);
      const Projection pr = project(p, view.intrinsics, view.pose);
      if (!pr.valid) continue;
      Vec3 n_cam;
      if (!sample_normal_bilinear(view, pr.pixel.x(), pr.pixel.y(), &n_cam)) continue;

      const Vec3 dir_world = (p - cam_center).normalized();
      const Vec3 dir_cam = r_wc * dir_world;

      out.valid[i] = 1;
      out.view_dir[i * 3 + 0] = dir_world.x();
      out.view_dir[i * 3 + 1] = dir_world.y();
      out.view_dir[i * 3 + 2] = dir_world.z();
      out.proj_depth[i] = pr.depth / kMaxDepth;
      out.view_angle[i] = std::abs(n_cam.dot(dir_cam));
      out.proj_normal[i * 3 + 0] = n_cam.x();
      out.proj_normal[i * 3 + 1] = n_cam.y();
      out.proj_normal[i * 3 + 2] = n_cam.z();
    }
  });
  return out;
}

std::vector<double> positional_encode(std::span<const double> x, int levels) {
  require(levels >= 1, "positional_encode: levels must be >= 1");
  std::vector<double> out;
  out.reserve(x.size() * 2 * levels);
  for (double v : x) {
    double freq = M_PI;
    for (int l = 0; l < levels; ++l) {
      out.push_back(std::sin(freq * v));
      out.push_back(std::cos(freq * v));
      freq *= 2.0;
    }
  }
  return out;
}

RelPoseDistances relative_pose_distance(const std::vector<CameraPose>& poses) {
  require(!poses.empty(), "relative_pose_distance: need at least one pose");
  for (const auto& p : poses) p.validate();
  const int64_t t = static_cast<int64_t>(poses.size());
  RelPoseDistances out;
  out.count = t;
  out.rot.assign(t * t, 0.0);
  out.trans.assign(t * t, 0.0);
  out.overall.assign(t * t, 0.0);
  for (int64_t j = 0; j < t; ++j)
    for (int64_t k = 0; k < t; ++k) {
      if (j == k) continue;
      // pose_k in pose_j's frame
      const Mat3 r_rel = poses[j].R.transpose() * poses[k].R;
      const Vec3 t_rel = poses[j].R.transpose() * (poses[k].t - poses[j].t);
      const double tr = (Mat3::Identity() - r_rel).trace();
      const double rot = std::sqrt(std::max(0.0, 2.0 / 3.0 * tr));
      const double trans = t_rel.norm();
      out.rot[j * t + k] = rot;
      out.trans[j * t + k] = trans;
      out.overall[j * t + k] = std::sqrt(rot * rot + trans * trans);
    }
  return out;
}

ScalarField projective_tsdf(const VoxelGrid& grid, const CameraView& view, double truncation) {
  grid.validate();
  require(truncation > 0.0, "projective_tsdf: truncation must be positive");
  require(!view.depth.empty(), "projective_tsdf: view has no depth map");
  const int64_t n = grid.count();
  ScalarField out;
  out.value.assign(n, 0.0);
  out.valid.assign(n, 0);
  parallel_for(n, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const Projection pr = project(grid.center_linear(i), view.intrinsics, view.pose);
      if (!pr.valid) continue;
      const double d = sample_depth_nearest(view, pr.pixel.x(), pr.pixel.y());
      if (!std::isfinite(d)) continue;
      const double s = (d - pr.depth) / truncation;
      out.value[i] = std::min(1.0, std::max(-1.0, s));
      out.valid[i] = 1;
    }
  });
  return out;
}

OccupancyVisibility projective_occupancy_visibility(const ScalarField& field, double band) {
  const size_t n = field.value.size();
  OccupancyVisibility out;
  out.occupancy.assign(n, 0);
  out.visibility.assign(n, 0);
  for (size_t i = 0; i < n; ++i) {
    if (!field.valid[i]) continue;
    out.occupancy[i] = std::abs(field.value[i]) < band ? 1 : 0;
    out.visibility[i] = field.value[i] >= 0.0 ? 1 : 0;
  }
  return out;
}

}  // namespace geofuse
