#include "geofuse/camera.hpp"

#include <cmath>

namespace geofuse {

Projection project(const Vec3& world, const CameraIntrinsics& k, const CameraPose& pose) {
  Projection out;
  const Vec3 cam = pose.to_camera(world);
  out.depth = cam.z();
  if (cam.z() <= 0.0) return out;
  out.pixel = Vec2(k.fx * cam.x() / cam.z() + k.cx, k.fy * cam.y() / cam.z() + k.cy);
  out.valid = cam.z() <= kMaxDepth && out.pixel.x() >= 0.0 && out.pixel.x() < k.width &&
              out.pixel.y() >= 0.0 && out.pixel.y() < k.height;
  return out;
}

Vec3 backproject(const Vec2& pixel, double depth, const CameraIntrinsics& k,
                 const CameraPose& pose) {
  const Vec3 cam((pixel.x() - k.cx) / k.fx * depth, (pixel.y() - k.cy) / k.fy * depth, depth);
  return pose.to_world(cam);
}

double sample_bilinear(const double* plane, int width, int height, double u, double v) {
  // Samples live at integer pixel coordinates; clamp to the grid edge.
  u = std::min(std::max(u, 0.0), static_cast<double>(width - 1));
  v = std::min(std::max(v, 0.0), static_cast<double>(height - 1));
  const int x0 = std::min(static_cast<int>(u), width - 2 >= 0 ? width - 2 : 0);
  const int y0 = std::min(static_cast<int>(v), height - 2 >= 0 ? height - 2 : 0);
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double ax = u - x0, ay = v - y0;
  const double w00 = (1 - ax) * (1 - ay), w10 = ax * (1 - ay);
  const double w01 = (1 - ax) * ay, w11 = ax * ay;
  return w00 * plane[y0 * width + x0] + w10 * plane[y0 * width + x1] +
         w01 * plane[y1 * width + x0] + w11 * plane[y1 * width + x1];
}

bool sample_normal_bilinear(const CameraView& view, double u, double v, Vec3* out) {
  const int w = view.intrinsics.width, h = view.intrinsics.height;
  const double uc = std::min(std::max(u, 0.0), static_cast<double>(w - 1));
  const double vc = std::min(std::max(v, 0.0), static_cast<double>(h - 1));
  const int x0 = std::min(static_cast<int>(uc), w - 2 >= 0 ? w - 2 : 0);
  const int y0 = std::min(static_cast<int>(vc), h - 2 >= 0 ? h - 2 : 0);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  if (!view.hit_at(x0, y0) || !view.hit_at(x1, y0) || !view.hit_at(x0, y1) ||
      !view.hit_at(x1, y1)) {
    *out = Vec3::Zero();
    return false;
  }
  const int64_t hw = view.pixel_count();
  Vec3 n;
  for (int c = 0; c < 3; ++c) n[c] = sample_bilinear(view.normal.data() + c * hw, w, h, uc, vc);
  const double len = n.norm();
  if (len < 1e-12) {
    *out = Vec3::Zero();
    return false;
  }
  *out = n / len;
  return true;
}

double sample_depth_nearest(const CameraView& view, double u, double v) {
  const int w = view.intrinsics.width, h = view.intrinsics.height;
  int x = static_cast<int>(std::lround(u));
  int y = static_cast<int>(std::lround(v));
  x = std::min(std::max(x, 0), w - 1);
  y = std::min(std::max(y, 0), h - 1);
  return view.depth_at(x, y);
}

}  // namespace geofuse
