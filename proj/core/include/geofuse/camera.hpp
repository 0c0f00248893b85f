#pragma once

#include <limits>
#include <vector>

#include "geofuse/common.hpp"

namespace geofuse {

// Views further than this are not trusted; voxels projecting deeper than
// kMaxDepth are invalid for that view, and projected depth priors are
// normalized by it.
inline constexpr double kMaxDepth = 3.0;

struct CameraIntrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const {
    require(fx > 0 && fy > 0, "intrinsics: focal lengths must be positive");
    require(width > 0 && height > 0, "intrinsics: image size must be positive");
    require(cx >= 0 && cx < width && cy >= 0 && cy < height,
            "intrinsics: principal point outside image");
  }
};

// Camera-to-world: a point x in camera coordinates sits at R*x + t in the
// world; the camera center is t.
struct CameraPose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  void validate() const {
    const double ortho = (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff();
    require(ortho < 1e-6, "pose: rotation is not orthonormal");
    const double det = R.determinant();
    require(det > 1.0 - 1e-6 && det < 1.0 + 1e-6, "pose: rotation determinant is not +1");
  }

  Vec3 to_world(const Vec3& x_cam) const { return R * x_cam + t; }
  Vec3 to_camera(const Vec3& x_world) const { return R.transpose() * (x_world - t); }
  Vec3 center() const { return t; }
};

struct Projection {
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;
  bool valid = false;
};

// Pinhole projection; valid iff depth in (0, kMaxDepth] and the pixel lands
// inside [0,width) x [0,height). Invalid points are flagged, never errors.
Projection project(const Vec3& world, const CameraIntrinsics& k, const CameraPose& pose);

// Inverse of project for a pixel at a given camera-frame depth.
Vec3 backproject(const Vec2& pixel, double depth, const CameraIntrinsics& k,
                 const CameraPose& pose);

// One rendered/observed view: pose, per-pixel depth (camera z, +inf for
// misses), unit normals in the camera frame (planar 3xHxW), and a planar
// CxHxW feature image.
struct CameraView {
  CameraIntrinsics intrinsics;
  CameraPose pose;
  std::vector<double> depth;    // H*W
  std::vector<double> normal;   // 3*H*W, planar
  std::vector<double> feature;  // C*H*W, planar
  int feature_channels = 0;

  int64_t pixel_count() const {
    return static_cast<int64_t>(intrinsics.width) * intrinsics.height;
  }
  double depth_at(int x, int y) const { return depth[y * intrinsics.width + x]; }
  bool hit_at(int x, int y) const { return std::isfinite(depth_at(x, y)); }
};

// Bilinear sample of one planar channel at continuous pixel coordinates,
// clamped to the sample grid.
double sample_bilinear(const double* plane, int width, int height, double u, double v);

// Bilinear sample of the 3-channel normal plane, renormalized. Returns false
// (and zero) when any contributing pixel has no surface.
bool sample_normal_bilinear(const CameraView& view, double u, double v, Vec3* out);

// Nearest-pixel depth lookup; +inf when the pixel has no surface.
double sample_depth_nearest(const CameraView& view, double u, double v);

}  // namespace geofuse
