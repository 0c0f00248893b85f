#pragma once

#include <vector>

#include "geofuse/camera.hpp"
#include "geofuse/scene.hpp"

namespace geofuse {

// Rendered pixel feature channels: Lambertian intensity, camera-frame
// normal (3), inverse depth.
inline constexpr int kPixelFeatureChannels = 5;

CameraIntrinsics default_intrinsics(int width, int height);

// Exact per-pixel ray casting against the analytic primitives. Depth is the
// camera-frame z of the hit; normals are analytic, camera frame, oriented
// into the air. Rays that miss carry depth = +inf and zero features.
CameraView render_view(const Scene& scene, const CameraIntrinsics& intrinsics,
                       const CameraPose& pose);

// Look-at pose: camera at `eye`, +z toward `target`, world +z as up hint.
CameraPose look_at(const Vec3& eye, const Vec3& target);

// Ring of poses around the room center at alternating elevations.
std::vector<CameraPose> orbit_poses(const Scene& scene, int count);

// Distance to the first surface along a unit-direction ray, +inf on a miss.
double cast_scene_ray(const Scene& scene, const Vec3& origin, const Vec3& dir);

// True when each sampled surface point is seen un-occluded by at least
// min_views of the given views (exact analytic ray visibility).
bool check_coverage(const Scene& scene, const std::vector<CameraView>& views, int samples,
                    uint64_t seed, int min_views = 2);

// Views on an orbit with verified >= 2-view surface coverage; jitters the
// orbit a few times before giving up. Coverage can only hold when the ring
// is dense enough to wrap the room; sparse-view callers may opt out.
std::vector<CameraView> make_orbit_views(const Scene& scene, int count,
                                         const CameraIntrinsics& intrinsics,
                                         bool require_coverage = true);

}  // namespace geofuse
