#include "geofuse/render.hpp"

#include <cmath>
#include <limits>

#include "geofuse/threading.hpp"

namespace geofuse {

namespace {

const Vec3 kLightDir = Vec3(0.35, 0.45, 0.82).normalized();
constexpr double kRayEps = 1e-9;

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal = Vec3::Zero();  // world frame, into the air
  bool ok = false;
};

// Exit of a ray starting inside the room box; normal points back inside.
Hit room_exit(const Vec3& o, const Vec3& d, const Vec3& lo, const Vec3& hi) {
  Hit h;
  double best = std::numeric_limits<double>::infinity();
  int axis = -1;
  double sign = 0.0;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) continue;
    const double bound = d[a] > 0.0 ? hi[a] : lo[a];
    const double t = (bound - o[a]) / d[a];
    if (t > kRayEps && t < best) {
      best = t;
      axis = a;
      sign = d[a] > 0.0 ? -1.0 : 1.0;
    }
  }
  if (axis < 0) return h;
  h.t = best;
  h.normal = Vec3::Zero();
  h.normal[axis] = sign;
  h.ok = true;
  return h;
}

Hit box_entry(const Vec3& o, const Vec3& d, const BoxPrim& b) {
  Hit h;
  double tmin = -std::numeric_limits<double>::infinity();
  double tmax = std::numeric_limits<double>::infinity();
  int axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < b.min[a] || o[a] > b.max[a]) return h;
      continue;
    }
    double t0 = (b.min[a] - o[a]) / d[a];
    double t1 = (b.max[a] - o[a]) / d[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > tmin) {
      tmin = t0;
      axis = a;
    }
    tmax = std::min(tmax, t1);
  }
  if (tmin > tmax || tmin <= kRayEps || axis < 0) return h;
  h.t = tmin;
  h.normal = Vec3::Zero();
  h.normal[axis] = d[axis] > 0.0 ? -1.0 : 1.0;
  h.ok = true;
  return h;
}

Hit sphere_entry(const Vec3& o, const Vec3& d, const SpherePrim& s) {
  Hit h;
  const Vec3 oc = o - s.center;
  const double a = d.squaredNorm();
  const double b = 2.0 * d.dot(oc);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return h;
  const double sq = std::sqrt(disc);
  double t = (-b - sq) / (2.0 * a);
  if (t <= kRayEps) t = (-b + sq) / (2.0 * a);
  if (t <= kRayEps) return h;
  h.t = t;
  h.normal = (o + t * d - s.center).normalized();
  h.ok = true;
  return h;
}

}  // namespace

CameraIntrinsics default_intrinsics(int width, int height) {
  CameraIntrinsics k;
  k.width = width;
  k.height = height;
  // Wide-angle (~120 degrees); the ring has to wrap a room interior.
  k.fx = 0.5 * width / std::tan(60.0 * M_PI / 180.0);
  k.fy = k.fx;
  k.cx = 0.5 * (width - 1);
  k.cy = 0.5 * (height - 1);
  return k;
}

CameraPose look_at(const Vec3& eye, const Vec3& target) {
  CameraPose pose;
  const Vec3 fwd = (target - eye).normalized();
  Vec3 up(0, 0, 1);
  if (std::abs(fwd.dot(up)) > 0.999) up = Vec3(0, 1, 0);
  const Vec3 right = fwd.cross(up).normalized();
  const Vec3 down = fwd.cross(right);  // camera +y (image rows grow downward)
  pose.R.col(0) = right;
  pose.R.col(1) = down;
  pose.R.col(2) = fwd;
  pose.t = eye;
  return pose;
}

CameraView render_view(const Scene& scene, const CameraIntrinsics& intrinsics,
                       const CameraPose& pose) {
  intrinsics.validate();
  pose.validate();
  CameraView view;
  view.intrinsics = intrinsics;
  view.pose = pose;
  const int w = intrinsics.width, h = intrinsics.height;
  const int64_t hw = static_cast<int64_t>(w) * h;
  view.depth.assign(hw, std::numeric_limits<double>::infinity());
  view.normal.assign(3 * hw, 0.0);
  view.feature_channels = kPixelFeatureChannels;
  view.feature.assign(static_cast<int64_t>(kPixelFeatureChannels) * hw, 0.0);

  const Vec3 origin = pose.center();
  parallel_for(h, [&](int64_t y0, int64_t y1) {
    for (int64_t y = y0; y < y1; ++y)
      for (int64_t x = 0; x < w; ++x) {
        // Camera-frame direction with z = 1, so the ray parameter is depth.
        const Vec3 d_cam((x - intrinsics.cx) / intrinsics.fx,
                         (y - intrinsics.cy) / intrinsics.fy, 1.0);
        const Vec3 d = pose.R * d_cam;

        Hit best = room_exit(origin, d, scene.room_min, scene.room_max);
        for (const auto& b : scene.boxes) {
          const Hit hit = box_entry(origin, d, b);
          if (hit.ok && hit.t < best.t) best = hit;
        }
        for (const auto& s : scene.spheres) {
          const Hit hit = sphere_entry(origin, d, s);
          if (hit.ok && hit.t < best.t) best = hit;
        }
        if (!best.ok) continue;

        const int64_t pix = y * w + x;
        view.depth[pix] = best.t;
        const Vec3 n_cam = pose.R.transpose() * best.normal;
        for (int c = 0; c < 3; ++c) view.normal[c * hw + pix] = n_cam[c];

        const double lambert = 0.25 + 0.75 * std::max(0.0, best.normal.dot(kLightDir));
        view.feature[0 * hw + pix] = lambert;
        view.feature[1 * hw + pix] = n_cam.x();
        view.feature[2 * hw + pix] = n_cam.y();
        view.feature[3 * hw + pix] = n_cam.z();
        view.feature[4 * hw + pix] = 1.0 / best.t;
      }
  });
  return view;
}

std::vector<CameraPose> orbit_poses(const Scene& scene, int count) {
  require(count >= 1, "orbit_poses: count must be >= 1");
  const Vec3 c = scene.room_center();
  const Vec3 ext = scene.room_extent();
  const double radius = 0.46 * std::min(ext.x(), ext.y());
  // Elevation cycle near floor / mid / near ceiling, gaze tilted partway
  // toward the mirrored height so high cameras sweep the floor and low ones
  // the ceiling.
  const double fracs[3] = {0.12, 0.5, 0.88};
  std::vector<CameraPose> poses;
  poses.reserve(count);
  for (int i = 0; i < count; ++i) {
    const double az = 2.0 * M_PI * i / count;
    const double frac = fracs[i % 3];
    const double z = scene.room_min.z() + frac * ext.z();
    const Vec3 eye(c.x() + radius * std::cos(az), c.y() + radius * std::sin(az), z);
    const double mirrored = scene.room_min.z() + (1.0 - frac) * ext.z();
    const Vec3 target(c.x(), c.y(), c.z() + 0.4 * (mirrored - c.z()));
    poses.push_back(look_at(eye, target));
  }
  return poses;
}

double cast_scene_ray(const Scene& scene, const Vec3& origin, const Vec3& dir) {
  Hit best = room_exit(origin, dir, scene.room_min, scene.room_max);
  for (const auto& b : scene.boxes) {
    const Hit hit = box_entry(origin, dir, b);
    if (hit.ok && hit.t < best.t) best = hit;
  }
  for (const auto& s : scene.spheres) {
    const Hit hit = sphere_entry(origin, dir, s);
    if (hit.ok && hit.t < best.t) best = hit;
  }
  return best.ok ? best.t : std::numeric_limits<double>::infinity();
}

bool check_coverage(const Scene& scene, const std::vector<CameraView>& views, int samples,
                    uint64_t seed, int min_views) {
  const double area = scene_surface_area(scene);
  const double density = samples / std::max(1e-9, area);
  const PointSet pts = sample_scene_surface(scene, density, seed);
  if (pts.points.empty()) return false;
  int uncovered = 0;
  for (const auto& p : pts.points) {
    int seen = 0;
    for (const auto& v : views) {
      const Projection pr = project(p, v.intrinsics, v.pose);
      if (!pr.valid) continue;
      const Vec3 cam = v.pose.center();
      const double dist = (p - cam).norm();
      if (dist < 1e-9) continue;
      const double hit = cast_scene_ray(scene, cam, (p - cam) / dist);
      if (hit >= dist - 1e-6) ++seen;
      if (seen >= min_views) break;
    }
    if (seen < min_views) ++uncovered;
  }
  return uncovered == 0;
}

std::vector<CameraView> make_orbit_views(const Scene& scene, int count,
                                         const CameraIntrinsics& intrinsics,
                                         bool require_coverage) {
  for (int attempt = 0; attempt < 4; ++attempt) {
    std::vector<CameraPose> poses = orbit_poses(scene, count);
    if (attempt > 0) {
      // Rotate the ring a little; helps when a sample hides behind an
      // occluder for too many cameras.
      const double phase = 0.13 * attempt;
      const Vec3 c = scene.room_center();
      for (auto& p : poses) {
        const Vec3 rel = p.t - c;
        const double cs = std::cos(phase), sn = std::sin(phase);
        const Vec3 rot(cs * rel.x() - sn * rel.y(), sn * rel.x() + cs * rel.y(), rel.z());
        p = look_at(c + rot, c);
      }
    }
    std::vector<CameraView> views;
    views.reserve(count);
    for (const auto& p : poses) views.push_back(render_view(scene, intrinsics, p));
    if (!require_coverage || check_coverage(scene, views, 256, scene.seed ^ 0xc0ffee, 2))
      return views;
  }
  throw ValidationError("make_orbit_views: could not reach 2-view surface coverage");
}

}  // namespace geofuse
