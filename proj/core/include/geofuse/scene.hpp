#pragma once

#include <optional>
#include <string>
#include <vector>

#include "geofuse/common.hpp"
#include "geofuse/metrics.hpp"

namespace geofuse {

struct SpherePrim {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
};

struct BoxPrim {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();
};

// A closed room (4 walls + floor + ceiling) with free-floating solid
// primitives inside. The air region is the room interior minus the solids;
// its signed distance is positive in air and available analytically.
struct Scene {
  uint64_t seed = 0;
  Vec3 room_min = Vec3::Zero();
  Vec3 room_max = Vec3::Zero();
  std::vector<SpherePrim> spheres;
  std::vector<BoxPrim> boxes;

  Vec3 room_center() const { return 0.5 * (room_min + room_max); }
  Vec3 room_extent() const { return room_max - room_min; }
};

struct SceneOptions {
  bool empty_room = false;  // walls/floor/ceiling only
  bool occluder = false;    // force a tall slab near one wall
  int min_objects = 1;
  int max_objects = 4;
};

// Deterministic per seed.
Scene generate_scene(uint64_t seed, const SceneOptions& opt = {});

// Signed distance of the air region (positive inside free space). Exact for
// single primitives; min-combined across primitives, so slightly
// conservative only inside concave corner wedges.
double scene_sdf(const Scene& scene, const Vec3& p);

// Signed distance of a solid box (negative inside).
double box_sdf(const Vec3& p, const Vec3& bmin, const Vec3& bmax);

void save_scene_json(const std::string& path, const Scene& scene);
Scene load_scene_json(const std::string& path);

// Area-weighted sampling of the air-facing surface with analytic normals
// (oriented into the air). Points occluded inside other solids are rejected.
PointSet sample_scene_surface(const Scene& scene, double density, uint64_t seed);

double scene_surface_area(const Scene& scene);

}  // namespace geofuse
