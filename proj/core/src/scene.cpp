#include "geofuse/scene.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "geofuse/fsio.hpp"

namespace geofuse {

using nlohmann::json;

double box_sdf(const Vec3& p, const Vec3& bmin, const Vec3& bmax) {
  const Vec3 q = (bmin - p).cwiseMax(p - bmax);
  const Vec3 outside = q.cwiseMax(0.0);
  const double inside = std::min(0.0, q.maxCoeff());
  return outside.norm() + inside;
}

double scene_sdf(const Scene& scene, const Vec3& p) {
  // Air = room interior minus solids.
  double s = -box_sdf(p, scene.room_min, scene.room_max);
  for (const auto& sp : scene.spheres) s = std::min(s, (p - sp.center).norm() - sp.radius);
  for (const auto& b : scene.boxes) s = std::min(s, box_sdf(p, b.min, b.max));
  return s;
}

Scene generate_scene(uint64_t seed, const SceneOptions& opt) {
  Rng rng(seed * 0x9e3779b97f4a7c15ull + 0x51ce);
  Scene scene;
  scene.seed = seed;

  // Small enough that every surface stays inside the depth cap from any
  // orbit camera.
  const double ext = rng.uniform(2.1, 2.4);
  scene.room_min = Vec3::Zero();
  scene.room_max = Vec3(ext, ext, ext);
  if (opt.empty_room) return scene;

  const Vec3 c = scene.room_center();
  const double half = 0.5 * ext;

  if (opt.occluder) {
    // Large central box: hides wall/floor regions behind it from the cameras
    // on the opposite side of the ring while staying fully visible itself.
    const Vec3 bc(c.x() + rng.uniform(-0.12, 0.12) * half,
                  c.y() + rng.uniform(-0.12, 0.12) * half,
                  c.z() + rng.uniform(-0.1, 0.1) * half);
    const Vec3 he(rng.uniform(0.22, 0.34) * half, rng.uniform(0.22, 0.34) * half,
                  rng.uniform(0.3, 0.44) * half);
    scene.boxes.push_back({bc - he, bc + he});
  }

  const int target =
      opt.min_objects +
      static_cast<int>(rng.uniform_index(static_cast<uint64_t>(opt.max_objects - opt.min_objects + 1)));

  auto intersects_existing = [&](const Vec3& lo, const Vec3& hi) {
    for (const auto& b : scene.boxes)
      if ((lo.array() <= b.max.array()).all() && (hi.array() >= b.min.array()).all()) return true;
    for (const auto& s : scene.spheres) {
      const Vec3 slo = s.center - Vec3::Constant(s.radius);
      const Vec3 shi = s.center + Vec3::Constant(s.radius);
      if ((lo.array() <= shi.array()).all() && (hi.array() >= slo.array()).all()) return true;
    }
    return false;
  };

  int placed = 0;
  for (int attempt = 0; attempt < 64 && placed < target; ++attempt) {
    const bool sphere = rng.uniform() < 0.5;
    // Keep objects in the central column so the orbit cameras stay in free
    // space and every face remains visible from some elevation.
    const Vec3 center(c.x() + rng.uniform(-0.32, 0.32) * half,
                      c.y() + rng.uniform(-0.32, 0.32) * half,
                      c.z() + rng.uniform(-0.28, 0.28) * half);
    // Generous clearance between objects: slots narrower than ~0.3 m are
    // invisible to the ring and would break the 2-view coverage guarantee.
    const double clearance = 0.3;
    if (sphere) {
      const double r = rng.uniform(0.16, 0.28);
      const Vec3 lo = center - Vec3::Constant(r + clearance);
      const Vec3 hi = center + Vec3::Constant(r + clearance);
      if (intersects_existing(lo, hi)) continue;
      scene.spheres.push_back({center, r});
    } else {
      const Vec3 he(rng.uniform(0.12, 0.26), rng.uniform(0.12, 0.26), rng.uniform(0.12, 0.26));
      const Vec3 lo = center - he, hi = center + he;
      if (intersects_existing(lo - Vec3::Constant(clearance), hi + Vec3::Constant(clearance)))
        continue;
      scene.boxes.push_back({lo, hi});
    }
    ++placed;
  }
  require(!scene.boxes.empty() || !scene.spheres.empty(),
          "generate_scene: failed to place any primitive");
  return scene;
}

void save_scene_json(const std::string& path, const Scene& scene) {
  json j;
  j["format"] = "geofuse-scene-v1";
  j["seed"] = scene.seed;
  j["room"] = {{"min", {scene.room_min.x(), scene.room_min.y(), scene.room_min.z()}},
               {"max", {scene.room_max.x(), scene.room_max.y(), scene.room_max.z()}}};
  json spheres = json::array();
  for (const auto& s : scene.spheres)
    spheres.push_back({{"center", {s.center.x(), s.center.y(), s.center.z()}},
                       {"radius", s.radius}});
  j["spheres"] = spheres;
  json boxes = json::array();
  for (const auto& b : scene.boxes)
    boxes.push_back({{"min", {b.min.x(), b.min.y(), b.min.z()}},
                     {"max", {b.max.x(), b.max.y(), b.max.z()}}});
  j["boxes"] = boxes;
  write_file_atomic(path, j.dump(2) + "\n");
}

Scene load_scene_json(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("scene: bad JSON in ") + path + ": " + e.what());
  }
  require(j.value("format", "") == "geofuse-scene-v1", "scene: unknown format in " + path);
  Scene scene;
  scene.seed = j.value("seed", 0ull);
  const auto& room = j.at("room");
  scene.room_min = Vec3(room.at("min").at(0), room.at("min").at(1), room.at("min").at(2));
  scene.room_max = Vec3(room.at("max").at(0), room.at("max").at(1), room.at("max").at(2));
  require((scene.room_max - scene.room_min).minCoeff() > 0, "scene: degenerate room");
  for (const auto& s : j.value("spheres", json::array())) {
    SpherePrim sp;
    sp.center = Vec3(s.at("center").at(0), s.at("center").at(1), s.at("center").at(2));
    sp.radius = s.at("radius").get<double>();
    require(sp.radius > 0, "scene: sphere radius must be positive");
    scene.spheres.push_back(sp);
  }
  for (const auto& b : j.value("boxes", json::array())) {
    BoxPrim bp;
    bp.min = Vec3(b.at("min").at(0), b.at("min").at(1), b.at("min").at(2));
    bp.max = Vec3(b.at("max").at(0), b.at("max").at(1), b.at("max").at(2));
    require((bp.max - bp.min).minCoeff() > 0, "scene: degenerate box");
    scene.boxes.push_back(bp);
  }
  return scene;
}

namespace {

struct SurfacePatch {
  // Rectangle: origin + u/v axes (lengths embedded); normal into the air.
  Vec3 origin, u, v, normal;
  double area = 0.0;
};

void room_patches(const Scene& s, std::vector<SurfacePatch>* out) {
  const Vec3 lo = s.room_min, hi = s.room_max, d = hi - lo;
  auto add = [&](const Vec3& o, const Vec3& u, const Vec3& v, const Vec3& n) {
    out->push_back({o, u, v, n, u.norm() * v.norm()});
  };
  add(lo, Vec3(d.x(), 0, 0), Vec3(0, d.y(), 0), Vec3(0, 0, 1));   // floor
  add(Vec3(lo.x(), lo.y(), hi.z()), Vec3(d.x(), 0, 0), Vec3(0, d.y(), 0), Vec3(0, 0, -1));
  add(lo, Vec3(d.x(), 0, 0), Vec3(0, 0, d.z()), Vec3(0, 1, 0));   // y- wall
  add(Vec3(lo.x(), hi.y(), lo.z()), Vec3(d.x(), 0, 0), Vec3(0, 0, d.z()), Vec3(0, -1, 0));
  add(lo, Vec3(0, d.y(), 0), Vec3(0, 0, d.z()), Vec3(1, 0, 0));   // x- wall
  add(Vec3(hi.x(), lo.y(), lo.z()), Vec3(0, d.y(), 0), Vec3(0, 0, d.z()), Vec3(-1, 0, 0));
}

void box_patches(const BoxPrim& b, std::vector<SurfacePatch>* out) {
  const Vec3 lo = b.min, hi = b.max, d = hi - lo;
  auto add = [&](const Vec3& o, const Vec3& u, const Vec3& v, const Vec3& n) {
    out->push_back({o, u, v, n, u.norm() * v.norm()});
  };
  add(Vec3(lo.x(), lo.y(), lo.z()), Vec3(d.x(), 0, 0), Vec3(0, d.y(), 0), Vec3(0, 0, -1));
  add(Vec3(lo.x(), lo.y(), hi.z()), Vec3(d.x(), 0, 0), Vec3(0, d.y(), 0), Vec3(0, 0, 1));
  add(Vec3(lo.x(), lo.y(), lo.z()), Vec3(d.x(), 0, 0), Vec3(0, 0, d.z()), Vec3(0, -1, 0));
  add(Vec3(lo.x(), hi.y(), lo.z()), Vec3(d.x(), 0, 0), Vec3(0, 0, d.z()), Vec3(0, 1, 0));
  add(Vec3(lo.x(), lo.y(), lo.z()), Vec3(0, d.y(), 0), Vec3(0, 0, d.z()), Vec3(-1, 0, 0));
  add(Vec3(hi.x(), lo.y(), lo.z()), Vec3(0, d.y(), 0), Vec3(0, 0, d.z()), Vec3(1, 0, 0));
}

}  // namespace

double scene_surface_area(const Scene& scene) {
  std::vector<SurfacePatch> patches;
  room_patches(scene, &patches);
  for (const auto& b : scene.boxes) box_patches(b, &patches);
  double area = 0.0;
  for (const auto& p : patches) area += p.area;
  for (const auto& s : scene.spheres) area += 4.0 * M_PI * s.radius * s.radius;
  return area;
}

PointSet sample_scene_surface(const Scene& scene, double density, uint64_t seed) {
  require(density > 0, "sample_scene_surface: density must be positive");
  std::vector<SurfacePatch> patches;
  room_patches(scene, &patches);
  for (const auto& b : scene.boxes) box_patches(b, &patches);

  PointSet out;
  Rng rng(seed ^ 0xface7501u);
  const double eps = 1e-4;
  auto on_air_boundary = [&](const Vec3& p, const Vec3& n) {
    return scene_sdf(scene, p + eps * n) > 0.25 * eps &&
           scene_sdf(scene, p - eps * n) < -0.25 * eps;
  };

  for (const auto& patch : patches) {
    const int64_t count = std::llround(patch.area * density);
    for (int64_t k = 0; k < count; ++k) {
      const Vec3 p = patch.origin + rng.uniform() * patch.u + rng.uniform() * patch.v;
      if (!on_air_boundary(p, patch.normal)) continue;
      out.points.push_back(p);
      out.normals.push_back(patch.normal);
    }
  }
  for (const auto& s : scene.spheres) {
    const double area = 4.0 * M_PI * s.radius * s.radius;
    const int64_t count = std::llround(area * density);
    for (int64_t k = 0; k < count; ++k) {
      // Uniform direction via z / azimuth.
      const double z = rng.uniform(-1.0, 1.0);
      const double phi = rng.uniform(0.0, 2.0 * M_PI);
      const double rxy = std::sqrt(std::max(0.0, 1.0 - z * z));
      const Vec3 n(rxy * std::cos(phi), rxy * std::sin(phi), z);
      const Vec3 p = s.center + s.radius * n;
      if (!on_air_boundary(p, n)) continue;
      out.points.push_back(p);
      out.normals.push_back(n);
    }
  }
  return out;
}

}  // namespace geofuse
