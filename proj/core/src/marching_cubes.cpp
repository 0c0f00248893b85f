#include "geofuse/marching_cubes.hpp"

#include <cmath>
#include <unordered_map>

namespace geofuse {

using namespace mc_detail;

double Mesh::area() const {
  double a = 0.0;
  for (const auto& f : faces) {
    const Vec3& p0 = vertices[f[0]];
    const Vec3& p1 = vertices[f[1]];
    const Vec3& p2 = vertices[f[2]];
    a += 0.5 * (p1 - p0).cross(p2 - p0).norm();
  }
  return a;
}

namespace {

// Central-difference gradient of S at a grid node (one-sided at the border).
Vec3 node_gradient(const TsdfVolume& vol, int64_t i, int64_t j, int64_t k) {
  const Dims3& d = vol.grid.dims;
  const auto& s = vol.values;
  auto at = [&](int64_t x, int64_t y, int64_t z) { return s[vol.grid.index(x, y, z)]; };
  Vec3 g;
  const double h = vol.grid.voxel_size;
  {
    const int64_t lo = i > 0 ? i - 1 : i, hi = i < d.nx - 1 ? i + 1 : i;
    g.x() = (at(hi, j, k) - at(lo, j, k)) / (static_cast<double>(hi - lo) * h);
  }
  {
    const int64_t lo = j > 0 ? j - 1 : j, hi = j < d.ny - 1 ? j + 1 : j;
    g.y() = (at(i, hi, k) - at(i, lo, k)) / (static_cast<double>(hi - lo) * h);
  }
  {
    const int64_t lo = k > 0 ? k - 1 : k, hi = k < d.nz - 1 ? k + 1 : k;
    g.z() = (at(i, j, hi) - at(i, j, lo)) / (static_cast<double>(hi - lo) * h);
  }
  return g;
}

Vec3 interpolated_gradient(const TsdfVolume& vol, const Vec3& p) {
  const Dims3& d = vol.grid.dims;
  const Vec3 gc = (p - vol.grid.origin) / vol.grid.voxel_size;
  auto clampi = [](int64_t v, int64_t n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); };
  const int64_t x0 = clampi(static_cast<int64_t>(std::floor(gc.x())), d.nx - 1);
  const int64_t y0 = clampi(static_cast<int64_t>(std::floor(gc.y())), d.ny - 1);
  const int64_t z0 = clampi(static_cast<int64_t>(std::floor(gc.z())), d.nz - 1);
  const double fx = std::min(1.0, std::max(0.0, gc.x() - x0));
  const double fy = std::min(1.0, std::max(0.0, gc.y() - y0));
  const double fz = std::min(1.0, std::max(0.0, gc.z() - z0));
  Vec3 g = Vec3::Zero();
  for (int dz = 0; dz <= 1; ++dz)
    for (int dy = 0; dy <= 1; ++dy)
      for (int dx = 0; dx <= 1; ++dx) {
        const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
        if (w == 0.0) continue;
        g += w * node_gradient(vol, clampi(x0 + dx, d.nx), clampi(y0 + dy, d.ny),
                               clampi(z0 + dz, d.nz));
      }
  return g;
}

}  // namespace

Mesh marching_cubes(const TsdfVolume& vol, double iso) {
  vol.grid.validate();
  const Dims3& d = vol.grid.dims;
  Mesh mesh;

  // Canonical edge key: owning node + axis, so vertices are shared exactly
  // between neighboring cells.
  std::unordered_map<uint64_t, uint32_t> edge_vertex;
  auto node_lin = [&](int64_t x, int64_t y, int64_t z) { return vol.grid.index(x, y, z); };

  const double h = vol.grid.voxel_size;

  for (int64_t z = 0; z + 1 < d.nz; ++z)
    for (int64_t y = 0; y + 1 < d.ny; ++y)
      for (int64_t x = 0; x + 1 < d.nx; ++x) {
        double val[8];
        bool all_observed = true;
        for (int c = 0; c < 8; ++c) {
          const int64_t ci = x + kCornerOffset[c][0];
          const int64_t cj = y + kCornerOffset[c][1];
          const int64_t ck = z + kCornerOffset[c][2];
          const int64_t lin = node_lin(ci, cj, ck);
          if (!vol.observed[lin]) {
            all_observed = false;
            break;
          }
          val[c] = vol.values[lin];
        }
        if (!all_observed) continue;

        int cube = 0;
        for (int c = 0; c < 8; ++c)
          if (val[c] < iso) cube |= 1 << c;
        const uint16_t edges = kEdgeTable[cube];
        if (edges == 0) continue;

        uint32_t everts[12];
        for (int e = 0; e < 12; ++e) {
          if (!(edges & (1 << e))) continue;
          const int c0 = kEdgeCorner[e][0];
          const int c1 = kEdgeCorner[e][1];
          // Owning node = the lower corner of the edge; axis = direction.
          int axis = 0;
          int low = c0;
          for (int a = 0; a < 3; ++a)
            if (kCornerOffset[c0][a] != kCornerOffset[c1][a]) {
              axis = a;
              low = kCornerOffset[c0][a] < kCornerOffset[c1][a] ? c0 : c1;
            }
          const int64_t ni = x + kCornerOffset[low][0];
          const int64_t nj = y + kCornerOffset[low][1];
          const int64_t nk = z + kCornerOffset[low][2];
          const uint64_t key = static_cast<uint64_t>(node_lin(ni, nj, nk)) * 3 + axis;
          auto it = edge_vertex.find(key);
          if (it != edge_vertex.end()) {
            everts[e] = it->second;
            continue;
          }
          const int high = low == c0 ? c1 : c0;
          const double vlow = val[low], vhigh = val[high];
          double t = 0.5;
          if (std::abs(vhigh - vlow) > 1e-300) t = (iso - vlow) / (vhigh - vlow);
          t = std::min(1.0, std::max(0.0, t));
          Vec3 p = vol.grid.center(ni, nj, nk);
          p[axis] += t * h;
          const uint32_t idx = static_cast<uint32_t>(mesh.vertices.size());
          mesh.vertices.push_back(p);
          edge_vertex.emplace(key, idx);
          everts[e] = idx;
        }

        for (int t = 0; kTriTable[cube][t] != -1; t += 3) {
          const uint32_t a = everts[kTriTable[cube][t]];
          const uint32_t b = everts[kTriTable[cube][t + 1]];
          const uint32_t c = everts[kTriTable[cube][t + 2]];
          if (a == b || b == c || a == c) continue;  // collapsed crossing
          // Table winding faces the S < iso side; flip so faces follow the
          // gradient (outward into free space).
          mesh.faces.push_back({a, c, b});
        }
      }

  // Vertex normals from the interpolated TSDF gradient; fall back to
  // area-weighted face normals where the gradient is degenerate.
  mesh.vertex_normals.assign(mesh.vertices.size(), Vec3::Zero());
  std::vector<uint8_t> degenerate(mesh.vertices.size(), 0);
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3 g = interpolated_gradient(vol, mesh.vertices[i]);
    const double len = g.norm();
    if (len > 1e-12)
      mesh.vertex_normals[i] = g / len;
    else
      degenerate[i] = 1;
  }
  bool any_degenerate = false;
  for (uint8_t f : degenerate) any_degenerate |= f != 0;
  if (any_degenerate) {
    for (const auto& f : mesh.faces) {
      const Vec3 n = (mesh.vertices[f[1]] - mesh.vertices[f[0]])
                         .cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]);
      for (int k = 0; k < 3; ++k)
        if (degenerate[f[k]]) mesh.vertex_normals[f[k]] += n;
    }
    for (size_t i = 0; i < mesh.vertices.size(); ++i) {
      if (!degenerate[i]) continue;
      const double len = mesh.vertex_normals[i].norm();
      mesh.vertex_normals[i] = len > 1e-12 ? Vec3(mesh.vertex_normals[i] / len) : Vec3(0, 0, 1);
    }
  }
  return mesh;
}

}  // namespace geofuse
