#include "geofuse/tsdf.hpp"

#include <algorithm>
#include <cmath>

#include "geofuse/threading.hpp"

namespace geofuse {

TsdfVolume fuse_depth_to_tsdf(const std::vector<CameraView>& views, const VoxelGrid& grid,
                              double truncation) {
  require(!views.empty(), "fuse_depth_to_tsdf: empty view list");
  grid.validate();
  require(truncation > 0.0, "fuse_depth_to_tsdf: truncation must be positive");
  for (const auto& v : views) {
    v.intrinsics.validate();
    v.pose.validate();
    require(!v.depth.empty(), "fuse_depth_to_tsdf: view without depth map");
  }

  TsdfVolume vol;
  vol.init(grid, truncation);
  const int64_t n = grid.count();
  const int64_t t = static_cast<int64_t>(views.size());

  parallel_for(n, [&](int64_t i0, int64_t i1) {
    std::vector<double> contrib(t);
    for (int64_t i = i0; i < i1; ++i) {
      const Vec3 p = grid.center_linear(i);
      int m = 0;
      for (int64_t v = 0; v < t; ++v) {
        const Projection pr = project(p, views[v].intrinsics, views[v].pose);
        if (!pr.valid) continue;
        const double d = sample_depth_nearest(views[v], pr.pixel.x(), pr.pixel.y());
        if (!std::isfinite(d)) continue;
        const double sdf = d - pr.depth;
        if (sdf < -truncation) continue;  // unknown space behind the surface
        contrib[m++] = std::min(1.0, sdf / truncation);
      }
      if (m == 0) continue;
      std::sort(contrib.begin(), contrib.begin() + m);
      double sum = 0.0, comp = 0.0;  // Kahan
      for (int j = 0; j < m; ++j) {
        const double y = contrib[j] - comp;
        const double s = sum + y;
        comp = (s - sum) - y;
        sum = s;
      }
      vol.values[i] = std::min(1.0, std::max(-1.0, sum / m));
      vol.weights[i] = static_cast<double>(m);
      vol.observed[i] = 1;
    }
  });
  return vol;
}

void tsdf_gradient_raw(const std::vector<double>& s, const VoxelGrid& grid,
                       std::vector<double>* grad) {
  const Dims3 d = grid.dims;
  const int64_t n = grid.count();
  grad->assign(n * 3, 0.0);
  const double scale = 1.0 / (2.0 * grid.voxel_size * 9.0);
  const int64_t sx = 1, sy = d.nx, sz = d.nx * d.ny;
  parallel_for(d.nz, [&](int64_t z0, int64_t z1) {
    for (int64_t z = std::max<int64_t>(z0, 1); z < std::min(z1, d.nz - 1); ++z)
      for (int64_t y = 1; y < d.ny - 1; ++y)
        for (int64_t x = 1; x < d.nx - 1; ++x) {
          const int64_t p = z * sz + y * sy + x;
          double gx = 0.0, gy = 0.0, gz = 0.0;
          for (int64_t a = -1; a <= 1; ++a)
            for (int64_t b = -1; b <= 1; ++b) {
              gx += s[p + sx + a * sy + b * sz] - s[p - sx + a * sy + b * sz];
              gy += s[p + sy + a * sx + b * sz] - s[p - sy + a * sx + b * sz];
              gz += s[p + sz + a * sx + b * sy] - s[p - sz + a * sx + b * sy];
            }
          (*grad)[p * 3 + 0] = gx * scale;
          (*grad)[p * 3 + 1] = gy * scale;
          (*grad)[p * 3 + 2] = gz * scale;
        }
  });
}

NormalVolume tsdf_normals(const TsdfVolume& vol, double eps_grad) {
  const Dims3 d = vol.grid.dims;
  require(d.nx >= 3 && d.ny >= 3 && d.nz >= 3, "tsdf_normals: grid must be >= 3 per axis");

  std::vector<double> grad;
  tsdf_gradient_raw(vol.values, vol.grid, &grad);

  NormalVolume out;
  out.grid = vol.grid;
  out.normals.assign(vol.grid.count() * 3, 0.0);
  out.defined.assign(vol.grid.count(), 0);

  const int64_t sx = 1, sy = d.nx, sz = d.nx * d.ny;
  parallel_for(d.nz, [&](int64_t z0, int64_t z1) {
    for (int64_t z = std::max<int64_t>(z0, 1); z < std::min(z1, d.nz - 1); ++z)
      for (int64_t y = 1; y < d.ny - 1; ++y)
        for (int64_t x = 1; x < d.nx - 1; ++x) {
          const int64_t p = z * sz + y * sy + x;
          bool ok = true;
          for (int64_t a = -1; a <= 1 && ok; ++a)
            for (int64_t b = -1; b <= 1 && ok; ++b)
              for (int64_t c = -1; c <= 1 && ok; ++c)
                if (!vol.observed[p + a * sx + b * sy + c * sz]) ok = false;
          if (!ok) continue;
          const double gx = grad[p * 3], gy = grad[p * 3 + 1], gz = grad[p * 3 + 2];
          const double len = std::sqrt(gx * gx + gy * gy + gz * gz);
          if (len < eps_grad) continue;
          out.normals[p * 3 + 0] = gx / len;
          out.normals[p * 3 + 1] = gy / len;
          out.normals[p * 3 + 2] = gz / len;
          out.defined[p] = 1;
        }
  });
  return out;
}

}  // namespace geofuse
