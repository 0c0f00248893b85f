#include "geofuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "geofuse/threading.hpp"

namespace geofuse {

PointIndex::PointIndex(const std::vector<Vec3>& points, double cell_size)
    : points_(points), cell_(cell_size > 0 ? cell_size : 0.05) {
  require(!points.empty(), "point index: empty point set");
  Vec3 lo = points[0], hi = points[0];
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  origin_ = lo;
  nx_ = std::max<int64_t>(1, static_cast<int64_t>(std::floor((hi.x() - lo.x()) / cell_)) + 1);
  ny_ = std::max<int64_t>(1, static_cast<int64_t>(std::floor((hi.y() - lo.y()) / cell_)) + 1);
  nz_ = std::max<int64_t>(1, static_cast<int64_t>(std::floor((hi.z() - lo.z()) / cell_)) + 1);

  const int64_t ncells = nx_ * ny_ * nz_;
  require(ncells < (int64_t(1) << 31), "point index: grid too large");
  std::vector<int32_t> counts(ncells + 1, 0);
  std::vector<int32_t> cell_id(points.size());
  for (size_t i = 0; i < points.size(); ++i) {
    int64_t cx, cy, cz;
    cell_id[i] = static_cast<int32_t>(cell_of(points[i], &cx, &cy, &cz));
    counts[cell_id[i] + 1]++;
  }
  std::partial_sum(counts.begin(), counts.end(), counts.begin());
  cell_start_ = counts;
  order_.resize(points.size());
  std::vector<int32_t> cursor(cell_start_.begin(), cell_start_.end() - 1);
  for (size_t i = 0; i < points.size(); ++i) order_[cursor[cell_id[i]]++] = static_cast<int32_t>(i);
}

int64_t PointIndex::cell_of(const Vec3& p, int64_t* cx, int64_t* cy, int64_t* cz) const {
  auto clampi = [](int64_t v, int64_t n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); };
  *cx = clampi(static_cast<int64_t>(std::floor((p.x() - origin_.x()) / cell_)), nx_);
  *cy = clampi(static_cast<int64_t>(std::floor((p.y() - origin_.y()) / cell_)), ny_);
  *cz = clampi(static_cast<int64_t>(std::floor((p.z() - origin_.z()) / cell_)), nz_);
  return (*cz * ny_ + *cy) * nx_ + *cx;
}

std::pair<size_t, double> PointIndex::nearest(const Vec3& q) const {
  int64_t cx, cy, cz;
  cell_of(q, &cx, &cy, &cz);

  size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  const int64_t max_ring = std::max({nx_, ny_, nz_});

  for (int64_t ring = 0; ring <= max_ring; ++ring) {
    // Once a neighbor is known, stop as soon as the closest possible point
    // of the next ring cannot beat it.
    if (std::isfinite(best_d2)) {
      const double safe = static_cast<double>(ring - 1) * cell_;
      if (ring > 0 && safe * safe >= best_d2) break;
    }
    for (int64_t dz = -ring; dz <= ring; ++dz)
      for (int64_t dy = -ring; dy <= ring; ++dy)
        for (int64_t dx = -ring; dx <= ring; ++dx) {
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
          const int64_t x = cx + dx, y = cy + dy, z = cz + dz;
          if (x < 0 || x >= nx_ || y < 0 || y >= ny_ || z < 0 || z >= nz_) continue;
          const int64_t cell = (z * ny_ + y) * nx_ + x;
          for (int32_t s = cell_start_[cell]; s < cell_start_[cell + 1]; ++s) {
            const size_t i = static_cast<size_t>(order_[s]);
            const double d2 = (points_[i] - q).squaredNorm();
            if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
              best_d2 = d2;
              best = i;
            }
          }
        }
  }
  return {best, std::sqrt(best_d2)};
}

PointSet sample_mesh(const Mesh& mesh, double density, uint64_t seed) {
  PointSet out;
  if (mesh.vertices.empty() || mesh.faces.empty()) return out;
  require(density > 0, "sample_mesh: density must be positive");

  std::vector<double> cum(mesh.faces.size());
  double total = 0.0;
  for (size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& face = mesh.faces[f];
    const Vec3 a = mesh.vertices[face[0]], b = mesh.vertices[face[1]], c = mesh.vertices[face[2]];
    total += 0.5 * (b - a).cross(c - a).norm();
    cum[f] = total;
  }
  if (total <= 0.0) return out;

  const int64_t count = std::llround(total * density);
  const bool normals = mesh.vertex_normals.size() == mesh.vertices.size();
  out.points.reserve(count);
  if (normals) out.normals.reserve(count);

  Rng rng(seed ^ 0x5eed5a3d11ull);
  for (int64_t k = 0; k < count; ++k) {
    const double r = rng.uniform() * total;
    const size_t f = std::lower_bound(cum.begin(), cum.end(), r) - cum.begin();
    const auto& face = mesh.faces[std::min(f, mesh.faces.size() - 1)];
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const double w = 1.0 - u - v;
    const Vec3 p = w * mesh.vertices[face[0]] + u * mesh.vertices[face[1]] +
                   v * mesh.vertices[face[2]];
    out.points.push_back(p);
    if (normals) {
      Vec3 n = w * mesh.vertex_normals[face[0]] + u * mesh.vertex_normals[face[1]] +
               v * mesh.vertex_normals[face[2]];
      const double len = n.norm();
      out.normals.push_back(len > 1e-12 ? Vec3(n / len) : Vec3(0, 0, 1));
    }
  }
  return out;
}

MeshMetrics mesh_metrics(const PointSet& pred, const PointSet& gt, double threshold) {
  require(!pred.points.empty() && !gt.points.empty(), "mesh_metrics: empty point set");
  require(threshold > 0, "mesh_metrics: threshold must be positive");
  MeshMetrics m;
  m.threshold = threshold;

  const PointIndex gt_index(gt.points, threshold);
  const PointIndex pred_index(pred.points, threshold);

  std::vector<double> dists(pred.size());
  parallel_for(static_cast<int64_t>(pred.size()), [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) dists[i] = gt_index.nearest(pred.points[i]).second;
  });
  double acc = 0.0;
  int64_t hits = 0;
  for (double d : dists) {
    acc += d;
    if (d < threshold) ++hits;
  }
  m.accuracy = acc / pred.size();
  m.precision = static_cast<double>(hits) / pred.size();

  std::vector<double> dists_gt(gt.size());
  parallel_for(static_cast<int64_t>(gt.size()), [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) dists_gt[i] = pred_index.nearest(gt.points[i]).second;
  });
  double comp = 0.0;
  int64_t hits_gt = 0;
  for (double d : dists_gt) {
    comp += d;
    if (d < threshold) ++hits_gt;
  }
  m.completeness = comp / gt.size();
  m.recall = static_cast<double>(hits_gt) / gt.size();

  m.fscore = (m.precision + m.recall) > 0.0
                 ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                 : 0.0;
  return m;
}

NormalMetrics normal_metrics(const PointSet& pred, const PointSet& gt,
                             const std::vector<double>& thresholds_deg, bool unsigned_axis) {
  require(pred.has_normals() && gt.has_normals(), "normal_metrics: point sets must carry normals");
  NormalMetrics out;
  out.thresholds_deg = thresholds_deg;

  auto angles = [&](const PointSet& a, const PointSet& b) {
    const PointIndex index(b.points, 0.05);
    std::vector<double> deg(a.size());
    parallel_for(static_cast<int64_t>(a.size()), [&](int64_t i0, int64_t i1) {
      for (int64_t i = i0; i < i1; ++i) {
        const size_t j = index.nearest(a.points[i]).first;
        double dot = a.normals[i].normalized().dot(b.normals[j].normalized());
        if (unsigned_axis) dot = std::abs(dot);
        dot = std::min(1.0, std::max(-1.0, dot));
        deg[i] = std::acos(dot) * 180.0 / M_PI;
      }
    });
    return deg;
  };

  const std::vector<double> pred_deg = angles(pred, gt);
  const std::vector<double> gt_deg = angles(gt, pred);
  for (double tau : thresholds_deg) {
    int64_t hp = 0, hr = 0;
    for (double d : pred_deg)
      if (d < tau) ++hp;
    for (double d : gt_deg)
      if (d < tau) ++hr;
    out.precision.push_back(static_cast<double>(hp) / pred_deg.size());
    out.recall.push_back(static_cast<double>(hr) / gt_deg.size());
  }
  return out;
}

std::string metrics_to_json(const MeshMetrics& m, const NormalMetrics* n) {
  nlohmann::json j;
  j["comp"] = m.completeness;
  j["acc"] = m.accuracy;
  j["recall"] = m.recall;
  j["prec"] = m.precision;
  j["fscore"] = m.fscore;
  j["threshold"] = m.threshold;
  if (n) {
    nlohmann::json nm;
    for (size_t i = 0; i < n->thresholds_deg.size(); ++i) {
      std::ostringstream key;
      key << n->thresholds_deg[i];
      nm["prec_" + key.str()] = n->precision[i];
      nm["recall_" + key.str()] = n->recall[i];
    }
    j["normals"] = nm;
  }
  return j.dump(2);
}

std::string metrics_to_table(const MeshMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "%8s %8s %8s %8s %8s\n%8.4f %8.4f %8.4f %8.4f %8.4f\n", "Comp", "Acc",
                "Recall", "Prec", "F-score", m.completeness, m.accuracy, m.recall, m.precision,
                m.fscore);
  return buf;
}

}  // namespace geofuse
