#pragma once

#include <array>
#include <optional>
#include <vector>

#include "geofuse/common.hpp"
#include "geofuse/marching_cubes.hpp"

namespace geofuse {

struct PointSet {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;  // optional; empty or one per point

  bool has_normals() const { return normals.size() == points.size() && !points.empty(); }
  size_t size() const { return points.size(); }
};

struct MeshMetrics {
  double accuracy = 0.0;      // mean pred -> gt distance (m)
  double completeness = 0.0;  // mean gt -> pred distance (m)
  double precision = 0.0;
  double recall = 0.0;
  double fscore = 0.0;
  double threshold = 0.05;
};

struct NormalMetrics {
  std::vector<double> thresholds_deg;  // default {11.25, 22.5, 30}
  std::vector<double> precision;
  std::vector<double> recall;
};

// Exact nearest-neighbor queries via uniform-grid bucketing with expanding
// ring search; equivalent to a quadratic scan.
class PointIndex {
 public:
  PointIndex(const std::vector<Vec3>& points, double cell_size);

  // index of the nearest point and its distance
  std::pair<size_t, double> nearest(const Vec3& q) const;

 private:
  const std::vector<Vec3>& points_;
  double cell_ = 0.05;
  Vec3 origin_ = Vec3::Zero();
  int64_t nx_ = 1, ny_ = 1, nz_ = 1;
  std::vector<int32_t> cell_start_;
  std::vector<int32_t> order_;

  int64_t cell_of(const Vec3& p, int64_t* cx, int64_t* cy, int64_t* cz) const;
};

// Area-weighted uniform surface sampling with barycentric-interpolated
// normals; deterministic per seed. Total count = round(area * density).
PointSet sample_mesh(const Mesh& mesh, double density, uint64_t seed);

// Point-to-point reconstruction metrics: accuracy/completeness are mean
// nearest-neighbor distances; precision/recall are the fractions under the
// threshold; fscore their harmonic mean (0 when both are 0).
MeshMetrics mesh_metrics(const PointSet& pred, const PointSet& gt, double threshold = 0.05);

// Normal precision/recall at angular thresholds: each point is matched to
// its nearest neighbor by position and the normal angle compared. With
// unsigned_axis the angle ignores orientation (acos |dot|); the signed mode
// matches orientation-sensitive benchmarks.
NormalMetrics normal_metrics(const PointSet& pred, const PointSet& gt,
                             const std::vector<double>& thresholds_deg = {11.25, 22.5, 30.0},
                             bool unsigned_axis = true);

// JSON document and an aligned plain-text table (Comp Acc Recall Prec F-score).
std::string metrics_to_json(const MeshMetrics& m, const NormalMetrics* n = nullptr);
std::string metrics_to_table(const MeshMetrics& m);

}  // namespace geofuse
