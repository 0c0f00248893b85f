#include "geofuse/losses.hpp"

#include <cmath>

#include "geofuse/threading.hpp"

namespace geofuse {

BoundaryMask2D boundary_mask_2d(const CameraView& view, double threshold) {
  const int w = view.intrinsics.width, h = view.intrinsics.height;
  const int64_t hw = static_cast<int64_t>(w) * h;
  BoundaryMask2D out;
  out.width = w;
  out.height = h;

  // Smoothed 3x3 derivative per channel, replicate border; /8 scales to
  // normal-units per pixel.
  std::vector<double> mag(hw, 0.0);
  auto clampx = [&](int x) { return x < 0 ? 0 : (x >= w ? w - 1 : x); };
  auto clampy = [&](int y) { return y < 0 ? 0 : (y >= h ? h - 1 : y); };
  parallel_for(h, [&](int64_t y0, int64_t y1) {
    for (int64_t y = y0; y < y1; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double total = 0.0;
        for (int c = 0; c < 3; ++c) {
          const double* plane = view.normal.data() + c * hw;
          auto at = [&](int xx, int yy) { return plane[clampy(yy) * w + clampx(xx)]; };
          const double gx = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1) -
                             at(x - 1, y - 1) - 2 * at(x - 1, y) - at(x - 1, y + 1)) /
                            8.0;
          const double gy = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1) -
                             at(x - 1, y - 1) - 2 * at(x, y - 1) - at(x + 1, y - 1)) /
                            8.0;
          total += std::sqrt(gx * gx + gy * gy);
        }
        mag[y * w + x] = total;
      }
  });

  std::vector<uint8_t> raw(hw, 0);
  for (int64_t p = 0; p < hw; ++p)
    raw[p] = (mag[p] > threshold || !std::isfinite(view.depth[p])) ? 1 : 0;

  // One ring of 8-neighbor dilation (3x3 max-pool).
  out.keep.assign(hw, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool boundary = false;
      for (int dy = -1; dy <= 1 && !boundary; ++dy)
        for (int dx = -1; dx <= 1 && !boundary; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (xx < 0 || xx >= w || yy < 0 || yy >= h) continue;
          if (raw[yy * w + xx]) boundary = true;
        }
      if (boundary) out.keep[y * w + x] = 0;
    }
  return out;
}

std::vector<uint8_t> backproject_mask(const std::vector<BoundaryMask2D>& masks,
                                      const VoxelGrid& grid,
                                      const std::vector<CameraView>& views) {
  require(masks.size() == views.size(), "backproject_mask: mask/view count mismatch");
  const int64_t n = grid.count();
  std::vector<uint8_t> kept(n, 0);
  parallel_for(n, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const Vec3 p = grid.center_linear(i);
      bool seen = false, all_planar = true;
      for (size_t v = 0; v < views.size(); ++v) {
        const Projection pr = project(p, views[v].intrinsics, views[v].pose);
        if (!pr.valid) continue;
        seen = true;
        const int w = masks[v].width, h = masks[v].height;
        int x = static_cast<int>(std::lround(pr.pixel.x()));
        int y = static_cast<int>(std::lround(pr.pixel.y()));
        x = std::min(std::max(x, 0), w - 1);
        y = std::min(std::max(y, 0), h - 1);
        if (!masks[v].at(x, y)) {
          all_planar = false;
          break;
        }
      }
      kept[i] = (seen && all_planar) ? 1 : 0;
    }
  });
  return kept;
}

ConsistencyTerms consistency_terms(const NormalVolume& normals,
                                   const std::vector<GeoPriors>& priors,
                                   const std::vector<CameraPose>& poses, bool gaussian_weight,
                                   double sigma_sq) {
  require(priors.size() == poses.size(), "consistency_terms: priors/poses mismatch");
  const int64_t n = normals.grid.count();
  for (const auto& p : priors)
    require(p.voxels == n, "consistency_terms: priors grid mismatch");

  ConsistencyTerms out;
  out.projected_normal.assign(n * 3, 0.0);
  out.similarity.assign(n, 0.0);
  out.weight.assign(n, 0.0);
  out.defined.assign(n, 0);

  const int64_t t = static_cast<int64_t>(priors.size());
  parallel_for(n, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      if (!normals.defined[i]) continue;
      Vec3 acc = Vec3::Zero();
      int m = 0;
      for (int64_t v = 0; v < t; ++v) {
        if (!priors[v].valid[i]) continue;
        const Vec3 n_cam(priors[v].proj_normal[i * 3], priors[v].proj_normal[i * 3 + 1],
                         priors[v].proj_normal[i * 3 + 2]);
        acc += poses[v].R * n_cam;
        ++m;
      }
      if (m == 0) continue;
      const double len = acc.norm();
      if (len < 1e-12) continue;
      const Vec3 mean = acc / len;  // valid-view average, renormalized
      const Vec3 ng(normals.normals[i * 3], normals.normals[i * 3 + 1],
                    normals.normals[i * 3 + 2]);
      const double s = std::min(1.0, std::max(-1.0, ng.dot(mean)));
      out.defined[i] = 1;
      out.similarity[i] = s;
      out.projected_normal[i * 3 + 0] = mean.x();
      out.projected_normal[i * 3 + 1] = mean.y();
      out.projected_normal[i * 3 + 2] = mean.z();
      out.weight[i] = gaussian_weight ? std::exp(-(s - 1.0) * (s - 1.0) / sigma_sq)
                                      : (s > 0.0 ? 1.0 : 0.0);
    }
  });
  return out;
}

NormalLossValue normal_loss(const TsdfVolume& pred, const TsdfVolume& gt,
                            const std::vector<uint8_t>& mask3d, const ConsistencyTerms& terms) {
  require(pred.grid.count() == gt.grid.count(), "normal_loss: grid mismatch");
  const NormalVolume np = tsdf_normals(pred);
  const NormalVolume ng = tsdf_normals(gt);
  const int64_t n = gt.grid.count();

  NormalLossValue out;
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    if (!np.defined[i] || !ng.defined[i] || !mask3d[i]) continue;
    if (!terms.defined[i] || terms.weight[i] <= 0.0) continue;
    if (std::abs(gt.values[i]) >= 1.0) continue;  // near-surface band only
    double dot = 0.0;
    for (int k = 0; k < 3; ++k) dot += np.normals[i * 3 + k] * ng.normals[i * 3 + k];
    acc += terms.weight[i] * dot;
    ++out.count;
  }
  out.value = out.count > 0 ? 1.0 - acc / out.count : 0.0;
  return out;
}

NormalLossPlan normal_loss_plan(const std::vector<double>& grad_pred, const TsdfVolume& gt,
                                const NormalVolume& gt_normals,
                                const std::vector<uint8_t>& mask3d,
                                const ConsistencyTerms& terms, double eps_grad) {
  const int64_t n = gt.grid.count();
  require(static_cast<int64_t>(grad_pred.size()) == n * 3, "normal_loss_plan: bad gradient size");
  NormalLossPlan plan;
  plan.weights.assign(n, 0.0);
  plan.reference.assign(n * 3, 0.0);
  const Dims3& d = gt.grid.dims;
  for (int64_t i = 0; i < n; ++i) {
    if (!gt_normals.defined[i] || !mask3d[i]) continue;
    if (!terms.defined[i] || terms.weight[i] <= 0.0) continue;
    if (std::abs(gt.values[i]) >= 1.0) continue;
    const int64_t x = i % d.nx, y = (i / d.nx) % d.ny, z = i / (d.nx * d.ny);
    if (x < 1 || x >= d.nx - 1 || y < 1 || y >= d.ny - 1 || z < 1 || z >= d.nz - 1) continue;
    const double gx = grad_pred[i * 3], gy = grad_pred[i * 3 + 1], gz = grad_pred[i * 3 + 2];
    if (std::sqrt(gx * gx + gy * gy + gz * gz) < eps_grad) continue;
    plan.weights[i] = terms.weight[i];
    for (int k = 0; k < 3; ++k) plan.reference[i * 3 + k] = gt_normals.normals[i * 3 + k];
    ++plan.count;
  }
  return plan;
}

LossTerms compute_losses(const PipelineOutput& out, const SceneInputs& in, const GroundTruth& gt,
                         bool log_tsdf) {
  const int64_t n = in.grid.count();
  LossTerms terms;

  // Dense occupancy BCE over observed voxels.
  terms.occupancy = ops::bce_mean(out.occupancy, gt.occupancy, gt.observed);

  // Masked MAE on the TSDF inside the predicted-occupied support.
  std::vector<uint8_t> tsdf_mask(n, 0);
  const auto& occ_prob = out.occupancy.values();
  for (int64_t i = 0; i < n; ++i)
    tsdf_mask[i] = (gt.observed[i] && occ_prob[i] > 0.5) ? 1 : 0;
  if (log_tsdf) {
    std::vector<double> target(n);
    for (int64_t i = 0; i < n; ++i)
      target[i] = std::copysign(std::log1p(std::abs(gt.tsdf.values[i])), gt.tsdf.values[i]);
    terms.tsdf = ops::mae_masked(ops::symlog(out.tsdf), target, tsdf_mask);
  } else {
    terms.tsdf = ops::mae_masked(out.tsdf, gt.tsdf.values, tsdf_mask);
  }

  // Per-view projective occupancy BCE over valid voxels.
  terms.proj_occupancy = ops::bce_mean(out.proj_occ, gt.proj_occupancy, gt.proj_valid);

  // Surface-normal consistency through the prediction's derivative stencil.
  const double scale = 1.0 / (2.0 * in.grid.voxel_size * 9.0);
  Tensor grad = ops::stencil_gradient(out.tsdf, in.grid.dims, scale);
  const NormalLossPlan plan =
      normal_loss_plan(grad.values(), gt.tsdf, gt.gt_normals, gt.mask3d, gt.consistency);
  terms.normal = ops::cosine_direction_loss(grad, plan.reference, plan.weights);
  terms.normal_count = plan.count;
  return terms;
}

Tensor total_loss(const LossTerms& terms, int epoch, const LossWeights& w, bool normal_enabled,
                  LossReport* report) {
  std::vector<std::pair<double, Tensor>> parts{{w.occupancy, terms.occupancy},
                                               {w.tsdf, terms.tsdf},
                                               {w.proj_occupancy, terms.proj_occupancy}};
  const bool use_normal = normal_enabled && epoch > w.normal_after_epochs;
  if (use_normal) parts.emplace_back(w.normal, terms.normal);
  Tensor total = ops::weighted_sum_scalars(parts);
  if (report) {
    report->total = total.scalar_value();
    report->occupancy = terms.occupancy.scalar_value();
    report->tsdf = terms.tsdf.scalar_value();
    report->proj_occupancy = terms.proj_occupancy.scalar_value();
    report->normal = terms.normal.scalar_value();
    report->normal_count = terms.normal_count;
  }
  return total;
}

}  // namespace geofuse
