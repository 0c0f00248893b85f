#include "geofuse/pipeline.hpp"

#include <cmath>

#include "geofuse/threading.hpp"

namespace geofuse {

PipelineParams build_pipeline_params(const PipelineConfig& cfg, uint64_t seed) {
  require(cfg.feature_channels > 0 && cfg.feature_channels % cfg.heads == 0,
          "pipeline: feature channels must be divisible by head count");
  require(cfg.views >= 1, "pipeline: need at least one view");
  require(cfg.encode_levels >= 1, "pipeline: encode_levels must be >= 1");
  // Channel accounting from the architecture: 24 + 8 + 3 + 1 + 1 and 9T.
  require(cfg.encode_levels != 4 || cfg.geo_channels() == 37,
          "pipeline: geometry vector must have 37 channels at L=4");
  require(cfg.fusion_channels() == 9 * cfg.views, "pipeline: fusion input must be 9T channels");

  const int64_t c = cfg.feature_channels;
  PipelineParams p;
  Rng rng(seed ^ 0x6e0f5ull);

  p.stem = add_linear(p.set, "stem", kPixelFeatureChannels, c, rng);

  p.geo_mlp.push_back(add_linear(p.set, "stage1.geo_mlp.0", cfg.geo_channels(), 32, rng));
  p.geo_mlp.push_back(add_linear(p.set, "stage1.geo_mlp.1", 32, 1, rng));
  p.stage1_reduce = add_linear(p.set, "stage1.reduce", c + 1, c, rng);
  p.stage1_block = add_transformer(p.set, "stage1.block", c, cfg.heads, rng);

  p.stage2_reduce = add_linear(p.set, "stage2.reduce", c + 3, c, rng);
  p.stage2_block = add_transformer(p.set, "stage2.block", c, cfg.heads, rng);

  p.proj_occ_head = add_linear(p.set, "proj_occ", c, 1, rng);

  p.fusion_mlp.push_back(add_linear(p.set, "fusion.0", cfg.fusion_channels(), 32, rng));
  p.fusion_mlp.push_back(add_linear(p.set, "fusion.1", 32, 32, rng));
  p.fusion_mlp.push_back(add_linear(p.set, "fusion.2", 32, cfg.views, rng));

  p.head_conv1 = add_conv3(p.set, "head.conv1", c, c, rng);
  p.head_conv2 = add_conv3(p.set, "head.conv2", c, c, rng);
  p.head_tsdf = add_linear(p.set, "head.tsdf", c, 1, rng);
  p.head_occ = add_linear(p.set, "head.occ", c, 1, rng);
  return p;
}

VoxelGrid fit_grid(const Scene& scene, int64_t dims) {
  require(dims >= 8, "fit_grid: dims must be >= 8");
  VoxelGrid g;
  const Vec3 ext = scene.room_extent();
  g.voxel_size = ext.maxCoeff() / static_cast<double>(dims - 5);
  g.dims = {dims, dims, dims};
  const Vec3 c = scene.room_center();
  g.origin = c - 0.5 * g.voxel_size * Vec3::Constant(static_cast<double>(dims - 1));
  return g;
}

namespace {

// Canonical (value-sorted) mean/std over <= kMax entries.
void sorted_stats(double* buf, int m, double* mu, double* sd) {
  if (m == 0) {
    *mu = 0.0;
    *sd = 0.0;
    return;
  }
  std::sort(buf, buf + m);
  if (buf[0] == buf[m - 1]) {
    *mu = buf[0];
    *sd = 0.0;
    return;
  }
  double acc = 0.0;
  for (int i = 0; i < m; ++i) acc += buf[i];
  *mu = acc / m;
  double dev[64];
  for (int i = 0; i < m; ++i) {
    const double d = buf[i] - *mu;
    dev[i] = d * d;
  }
  std::sort(dev, dev + m);
  double acc2 = 0.0;
  for (int i = 0; i < m; ++i) acc2 += dev[i];
  *sd = std::sqrt(acc2 / m);
}

}  // namespace

SceneInputs build_scene_inputs(const std::vector<CameraView>& views, const VoxelGrid& grid,
                               const PipelineConfig& cfg) {
  require(static_cast<int>(views.size()) == cfg.views,
          "scene inputs: view count does not match config");
  grid.validate();
  SceneInputs in;
  in.grid = grid;
  in.views = views;

  const int64_t T = cfg.views;
  const int64_t N = grid.count();
  const int L = cfg.encode_levels;
  const int64_t geo_c = cfg.geo_channels();

  in.priors.reserve(T);
  for (const auto& v : views) in.priors.push_back(compute_geo_priors(grid, v));

  std::vector<CameraPose> poses;
  for (const auto& v : views) poses.push_back(v.pose);
  in.pose_distances = relative_pose_distance(poses);

  in.mask.views = T;
  in.mask.voxels = N;
  in.mask.valid.assign(T * N, 0);
  for (int64_t t = 0; t < T; ++t)
    for (int64_t n = 0; n < N; ++n) in.mask.valid[t * N + n] = in.priors[t].valid[n];

  // Per-view pixel feature constants, [HW, C_px] rows.
  for (const auto& v : views) {
    const int64_t hw = v.pixel_count();
    require(v.feature_channels == kPixelFeatureChannels, "scene inputs: bad feature channels");
    std::vector<double> rows(hw * kPixelFeatureChannels);
    for (int64_t p = 0; p < hw; ++p)
      for (int c = 0; c < kPixelFeatureChannels; ++c)
        rows[p * kPixelFeatureChannels + c] = v.feature[c * hw + p];
    in.pixel_features.push_back(Tensor::constant({hw, kPixelFeatureChannels}, std::move(rows)));
  }

  // Bilinear gather plans per view.
  for (int64_t t = 0; t < T; ++t) {
    const auto& v = views[t];
    BilinearPlan plan;
    plan.rows = N;
    plan.source_size = v.pixel_count();
    plan.index.assign(N * 4, 0);
    plan.weight.assign(N * 4, 0.0);
    plan.valid.assign(N, 0);
    const int w = v.intrinsics.width, h = v.intrinsics.height;
    for (int64_t n = 0; n < N; ++n) {
      if (!in.priors[t].valid[n]) continue;
      const Projection pr = project(grid.center_linear(n), v.intrinsics, v.pose);
      const double u = std::min(std::max(pr.pixel.x(), 0.0), static_cast<double>(w - 1));
      const double vv = std::min(std::max(pr.pixel.y(), 0.0), static_cast<double>(h - 1));
      const int x0 = std::min(static_cast<int>(u), w - 2 >= 0 ? w - 2 : 0);
      const int y0 = std::min(static_cast<int>(vv), h - 2 >= 0 ? h - 2 : 0);
      const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double ax = u - x0, ay = vv - y0;
      plan.valid[n] = 1;
      plan.index[n * 4 + 0] = y0 * w + x0;
      plan.index[n * 4 + 1] = y0 * w + x1;
      plan.index[n * 4 + 2] = y1 * w + x0;
      plan.index[n * 4 + 3] = y1 * w + x1;
      plan.weight[n * 4 + 0] = (1 - ax) * (1 - ay);
      plan.weight[n * 4 + 1] = ax * (1 - ay);
      plan.weight[n * 4 + 2] = (1 - ax) * ay;
      plan.weight[n * 4 + 3] = ax * ay;
    }
    in.plans.push_back(std::move(plan));
  }

  // Canonical fusion slot order: sort views by pose so the fusion MLP's
  // channel slots are independent of the caller's view order.
  in.fusion_order.resize(T);
  {
    std::vector<std::array<double, 12>> keys(T);
    for (int64_t t = 0; t < T; ++t) {
      const CameraPose& p = views[t].pose;
      keys[t] = {p.t.x(),    p.t.y(),    p.t.z(),    p.R(0, 0), p.R(1, 0), p.R(2, 0),
                 p.R(0, 1), p.R(1, 1), p.R(2, 1), p.R(0, 2), p.R(1, 2), p.R(2, 2)};
    }
    for (int64_t t = 0; t < T; ++t) in.fusion_order[t] = static_cast<int>(t);
    std::stable_sort(in.fusion_order.begin(), in.fusion_order.end(),
                     [&](int a, int b) { return keys[a] < keys[b]; });
  }

  // Per-view pose-distance statistics over the other views, in slot order.
  in.pose_mean.assign(3 * T, 0.0);
  in.pose_std.assign(3 * T, 0.0);
  for (int64_t s = 0; s < T; ++s) {
    const int64_t i = in.fusion_order[s];
    double buf[64];
    const std::vector<double>* fields[3] = {&in.pose_distances.rot, &in.pose_distances.trans,
                                            &in.pose_distances.overall};
    for (int f = 0; f < 3; ++f) {
      int m = 0;
      for (int64_t j = 0; j < T; ++j)
        if (j != i) buf[m++] = (*fields[f])[i * T + j];
      double mu, sd;
      sorted_stats(buf, m, &mu, &sd);
      in.pose_mean[3 * s + f] = mu;
      in.pose_std[3 * s + f] = sd;
    }
  }

  // Geometry vectors [gamma(v), gamma(z), v, z, theta] and stage-2 normals,
  // with ablation switches zeroing both the raw and encoded slots.
  const auto& ab = cfg.ablation;
  in.geo.assign(T * N * geo_c, 0.0);
  in.proj_normals.assign(T * N * 3, 0.0);
  parallel_for(T * N, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) {
      const int64_t t = r / N, n = r % N;
      const GeoPriors& pr = in.priors[t];
      if (!pr.valid[n]) continue;
      double* g = in.geo.data() + r * geo_c;
      const double* vdir = pr.view_dir.data() + n * 3;
      const double z = pr.proj_depth[n];
      if (ab.prior_view_dir && ab.encoding) {
        const auto enc = positional_encode(std::span<const double>(vdir, 3), L);
        for (int i = 0; i < 6 * L; ++i) g[i] = enc[i];
      }
      if (ab.prior_depth && ab.encoding) {
        const auto enc = positional_encode(std::span<const double>(&z, 1), L);
        for (int i = 0; i < 2 * L; ++i) g[6 * L + i] = enc[i];
      }
      if (ab.prior_view_dir)
        for (int i = 0; i < 3; ++i) g[8 * L + i] = vdir[i];
      if (ab.prior_depth) g[8 * L + 3] = z;
      if (ab.prior_angle) g[8 * L + 4] = pr.view_angle[n];
      if (ab.prior_normal)
        for (int i = 0; i < 3; ++i) in.proj_normals[r * 3 + i] = pr.proj_normal[n * 3 + i];
    }
  });
  return in;
}

namespace {

// Uniform attention over valid views; stands in for the transformer's
// attention record when the transformer is ablated away.
Tensor uniform_attention(const ViewMask& mask) {
  const int64_t T = mask.views, N = mask.voxels;
  std::vector<double> a(T * T * N, 0.0);
  for (int64_t n = 0; n < N; ++n) {
    int m = 0;
    for (int64_t t = 0; t < T; ++t)
      if (mask.at(t, n)) ++m;
    if (m == 0) continue;
    const double w = 1.0 / m;
    for (int64_t i = 0; i < T; ++i) {
      if (!mask.at(i, n)) continue;
      for (int64_t j = 0; j < T; ++j)
        if (mask.at(j, n)) a[(i * T + j) * N + n] = w;
    }
  }
  return Tensor::constant({T, T, N}, std::move(a));
}

Tensor uniform_view_weights(const ViewMask& mask) {
  const int64_t T = mask.views, N = mask.voxels;
  std::vector<double> w(N * T, 0.0);
  for (int64_t n = 0; n < N; ++n) {
    int m = 0;
    for (int64_t t = 0; t < T; ++t)
      if (mask.at(t, n)) ++m;
    if (m == 0) continue;
    for (int64_t t = 0; t < T; ++t)
      if (mask.at(t, n)) w[n * T + t] = 1.0 / m;
  }
  return Tensor::constant({N, T}, std::move(w));
}

}  // namespace

PipelineOutput run_pipeline(const SceneInputs& in, const PipelineParams& params,
                            const PipelineConfig& cfg) {
  const int64_t T = cfg.views;
  const int64_t N = in.grid.count();
  const int64_t C = cfg.feature_channels;
  require(static_cast<int64_t>(in.views.size()) == T, "run_pipeline: view count mismatch");

  // Back-projected per-view feature volumes.
  std::vector<Tensor> per_view;
  per_view.reserve(T);
  for (int64_t t = 0; t < T; ++t) {
    Tensor feat = ops::relu(ops::linear(in.pixel_features[t], params.stem.W, params.stem.b));
    per_view.push_back(ops::gather_bilinear(feat, in.plans[t]));
  }
  Tensor volume = ops::mask_rows(ops::stack_views(per_view), in.mask);  // [T, N, C]

  // Stage 1: geometry-conditioned features.
  const Tensor geo = Tensor::constant({T, N, cfg.geo_channels()}, in.geo);
  const Tensor geo_feat = mlp_forward(geo, params.geo_mlp, /*relu_after_last=*/true);
  Tensor g = ops::linear(ops::concat_last({geo_feat, volume}), params.stage1_reduce.W,
                         params.stage1_reduce.b);
  g = ops::mask_rows(g, in.mask);

  Tensor phi = g;
  Tensor attn1;
  if (cfg.ablation.transformer) {
    TransformerOut t1 = transformer_block(g, params.stage1_block, in.mask);
    phi = t1.output;
    attn1 = t1.attn;
  } else {
    attn1 = uniform_attention(in.mask);
  }

  // Stage 2: projected-normal conditioning.
  const Tensor normals = Tensor::constant({T, N, 3}, in.proj_normals);
  Tensor g2 = ops::linear(ops::concat_last({normals, phi}), params.stage2_reduce.W,
                          params.stage2_reduce.b);
  g2 = ops::mask_rows(g2, in.mask);

  Tensor phi2 = g2;
  Tensor attn2;
  if (cfg.ablation.transformer) {
    TransformerOut t2 = transformer_block(g2, params.stage2_block, in.mask);
    phi2 = t2.output;
    attn2 = t2.attn;
  } else {
    attn2 = uniform_attention(in.mask);
  }

  // Per-view projective occupancy probabilities.
  Tensor proj_occ =
      ops::reshape(ops::sigmoid(ops::linear(phi2, params.proj_occ_head.W, params.proj_occ_head.b)),
                   {T, N});

  // Adaptive fusion from attention statistics, pose statistics, and the
  // occupancy prior.
  Tensor weights;
  if (cfg.ablation.fusion == "adaptive") {
    const Tensor mu = ops::attention_row_mean(attn2, in.mask);
    const Tensor sd = ops::attention_row_std(attn2, in.mask);
    const Tensor occ_masked = ops::reshape(
        ops::mask_rows(ops::reshape(proj_occ, {T, N, 1}), in.mask), {T, N});
    const Tensor fusion_in = ops::assemble_fusion_features(mu, sd, in.pose_mean, in.pose_std,
                                                           occ_masked, in.fusion_order);
    Tensor slot_logits = mlp_forward(fusion_in, params.fusion_mlp, /*relu_after_last=*/false);
    Tensor logits = ops::scatter_columns(slot_logits, in.fusion_order);
    weights = ops::view_softmax(logits, in.mask);
  } else if (cfg.ablation.fusion == "average") {
    weights = uniform_view_weights(in.mask);
  } else {
    throw ValidationError("run_pipeline: unknown fusion mode: " + cfg.ablation.fusion);
  }

  const Tensor& fuse_src = cfg.ablation.fuse_raw_features ? volume : phi2;
  Tensor fused = ops::weighted_view_sum(weights, fuse_src);  // [N, C]

  // Dense prediction head.
  Tensor h = ops::relu(ops::conv3x3x3(fused, params.head_conv1.W, params.head_conv1.b,
                                      in.grid.dims));
  h = ops::relu(ops::conv3x3x3(h, params.head_conv2.W, params.head_conv2.b, in.grid.dims));
  Tensor tsdf = ops::reshape(ops::tanh_op(ops::linear(h, params.head_tsdf.W, params.head_tsdf.b)),
                             {N});
  Tensor occ = ops::reshape(ops::sigmoid(ops::linear(h, params.head_occ.W, params.head_occ.b)),
                            {N});

  PipelineOutput out;
  out.tsdf = tsdf;
  out.occupancy = occ;
  out.proj_occ = proj_occ;
  out.weights = weights;
  out.fused = fused;
  out.attn_stage1 = attn1;
  out.attn_stage2 = attn2;
  out.any_valid.assign(N, 0);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t t = 0; t < T; ++t)
      if (in.mask.at(t, n)) {
        out.any_valid[n] = 1;
        break;
      }
  return out;
}

}  // namespace geofuse
