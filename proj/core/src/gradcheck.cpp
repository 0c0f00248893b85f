#include "geofuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "geofuse/losses.hpp"
#include "geofuse/nn.hpp"
#include "geofuse/ops.hpp"
#include "geofuse/pipeline.hpp"
#include "geofuse/train.hpp"

namespace geofuse {

double finite_difference_error(const std::function<Tensor()>& loss_fn,
                               const std::vector<Tensor>& params, int samples_per_tensor,
                               double step, uint64_t seed) {
  for (auto p : params) p.zero_grad();
  {
    Tensor loss = loss_fn();
    backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad());

  Rng rng(seed);
  auto eval = [&]() { return loss_fn().scalar_value(); };
  double worst = 0.0;

  auto relerr = [](double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
  };

  for (size_t k = 0; k < params.size(); ++k) {
    Tensor p = params[k];
    auto& vals = p.raw_values();
    const int64_t n = static_cast<int64_t>(vals.size());
    const int64_t samples = std::min<int64_t>(n, samples_per_tensor);
    for (int64_t s = 0; s < samples; ++s) {
      const int64_t i = samples == n ? s : static_cast<int64_t>(rng.uniform_index(n));
      const double saved = vals[i];
      vals[i] = saved + step;
      const double fp = eval();
      vals[i] = saved - step;
      const double fm = eval();
      vals[i] = saved;
      const double fd = (fp - fm) / (2.0 * step);
      worst = std::max(worst, relerr(fd, analytic[k][i]));
    }
  }

  // One random direction across all parameters covers every entry cheaply.
  std::vector<std::vector<double>> dir(params.size());
  double norm2 = 0.0;
  for (size_t k = 0; k < params.size(); ++k) {
    dir[k].resize(params[k].numel());
    for (auto& d : dir[k]) {
      d = rng.uniform(-1.0, 1.0);
      norm2 += d * d;
    }
  }
  const double inv_norm = 1.0 / std::sqrt(std::max(norm2, 1e-300));
  double directional_analytic = 0.0;
  for (size_t k = 0; k < params.size(); ++k)
    for (size_t i = 0; i < dir[k].size(); ++i) {
      dir[k][i] *= inv_norm;
      directional_analytic += dir[k][i] * analytic[k][i];
    }
  for (size_t k = 0; k < params.size(); ++k) {
    Tensor p = params[k];
    auto& vals = p.raw_values();
    for (size_t i = 0; i < vals.size(); ++i) vals[i] += step * dir[k][i];
  }
  const double fp = eval();
  for (size_t k = 0; k < params.size(); ++k) {
    Tensor p = params[k];
    auto& vals = p.raw_values();
    for (size_t i = 0; i < vals.size(); ++i) vals[i] -= 2.0 * step * dir[k][i];
  }
  const double fm = eval();
  for (size_t k = 0; k < params.size(); ++k) {
    Tensor p = params[k];
    auto& vals = p.raw_values();
    for (size_t i = 0; i < vals.size(); ++i) vals[i] += step * dir[k][i];
  }
  worst = std::max(worst, relerr((fp - fm) / (2.0 * step), directional_analytic));
  return worst;
}

namespace {

constexpr double kPrimitiveTol = 1e-4;
constexpr double kCompositeTol = 1e-3;

std::vector<double> random_values(int64_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Values bounded away from zero (for kinked activations).
std::vector<double> offzero_values(int64_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) {
    const double m = rng.uniform(0.3, 1.0);
    x = rng.uniform() < 0.5 ? -m : m;
  }
  return v;
}

Tensor weighted_probe(const Tensor& y, Rng& rng) {
  // Fixed random linear functional so every output entry matters.
  return ops::sum_all(ops::mul(y, Tensor::constant(y.shape(), random_values(y.numel(), rng))));
}

ViewMask demo_mask(int64_t T, int64_t N, Rng& rng, double invalid_rate = 0.2) {
  ViewMask m;
  m.views = T;
  m.voxels = N;
  m.valid.assign(T * N, 1);
  for (auto& v : m.valid)
    if (rng.uniform() < invalid_rate) v = 0;
  // Keep at least one view valid per voxel.
  for (int64_t n = 0; n < N; ++n) {
    bool any = false;
    for (int64_t t = 0; t < T; ++t) any |= m.valid[t * N + n] != 0;
    if (!any) m.valid[n] = 1;
  }
  return m;
}

struct Check {
  std::string name;
  std::string module;
  double tol;
  std::function<double()> run;
};

std::vector<Check> build_checks() {
  std::vector<Check> checks;
  auto add = [&](const std::string& module, const std::string& name, double tol,
                 std::function<double()> run) {
    checks.push_back({name, module, tol, std::move(run)});
  };

  // ---- tensornn primitives ----
  add("tensornn", "linear", kPrimitiveTol, [] {
    Rng rng(11);
    Tensor x = Tensor::param({4, 5}, random_values(20, rng));
    Tensor W = Tensor::param({3, 5}, random_values(15, rng));
    Tensor b = Tensor::param({3}, random_values(3, rng));
    return finite_difference_error(
        [&] {
          Rng pr(12);
          return weighted_probe(ops::linear(x, W, b), pr);
        },
        {x, W, b}, 20);
  });

  add("tensornn", "activations", kPrimitiveTol, [] {
    Rng rng(21);
    Tensor x = Tensor::param({3, 7}, offzero_values(21, rng));
    return finite_difference_error(
        [&] {
          Rng pr(22);
          Tensor h = ops::relu(x);
          h = ops::sigmoid(h);
          h = ops::tanh_op(h);
          h = ops::symlog(h);
          return weighted_probe(h, pr);
        },
        {x}, 21);
  });

  add("tensornn", "elementwise", kPrimitiveTol, [] {
    Rng rng(31);
    Tensor a = Tensor::param({2, 6}, random_values(12, rng));
    Tensor b = Tensor::param({2, 6}, random_values(12, rng));
    return finite_difference_error(
        [&] {
          Rng pr(32);
          Tensor y = ops::add(ops::mul(a, b), ops::scale(ops::sub(a, b), 0.7));
          y = ops::concat_last({y, a});
          return weighted_probe(ops::reshape(y, {24}), pr);
        },
        {a, b}, 24);
  });

  add("tensornn", "layer_norm", kPrimitiveTol, [] {
    Rng rng(41);
    Tensor x = Tensor::param({5, 8}, random_values(40, rng));
    Tensor g = Tensor::param({8}, random_values(8, rng, 0.5, 1.5));
    Tensor b = Tensor::param({8}, random_values(8, rng));
    return finite_difference_error(
        [&] {
          Rng pr(42);
          return weighted_probe(ops::layer_norm(x, g, b), pr);
        },
        {x, g, b}, 16);
  });

  add("tensornn", "softmax", kPrimitiveTol, [] {
    Rng rng(51);
    Tensor x = Tensor::param({4, 6}, random_values(24, rng));
    std::vector<double> mask(24, 0.0);
    mask[3] = -std::numeric_limits<double>::infinity();
    mask[17] = -std::numeric_limits<double>::infinity();
    return finite_difference_error(
        [&] {
          Rng pr(52);
          return weighted_probe(ops::softmax_last(x, &mask), pr);
        },
        {x}, 24);
  });

  add("tensornn", "attention", kPrimitiveTol, [] {
    Rng rng(61);
    const int64_t T = 3, N = 4, C = 8;
    Tensor q = Tensor::param({T, N, C}, random_values(T * N * C, rng));
    Tensor k = Tensor::param({T, N, C}, random_values(T * N * C, rng));
    Tensor v = Tensor::param({T, N, C}, random_values(T * N * C, rng));
    const ViewMask mask = demo_mask(T, N, rng);
    return finite_difference_error(
        [&] {
          Rng pr(62);
          Tensor s = ops::attention_scores(q, k, 2);
          Tensor w = ops::attention_softmax(s, mask);
          Tensor o = ops::attention_apply(w, v, 2);
          Tensor stats = ops::concat_last(
              {ops::reshape(ops::attention_row_mean(ops::head_average(w), mask), {T * N, 1}),
               ops::reshape(ops::attention_row_std(ops::head_average(w), mask), {T * N, 1})});
          return ops::add(weighted_probe(o, pr), weighted_probe(stats, pr));
        },
        {q, k, v}, 16);
  });

  add("tensornn", "fusion_ops", kPrimitiveTol, [] {
    Rng rng(71);
    const int64_t T = 3, N = 5, C = 6;
    Tensor mu = Tensor::param({T, N}, random_values(T * N, rng));
    Tensor sd = Tensor::param({T, N}, random_values(T * N, rng, 0.0, 1.0));
    Tensor occ = Tensor::param({T, N}, random_values(T * N, rng, 0.1, 0.9));
    Tensor logits = Tensor::param({N, T}, random_values(N * T, rng));
    Tensor x = Tensor::param({T, N, C}, random_values(T * N * C, rng));
    const ViewMask mask = demo_mask(T, N, rng);
    std::vector<double> pm = random_values(3 * T, rng), ps = random_values(3 * T, rng);
    const std::vector<int> order{2, 0, 1};
    return finite_difference_error(
        [&] {
          Rng pr(72);
          Tensor f = ops::assemble_fusion_features(mu, sd, pm, ps, occ, order);
          f = ops::concat_last({f, ops::scatter_columns(logits, order)});
          Tensor w = ops::view_softmax(logits, mask);
          Tensor fused = ops::weighted_view_sum(w, ops::mask_rows(x, mask));
          return ops::add(weighted_probe(f, pr), weighted_probe(fused, pr));
        },
        {mu, sd, occ, logits, x}, 12);
  });

  add("tensornn", "conv3x3x3", kPrimitiveTol, [] {
    Rng rng(81);
    const Dims3 dims{4, 4, 4};
    const int64_t cin = 3, cout = 2;
    Tensor x = Tensor::param({dims.count(), cin}, random_values(dims.count() * cin, rng));
    Tensor W = Tensor::param({cout, 27 * cin}, random_values(cout * 27 * cin, rng, -0.2, 0.2));
    Tensor b = Tensor::param({cout}, random_values(cout, rng));
    return finite_difference_error(
        [&] {
          Rng pr(82);
          return weighted_probe(ops::conv3x3x3(x, W, b, dims), pr);
        },
        {x, W, b}, 16);
  });

  add("tensornn", "gather_stack", kPrimitiveTol, [] {
    Rng rng(91);
    const int64_t hw = 16, C = 4, N = 6;
    Tensor img0 = Tensor::param({hw, C}, random_values(hw * C, rng));
    Tensor img1 = Tensor::param({hw, C}, random_values(hw * C, rng));
    BilinearPlan plan;
    plan.rows = N;
    plan.source_size = hw;
    plan.index.assign(N * 4, 0);
    plan.weight.assign(N * 4, 0.0);
    plan.valid.assign(N, 1);
    for (int64_t n = 0; n < N; ++n) {
      double wsum = 0.0;
      for (int k = 0; k < 4; ++k) {
        plan.index[n * 4 + k] = static_cast<int32_t>(rng.uniform_index(hw));
        plan.weight[n * 4 + k] = rng.uniform();
        wsum += plan.weight[n * 4 + k];
      }
      for (int k = 0; k < 4; ++k) plan.weight[n * 4 + k] /= wsum;
    }
    plan.valid[2] = 0;
    return finite_difference_error(
        [&] {
          Rng pr(92);
          Tensor a = ops::gather_bilinear(img0, plan);
          Tensor b = ops::gather_bilinear(img1, plan);
          return weighted_probe(ops::stack_views({a, b}), pr);
        },
        {img0, img1}, 16);
  });

  add("tensornn", "losses", kPrimitiveTol, [] {
    Rng rng(101);
    const int64_t n = 24;
    Tensor logits = Tensor::param({n}, random_values(n, rng, -2.0, 2.0));
    Tensor pred = Tensor::param({n}, random_values(n, rng));
    std::vector<double> target(n), bce_target(n);
    std::vector<uint8_t> mask(n, 1);
    for (int64_t i = 0; i < n; ++i) {
      // keep |pred - target| away from the MAE kink
      target[i] = pred.values()[i] + (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 0.8);
      bce_target[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
      if (i % 5 == 0) mask[i] = 0;
    }
    return finite_difference_error(
        [&] {
          Tensor bce = ops::bce_mean(ops::sigmoid(logits), bce_target, mask);
          Tensor mae = ops::mae_masked(pred, target, mask);
          return ops::weighted_sum_scalars({{1.0, bce}, {1.0, mae}});
        },
        {logits, pred}, 24);
  });

  add("tensornn", "cosine_direction", kPrimitiveTol, [] {
    Rng rng(111);
    const int64_t n = 12;
    Tensor g = Tensor::param({n, 3}, offzero_values(n * 3, rng));
    std::vector<double> ref(n * 3);
    std::vector<double> w(n);
    for (int64_t i = 0; i < n; ++i) {
      Vec3 r(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
      r.normalize();
      for (int k = 0; k < 3; ++k) ref[i * 3 + k] = r[k];
      w[i] = i % 4 == 0 ? 0.0 : rng.uniform(0.4, 1.0);
    }
    return finite_difference_error(
        [&] { return ops::cosine_direction_loss(g, ref, w); }, {g}, 24);
  });

  add("tensornn", "stencil_gradient", kPrimitiveTol, [] {
    Rng rng(121);
    const Dims3 dims{5, 5, 5};
    Tensor s = Tensor::param({dims.count()}, random_values(dims.count(), rng));
    return finite_difference_error(
        [&] {
          Rng pr(122);
          return weighted_probe(ops::stencil_gradient(s, dims, 0.37), pr);
        },
        {s}, 24);
  });

  // ---- composed graphs ----
  auto stage_graph_check = [](uint64_t seed, bool stage2) {
    return [seed, stage2] {
      Rng rng(seed);
      const int64_t T = 3, N = 5, C = 8;
      PipelineConfig cfg;
      cfg.feature_channels = C;
      cfg.views = static_cast<int>(T);
      cfg.heads = 2;
      ParamSet set;
      Rng init(seed + 1);
      std::vector<LinearParams> mlp;
      mlp.push_back(add_linear(set, "m0", 37, 16, init));
      mlp.push_back(add_linear(set, "m1", 16, 1, init));
      LinearParams reduce = add_linear(set, "reduce", stage2 ? C + 3 : C + 1, C, init);
      TransformerParams block = add_transformer(set, "block", C, 2, init);
      const ViewMask mask = demo_mask(T, N, rng);
      Tensor volume = Tensor::constant({T, N, C}, random_values(T * N * C, rng));
      Tensor geo = Tensor::constant({T, N, 37}, random_values(T * N * 37, rng));
      Tensor normals = Tensor::constant({T, N, 3}, random_values(T * N * 3, rng));
      std::vector<Tensor> params;
      for (auto& [_, t] : set) params.push_back(t);
      return finite_difference_error(
          [&] {
            Rng pr(seed + 2);
            Tensor cond;
            if (stage2) {
              cond = ops::concat_last({normals, volume});
            } else {
              Tensor gfeat = mlp_forward(geo, mlp, true);
              cond = ops::concat_last({gfeat, volume});
            }
            Tensor g = ops::mask_rows(ops::linear(cond, reduce.W, reduce.b), mask);
            TransformerOut out = transformer_block(g, block, mask);
            Tensor stats = ops::reshape(ops::attention_row_std(out.attn, mask), {T * N, 1});
            return ops::add(weighted_probe(out.output, pr), weighted_probe(stats, pr));
          },
          params, 4);
    };
  };
  add("pipeline", "stage1_graph", kCompositeTol, stage_graph_check(201, false));
  add("pipeline", "stage2_graph", kCompositeTol, stage_graph_check(211, true));

  add("pipeline", "fusion_graph", kCompositeTol, [] {
    Rng rng(221);
    const int64_t T = 3, N = 6, C = 8;
    ParamSet set;
    Rng init(222);
    TransformerParams block = add_transformer(set, "block", C, 2, init);
    LinearParams occ_head = add_linear(set, "occ", C, 1, init);
    std::vector<LinearParams> fusion;
    fusion.push_back(add_linear(set, "f0", 9 * T, 16, init));
    fusion.push_back(add_linear(set, "f1", 16, 16, init));
    fusion.push_back(add_linear(set, "f2", 16, T, init));
    const ViewMask mask = demo_mask(T, N, rng);
    Tensor x = Tensor::constant({T, N, C}, random_values(T * N * C, rng));
    std::vector<double> pm = random_values(3 * T, rng), ps = random_values(3 * T, rng);
    const std::vector<int> order{1, 2, 0};
    std::vector<Tensor> params;
    for (auto& [_, t] : set) params.push_back(t);
    return finite_difference_error(
        [&] {
          Rng pr(223);
          TransformerOut t2 = transformer_block(ops::mask_rows(x, mask), block, mask);
          Tensor occ = ops::reshape(
              ops::sigmoid(ops::linear(t2.output, occ_head.W, occ_head.b)), {T, N});
          Tensor occ_masked =
              ops::reshape(ops::mask_rows(ops::reshape(occ, {T, N, 1}), mask), {T, N});
          Tensor mu = ops::attention_row_mean(t2.attn, mask);
          Tensor sd = ops::attention_row_std(t2.attn, mask);
          Tensor fin = ops::assemble_fusion_features(mu, sd, pm, ps, occ_masked, order);
          Tensor logits = ops::scatter_columns(mlp_forward(fin, fusion, false), order);
          Tensor w = ops::view_softmax(logits, mask);
          Tensor fused = ops::weighted_view_sum(w, t2.output);
          return weighted_probe(fused, pr);
        },
        params, 4);
  });

  add("pipeline", "head_graph", kCompositeTol, [] {
    Rng rng(231);
    const Dims3 dims{5, 5, 5};
    const int64_t C = 6;
    ParamSet set;
    Rng init(232);
    LinearParams c1 = add_conv3(set, "c1", C, C, init);
    LinearParams c2 = add_conv3(set, "c2", C, C, init);
    LinearParams ht = add_linear(set, "ht", C, 1, init);
    LinearParams ho = add_linear(set, "ho", C, 1, init);
    Tensor fused = Tensor::constant({dims.count(), C}, random_values(dims.count() * C, rng));
    std::vector<Tensor> params;
    for (auto& [_, t] : set) params.push_back(t);
    return finite_difference_error(
        [&] {
          Rng pr(233);
          Tensor h = ops::relu(ops::conv3x3x3(fused, c1.W, c1.b, dims));
          h = ops::relu(ops::conv3x3x3(h, c2.W, c2.b, dims));
          Tensor tsdf = ops::tanh_op(ops::linear(h, ht.W, ht.b));
          Tensor occ = ops::sigmoid(ops::linear(h, ho.W, ho.b));
          return ops::add(weighted_probe(tsdf, pr), weighted_probe(occ, pr));
        },
        params, 4);
  });

  add("pipeline", "full_pipeline", kCompositeTol, [] {
    TrainConfig cfg;
    cfg.seed = 5;
    cfg.image_size = 16;
    cfg.grid_dims = 8;
    cfg.pipeline.feature_channels = 8;
    cfg.pipeline.views = 3;
    const Scene scene = generate_scene(42, {});
    const VoxelGrid grid = fit_grid(scene, cfg.grid_dims);
    const SceneInputs in = build_scene_inputs(scene_views(scene, cfg), grid, cfg.pipeline);
    PipelineParams params = build_pipeline_params(cfg.pipeline, cfg.seed);
    std::vector<Tensor> tensors;
    for (auto& [_, t] : params.set) tensors.push_back(t);
    return finite_difference_error(
        [&] {
          Rng pr(6);
          PipelineOutput out = run_pipeline(in, params, cfg.pipeline);
          Tensor probe = ops::weighted_sum_scalars(
              {{1.0, weighted_probe(ops::reshape(out.tsdf, {out.tsdf.numel(), 1}), pr)},
               {1.0, weighted_probe(ops::reshape(out.occupancy, {out.occupancy.numel(), 1}), pr)},
               {1.0, weighted_probe(out.weights, pr)},
               {1.0, weighted_probe(out.proj_occ, pr)}});
          return probe;
        },
        tensors, 3);
  });

  add("pipeline", "pipeline_losses", kCompositeTol, [] {
    // Same end-to-end graph, but through the training losses. Support masks
    // and normal-loss gates are frozen at the base point so the finite
    // differences probe the smooth path the analytic gradient describes.
    TrainConfig cfg;
    cfg.seed = 5;
    cfg.image_size = 16;
    cfg.grid_dims = 8;
    cfg.pipeline.feature_channels = 8;
    cfg.pipeline.views = 3;
    const Scene scene = generate_scene(42, {});
    const VoxelGrid grid = fit_grid(scene, cfg.grid_dims);
    const SceneInputs in = build_scene_inputs(scene_views(scene, cfg), grid, cfg.pipeline);
    const GroundTruth gt = make_ground_truth(scene, in, cfg);
    PipelineParams params = build_pipeline_params(cfg.pipeline, cfg.seed);

    const int64_t n = grid.count();
    std::vector<uint8_t> tsdf_mask(n, 0);
    NormalLossPlan plan;
    {
      PipelineOutput out = run_pipeline(in, params, cfg.pipeline);
      for (int64_t i = 0; i < n; ++i)
        tsdf_mask[i] = (gt.observed[i] && out.occupancy.values()[i] > 0.5) ? 1 : 0;
      const double scale = 1.0 / (2.0 * grid.voxel_size * 9.0);
      Tensor grad = ops::stencil_gradient(out.tsdf, grid.dims, scale);
      plan = normal_loss_plan(grad.values(), gt.tsdf, gt.gt_normals, gt.mask3d, gt.consistency);
    }
    std::vector<Tensor> tensors;
    for (auto& [_, t] : params.set) tensors.push_back(t);
    return finite_difference_error(
        [&] {
          PipelineOutput out = run_pipeline(in, params, cfg.pipeline);
          Tensor l_occ = ops::bce_mean(out.occupancy, gt.occupancy, gt.observed);
          Tensor l_tsdf = ops::mae_masked(out.tsdf, gt.tsdf.values, tsdf_mask);
          Tensor l_proj = ops::bce_mean(out.proj_occ, gt.proj_occupancy, gt.proj_valid);
          const double scale = 1.0 / (2.0 * grid.voxel_size * 9.0);
          Tensor grad = ops::stencil_gradient(out.tsdf, grid.dims, scale);
          Tensor l_norm = ops::cosine_direction_loss(grad, plan.reference, plan.weights);
          return ops::weighted_sum_scalars(
              {{1.5, l_occ}, {1.0, l_tsdf}, {0.5, l_proj}, {0.1, l_norm}});
        },
        tensors, 3);
  });

  // ---- supervision ----
  add("supervision", "normal_loss_8cube", kCompositeTol, [] {
    Rng rng(241);
    const int64_t dims = 8;
    const Scene scene = generate_scene(43, {});
    VoxelGrid grid;
    grid.voxel_size = scene.room_extent().maxCoeff() / (dims - 3);
    grid.dims = {dims, dims, dims};
    grid.origin =
        scene.room_center() - 0.5 * grid.voxel_size * Vec3::Constant(double(dims - 1));
    TsdfVolume gt;
    std::vector<double> occ;
    ground_truth_volumes(scene, grid, default_truncation(grid), &gt, &occ);
    const NormalVolume ngt = tsdf_normals(gt);
    // Perturbed TSDF as the "prediction".
    std::vector<double> pred = gt.values;
    for (auto& v : pred) v = std::min(1.0, std::max(-1.0, v + rng.uniform(-0.15, 0.15)));
    Tensor s = Tensor::param({grid.count()}, pred);
    // All-kept mask, indicator weights from perfect consistency.
    std::vector<uint8_t> mask3d(grid.count(), 1);
    ConsistencyTerms terms;
    terms.defined.assign(grid.count(), 1);
    terms.weight.assign(grid.count(), 1.0);
    terms.similarity.assign(grid.count(), 1.0);
    terms.projected_normal.assign(grid.count() * 3, 0.0);
    const double scale = 1.0 / (2.0 * grid.voxel_size * 9.0);
    return finite_difference_error(
        [&] {
          Tensor grad = ops::stencil_gradient(s, grid.dims, scale);
          const NormalLossPlan plan = normal_loss_plan(grad.values(), gt, ngt, mask3d, terms);
          return ops::cosine_direction_loss(grad, plan.reference, plan.weights);
        },
        {s}, 20);
  });

  return checks;
}

}  // namespace

std::vector<GradCheckResult> run_gradchecks(const std::string& module) {
  std::vector<GradCheckResult> results;
  for (auto& check : build_checks()) {
    if (module != "all" && module != check.module) continue;
    GradCheckResult r;
    r.name = check.module + "/" + check.name;
    r.tolerance = check.tol;
    r.max_rel_err = check.run();
    r.pass = r.max_rel_err < check.tol;
    results.push_back(r);
  }
  require(!results.empty(), "gradcheck: unknown module '" + module + "'");
  return results;
}

bool all_passed(const std::vector<GradCheckResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return true;
}

}  // namespace geofuse
