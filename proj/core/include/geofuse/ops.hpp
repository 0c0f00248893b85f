#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "geofuse/tensor.hpp"

namespace geofuse {

// Per-view voxel validity, valid[t * num_voxels + n] != 0 when voxel n
// projects into view t.
struct ViewMask {
  int64_t views = 0;
  int64_t voxels = 0;
  std::vector<uint8_t> valid;

  bool at(int64_t t, int64_t n) const { return valid[t * voxels + n] != 0; }
};

struct Dims3 {
  int64_t nx = 0, ny = 0, nz = 0;
  int64_t count() const { return nx * ny * nz; }
};

// Fixed bilinear sampling plan: four source pixels and weights per row,
// built from non-differentiable geometry ahead of time.
struct BilinearPlan {
  int64_t rows = 0;
  int64_t source_size = 0;  // number of pixels in the sampled image
  std::vector<int32_t> index;  // 4 per row
  std::vector<double> weight;  // 4 per row
  std::vector<uint8_t> valid;  // 1 per row
};

namespace ops {

// ---- elementwise / dense primitives -------------------------------------

// x [*, C_in] -> [*, C_out]; W [C_out, C_in], b [C_out].
Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_op(const Tensor& x);
// sign(x) * log(1 + |x|)
Tensor symlog(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);

// Concatenation along the last axis.
Tensor concat_last(const std::vector<Tensor>& xs);

// Normalization over the last axis with learned scale/shift.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// Softmax over the last axis. Optional additive mask (same size as x,
// typically 0 / -inf); rows whose entries are all -inf yield all zeros.
Tensor softmax_last(const Tensor& x, const std::vector<double>* additive_mask = nullptr);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// y = sum_k coeff_k * x_k over scalar tensors.
Tensor weighted_sum_scalars(const std::vector<std::pair<double, Tensor>>& terms);

// Copy with a new shape (same element count).
Tensor reshape(const Tensor& x, Shape shape);

// Zero out feature rows of invalid (view, voxel) pairs; x is [T, N, C].
Tensor mask_rows(const Tensor& x, const ViewMask& mask);

// ---- attention over the view axis ----------------------------------------
//
// Reductions over views run in value-sorted order, so outputs are
// bit-identical under any permutation of the input views.

// q,k [T, N, C] -> scaled dot-product scores [H, T, T, N].
Tensor attention_scores(const Tensor& q, const Tensor& k, int heads);

// Masked softmax over the key axis of [H, T, T, N]. Rows of invalid queries
// and columns of invalid keys are exactly zero.
Tensor attention_softmax(const Tensor& scores, const ViewMask& mask);

// weights [H, T, T, N], v [T, N, C] -> [T, N, C].
Tensor attention_apply(const Tensor& weights, const Tensor& v, int heads);

// [H, T, T, N] -> head-averaged [T, T, N].
Tensor head_average(const Tensor& weights);

// Row-wise mean / population std of attention rows over valid columns.
// A [T, T, N] -> [T, N]. Rows with no valid column (or invalid query) are 0.
Tensor attention_row_mean(const Tensor& A, const ViewMask& mask);
Tensor attention_row_std(const Tensor& A, const ViewMask& mask);

// ---- fusion ---------------------------------------------------------------

// Assemble per-voxel fusion features [N, 9T] in the fixed channel order
// [attn mean (T), attn std (T), pose mean (3T), pose std (3T), occ (T)].
// Pose statistics are per-view constants broadcast across voxels; they must
// already be in slot order. slot_view[s] names the view whose statistics
// fill slot s, so a canonical slot order makes the downstream dense layers
// independent of the caller's view order.
Tensor assemble_fusion_features(const Tensor& attn_mean, const Tensor& attn_std,
                                const std::vector<double>& pose_mean,
                                const std::vector<double>& pose_std, const Tensor& occ,
                                const std::vector<int>& slot_view);

// out[:, view_of_col[c]] = x[:, c]; undoes a slot reordering.
Tensor scatter_columns(const Tensor& x, const std::vector<int>& view_of_col);

// logits [N, T] -> weights [N, T]; softmax over valid views per voxel,
// exactly zero on invalid views, all-zero when nothing is valid.
Tensor view_softmax(const Tensor& logits, const ViewMask& mask);

// w [N, T], x [T, N, C] -> [N, C]: per-voxel weighted sum over views.
Tensor weighted_view_sum(const Tensor& w, const Tensor& x);

// ---- spatial ---------------------------------------------------------------

// Dense 3x3x3 convolution over a voxel grid laid out x-fastest.
// x [N, C_in], W [C_out, 27 * C_in] (kernel-tap-major, see ops.cpp), b [C_out].
// Out-of-grid taps clamp to the nearest voxel, so constant fields stay
// constant under sum-normalized kernels.
Tensor conv3x3x3(const Tensor& x, const Tensor& W, const Tensor& b, Dims3 dims);

// image [HW, C] -> [rows, C] using a fixed bilinear plan; invalid rows are 0.
Tensor gather_bilinear(const Tensor& image, const BilinearPlan& plan);

// T tensors [N, C] -> [T, N, C].
Tensor stack_views(const std::vector<Tensor>& xs);

// 26-neighborhood derivative stencil over a voxel grid: s [N] -> [N, 3].
// Rows whose stencil leaves the grid are zero. scale multiplies the raw
// tap sums (metric scaling of the derivative estimate).
Tensor stencil_gradient(const Tensor& s, Dims3 dims, double scale);

// ---- losses ----------------------------------------------------------------

// Mean binary cross-entropy of probabilities p against {0,1} targets over
// mask!=0; probabilities clamped to [eps, 1-eps]. Empty mask -> 0.
Tensor bce_mean(const Tensor& p, const std::vector<double>& target,
                const std::vector<uint8_t>& mask, double eps = 1e-7);

// Mean absolute error over mask!=0. Empty mask -> 0.
Tensor mae_masked(const Tensor& pred, const std::vector<double>& target,
                  const std::vector<uint8_t>& mask);

// 1 - (1/M) * sum_p w_p * cos(g_p, n_p) over rows with w_p > 0, where
// g [N, 3] is a (gradient) field and n the unit reference directions.
// M = count(w > 0); caller must zero w where |g| is degenerate.
Tensor cosine_direction_loss(const Tensor& g, const std::vector<double>& reference,
                             const std::vector<double>& w);

}  // namespace ops
}  // namespace geofuse
