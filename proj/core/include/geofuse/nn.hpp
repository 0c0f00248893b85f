#pragma once

#include <map>
#include <string>
#include <vector>

#include "geofuse/common.hpp"
#include "geofuse/ops.hpp"
#include "geofuse/tensor.hpp"

namespace geofuse {

struct LinearParams {
  Tensor W, b;
};

struct LayerNormParams {
  Tensor gamma, beta;
};

struct TransformerParams {
  int heads = 2;
  LayerNormParams ln1, ln2;
  LinearParams wq, wk, wv, wo, ff1, ff2;
};

// Named parameter collection. Iteration (and therefore checkpoint layout)
// follows lexicographic name order.
class ParamSet {
 public:
  Tensor add(const std::string& name, Shape shape, std::vector<double> value);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return by_name_.count(name) != 0; }
  size_t size() const { return by_name_.size(); }
  int64_t total_size() const;

  void zero_grads();
  bool all_finite() const;

  auto begin() { return by_name_.begin(); }
  auto end() { return by_name_.end(); }
  auto begin() const { return by_name_.begin(); }
  auto end() const { return by_name_.end(); }

 private:
  std::map<std::string, Tensor> by_name_;
};

// Linear weights init uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero.
LinearParams add_linear(ParamSet& ps, const std::string& prefix, int64_t in, int64_t out, Rng& rng);
// 3x3x3 convolution kernel stored as [C_out, 27 * C_in]; fan_in = 27 * C_in.
LinearParams add_conv3(ParamSet& ps, const std::string& prefix, int64_t cin, int64_t cout, Rng& rng);
LayerNormParams add_layer_norm(ParamSet& ps, const std::string& prefix, int64_t c);
TransformerParams add_transformer(ParamSet& ps, const std::string& prefix, int64_t channels,
                                  int heads, Rng& rng);

// Alternating linear / rectifier stack. relu_after_last controls whether the
// final linear layer is also followed by a rectifier.
Tensor mlp_forward(const Tensor& x, const std::vector<LinearParams>& layers, bool relu_after_last);

struct TransformerOut {
  Tensor output;      // [T, N, C]
  Tensor attn;        // head-averaged weights [T, T, N]
  Tensor attn_heads;  // per-head weights [H, T, T, N]
};

// Pre-norm residual block with multi-head self-attention over the view axis
// and a 2-layer feed-forward. Invalid (view, voxel) rows stay exactly zero.
TransformerOut transformer_block(const Tensor& x, const TransformerParams& p,
                                 const ViewMask& mask);

struct CheckpointInfo {
  uint64_t seed = 0;
  int64_t step = 0;
};

void save_checkpoint(const std::string& path, const ParamSet& ps, uint64_t seed, int64_t step);
// Shapes in the file must match the constructed ParamSet exactly.
CheckpointInfo load_checkpoint(const std::string& path, ParamSet& ps);

}  // namespace geofuse
