#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace geofuse {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
bool shape_equal(const Shape& a, const Shape& b);
std::string shape_str(const Shape& s);

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on demand during backward
  bool requires_grad = false;
  bool is_param = false;  // leaf parameter: grad survives backward
  uint64_t seq = 0;       // creation order; backward processes descending seq
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Pulls this node's grad into parents' grads. Null for leaves/constants.
  std::function<void(TensorNode&)> backprop;

  void ensure_grad();
};

// Value-semantics handle onto a reverse-mode graph node. Ops evaluate
// eagerly (define-by-run); backward() replays the recorded graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> value);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar_const(double v);
  // Leaf parameter participating in gradient accumulation.
  static Tensor param(Shape shape, std::vector<double> value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
  int64_t dim(size_t i) const { return node_->shape[i]; }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<double>& values() const { return node_->value; }
  // Mutation is only sound before the tensor is consumed by an op
  // (optimizer updates, test setup).
  std::vector<double>& raw_values() { return node_->value; }
  const std::vector<double>& grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();

  double scalar_value() const;

  TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& ptr() const { return node_; }

  static Tensor make_op(Shape shape, std::vector<double> value,
                        std::vector<Tensor> parents,
                        std::function<void(TensorNode&)> backprop);

 private:
  std::shared_ptr<TensorNode> node_;
};

// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
// requires_grad leaf; interior grads are freed as soon as they are consumed.
// Repeated calls keep accumulating into parameter grads.
void backward(const Tensor& loss);

}  // namespace geofuse
