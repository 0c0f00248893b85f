#include "geofuse/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "geofuse/common.hpp"

namespace geofuse {

namespace {
std::atomic<uint64_t> g_seq{1};
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

bool shape_equal(const Shape& a, const Shape& b) { return a == b; }

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

void TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
}

Tensor Tensor::constant(Shape shape, std::vector<double> value) {
  require(shape_numel(shape) == static_cast<int64_t>(value.size()),
          "tensor: value size does not match shape " + shape_str(shape));
  Tensor t;
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->seq = g_seq.fetch_add(1);
  t.node_ = std::move(n);
  return t;
}

Tensor Tensor::zeros(Shape shape) {
  const auto count = shape_numel(shape);
  return constant(std::move(shape), std::vector<double>(count, 0.0));
}

Tensor Tensor::full(Shape shape, double v) {
  const auto count = shape_numel(shape);
  return constant(std::move(shape), std::vector<double>(count, v));
}

Tensor Tensor::scalar_const(double v) { return constant({1}, {v}); }

Tensor Tensor::param(Shape shape, std::vector<double> value) {
  Tensor t = constant(std::move(shape), std::move(value));
  t.node_->requires_grad = true;
  t.node_->is_param = true;
  return t;
}

const std::vector<double>& Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->ensure_grad();
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::scalar_value() const {
  require(numel() == 1, "tensor: scalar_value on non-scalar " + shape_str(shape()));
  return node_->value[0];
}

Tensor Tensor::make_op(Shape shape, std::vector<double> value,
                       std::vector<Tensor> parents,
                       std::function<void(TensorNode&)> backprop) {
  Tensor t = constant(std::move(shape), std::move(value));
  bool needs = false;
  for (const auto& p : parents) {
    if (p.defined() && p.requires_grad()) {
      needs = true;
      break;
    }
  }
  if (needs) {
    t.node_->requires_grad = true;
    t.node_->parents.reserve(parents.size());
    for (const auto& p : parents) t.node_->parents.push_back(p.ptr());
    t.node_->backprop = std::move(backprop);
  }
  return t;
}

void backward(const Tensor& loss) {
  require(loss.defined() && loss.numel() == 1, "backward: loss must be a scalar tensor");
  require(std::isfinite(loss.scalar_value()), "backward: loss is not finite");
  if (!loss.requires_grad()) return;

  // Reachable requires_grad nodes, processed in descending creation order.
  // Parents always precede children, so this is a reverse topological order
  // and is identical from run to run.
  std::vector<TensorNode*> nodes;
  std::unordered_set<TensorNode*> seen;
  std::vector<TensorNode*> stack{loss.node()};
  seen.insert(loss.node());
  while (!stack.empty()) {
    TensorNode* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (auto& p : n->parents)
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const TensorNode* a, const TensorNode* b) { return a->seq > b->seq; });

  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (TensorNode* n : nodes) {
    if (n->grad.empty()) continue;  // no gradient flowed here
    if (n->backprop) {
      for (auto& p : n->parents)
        if (p->requires_grad) p->ensure_grad();
      n->backprop(*n);
    }
    if (!n->is_param) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

}  // namespace geofuse
