#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "epsseg/tensor.hpp"

namespace epsseg {

/// One value in the computation tape. `grad` is allocated only when the node
/// requires gradients; leaf nodes may alias an externally owned grad buffer
/// (parameter gradients accumulate in place).
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::function<void()> backward;
};

using NodePtr = std::shared_ptr<Node>;

/// Dynamic tape: nodes are recorded in creation order, which is a valid
/// topological order, so reverse iteration implements backpropagation.
class Tape {
 public:
  NodePtr constant(Tensor v) { return record(std::move(v), false); }

  NodePtr leaf(Tensor v, Tensor grad_alias) {
    NodePtr n = record(std::move(v), false);
    n->requires_grad = true;
    n->grad = std::move(grad_alias);
    return n;
  }

  NodePtr record(Tensor v, bool rg) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = rg;
    if (rg) n->grad = Tensor::zeros(n->value.shape());
    nodes_.push_back(n);
    return n;
  }

  void backward(const NodePtr& root);

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<NodePtr> nodes_;
};

namespace ops {

NodePtr conv2d(Tape& t, NodePtr x, NodePtr w, NodePtr b, int stride, int pad);
NodePtr linear(Tape& t, NodePtr x, NodePtr w, NodePtr b);
NodePtr elu(Tape& t, NodePtr x);
NodePtr softplus_floor(Tape& t, NodePtr x, double floor);
NodePtr add(Tape& t, NodePtr x, NodePtr y);
NodePtr mul(Tape& t, NodePtr x, NodePtr y);
NodePtr scale_shift(Tape& t, NodePtr x, double a, double b);
NodePtr reshape(Tape& t, NodePtr x, std::vector<int> shape);
NodePtr concat_ch(Tape& t, NodePtr a, NodePtr b);
NodePtr slice_ch(Tape& t, NodePtr x, int c0, int len);
NodePtr global_avg_pool(Tape& t, NodePtr x);
NodePtr upsample2x(Tape& t, NodePtr x);
NodePtr crop2d(Tape& t, NodePtr x, int oh, int ow);
NodePtr softmax_rows(Tape& t, NodePtr x);

/// total = sum_i coeff_i * scalar_i; each scalar node must have numel == 1.
NodePtr weighted_sum(Tape& t, const std::vector<std::pair<double, NodePtr>>& terms);

}  // namespace ops

}  // namespace epsseg
