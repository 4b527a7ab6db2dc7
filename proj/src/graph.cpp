#include "epsseg/graph.hpp"

#include <stdexcept>

#include "epsseg/exec.hpp"
#include "epsseg/kernels.hpp"

namespace epsseg {

void Tape::backward(const NodePtr& root) {
  if (root->value.numel() != 1)
    throw std::invalid_argument("Tape::backward: root must be a scalar");
  if (!root->requires_grad) return;
  root->grad.fill(1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.requires_grad && n.backward) n.backward();
  }
}

namespace ops {

namespace k = kernels;

namespace {
bool any_rg(std::initializer_list<const NodePtr*> parents) {
  for (const NodePtr* p : parents)
    if ((*p)->requires_grad) return true;
  return false;
}
}  // namespace

NodePtr conv2d(Tape& t, NodePtr x, NodePtr w, NodePtr b, int stride, int pad) {
  const int N = x->value.dim(0), H = x->value.dim(2), W = x->value.dim(3);
  const int OC = w->value.dim(0), K = w->value.dim(2);
  const int OH = (H + 2 * pad - K) / stride + 1;
  const int OW = (W + 2 * pad - K) / stride + 1;
  Tensor out({N, OC, OH, OW});
  const Exec ex = default_exec();
  k::conv2d_forward(x->value, w->value, b->value, out, stride, pad, ex);
  NodePtr n = t.record(std::move(out), any_rg({&x, &w, &b}));
  if (n->requires_grad) {
    Node* self = n.get();
    n->backward = [self, x, w, b, stride, pad]() {
      const Exec ex = default_exec();
      if (x->requires_grad)
        k::conv2d_backward_input(self->grad, w->value, x->grad, stride, pad, ex);
      Tensor gw = w->requires_grad ? w->grad : Tensor();
      Tensor gb = b->requires_grad ? b->grad : Tensor();
      k::conv2d_backward_params(self->grad, x->value, gw, gb, stride, pad, ex);
    };
  }
  return n;
}

NodePtr linear(Tape& t, NodePtr x, NodePtr w, NodePtr b) {
  const int N = x->value.dim(0), DO = w->value.dim(0);
  Tensor out({N, DO});
  const Exec ex = default_exec();
  k::linear_forward(x->value, w->value, b->value, out, ex);
  NodePtr n = t.record(std::move(out), any_rg({&x, &w, &b}));
  if (n->requires_grad) {
    Node* self = n.get();
    n->backward = [self, x, w, b]() {
      Tensor gx = x->requires_grad ? x->grad : Tensor();
      Tensor gw = w->requires_grad ? w->grad : Tensor();
      Tensor gb = b->requires_grad ? b->grad : Tensor();
      k::linear_backward(self->grad, x->value, w->value, gx, gw, gb, default_exec());
    };
  }
  return n;
}

NodePtr elu(Tape& t, NodePtr x) {
  Tensor out(x->value.shape());
  k::elu_forward(x->value, out, default_exec());
  NodePtr n = t.record(std::move(out), x->requires_grad);
  if (n->requires_grad) {
    Node* self = n.get();
    n->backward = [self, x]() { k::elu_backward(self->grad, x->value, x->grad, default_exec()); };
  }
  return n;
}

NodePtr softplus_floor(Tape& t, NodePtr x, double floor) {
  Tensor out(x->value.shape());
  k::softplus_forward(x->value, out, floor, default_exec());
  NodePtr n = t.record(std::move(out), x->requires_grad);
  if (n->requires_grad) {
    Node* self = n.get();
    n->backward = [self, x]() {
      k::softplus_backward(self->grad, x->value, x->grad, default_exec());
    };
  }
  return n;
}

NodePtr add(Tape& t, NodePtr x, NodePtr y) {
  if (!x->value.same_shape(y->value))
    throw std::invalid_argument("ops::add: shape mismatch " + x->value.shape_str() +
                                " vs " + y->value.shape_str());
  Tensor out(x->value.shape());
  k::ew_add(x->value, y->value, out, default_exec());
  NodePtr n = t.record(std::move(out), any_rg({&x, &y}));
  if (n->requires_grad) {
    Node* self = n.get();
    n->backward = [self, x, y]() {
      const Exec ex = default_exec();
      if (x->requires_grad) k::accumulate(x->grad, self->grad, ex);
      if (y->requires_grad) k::accumulate(y->grad, self->grad, ex);
    };
  }
  return n;
}

NodePtr mul(Tape& t, NodePtr x, NodePtr y) {
  if (!x->value.same_shape(y->value))
    throw std::invalid_argument("ops::mul: shape mismatch");
  Tensor out(x->value.shape());
  k::ew_mul(x->value, y->value, out, default_exec());
  NodePtr n = t.record(std::move(out), any_rg({&x, &y}));
  if (n->requires_grad) {
    Node* self = n.get();
    n->backward = [self, x, y]() {
      const Exec ex = default_exec();
      if (x->requires_grad) k::accumulate_mul(x->grad, self->grad, y->value, ex);
      if (y->requires_grad) k::accumulate_mul(y->grad, self->grad, x->value, ex);
    };
  }
  return n;
}

NodePtr scale_shift(Tape& t, NodePtr x, double a, double b) {
  Tensor out = Tensor::zeros(x->value.shape());
  k::ew_axpby(a, x->value, b, out, default_exec());
  NodePtr n = t.record(std::move(out), x->requires_grad);
  if (n->requires_grad) {
    Node* self = n.get();
    n->backward = [self, x, a]() { k::accumulate_scaled(x->grad, self->grad, a, default_exec()); };
  }
  return n;
}

NodePtr reshape(Tape& t, NodePtr x, std::vector<int> shape) {
  NodePtr n = t.record(x->value.reshaped(shape), false);
  n->requires_grad = x->requires_grad;
  if (n->requires_grad) n->grad = x->grad.reshaped(shape);  // shared storage, no-op backward
  return n;
}

NodePtr concat_ch(Tape& t, NodePtr a, NodePtr b) {
  const auto& sa = a->value;
  const auto& sb = b->value;
  Tensor out({sa.dim(0), sa.dim(1) + sb.dim(1), sa.dim(2), sa.dim(3)});
  k::concat_ch_forward(sa, sb, out, default_exec());
  NodePtr n = t.record(std::move(out), any_rg({&a, &b}));
  if (n->requires_grad) {
    Node* self = n.get();
    n->backward = [self, a, b]() {
      Tensor ga = a->requires_grad ? a->grad : Tensor::zeros(a->value.shape());
      Tensor gb = b->requires_grad ? b->grad : Tensor::zeros(b->value.shape());
      k::concat_ch_backward(self->grad, ga, gb, default_exec());
    };
  }
  return n;
}

NodePtr slice_ch(Tape& t, NodePtr x, int c0, int len) {
  const auto& s = x->value;
  Tensor out({s.dim(0), len, s.dim(2), s.dim(3)});
  k::slice_ch_forward(s, out, c0, default_exec());
  NodePtr n = t.record(std::move(out), x->requires_grad);
  if (n->requires_grad) {
    Node* self = n.get();
    n->backward = [self, x, c0]() { k::slice_ch_backward(self->grad, x->grad, c0, default_exec()); };
  }
  return n;
}

NodePtr global_avg_pool(Tape& t, NodePtr x) {
  const auto& s = x->value;
  Tensor out({s.dim(0), s.dim(1)});
  k::gap_forward(s, out, default_exec());
  NodePtr n = t.record(std::move(out), x->requires_grad);
  if (n->requires_grad) {
    Node* self = n.get();
    const int h = s.dim(2), w = s.dim(3);
    n->backward = [self, x, h, w]() { k::gap_backward(self->grad, x->grad, h, w, default_exec()); };
  }
  return n;
}

NodePtr upsample2x(Tape& t, NodePtr x) {
  const auto& s = x->value;
  Tensor out({s.dim(0), s.dim(1), 2 * s.dim(2), 2 * s.dim(3)});
  k::upsample2x_forward(s, out, default_exec());
  NodePtr n = t.record(std::move(out), x->requires_grad);
  if (n->requires_grad) {
    Node* self = n.get();
    n->backward = [self, x]() { k::upsample2x_backward(self->grad, x->grad, default_exec()); };
  }
  return n;
}

NodePtr crop2d(Tape& t, NodePtr x, int oh, int ow) {
  const auto& s = x->value;
  if (oh > s.dim(2) || ow > s.dim(3))
    throw std::invalid_argument("ops::crop2d: crop larger than input");
  if (oh == s.dim(2) && ow == s.dim(3)) return x;
  Tensor out({s.dim(0), s.dim(1), oh, ow});
  k::crop2d_forward(s, out, default_exec());
  NodePtr n = t.record(std::move(out), x->requires_grad);
  if (n->requires_grad) {
    Node* self = n.get();
    n->backward = [self, x]() { k::crop2d_backward(self->grad, x->grad, default_exec()); };
  }
  return n;
}

NodePtr softmax_rows(Tape& t, NodePtr x) {
  Tensor out(x->value.shape());
  k::softmax_rows_forward(x->value, out, default_exec());
  NodePtr n = t.record(std::move(out), x->requires_grad);
  if (n->requires_grad) {
    Node* self = n.get();
    n->backward = [self, x]() {
      k::softmax_rows_backward(self->grad, self->value, x->grad, default_exec());
    };
  }
  return n;
}

NodePtr weighted_sum(Tape& t, const std::vector<std::pair<double, NodePtr>>& terms) {
  double v = 0.0;
  bool rg = false;
  for (const auto& [c, node] : terms) {
    if (node->value.numel() != 1)
      throw std::invalid_argument("ops::weighted_sum: non-scalar term");
    v += c * node->value[0];
    rg = rg || node->requires_grad;
  }
  NodePtr n = t.record(Tensor::scalar(v), rg);
  if (rg) {
    Node* self = n.get();
    auto terms_copy = terms;
    n->backward = [self, terms_copy]() {
      for (const auto& [c, node] : terms_copy)
        if (node->requires_grad) node->grad[0] += c * self->grad[0];
    };
  }
  return n;
}

}  // namespace ops
}  // namespace epsseg
