#pragma once

#include <memory>
#include <string>
#include <vector>

#include "epsseg/graph.hpp"
#include "epsseg/rng.hpp"
#include "epsseg/tensor.hpp"

namespace epsseg::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

using ParamPtr = std::shared_ptr<Parameter>;

/// Ordered registry of trainable parameters. Creation order is fixed by the
/// model constructor, which makes checkpoints and optimizer state stable.
class ParamStore {
 public:
  ParamPtr create(const std::string& name, std::vector<int> shape) {
    auto p = std::make_shared<Parameter>();
    p->name = name;
    p->value = Tensor::zeros(shape);
    p->grad = Tensor::zeros(shape);
    params_.push_back(p);
    return p;
  }

  const std::vector<ParamPtr>& all() const { return params_; }

  ParamPtr find(const std::string& name) const {
    for (const auto& p : params_)
      if (p->name == name) return p;
    return nullptr;
  }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.zero();
  }

 private:
  std::vector<ParamPtr> params_;
};

/// Graph-building context: `grad=false` records parameters as constants so a
/// forward pass allocates no gradient buffers (inference path).
struct Ctx {
  Tape& tape;
  bool grad = true;
};

inline NodePtr use(Ctx& c, const ParamPtr& p) {
  return c.grad ? c.tape.leaf(p->value, p->grad) : c.tape.constant(p->value);
}

struct Conv2d {
  ParamPtr w, b;
  int stride = 1, pad = 1;

  Conv2d() = default;
  Conv2d(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int k,
         int stride_, int pad_, Rng& init, double w_scale = 1.0)
      : stride(stride_), pad(pad_) {
    w = ps.create(name + ".w", {out_ch, in_ch, k, k});
    b = ps.create(name + ".b", {out_ch});
    const double std = w_scale * std::sqrt(1.0 / (in_ch * k * k));
    init.fill_normal(w->value, 0.0, std);
  }

  NodePtr operator()(Ctx& c, NodePtr x) const {
    return ops::conv2d(c.tape, x, use(c, w), use(c, b), stride, pad);
  }
};

struct Linear {
  ParamPtr w, b;

  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, int in_dim, int out_dim,
         Rng& init, double w_scale = 1.0) {
    w = ps.create(name + ".w", {out_dim, in_dim});
    b = ps.create(name + ".b", {out_dim});
    const double std = w_scale * std::sqrt(1.0 / in_dim);
    init.fill_normal(w->value, 0.0, std);
  }

  NodePtr operator()(Ctx& c, NodePtr x) const {
    return ops::linear(c.tape, x, use(c, w), use(c, b));
  }
};

/// Pre-activation residual block: x + conv(elu(conv(elu(x)))).
struct ResBlock {
  Conv2d c1, c2;

  ResBlock() = default;
  ResBlock(ParamStore& ps, const std::string& name, int ch, Rng& init)
      : c1(ps, name + ".c1", ch, ch, 3, 1, 1, init),
        c2(ps, name + ".c2", ch, ch, 3, 1, 1, init) {}

  NodePtr operator()(Ctx& c, NodePtr x) const {
    NodePtr h = c1(c, ops::elu(c.tape, x));
    h = c2(c, ops::elu(c.tape, h));
    return ops::add(c.tape, x, h);
  }
};

}  // namespace epsseg::nn
