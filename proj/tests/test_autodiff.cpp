#include "doctest.h"

#include "epsseg/graph.hpp"
#include "epsseg/nn.hpp"
#include "epsseg/rng.hpp"
#include "test_util.hpp"

using namespace epsseg;
using testutil::max_fd_error;
using testutil::weighted_scalar;

namespace {

// Runs `build` to a scalar node, backprops, and checks every input gradient
// against central differences.
void check_op(Tensor x0, const std::function<NodePtr(Tape&, NodePtr)>& build,
              double tol = 1e-7) {
  nn::Parameter px{"x", x0, Tensor::zeros(x0.shape())};
  auto forward = [&]() {
    Tape t;
    NodePtr x = t.constant(px.value);
    return weighted_scalar(t, build(t, x), 99)->value[0];
  };
  px.grad.zero();
  {
    Tape t;
    NodePtr x = t.leaf(px.value, px.grad);
    NodePtr root = weighted_scalar(t, build(t, x), 99);
    t.backward(root);
  }
  CHECK(max_fd_error(px.value, px.grad, forward) < tol);
}

}  // namespace

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(11);
  Tensor x({2, 3, 7, 7}), w({4, 3, 3, 3}), b({4});
  rng.fill_normal(x, 0.0, 0.5);
  rng.fill_normal(w, 0.0, 0.5);
  rng.fill_normal(b, 0.0, 0.5);

  for (int stride : {1, 2}) {
    // input gradient
    check_op(x, [&](Tape& t, NodePtr in) {
      return ops::conv2d(t, in, t.constant(w), t.constant(b), stride, 1);
    });
    // weight + bias gradients
    nn::Parameter pw{"w", w.clone(), Tensor::zeros(w.shape())};
    nn::Parameter pb{"b", b.clone(), Tensor::zeros(b.shape())};
    auto forward = [&]() {
      Tape t;
      NodePtr out = ops::conv2d(t, t.constant(x), t.constant(pw.value), t.constant(pb.value),
                                stride, 1);
      return weighted_scalar(t, out, 5)->value[0];
    };
    {
      Tape t;
      NodePtr out = ops::conv2d(t, t.constant(x), t.leaf(pw.value, pw.grad),
                                t.leaf(pb.value, pb.grad), stride, 1);
      t.backward(weighted_scalar(t, out, 5));
    }
    CHECK(max_fd_error(pw.value, pw.grad, forward) < 1e-7);
    CHECK(max_fd_error(pb.value, pb.grad, forward) < 1e-7);
  }
}

TEST_CASE("linear gradients match finite differences") {
  Rng rng(12);
  Tensor x({3, 5}), w({4, 5}), b({4});
  rng.fill_normal(x);
  rng.fill_normal(w);
  rng.fill_normal(b);
  check_op(x, [&](Tape& t, NodePtr in) {
    return ops::linear(t, in, t.constant(w), t.constant(b));
  });
  nn::Parameter pw{"w", w.clone(), Tensor::zeros(w.shape())};
  auto forward = [&]() {
    Tape t;
    return weighted_scalar(
               t, ops::linear(t, t.constant(x), t.constant(pw.value), t.constant(b)), 5)
        ->value[0];
  };
  {
    Tape t;
    t.backward(weighted_scalar(
        t, ops::linear(t, t.constant(x), t.leaf(pw.value, pw.grad), t.constant(b)), 5));
  }
  CHECK(max_fd_error(pw.value, pw.grad, forward) < 1e-7);
}

TEST_CASE("elementwise and shape op gradients match finite differences") {
  Rng rng(13);
  Tensor x({2, 4, 6, 6});
  rng.fill_normal(x, 0.1, 0.8);

  check_op(x, [](Tape& t, NodePtr in) { return ops::elu(t, in); });
  check_op(x, [](Tape& t, NodePtr in) { return ops::softplus_floor(t, in, 1e-3); });
  check_op(x, [](Tape& t, NodePtr in) { return ops::scale_shift(t, in, -1.7, 0.4); });
  check_op(x, [](Tape& t, NodePtr in) { return ops::global_avg_pool(t, in); });
  check_op(x, [](Tape& t, NodePtr in) { return ops::upsample2x(t, in); });
  check_op(x, [](Tape& t, NodePtr in) { return ops::crop2d(t, in, 4, 5); });
  check_op(x, [](Tape& t, NodePtr in) { return ops::slice_ch(t, in, 1, 2); });
  check_op(x, [](Tape& t, NodePtr in) {
    return ops::reshape(t, ops::reshape(t, in, {2, 144}), {2, 9, 4, 4});
  });

  Tensor other(x.shape());
  rng.fill_normal(other);
  check_op(x, [&](Tape& t, NodePtr in) { return ops::add(t, in, t.constant(other)); });
  check_op(x, [&](Tape& t, NodePtr in) { return ops::mul(t, in, t.constant(other)); });
  // both sides of mul trainable (FiLM pattern)
  check_op(x, [&](Tape& t, NodePtr in) {
    return ops::mul(t, in, ops::scale_shift(t, in, 0.5, -0.2));
  });
  check_op(x, [&](Tape& t, NodePtr in) {
    return ops::concat_ch(t, in, ops::elu(t, in));
  });
}

TEST_CASE("softmax rows gradient matches finite differences") {
  Rng rng(14);
  Tensor x({5, 4});
  rng.fill_normal(x, 0.0, 2.0);
  check_op(x, [](Tape& t, NodePtr in) { return ops::softmax_rows(t, in); }, 1e-6);
}

TEST_CASE("weighted_sum combines scalars and routes gradients") {
  Tape t;
  Tensor a0 = Tensor::scalar(2.0), b0 = Tensor::scalar(-3.0);
  Tensor ga = Tensor::zeros({1}), gb = Tensor::zeros({1});
  NodePtr a = t.leaf(a0, ga);
  NodePtr b = t.leaf(b0, gb);
  NodePtr s = ops::weighted_sum(t, {{1.5, a}, {0.25, b}});
  CHECK(s->value[0] == doctest::Approx(1.5 * 2.0 + 0.25 * -3.0));
  t.backward(s);
  CHECK(ga[0] == doctest::Approx(1.5));
  CHECK(gb[0] == doctest::Approx(0.25));
}

TEST_CASE("gradients accumulate when a node fans out") {
  Tensor x0 = Tensor::from({2, 2}, {0.3, -0.4, 1.2, 0.9});
  Tensor gx = Tensor::zeros({2, 2});
  Tape t;
  NodePtr x = t.leaf(x0, gx);
  NodePtr y = ops::add(t, x, x);  // dy/dx = 2
  t.backward(weighted_scalar(t, y, 21));
  nn::Parameter px{"x", x0.clone(), Tensor::zeros({2, 2})};
  auto forward = [&]() {
    Tape t2;
    NodePtr xx = t2.constant(px.value);
    return weighted_scalar(t2, ops::add(t2, xx, xx), 21)->value[0];
  };
  CHECK(max_fd_error(px.value, gx, forward) < 1e-8);
}

TEST_CASE("parameter leaves alias their gradient buffers") {
  nn::ParamStore ps;
  auto p = ps.create("p", {3});
  p->value[0] = 1.0;
  p->value[1] = 2.0;
  p->value[2] = 3.0;
  Tape t;
  nn::Ctx c{t, true};
  NodePtr n = nn::use(c, p);
  NodePtr s = weighted_scalar(t, n, 3);
  t.backward(s);
  double norm = 0;
  for (int i = 0; i < 3; ++i) norm += std::abs(p->grad[i]);
  CHECK(norm > 0);

  // no-grad context records constants
  Tape t2;
  nn::Ctx c2{t2, false};
  NodePtr n2 = nn::use(c2, p);
  CHECK(!n2->requires_grad);
}
