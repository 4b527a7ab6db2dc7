#include "doctest.h"

#include "epsseg/kernels.hpp"
#include "epsseg/rng.hpp"
#include "test_util.hpp"

using namespace epsseg;
namespace k = epsseg::kernels;
using testutil::bitwise_equal;

namespace {

// Naive convolution oracle, written independently of the production kernel.
Tensor conv_oracle(const Tensor& in, const Tensor& w, const Tensor& b, int stride, int pad) {
  const int N = in.dim(0), IC = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int OC = w.dim(0), K = w.dim(2);
  const int OH = (H + 2 * pad - K) / stride + 1;
  const int OW = (W + 2 * pad - K) / stride + 1;
  Tensor out({N, OC, OH, OW});
  for (int n = 0; n < N; ++n)
    for (int oc = 0; oc < OC; ++oc)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          double acc = b[oc];
          for (int ic = 0; ic < IC; ++ic)
            for (int ky = 0; ky < K; ++ky)
              for (int kx = 0; kx < K; ++kx) {
                const int iy = oy * stride + ky - pad;
                const int ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += in.at4(n, ic, iy, ix) * w.at4(oc, ic, ky, kx);
              }
          out.at4(n, oc, oy, ox) = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d forward matches the naive oracle") {
  Rng rng(1);
  struct Case {
    int n, ic, oc, side, ksize, stride, pad;
  };
  for (const Case c : {Case{2, 3, 4, 9, 3, 1, 1}, Case{2, 3, 4, 9, 3, 2, 1},
                       Case{1, 2, 5, 8, 1, 1, 0}, Case{3, 1, 2, 7, 3, 2, 1}}) {
    Tensor in({c.n, c.ic, c.side, c.side}), w({c.oc, c.ic, c.ksize, c.ksize}), b({c.oc});
    rng.fill_normal(in);
    rng.fill_normal(w);
    rng.fill_normal(b);
    Tensor expect = conv_oracle(in, w, b, c.stride, c.pad);
    Tensor got(expect.shape());
    k::conv2d_forward(in, w, b, got, c.stride, c.pad, Exec::serial);
    for (int64_t i = 0; i < expect.numel(); ++i)
      CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }
}

TEST_CASE("serial and OpenMP kernel paths are bitwise identical") {
  Rng rng(2);
  Tensor in({4, 6, 11, 11}), w({8, 6, 3, 3}), b({8});
  rng.fill_normal(in);
  rng.fill_normal(w);
  rng.fill_normal(b);
  Tensor out_s({4, 8, 6, 6}), out_p({4, 8, 6, 6});
  k::conv2d_forward(in, w, b, out_s, 2, 1, Exec::serial);
  k::conv2d_forward(in, w, b, out_p, 2, 1, Exec::parallel);
  CHECK(bitwise_equal(out_s, out_p));

  Tensor gout({4, 8, 6, 6});
  rng.fill_normal(gout);
  Tensor gin_s({4, 6, 11, 11}), gin_p({4, 6, 11, 11});
  k::conv2d_backward_input(gout, w, gin_s, 2, 1, Exec::serial);
  k::conv2d_backward_input(gout, w, gin_p, 2, 1, Exec::parallel);
  CHECK(bitwise_equal(gin_s, gin_p));

  Tensor gw_s({8, 6, 3, 3}), gb_s({8}), gw_p({8, 6, 3, 3}), gb_p({8});
  k::conv2d_backward_params(gout, in, gw_s, gb_s, 2, 1, Exec::serial);
  k::conv2d_backward_params(gout, in, gw_p, gb_p, 2, 1, Exec::parallel);
  CHECK(bitwise_equal(gw_s, gw_p));
  CHECK(bitwise_equal(gb_s, gb_p));

  Tensor x({64, 48}), lw({32, 48}), lb({32}), y_s({64, 32}), y_p({64, 32});
  rng.fill_normal(x);
  rng.fill_normal(lw);
  rng.fill_normal(lb);
  k::linear_forward(x, lw, lb, y_s, Exec::serial);
  k::linear_forward(x, lw, lb, y_p, Exec::parallel);
  CHECK(bitwise_equal(y_s, y_p));

  Tensor big({100000});
  rng.fill_normal(big);
  Tensor e_s(big.shape()), e_p(big.shape());
  k::elu_forward(big, e_s, Exec::serial);
  k::elu_forward(big, e_p, Exec::parallel);
  CHECK(bitwise_equal(e_s, e_p));

  Tensor four({3, 5, 8, 8});
  rng.fill_normal(four);
  Tensor gs({3, 5}), gp({3, 5});
  k::gap_forward(four, gs, Exec::serial);
  k::gap_forward(four, gp, Exec::parallel);
  CHECK(bitwise_equal(gs, gp));

  Tensor up_s({3, 5, 16, 16}), up_p({3, 5, 16, 16});
  k::upsample2x_forward(four, up_s, Exec::serial);
  k::upsample2x_forward(four, up_p, Exec::parallel);
  CHECK(bitwise_equal(up_s, up_p));

  Tensor sm_in({32, 7}), sm_s({32, 7}), sm_p({32, 7});
  rng.fill_normal(sm_in, 0.0, 3.0);
  k::softmax_rows_forward(sm_in, sm_s, Exec::serial);
  k::softmax_rows_forward(sm_in, sm_p, Exec::parallel);
  CHECK(bitwise_equal(sm_s, sm_p));
}

TEST_CASE("linear forward matches a hand computation") {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor w = Tensor::from({2, 3}, {1, 0, -1, 0.5, 0.5, 0.5});
  Tensor b = Tensor::from({2}, {10, -10});
  Tensor y({2, 2});
  k::linear_forward(x, w, b, y, Exec::serial);
  CHECK(y[0] == doctest::Approx(1 - 3 + 10));
  CHECK(y[1] == doctest::Approx(3 - 10));
  CHECK(y[2] == doctest::Approx(4 - 6 + 10));
  CHECK(y[3] == doctest::Approx(7.5 - 10));
}

TEST_CASE("global average pool and upsample keep constants") {
  Tensor x = Tensor::full({1, 2, 2, 2}, 3.25);
  Tensor y({1, 2});
  k::gap_forward(x, y, Exec::serial);
  CHECK(y[0] == 3.25);
  CHECK(y[1] == 3.25);

  Tensor up({1, 2, 4, 4});
  k::upsample2x_forward(x, up, Exec::serial);
  for (int64_t i = 0; i < up.numel(); ++i) CHECK(up[i] == 3.25);
}

TEST_CASE("crop keeps the top-left corner") {
  Tensor x({1, 1, 3, 3});
  for (int i = 0; i < 9; ++i) x[i] = i;
  Tensor y({1, 1, 2, 2});
  k::crop2d_forward(x, y, Exec::serial);
  CHECK(y[0] == 0);
  CHECK(y[1] == 1);
  CHECK(y[2] == 3);
  CHECK(y[3] == 4);
}

TEST_CASE("channel concat and slice round trip") {
  Rng rng(5);
  Tensor a({2, 3, 4, 4}), b({2, 2, 4, 4});
  rng.fill_normal(a);
  rng.fill_normal(b);
  Tensor cat({2, 5, 4, 4});
  k::concat_ch_forward(a, b, cat, Exec::serial);
  Tensor a2({2, 3, 4, 4}), b2({2, 2, 4, 4});
  k::slice_ch_forward(cat, a2, 0, Exec::serial);
  k::slice_ch_forward(cat, b2, 3, Exec::serial);
  CHECK(bitwise_equal(a, a2));
  CHECK(bitwise_equal(b, b2));
}

TEST_CASE("softmax rows sum to one and shift invariance holds") {
  Rng rng(6);
  Tensor x({10, 5});
  rng.fill_normal(x, 0.0, 4.0);
  Tensor y({10, 5});
  k::softmax_rows_forward(x, y, Exec::serial);
  for (int r = 0; r < 10; ++r) {
    double s = 0;
    for (int c = 0; c < 5; ++c) s += y[r * 5 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  Tensor xs = x.clone();
  for (int64_t i = 0; i < xs.numel(); ++i) xs[i] += 123.0;
  Tensor ys({10, 5});
  k::softmax_rows_forward(xs, ys, Exec::serial);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(ys[i] == doctest::Approx(y[i]).epsilon(1e-9));
}
