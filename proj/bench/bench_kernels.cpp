#include <benchmark/benchmark.h>

#include "epsseg/kernels.hpp"
#include "epsseg/rng.hpp"

using namespace epsseg;

namespace {

struct ConvSetup {
  Tensor in, w, b, out, gout, gin, gw, gb;
  int stride, pad;

  ConvSetup(int n, int ic, int oc, int side, int k, int stride_, int pad_)
      : stride(stride_), pad(pad_) {
    Rng rng(42);
    in = Tensor({n, ic, side, side});
    w = Tensor({oc, ic, k, k});
    b = Tensor({oc});
    rng.fill_normal(in);
    rng.fill_normal(w);
    const int os = (side + 2 * pad - k) / stride + 1;
    out = Tensor({n, oc, os, os});
    gout = Tensor({n, oc, os, os});
    rng.fill_normal(gout);
    gin = Tensor({n, ic, side, side});
    gw = Tensor({oc, ic, k, k});
    gb = Tensor({oc});
  }
};

void conv_forward(benchmark::State& state, Exec ex) {
  ConvSetup s(16, 16, 16, 17, 3, 1, 1);
  for (auto _ : state) {
    kernels::conv2d_forward(s.in, s.w, s.b, s.out, s.stride, s.pad, ex);
    benchmark::ClobberMemory();
  }
}

void conv_backward(benchmark::State& state, Exec ex) {
  ConvSetup s(16, 16, 16, 17, 3, 1, 1);
  for (auto _ : state) {
    s.gin.zero();
    s.gw.zero();
    s.gb.zero();
    kernels::conv2d_backward_input(s.gout, s.w, s.gin, s.stride, s.pad, ex);
    kernels::conv2d_backward_params(s.gout, s.in, s.gw, s.gb, s.stride, s.pad, ex);
    benchmark::ClobberMemory();
  }
}

void linear_forward(benchmark::State& state, Exec ex) {
  Rng rng(7);
  Tensor x({64, 512}), w({256, 512}), b({256}), y({64, 256});
  rng.fill_normal(x);
  rng.fill_normal(w);
  for (auto _ : state) {
    kernels::linear_forward(x, w, b, y, ex);
    benchmark::ClobberMemory();
  }
}

void elementwise(benchmark::State& state, Exec ex) {
  Rng rng(9);
  Tensor x({1 << 20}), y({1 << 20}), out({1 << 20});
  rng.fill_normal(x);
  rng.fill_normal(y);
  for (auto _ : state) {
    kernels::ew_mul(x, y, out, ex);
    benchmark::ClobberMemory();
  }
}

}  // namespace

BENCHMARK_CAPTURE(conv_forward, serial, Exec::serial);
BENCHMARK_CAPTURE(conv_forward, openmp, Exec::parallel);
BENCHMARK_CAPTURE(conv_backward, serial, Exec::serial);
BENCHMARK_CAPTURE(conv_backward, openmp, Exec::parallel);
BENCHMARK_CAPTURE(linear_forward, serial, Exec::serial);
BENCHMARK_CAPTURE(linear_forward, openmp, Exec::parallel);
BENCHMARK_CAPTURE(elementwise, serial, Exec::serial);
BENCHMARK_CAPTURE(elementwise, openmp, Exec::parallel);

BENCHMARK_MAIN();
