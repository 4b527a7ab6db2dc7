#include "epsseg/kernels.hpp"

#include <cmath>
#include <stdexcept>

// Every loop below assigns each output element to exactly one iteration of the
// parallelized index, and accumulates over the remaining indices in a fixed
// order. That makes the OpenMP path bitwise identical to the serial path.

namespace epsseg::kernels {

namespace {

void check(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

inline int conv_out_side(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Range of output coords whose input coord o*stride + kk - pad lies in [0, in).
inline void valid_out_range(int in, int out, int stride, int pad, int kk,
                            int& lo, int& hi) {
  int num = pad - kk;
  lo = num <= 0 ? 0 : (num + stride - 1) / stride;
  int last = in - 1 + pad - kk;           // o*stride <= last
  hi = last < 0 ? 0 : last / stride + 1;  // exclusive
  if (lo > out) lo = out;
  if (hi > out) hi = out;
}

}  // namespace

void conv2d_forward(const Tensor& in, const Tensor& w, const Tensor& b,
                    Tensor& out, int stride, int pad, Exec ex) {
  const int N = in.dim(0), IC = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int OC = w.dim(0), K = w.dim(2);
  check(w.dim(1) == IC, "conv2d: weight in-channel mismatch");
  check(w.dim(3) == K, "conv2d: non-square kernel");
  const int OH = conv_out_side(H, K, stride, pad);
  const int OW = conv_out_side(W, K, stride, pad);
  check(out.dim(0) == N && out.dim(1) == OC && out.dim(2) == OH && out.dim(3) == OW,
        "conv2d: bad output shape");

  const double* ip = in.data();
  const double* wp = w.data();
  const double* bp = b.data();
  double* op = out.data();
  const bool par = ex == Exec::parallel;
  const int64_t tasks = static_cast<int64_t>(N) * OC;

#pragma omp parallel for if (par) schedule(static)
  for (int64_t t = 0; t < tasks; ++t) {
    const int n = static_cast<int>(t / OC);
    const int oc = static_cast<int>(t % OC);
    double* oplane = op + (static_cast<int64_t>(n) * OC + oc) * OH * OW;
    const double bias = bp[oc];
    for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i) oplane[i] = bias;
    for (int ic = 0; ic < IC; ++ic) {
      const double* iplane = ip + (static_cast<int64_t>(n) * IC + ic) * H * W;
      const double* wk = wp + ((static_cast<int64_t>(oc) * IC + ic) * K) * K;
      for (int ky = 0; ky < K; ++ky) {
        int oy_lo, oy_hi;
        valid_out_range(H, OH, stride, pad, ky, oy_lo, oy_hi);
        for (int kx = 0; kx < K; ++kx) {
          const double wv = wk[ky * K + kx];
          int ox_lo, ox_hi;
          valid_out_range(W, OW, stride, pad, kx, ox_lo, ox_hi);
          for (int oy = oy_lo; oy < oy_hi; ++oy) {
            const int iy = oy * stride + ky - pad;
            const double* irow = iplane + static_cast<int64_t>(iy) * W + (kx - pad);
            double* orow = oplane + static_cast<int64_t>(oy) * OW;
            if (stride == 1) {
              for (int ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * irow[ox];
            } else {
              for (int ox = ox_lo; ox < ox_hi; ++ox)
                orow[ox] += wv * irow[static_cast<int64_t>(ox) * stride];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const Tensor& gout, const Tensor& w, Tensor& gin,
                           int stride, int pad, Exec ex) {
  const int N = gin.dim(0), IC = gin.dim(1), H = gin.dim(2), W = gin.dim(3);
  const int OC = w.dim(0), K = w.dim(2);
  const int OH = gout.dim(2), OW = gout.dim(3);
  const double* gp = gout.data();
  const double* wp = w.data();
  double* gi = gin.data();
  const bool par = ex == Exec::parallel;
  const int64_t tasks = static_cast<int64_t>(N) * IC;

#pragma omp parallel for if (par) schedule(static)
  for (int64_t t = 0; t < tasks; ++t) {
    const int n = static_cast<int>(t / IC);
    const int ic = static_cast<int>(t % IC);
    double* giplane = gi + (static_cast<int64_t>(n) * IC + ic) * H * W;
    for (int oc = 0; oc < OC; ++oc) {
      const double* gplane = gp + (static_cast<int64_t>(n) * OC + oc) * OH * OW;
      const double* wk = wp + ((static_cast<int64_t>(oc) * IC + ic) * K) * K;
      for (int ky = 0; ky < K; ++ky) {
        int oy_lo, oy_hi;
        valid_out_range(H, OH, stride, pad, ky, oy_lo, oy_hi);
        for (int kx = 0; kx < K; ++kx) {
          const double wv = wk[ky * K + kx];
          int ox_lo, ox_hi;
          valid_out_range(W, OW, stride, pad, kx, ox_lo, ox_hi);
          for (int oy = oy_lo; oy < oy_hi; ++oy) {
            const int iy = oy * stride + ky - pad;
            double* girow = giplane + static_cast<int64_t>(iy) * W + (kx - pad);
            const double* grow = gplane + static_cast<int64_t>(oy) * OW;
            if (stride == 1) {
              for (int ox = ox_lo; ox < ox_hi; ++ox) girow[ox] += wv * grow[ox];
            } else {
              for (int ox = ox_lo; ox < ox_hi; ++ox)
                girow[static_cast<int64_t>(ox) * stride] += wv * grow[ox];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_params(const Tensor& gout, const Tensor& in, Tensor& gw,
                            Tensor& gb, int stride, int pad, Exec ex) {
  if (!gw.defined() && !gb.defined()) return;
  const int N = in.dim(0), IC = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int OC = gout.dim(1);
  const int K = gw.defined() ? gw.dim(2) : 0;
  const int OH = gout.dim(2), OW = gout.dim(3);
  const double* gp = gout.data();
  const double* ip = in.data();
  double* gwp = gw.defined() ? gw.data() : nullptr;
  double* gbp = gb.defined() ? gb.data() : nullptr;
  const bool par = ex == Exec::parallel;

#pragma omp parallel for if (par) schedule(static)
  for (int oc = 0; oc < OC; ++oc) {
    double bsum = 0.0;
    for (int n = 0; n < N; ++n) {
      const double* gplane = gp + (static_cast<int64_t>(n) * OC + oc) * OH * OW;
      if (gbp)
        for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i) bsum += gplane[i];
      if (!gwp) continue;
      for (int ic = 0; ic < IC; ++ic) {
        const double* iplane = ip + (static_cast<int64_t>(n) * IC + ic) * H * W;
        double* gwk = gwp + ((static_cast<int64_t>(oc) * IC + ic) * K) * K;
        for (int ky = 0; ky < K; ++ky) {
          int oy_lo, oy_hi;
          valid_out_range(H, OH, stride, pad, ky, oy_lo, oy_hi);
          for (int kx = 0; kx < K; ++kx) {
            int ox_lo, ox_hi;
            valid_out_range(W, OW, stride, pad, kx, ox_lo, ox_hi);
            double acc = 0.0;
            for (int oy = oy_lo; oy < oy_hi; ++oy) {
              const int iy = oy * stride + ky - pad;
              const double* irow = iplane + static_cast<int64_t>(iy) * W + (kx - pad);
              const double* grow = gplane + static_cast<int64_t>(oy) * OW;
              if (stride == 1) {
                for (int ox = ox_lo; ox < ox_hi; ++ox) acc += grow[ox] * irow[ox];
              } else {
                for (int ox = ox_lo; ox < ox_hi; ++ox)
                  acc += grow[ox] * irow[static_cast<int64_t>(ox) * stride];
              }
            }
            gwk[ky * K + kx] += acc;
          }
        }
      }
    }
    if (gbp) gbp[oc] += bsum;
  }
}

void linear_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                    Tensor& y, Exec ex) {
  const int N = x.dim(0), DI = x.dim(1), DO = w.dim(0);
  check(w.dim(1) == DI, "linear: weight shape mismatch");
  const double* xp = x.data();
  const double* wp = w.data();
  const double* bp = b.data();
  double* yp = y.data();
  const bool par = ex == Exec::parallel;

#pragma omp parallel for if (par) schedule(static)
  for (int n = 0; n < N; ++n) {
    const double* xr = xp + static_cast<int64_t>(n) * DI;
    double* yr = yp + static_cast<int64_t>(n) * DO;
    for (int o = 0; o < DO; ++o) {
      const double* wr = wp + static_cast<int64_t>(o) * DI;
      double acc = bp[o];
      for (int i = 0; i < DI; ++i) acc += wr[i] * xr[i];
      yr[o] = acc;
    }
  }
}

void linear_backward(const Tensor& gout, const Tensor& x, const Tensor& w,
                     Tensor& gx, Tensor& gw, Tensor& gb, Exec ex) {
  const int N = x.dim(0), DI = x.dim(1), DO = w.dim(0);
  const double* gp = gout.data();
  const double* xp = x.data();
  const double* wp = w.data();
  const bool par = ex == Exec::parallel;

  if (gx.defined()) {
    double* gxp = gx.data();
#pragma omp parallel for if (par) schedule(static)
    for (int n = 0; n < N; ++n) {
      const double* gr = gp + static_cast<int64_t>(n) * DO;
      double* gxr = gxp + static_cast<int64_t>(n) * DI;
      for (int o = 0; o < DO; ++o) {
        const double gv = gr[o];
        const double* wr = wp + static_cast<int64_t>(o) * DI;
        for (int i = 0; i < DI; ++i) gxr[i] += gv * wr[i];
      }
    }
  }
  if (gw.defined() || gb.defined()) {
    double* gwp = gw.defined() ? gw.data() : nullptr;
    double* gbp = gb.defined() ? gb.data() : nullptr;
#pragma omp parallel for if (par) schedule(static)
    for (int o = 0; o < DO; ++o) {
      double* gwr = gwp ? gwp + static_cast<int64_t>(o) * DI : nullptr;
      double bacc = 0.0;
      for (int n = 0; n < N; ++n) {
        const double gv = gp[static_cast<int64_t>(n) * DO + o];
        const double* xr = xp + static_cast<int64_t>(n) * DI;
        if (gwr)
          for (int i = 0; i < DI; ++i) gwr[i] += gv * xr[i];
        bacc += gv;
      }
      if (gbp) gbp[o] += bacc;
    }
  }
}

void elu_forward(const Tensor& x, Tensor& y, Exec ex) {
  const double* xp = x.data();
  double* yp = y.data();
  const int64_t n = x.numel();
  const bool par = ex == Exec::parallel;
#pragma omp parallel for if (par) schedule(static)
  for (int64_t i = 0; i < n; ++i)
    yp[i] = xp[i] > 0.0 ? xp[i] : std::expm1(xp[i]);
}

void elu_backward(const Tensor& gout, const Tensor& x, Tensor& gx, Exec ex) {
  const double* gp = gout.data();
  const double* xp = x.data();
  double* gxp = gx.data();
  const int64_t n = x.numel();
  const bool par = ex == Exec::parallel;
#pragma omp parallel for if (par) schedule(static)
  for (int64_t i = 0; i < n; ++i)
    gxp[i] += gp[i] * (xp[i] > 0.0 ? 1.0 : std::exp(xp[i]));
}

void softplus_forward(const Tensor& x, Tensor& y, double floor, Exec ex) {
  const double* xp = x.data();
  double* yp = y.data();
  const int64_t n = x.numel();
  const bool par = ex == Exec::parallel;
#pragma omp parallel for if (par) schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    const double v = xp[i];
    yp[i] = (v > 30.0 ? v : std::log1p(std::exp(v))) + floor;
  }
}

void softplus_backward(const Tensor& gout, const Tensor& x, Tensor& gx, Exec ex) {
  const double* gp = gout.data();
  const double* xp = x.data();
  double* gxp = gx.data();
  const int64_t n = x.numel();
  const bool par = ex == Exec::parallel;
#pragma omp parallel for if (par) schedule(static)
  for (int64_t i = 0; i < n; ++i)
    gxp[i] += gp[i] / (1.0 + std::exp(-xp[i]));
}

void ew_add(const Tensor& x, const Tensor& y, Tensor& out, Exec ex) {
  const double* a = x.data();
  const double* b = y.data();
  double* o = out.data();
  const int64_t n = x.numel();
  const bool par = ex == Exec::parallel;
#pragma omp parallel for if (par) schedule(static)
  for (int64_t i = 0; i < n; ++i) o[i] = a[i] + b[i];
}

void ew_mul(const Tensor& x, const Tensor& y, Tensor& out, Exec ex) {
  const double* a = x.data();
  const double* b = y.data();
  double* o = out.data();
  const int64_t n = x.numel();
  const bool par = ex == Exec::parallel;
#pragma omp parallel for if (par) schedule(static)
  for (int64_t i = 0; i < n; ++i) o[i] = a[i] * b[i];
}

void ew_axpby(double av, const Tensor& x, double bv, Tensor& out, Exec ex) {
  const double* a = x.data();
  double* o = out.data();
  const int64_t n = x.numel();
  const bool par = ex == Exec::parallel;
#pragma omp parallel for if (par) schedule(static)
  for (int64_t i = 0; i < n; ++i) o[i] += av * a[i] + bv;
}

void accumulate(Tensor& dst, const Tensor& src, Exec ex) {
  double* d = dst.data();
  const double* s = src.data();
  const int64_t n = dst.numel();
  const bool par = ex == Exec::parallel;
#pragma omp parallel for if (par) schedule(static)
  for (int64_t i = 0; i < n; ++i) d[i] += s[i];
}

void accumulate_scaled(Tensor& dst, const Tensor& src, double sc, Exec ex) {
  double* d = dst.data();
  const double* s = src.data();
  const int64_t n = dst.numel();
  const bool par = ex == Exec::parallel;
#pragma omp parallel for if (par) schedule(static)
  for (int64_t i = 0; i < n; ++i) d[i] += sc * s[i];
}

void accumulate_mul(Tensor& dst, const Tensor& a, const Tensor& b, Exec ex) {
  double* d = dst.data();
  const double* ap = a.data();
  const double* bp = b.data();
  const int64_t n = dst.numel();
  const bool par = ex == Exec::parallel;
#pragma omp parallel for if (par) schedule(static)
  for (int64_t i = 0; i < n; ++i) d[i] += ap[i] * bp[i];
}

void gap_forward(const Tensor& x, Tensor& y, Exec ex) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const double* xp = x.data();
  double* yp = y.data();
  const double inv = 1.0 / (static_cast<double>(H) * W);
  const bool par = ex == Exec::parallel;
  const int64_t tasks = static_cast<int64_t>(N) * C;
#pragma omp parallel for if (par) schedule(static)
  for (int64_t t = 0; t < tasks; ++t) {
    const double* plane = xp + t * H * W;
    double acc = 0.0;
    for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) acc += plane[i];
    yp[t] = acc * inv;
  }
}

void gap_backward(const Tensor& gout, Tensor& gx, int h, int w, Exec ex) {
  const int64_t tasks = gout.numel();
  const double* gp = gout.data();
  double* gxp = gx.data();
  const double inv = 1.0 / (static_cast<double>(h) * w);
  const bool par = ex == Exec::parallel;
#pragma omp parallel for if (par) schedule(static)
  for (int64_t t = 0; t < tasks; ++t) {
    const double gv = gp[t] * inv;
    double* plane = gxp + t * h * w;
    for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) plane[i] += gv;
  }
}

void upsample2x_forward(const Tensor& x, Tensor& y, Exec ex) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const double* xp = x.data();
  double* yp = y.data();
  const bool par = ex == Exec::parallel;
  const int64_t tasks = static_cast<int64_t>(N) * C;
#pragma omp parallel for if (par) schedule(static)
  for (int64_t t = 0; t < tasks; ++t) {
    const double* iplane = xp + t * H * W;
    double* oplane = yp + t * (2 * H) * (2 * W);
    for (int yy = 0; yy < H; ++yy) {
      for (int xx = 0; xx < W; ++xx) {
        const double v = iplane[static_cast<int64_t>(yy) * W + xx];
        double* o = oplane + (static_cast<int64_t>(2 * yy) * 2 * W) + 2 * xx;
        o[0] = v;
        o[1] = v;
        o[2 * W] = v;
        o[2 * W + 1] = v;
      }
    }
  }
}

void upsample2x_backward(const Tensor& gout, Tensor& gx, Exec ex) {
  const int N = gx.dim(0), C = gx.dim(1), H = gx.dim(2), W = gx.dim(3);
  const double* gp = gout.data();
  double* gxp = gx.data();
  const bool par = ex == Exec::parallel;
  const int64_t tasks = static_cast<int64_t>(N) * C;
#pragma omp parallel for if (par) schedule(static)
  for (int64_t t = 0; t < tasks; ++t) {
    const double* gplane = gp + t * (2 * H) * (2 * W);
    double* iplane = gxp + t * H * W;
    for (int yy = 0; yy < H; ++yy) {
      for (int xx = 0; xx < W; ++xx) {
        const double* g = gplane + (static_cast<int64_t>(2 * yy) * 2 * W) + 2 * xx;
        iplane[static_cast<int64_t>(yy) * W + xx] +=
            g[0] + g[1] + g[2 * W] + g[2 * W + 1];
      }
    }
  }
}

void crop2d_forward(const Tensor& x, Tensor& y, Exec ex) {
  const int N = x.dim(0), C = x.dim(1), W = x.dim(3);
  const int OH = y.dim(2), OW = y.dim(3);
  const double* xp = x.data();
  double* yp = y.data();
  const bool par = ex == Exec::parallel;
  const int64_t tasks = static_cast<int64_t>(N) * C;
#pragma omp parallel for if (par) schedule(static)
  for (int64_t t = 0; t < tasks; ++t) {
    const double* iplane = xp + t * x.dim(2) * W;
    double* oplane = yp + t * OH * OW;
    for (int yy = 0; yy < OH; ++yy)
      for (int xx = 0; xx < OW; ++xx)
        oplane[static_cast<int64_t>(yy) * OW + xx] = iplane[static_cast<int64_t>(yy) * W + xx];
  }
}

void crop2d_backward(const Tensor& gout, Tensor& gx, Exec ex) {
  const int N = gx.dim(0), C = gx.dim(1), W = gx.dim(3);
  const int OH = gout.dim(2), OW = gout.dim(3);
  const double* gp = gout.data();
  double* gxp = gx.data();
  const bool par = ex == Exec::parallel;
  const int64_t tasks = static_cast<int64_t>(N) * C;
#pragma omp parallel for if (par) schedule(static)
  for (int64_t t = 0; t < tasks; ++t) {
    const double* gplane = gp + t * OH * OW;
    double* iplane = gxp + t * gx.dim(2) * W;
    for (int yy = 0; yy < OH; ++yy)
      for (int xx = 0; xx < OW; ++xx)
        iplane[static_cast<int64_t>(yy) * W + xx] += gplane[static_cast<int64_t>(yy) * OW + xx];
  }
}

void concat_ch_forward(const Tensor& a, const Tensor& b, Tensor& out, Exec ex) {
  const int N = a.dim(0), CA = a.dim(1), CB = b.dim(1);
  const int64_t plane = static_cast<int64_t>(a.dim(2)) * a.dim(3);
  const double* ap = a.data();
  const double* bp = b.data();
  double* op = out.data();
  const bool par = ex == Exec::parallel;
#pragma omp parallel for if (par) schedule(static)
  for (int n = 0; n < N; ++n) {
    double* dst = op + static_cast<int64_t>(n) * (CA + CB) * plane;
    const double* sa = ap + static_cast<int64_t>(n) * CA * plane;
    const double* sb = bp + static_cast<int64_t>(n) * CB * plane;
    for (int64_t i = 0; i < CA * plane; ++i) dst[i] = sa[i];
    for (int64_t i = 0; i < CB * plane; ++i) dst[CA * plane + i] = sb[i];
  }
}

void concat_ch_backward(const Tensor& gout, Tensor& ga, Tensor& gb, Exec ex) {
  const int N = gout.dim(0), CA = ga.dim(1), CB = gb.dim(1);
  const int64_t plane = static_cast<int64_t>(gout.dim(2)) * gout.dim(3);
  const double* gp = gout.data();
  double* gap = ga.data();
  double* gbp = gb.data();
  const bool par = ex == Exec::parallel;
#pragma omp parallel for if (par) schedule(static)
  for (int n = 0; n < N; ++n) {
    const double* src = gp + static_cast<int64_t>(n) * (CA + CB) * plane;
    double* da = gap + static_cast<int64_t>(n) * CA * plane;
    double* db = gbp + static_cast<int64_t>(n) * CB * plane;
    for (int64_t i = 0; i < CA * plane; ++i) da[i] += src[i];
    for (int64_t i = 0; i < CB * plane; ++i) db[i] += src[CA * plane + i];
  }
}

void slice_ch_forward(const Tensor& x, Tensor& y, int c0, Exec ex) {
  const int N = x.dim(0), C = x.dim(1), CS = y.dim(1);
  const int64_t plane = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  const double* xp = x.data();
  double* yp = y.data();
  const bool par = ex == Exec::parallel;
#pragma omp parallel for if (par) schedule(static)
  for (int n = 0; n < N; ++n) {
    const double* src = xp + (static_cast<int64_t>(n) * C + c0) * plane;
    double* dst = yp + static_cast<int64_t>(n) * CS * plane;
    for (int64_t i = 0; i < CS * plane; ++i) dst[i] = src[i];
  }
}

void slice_ch_backward(const Tensor& gout, Tensor& gx, int c0, Exec ex) {
  const int N = gx.dim(0), C = gx.dim(1), CS = gout.dim(1);
  const int64_t plane = static_cast<int64_t>(gx.dim(2)) * gx.dim(3);
  const double* gp = gout.data();
  double* gxp = gx.data();
  const bool par = ex == Exec::parallel;
#pragma omp parallel for if (par) schedule(static)
  for (int n = 0; n < N; ++n) {
    const double* src = gp + static_cast<int64_t>(n) * CS * plane;
    double* dst = gxp + (static_cast<int64_t>(n) * C + c0) * plane;
    for (int64_t i = 0; i < CS * plane; ++i) dst[i] += src[i];
  }
}

void softmax_rows_forward(const Tensor& x, Tensor& y, Exec ex) {
  const int N = x.dim(0), C = x.dim(1);
  const double* xp = x.data();
  double* yp = y.data();
  const bool par = ex == Exec::parallel;
#pragma omp parallel for if (par) schedule(static)
  for (int n = 0; n < N; ++n) {
    const double* xr = xp + static_cast<int64_t>(n) * C;
    double* yr = yp + static_cast<int64_t>(n) * C;
    double mx = xr[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, xr[c]);
    double sum = 0.0;
    for (int c = 0; c < C; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      sum += yr[c];
    }
    const double inv = 1.0 / sum;
    for (int c = 0; c < C; ++c) yr[c] *= inv;
  }
}

void softmax_rows_backward(const Tensor& gout, const Tensor& y, Tensor& gx, Exec ex) {
  const int N = y.dim(0), C = y.dim(1);
  const double* gp = gout.data();
  const double* yp = y.data();
  double* gxp = gx.data();
  const bool par = ex == Exec::parallel;
#pragma omp parallel for if (par) schedule(static)
  for (int n = 0; n < N; ++n) {
    const double* gr = gp + static_cast<int64_t>(n) * C;
    const double* yr = yp + static_cast<int64_t>(n) * C;
    double* gxr = gxp + static_cast<int64_t>(n) * C;
    double dot = 0.0;
    for (int c = 0; c < C; ++c) dot += gr[c] * yr[c];
    for (int c = 0; c < C; ++c) gxr[c] += yr[c] * (gr[c] - dot);
  }
}

}  // namespace epsseg::kernels
