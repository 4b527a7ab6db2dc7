#pragma once

#include "epsseg/exec.hpp"
#include "epsseg/tensor.hpp"

namespace epsseg::kernels {

// 2-d convolution, NCHW, square kernel, symmetric zero padding.
// out: (N, OC, OH, OW) with OH = (H + 2*pad - k)/stride + 1.
void conv2d_forward(const Tensor& in, const Tensor& w, const Tensor& b,
                    Tensor& out, int stride, int pad, Exec ex);
void conv2d_backward_input(const Tensor& gout, const Tensor& w, Tensor& gin,
                           int stride, int pad, Exec ex);
void conv2d_backward_params(const Tensor& gout, const Tensor& in, Tensor& gw,
                            Tensor& gb, int stride, int pad, Exec ex);

// Fully connected: x (N, Din), w (Dout, Din), b (Dout), y (N, Dout).
void linear_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                    Tensor& y, Exec ex);
void linear_backward(const Tensor& gout, const Tensor& x, const Tensor& w,
                     Tensor& gx, Tensor& gw, Tensor& gb, Exec ex);

// Elementwise activations.
void elu_forward(const Tensor& x, Tensor& y, Exec ex);
void elu_backward(const Tensor& gout, const Tensor& x, Tensor& gx, Exec ex);
void softplus_forward(const Tensor& x, Tensor& y, double floor, Exec ex);
void softplus_backward(const Tensor& gout, const Tensor& x, Tensor& gx, Exec ex);

// Elementwise arithmetic; gradients accumulate (+=) into gx/gy.
void ew_add(const Tensor& x, const Tensor& y, Tensor& out, Exec ex);
void ew_mul(const Tensor& x, const Tensor& y, Tensor& out, Exec ex);
void ew_axpby(double a, const Tensor& x, double b, Tensor& out, Exec ex);  // out += a*x + b
void accumulate(Tensor& dst, const Tensor& src, Exec ex);                  // dst += src
void accumulate_scaled(Tensor& dst, const Tensor& src, double s, Exec ex); // dst += s*src
void accumulate_mul(Tensor& dst, const Tensor& a, const Tensor& b, Exec ex); // dst += a.*b

// Global average pool (N,C,H,W) -> (N,C); backward broadcasts g/(H*W).
void gap_forward(const Tensor& x, Tensor& y, Exec ex);
void gap_backward(const Tensor& gout, Tensor& gx, int h, int w, Exec ex);

// Nearest-neighbour 2x upsampling.
void upsample2x_forward(const Tensor& x, Tensor& y, Exec ex);
void upsample2x_backward(const Tensor& gout, Tensor& gx, Exec ex);

// Top-left spatial crop to (oh, ow); backward zero-pads.
void crop2d_forward(const Tensor& x, Tensor& y, Exec ex);
void crop2d_backward(const Tensor& gout, Tensor& gx, Exec ex);

// Channel concat/slice for NCHW (vectors are (N,C,1,1) views).
void concat_ch_forward(const Tensor& a, const Tensor& b, Tensor& out, Exec ex);
void concat_ch_backward(const Tensor& gout, Tensor& ga, Tensor& gb, Exec ex);
void slice_ch_forward(const Tensor& x, Tensor& y, int c0, Exec ex);
void slice_ch_backward(const Tensor& gout, Tensor& gx, int c0, Exec ex);

// Row softmax for (N, C).
void softmax_rows_forward(const Tensor& x, Tensor& y, Exec ex);
void softmax_rows_backward(const Tensor& gout, const Tensor& y, Tensor& gx, Exec ex);

}  // namespace epsseg::kernels
