#pragma once

#include <cstddef>
#include <vector>

// Low-level convolution kernels. Two implementations of each op:
//   *_naive  — direct nested-loop definition, serial; kept as the reference
//              the fast path and the tests are checked against.
//   *_fast   — im2col/row-dot layout with OpenMP over independent outputs.
// Both accumulate in double per output element in a fixed order, so results
// are identical regardless of thread count.

namespace csisense::kernels {

int conv_out_dim(int in, int k, int stride, int pad);

// out must hold N*K*Ho*Wo floats.
void conv2d_naive(const float* x, int n, int c, int h, int w,
                  const float* weight, int k, int kh, int kw,
                  int stride, int pad, float* out);

void depthwise_conv2d_naive(const float* x, int n, int c, int h, int w,
                            const float* weight, int kh, int kw,
                            int stride, int pad, float* out);

void conv2d_fast(const float* x, int n, int c, int h, int w,
                 const float* weight, int k, int kh, int kw,
                 int stride, int pad, float* out);

void depthwise_conv2d_fast(const float* x, int n, int c, int h, int w,
                           const float* weight, int kh, int kw,
                           int stride, int pad, float* out);

// Patch matrix for one image: patches[p][c*kh*kw] with p = ho*Wo+wo.
void im2col(const float* x, int c, int h, int w, int kh, int kw,
            int stride, int pad, int ho, int wo, float* patches);

// Scatter-add of a patch-gradient matrix back onto the image gradient.
void col2im_add(const float* patches, int c, int h, int w, int kh, int kw,
                int stride, int pad, int ho, int wo, float* gx);

// Backward passes for the fast convolution. gx/gw may be null to skip.
void conv2d_backward(const float* x, int n, int c, int h, int w,
                     const float* weight, int k, int kh, int kw,
                     int stride, int pad, const float* gout,
                     float* gx, float* gw);

void depthwise_conv2d_backward(const float* x, int n, int c, int h, int w,
                               const float* weight, int kh, int kw,
                               int stride, int pad, const float* gout,
                               float* gx, float* gw);

}  // namespace csisense::kernels
