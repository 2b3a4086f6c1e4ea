#include "csisense/kernels.hpp"

#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace csisense::kernels {

int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

void conv2d_naive(const float* x, int n, int c, int h, int w,
                  const float* weight, int k, int kh, int kw,
                  int stride, int pad, float* out) {
    const int ho = conv_out_dim(h, kh, stride, pad);
    const int wo = conv_out_dim(w, kw, stride, pad);
    for (int ni = 0; ni < n; ++ni)
        for (int ki = 0; ki < k; ++ki)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    double acc = 0.0;
                    for (int ci = 0; ci < c; ++ci)
                        for (int fy = 0; fy < kh; ++fy)
                            for (int fx = 0; fx < kw; ++fx) {
                                const int iy = oy * stride + fy - pad;
                                const int ix = ox * stride + fx - pad;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += double(x[((ni * c + ci) * h + iy) * w + ix]) *
                                       double(weight[((ki * c + ci) * kh + fy) * kw + fx]);
                            }
                    out[((ni * k + ki) * ho + oy) * wo + ox] = float(acc);
                }
}

void depthwise_conv2d_naive(const float* x, int n, int c, int h, int w,
                            const float* weight, int kh, int kw,
                            int stride, int pad, float* out) {
    const int ho = conv_out_dim(h, kh, stride, pad);
    const int wo = conv_out_dim(w, kw, stride, pad);
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    double acc = 0.0;
                    for (int fy = 0; fy < kh; ++fy)
                        for (int fx = 0; fx < kw; ++fx) {
                            const int iy = oy * stride + fy - pad;
                            const int ix = ox * stride + fx - pad;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += double(x[((ni * c + ci) * h + iy) * w + ix]) *
                                   double(weight[(ci * kh + fy) * kw + fx]);
                        }
                    out[((ni * c + ci) * ho + oy) * wo + ox] = float(acc);
                }
}

void im2col(const float* x, int c, int h, int w, int kh, int kw,
            int stride, int pad, int ho, int wo, float* patches) {
    const int row = c * kh * kw;
    for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
            float* dst = patches + (oy * wo + ox) * row;
            for (int ci = 0; ci < c; ++ci)
                for (int fy = 0; fy < kh; ++fy) {
                    const int iy = oy * stride + fy - pad;
                    for (int fx = 0; fx < kw; ++fx) {
                        const int ix = ox * stride + fx - pad;
                        *dst++ = (iy < 0 || iy >= h || ix < 0 || ix >= w)
                                     ? 0.0f
                                     : x[(ci * h + iy) * w + ix];
                    }
                }
        }
}

void col2im_add(const float* patches, int c, int h, int w, int kh, int kw,
                int stride, int pad, int ho, int wo, float* gx) {
    for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
            const float* src = patches + (oy * wo + ox) * (c * kh * kw);
            for (int ci = 0; ci < c; ++ci)
                for (int fy = 0; fy < kh; ++fy) {
                    const int iy = oy * stride + fy - pad;
                    for (int fx = 0; fx < kw; ++fx, ++src) {
                        const int ix = ox * stride + fx - pad;
                        if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                        gx[(ci * h + iy) * w + ix] += *src;
                    }
                }
        }
}

void conv2d_fast(const float* x, int n, int c, int h, int w,
                 const float* weight, int k, int kh, int kw,
                 int stride, int pad, float* out) {
    const int ho = conv_out_dim(h, kh, stride, pad);
    const int wo = conv_out_dim(w, kw, stride, pad);
    const int npix = ho * wo;
    const int row = c * kh * kw;
    std::vector<float> patches(size_t(npix) * row);
    for (int ni = 0; ni < n; ++ni) {
        im2col(x + size_t(ni) * c * h * w, c, h, w, kh, kw, stride, pad, ho, wo,
               patches.data());
        float* o = out + size_t(ni) * k * npix;
#pragma omp parallel for schedule(static)
        for (int ki = 0; ki < k; ++ki) {
            const float* wr = weight + size_t(ki) * row;
            for (int p = 0; p < npix; ++p) {
                const float* pr = patches.data() + size_t(p) * row;
                double acc = 0.0;
                for (int i = 0; i < row; ++i) acc += double(wr[i]) * double(pr[i]);
                o[size_t(ki) * npix + p] = float(acc);
            }
        }
    }
}

void depthwise_conv2d_fast(const float* x, int n, int c, int h, int w,
                           const float* weight, int kh, int kw,
                           int stride, int pad, float* out) {
    const int ho = conv_out_dim(h, kh, stride, pad);
    const int wo = conv_out_dim(w, kw, stride, pad);
    for (int ni = 0; ni < n; ++ni) {
#pragma omp parallel for schedule(static)
        for (int ci = 0; ci < c; ++ci) {
            const float* xi = x + ((size_t(ni) * c + ci) * h) * w;
            const float* wi = weight + size_t(ci) * kh * kw;
            float* o = out + ((size_t(ni) * c + ci) * ho) * wo;
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    double acc = 0.0;
                    for (int fy = 0; fy < kh; ++fy) {
                        const int iy = oy * stride + fy - pad;
                        if (iy < 0 || iy >= h) continue;
                        for (int fx = 0; fx < kw; ++fx) {
                            const int ix = ox * stride + fx - pad;
                            if (ix < 0 || ix >= w) continue;
                            acc += double(xi[iy * w + ix]) * double(wi[fy * kw + fx]);
                        }
                    }
                    o[oy * wo + ox] = float(acc);
                }
        }
    }
}

void conv2d_backward(const float* x, int n, int c, int h, int w,
                     const float* weight, int k, int kh, int kw,
                     int stride, int pad, const float* gout,
                     float* gx, float* gw) {
    const int ho = conv_out_dim(h, kh, stride, pad);
    const int wo = conv_out_dim(w, kw, stride, pad);
    const int npix = ho * wo;
    const int row = c * kh * kw;
    std::vector<float> patches(size_t(npix) * row);
    std::vector<double> gwacc;
    if (gw) gwacc.assign(size_t(k) * row, 0.0);
    std::vector<float> gpatch;
    if (gx) gpatch.resize(size_t(npix) * row);

    for (int ni = 0; ni < n; ++ni) {
        im2col(x + size_t(ni) * c * h * w, c, h, w, kh, kw, stride, pad, ho, wo,
               patches.data());
        const float* go = gout + size_t(ni) * k * npix;
        if (gw) {
#pragma omp parallel for schedule(static)
            for (int ki = 0; ki < k; ++ki) {
                double* acc = gwacc.data() + size_t(ki) * row;
                for (int p = 0; p < npix; ++p) {
                    const double g = go[size_t(ki) * npix + p];
                    if (g == 0.0) continue;
                    const float* pr = patches.data() + size_t(p) * row;
                    for (int i = 0; i < row; ++i) acc[i] += g * double(pr[i]);
                }
            }
        }
        if (gx) {
#pragma omp parallel for schedule(static)
            for (int p = 0; p < npix; ++p) {
                float* gp = gpatch.data() + size_t(p) * row;
                std::vector<double> acc(row, 0.0);
                for (int ki = 0; ki < k; ++ki) {
                    const double g = go[size_t(ki) * npix + p];
                    if (g == 0.0) continue;
                    const float* wr = weight + size_t(ki) * row;
                    for (int i = 0; i < row; ++i) acc[i] += g * double(wr[i]);
                }
                for (int i = 0; i < row; ++i) gp[i] = float(acc[i]);
            }
            col2im_add(gpatch.data(), c, h, w, kh, kw, stride, pad, ho, wo,
                       gx + size_t(ni) * c * h * w);
        }
    }
    if (gw)
        for (size_t i = 0; i < gwacc.size(); ++i) gw[i] += float(gwacc[i]);
}

void depthwise_conv2d_backward(const float* x, int n, int c, int h, int w,
                               const float* weight, int kh, int kw,
                               int stride, int pad, const float* gout,
                               float* gx, float* gw) {
    const int ho = conv_out_dim(h, kh, stride, pad);
    const int wo = conv_out_dim(w, kw, stride, pad);
    std::vector<double> gwacc;
    if (gw) gwacc.assign(size_t(c) * kh * kw, 0.0);
    for (int ni = 0; ni < n; ++ni) {
#pragma omp parallel for schedule(static)
        for (int ci = 0; ci < c; ++ci) {
            const float* xi = x + ((size_t(ni) * c + ci) * h) * w;
            const float* wi = weight + size_t(ci) * kh * kw;
            const float* go = gout + ((size_t(ni) * c + ci) * ho) * wo;
            float* gxi = gx ? gx + ((size_t(ni) * c + ci) * h) * w : nullptr;
            double* gwi = gw ? gwacc.data() + size_t(ci) * kh * kw : nullptr;
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    const double g = go[oy * wo + ox];
                    if (g == 0.0) continue;
                    for (int fy = 0; fy < kh; ++fy) {
                        const int iy = oy * stride + fy - pad;
                        if (iy < 0 || iy >= h) continue;
                        for (int fx = 0; fx < kw; ++fx) {
                            const int ix = ox * stride + fx - pad;
                            if (ix < 0 || ix >= w) continue;
                            if (gxi) gxi[iy * w + ix] += float(g * double(wi[fy * kw + fx]));
                            if (gwi) gwi[fy * kw + fx] += g * double(xi[iy * w + ix]);
                        }
                    }
                }
        }
    }
    if (gw)
        for (size_t i = 0; i < gwacc.size(); ++i) gw[i] += float(gwacc[i]);
}

}  // namespace csisense::kernels
