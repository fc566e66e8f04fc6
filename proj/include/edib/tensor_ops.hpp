#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "edib/tensor.hpp"

// Compute kernels. All kernels are serial with a fixed accumulation order
// per output site, so results are bitwise reproducible run to run. Inner
// loops are written so the compiler can vectorize them without relaxing
// float semantics (independent lanes, no cross-iteration reductions).

namespace edib::ops {

inline float sigmoid_stable(float x) {
    if (x >= 0.0f) {
        return 1.0f / (1.0f + std::exp(-x));
    }
    float e = std::exp(x);
    return e / (1.0f + e);
}

inline float silu_scalar(float x) { return x * sigmoid_stable(x); }

// Dot product with eight independent accumulator lanes. The lane loop has no
// cross-iteration dependency, so it vectorizes under strict float rules, and
// the combine order is fixed, keeping results deterministic.
inline float dot_f(const float* a, const float* b, int n) {
    float lane[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    int i = 0;
    for (; i + 8 <= n; i += 8)
        for (int l = 0; l < 8; ++l) lane[l] += a[i + l] * b[i + l];
    float tail = 0.0f;
    for (; i < n; ++i) tail += a[i] * b[i];
    return ((lane[0] + lane[1]) + (lane[2] + lane[3])) +
           ((lane[4] + lane[5]) + (lane[6] + lane[7])) + tail;
}

inline float dot_strided(const float* a, int stride_a, const float* b, int n) {
    float lane[4] = {0, 0, 0, 0};
    int i = 0;
    for (; i + 4 <= n; i += 4)
        for (int l = 0; l < 4; ++l) lane[l] += a[(i + l) * stride_a] * b[i + l];
    float tail = 0.0f;
    for (; i < n; ++i) tail += a[i * stride_a] * b[i];
    return (lane[0] + lane[1]) + (lane[2] + lane[3]) + tail;
}

struct ConvGeom {
    int oh = 0, ow = 0;
};

inline ConvGeom conv_out_dims(const Shape& x, const Shape& w, int stride, int pad) {
    if (stride < 1) throw shape_error("conv stride must be >= 1");
    if (pad < 0) throw shape_error("conv padding must be >= 0");
    if (x.c != w.c)
        throw shape_error("conv input channels " + std::to_string(x.c) +
                          " do not match weight channels " + std::to_string(w.c));
    int oh = (x.h + 2 * pad - w.h) / stride + 1;
    int ow = (x.w + 2 * pad - w.w) / stride + 1;
    if (x.h + 2 * pad < w.h || x.w + 2 * pad < w.w || oh < 1 || ow < 1)
        throw shape_error("conv kernel " + w.str() + " does not fit input " + x.str());
    return {oh, ow};
}

// Valid output-column range for a given kernel column: all ox with
// 0 <= ox*stride + kx - pad < W. Columns outside contribute zero (implicit
// zero padding) and are simply skipped.
inline void conv_col_range(int kx, int pad, int stride, int in_w, int out_w, int& lo, int& hi) {
    int off = kx - pad;
    lo = off < 0 ? (-off + stride - 1) / stride : 0;
    long long top = (long long)in_w - 1 - off;
    hi = top < 0 ? 0 : (int)std::min<long long>(out_w, top / stride + 1);
    if (hi < lo) hi = lo;
}

// Cross-correlation with implicit zero padding. Weight layout is
// (out_channels, in_channels, kh, kw) carried in Shape{n,c,h,w}. Each output
// row accumulates in 64-bit with a fixed term order (ci-major, then ky, kx)
// and is stored back as 32-bit, so results are both deterministic and within
// one final rounding of the exact sum.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride,
                     int pad) {
    const Shape xs = x.shape(), ws = w.shape();
    ConvGeom g = conv_out_dims(xs, ws, stride, pad);
    if (bias) {
        Shape bs = bias->shape();
        if (bs.n != 1 || bs.c != ws.n || bs.h != 1 || bs.w != 1)
            throw shape_error("conv bias must be shaped 1x" + std::to_string(ws.n) +
                              "x1x1, got " + bs.str());
    }

    Tensor out({xs.n, ws.n, g.oh, g.ow});
    float* od = out.mutable_data();
    const float* xd = x.data();
    const float* wd = w.data();
    const float* bd = bias ? bias->data() : nullptr;
    std::vector<double> acc(g.ow);

    for (int n = 0; n < xs.n; ++n) {
        for (int co = 0; co < ws.n; ++co) {
            const double bval = bd ? (double)bd[co] : 0.0;
            for (int oy = 0; oy < g.oh; ++oy) {
                for (int ox = 0; ox < g.ow; ++ox) acc[ox] = bval;
                for (int ci = 0; ci < ws.c; ++ci) {
                    for (int ky = 0; ky < ws.h; ++ky) {
                        int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= xs.h) continue;
                        const float* xrow = xd + ((1LL * n * xs.c + ci) * xs.h + iy) * xs.w;
                        const float* wrow = wd + ((1LL * co * ws.c + ci) * ws.h + ky) * ws.w;
                        for (int kx = 0; kx < ws.w; ++kx) {
                            int lo, hi;
                            conv_col_range(kx, pad, stride, xs.w, g.ow, lo, hi);
                            const double wv = wrow[kx];
                            const float* xr = xrow + kx - pad;
                            if (stride == 1) {
                                for (int ox = lo; ox < hi; ++ox) acc[ox] += wv * xr[ox];
                            } else {
                                for (int ox = lo; ox < hi; ++ox)
                                    acc[ox] += wv * xr[ox * stride];
                            }
                        }
                    }
                }
                float* orow = od + ((1LL * n * ws.n + co) * g.oh + oy) * g.ow;
                for (int ox = 0; ox < g.ow; ++ox) orow[ox] = (float)acc[ox];
            }
        }
    }
    require_finite(out, "conv2d");
    return out;
}

// Gradient of conv2d w.r.t. its input (transposed convolution with the same
// weights). dx[iy][ix] accumulates w[co,ci,ky,kx] * gout[oy][ox] over all
// sites that read x[iy][ix] in the forward pass.
inline Tensor conv2d_grad_input(const Tensor& gout, const Tensor& w, const Shape& in_shape,
                                int stride, int pad) {
    const Shape ws = w.shape(), gs = gout.shape();
    Tensor dx(in_shape);
    float* dd = dx.mutable_data();
    const float* gd = gout.data();
    const float* wd = w.data();

    for (int n = 0; n < in_shape.n; ++n) {
        for (int ci = 0; ci < in_shape.c; ++ci) {
            for (int iy = 0; iy < in_shape.h; ++iy) {
                float* drow = dd + ((1LL * n * in_shape.c + ci) * in_shape.h + iy) * in_shape.w;
                for (int co = 0; co < ws.n; ++co) {
                    for (int ky = 0; ky < ws.h; ++ky) {
                        int t = iy + pad - ky;
                        if (t < 0 || t % stride) continue;
                        int oy = t / stride;
                        if (oy >= gs.h) continue;
                        const float* grow = gd + ((1LL * n * ws.n + co) * gs.h + oy) * gs.w;
                        const float* wrow = wd + ((1LL * co * ws.c + ci) * ws.h + ky) * ws.w;
                        for (int kx = 0; kx < ws.w; ++kx) {
                            int lo, hi;
                            conv_col_range(kx, pad, stride, in_shape.w, gs.w, lo, hi);
                            const float wv = wrow[kx];
                            if (stride == 1) {
                                float* dr = drow + kx - pad;
                                for (int ox = lo; ox < hi; ++ox) dr[ox] += wv * grow[ox];
                            } else {
                                float* dr = drow + kx - pad;
                                for (int ox = lo; ox < hi; ++ox)
                                    dr[ox * stride] += wv * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    require_finite(dx, "conv2d_grad_input");
    return dx;
}

inline Tensor conv2d_grad_weight(const Tensor& gout, const Tensor& x, const Shape& w_shape,
                                 int stride, int pad) {
    const Shape xs = x.shape(), gs = gout.shape();
    Tensor dw(w_shape);
    float* dd = dw.mutable_data();
    const float* gd = gout.data();
    const float* xd = x.data();

    for (int co = 0; co < w_shape.n; ++co) {
        for (int ci = 0; ci < w_shape.c; ++ci) {
            for (int ky = 0; ky < w_shape.h; ++ky) {
                for (int kx = 0; kx < w_shape.w; ++kx) {
                    int lo, hi;
                    conv_col_range(kx, pad, stride, xs.w, gs.w, lo, hi);
                    double acc = 0.0;
                    for (int n = 0; n < xs.n; ++n) {
                        for (int oy = 0; oy < gs.h; ++oy) {
                            int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= xs.h) continue;
                            const float* grow =
                                gd + ((1LL * n * gs.c + co) * gs.h + oy) * gs.w + lo;
                            const float* xrow =
                                xd + ((1LL * n * xs.c + ci) * xs.h + iy) * xs.w + lo * stride +
                                kx - pad;
                            if (stride == 1)
                                acc += dot_f(xrow, grow, hi - lo);
                            else
                                acc += dot_strided(xrow, stride, grow, hi - lo);
                        }
                    }
                    dd[((1LL * co * w_shape.c + ci) * w_shape.h + ky) * w_shape.w + kx] =
                        (float)acc;
                }
            }
        }
    }
    require_finite(dw, "conv2d_grad_weight");
    return dw;
}

inline Tensor conv2d_grad_bias(const Tensor& gout) {
    const Shape gs = gout.shape();
    Tensor db({1, gs.c, 1, 1});
    float* dd = db.mutable_data();
    const float* gd = gout.data();
    for (int c = 0; c < gs.c; ++c) {
        double acc = 0.0;
        for (int n = 0; n < gs.n; ++n) {
            const float* plane = gd + (1LL * n * gs.c + c) * gs.h * gs.w;
            for (long long i = 0; i < 1LL * gs.h * gs.w; ++i) acc += plane[i];
        }
        dd[c] = (float)acc;
    }
    return db;
}

// ---- elementwise ----

template <class F>
inline Tensor map(const Tensor& x, F f) {
    Tensor out(x.shape());
    float* od = out.mutable_data();
    const float* xd = x.data();
    long long n = x.numel();
    for (long long i = 0; i < n; ++i) od[i] = f(xd[i]);
    return out;
}

template <class F>
inline Tensor zip(const Tensor& a, const Tensor& b, F f, const char* what) {
    if (!(a.shape() == b.shape()))
        throw shape_error(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                          b.shape().str());
    Tensor out(a.shape());
    float* od = out.mutable_data();
    const float* ad = a.data();
    const float* bd = b.data();
    long long n = a.numel();
    for (long long i = 0; i < n; ++i) od[i] = f(ad[i], bd[i]);
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    return zip(a, b, [](float x, float y) { return x + y; }, "add");
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
    return zip(a, b, [](float x, float y) { return x - y; }, "sub");
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
    return zip(a, b, [](float x, float y) { return x * y; }, "mul");
}
inline Tensor affine(const Tensor& x, float scale, float shift) {
    return map(x, [=](float v) { return scale * v + shift; });
}
inline Tensor silu(const Tensor& x) {
    return map(x, silu_scalar);
}
inline Tensor sigmoid(const Tensor& x) {
    return map(x, sigmoid_stable);
}
inline Tensor abs_t(const Tensor& x) {
    return map(x, [](float v) { return std::fabs(v); });
}

// ---- channel plumbing ----

inline Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw shape_error("concat_channels: no inputs");
    Shape s0 = parts[0].shape();
    int ctot = 0;
    for (const Tensor& p : parts) {
        Shape s = p.shape();
        if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
            throw shape_error("concat_channels: incompatible shapes " + s0.str() + " vs " +
                              s.str());
        ctot += s.c;
    }
    Tensor out({s0.n, ctot, s0.h, s0.w});
    float* od = out.mutable_data();
    long long plane = 1LL * s0.h * s0.w;
    for (int n = 0; n < s0.n; ++n) {
        long long coff = 0;
        for (const Tensor& p : parts) {
            const Shape ps = p.shape();
            const float* pd = p.data() + 1LL * n * ps.c * plane;
            std::copy(pd, pd + 1LL * ps.c * plane, od + (1LL * n * ctot + coff) * plane);
            coff += ps.c;
        }
    }
    return out;
}

inline Tensor concat_batch(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw shape_error("concat_batch: no inputs");
    Shape s0 = parts[0].shape();
    int ntot = 0;
    for (const Tensor& p : parts) {
        Shape s = p.shape();
        if (s.c != s0.c || s.h != s0.h || s.w != s0.w)
            throw shape_error("concat_batch: incompatible shapes " + s0.str() + " vs " +
                              s.str());
        ntot += s.n;
    }
    Tensor out({ntot, s0.c, s0.h, s0.w});
    float* od = out.mutable_data();
    long long sample = 1LL * s0.c * s0.h * s0.w;
    long long noff = 0;
    for (const Tensor& p : parts) {
        const long long count = 1LL * p.shape().n * sample;
        std::copy(p.data(), p.data() + count, od + noff * sample);
        noff += p.shape().n;
    }
    return out;
}

inline Tensor slice_channels(const Tensor& x, int c0, int c1) {
    const Shape s = x.shape();
    if (c0 < 0 || c1 > s.c || c0 >= c1)
        throw shape_error("slice_channels: range [" + std::to_string(c0) + "," +
                          std::to_string(c1) + ") invalid for " + s.str());
    Tensor out({s.n, c1 - c0, s.h, s.w});
    float* od = out.mutable_data();
    long long plane = 1LL * s.h * s.w;
    for (int n = 0; n < s.n; ++n) {
        const float* src = x.data() + (1LL * n * s.c + c0) * plane;
        std::copy(src, src + 1LL * (c1 - c0) * plane, od + 1LL * n * (c1 - c0) * plane);
    }
    return out;
}

// Scatter a channel slice gradient back into a zero tensor of the full shape.
inline Tensor pad_channels_into(const Tensor& g, int c_total, int c0) {
    const Shape s = g.shape();
    Tensor out({s.n, c_total, s.h, s.w});
    float* od = out.mutable_data();
    long long plane = 1LL * s.h * s.w;
    for (int n = 0; n < s.n; ++n) {
        const float* src = g.data() + 1LL * n * s.c * plane;
        std::copy(src, src + 1LL * s.c * plane, od + (1LL * n * c_total + c0) * plane);
    }
    return out;
}

// ---- pooling / broadcast ----

inline Tensor global_avg_pool(const Tensor& x) {
    const Shape s = x.shape();
    Tensor out({s.n, s.c, 1, 1});
    float* od = out.mutable_data();
    const double inv = 1.0 / ((double)s.h * s.w);
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const float* plane = x.data() + (1LL * n * s.c + c) * s.h * s.w;
            double acc = 0.0;
            for (long long i = 0; i < 1LL * s.h * s.w; ++i) acc += plane[i];
            od[1LL * n * s.c + c] = (float)(acc * inv);
        }
    }
    require_finite(out, "global_avg_pool");
    return out;
}

// Broadcast multiply by per-(n,c) scalars shaped (n,c,1,1).
inline Tensor mul_channels(const Tensor& x, const Tensor& scale) {
    const Shape s = x.shape(), ss = scale.shape();
    if (ss.n != s.n || ss.c != s.c || ss.h != 1 || ss.w != 1)
        throw shape_error("mul_channels: scale " + ss.str() + " does not broadcast over " +
                          s.str());
    Tensor out(s);
    float* od = out.mutable_data();
    const float* xd = x.data();
    const float* sd = scale.data();
    long long plane = 1LL * s.h * s.w;
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            const float v = sd[1LL * n * s.c + c];
            const float* src = xd + (1LL * n * s.c + c) * plane;
            float* dst = od + (1LL * n * s.c + c) * plane;
            for (long long i = 0; i < plane; ++i) dst[i] = src[i] * v;
        }
    }
    return out;
}

// Reduction partner of mul_channels: sum g*x over spatial dims to (n,c,1,1).
inline Tensor sum_spatial_product(const Tensor& g, const Tensor& x) {
    const Shape s = x.shape();
    if (!(g.shape() == s)) throw shape_error("sum_spatial_product: shape mismatch");
    Tensor out({s.n, s.c, 1, 1});
    float* od = out.mutable_data();
    long long plane = 1LL * s.h * s.w;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const float* gp = g.data() + (1LL * n * s.c + c) * plane;
            const float* xp = x.data() + (1LL * n * s.c + c) * plane;
            double acc = 0.0;
            for (long long i = 0; i < plane; ++i) acc += (double)gp[i] * xp[i];
            od[1LL * n * s.c + c] = (float)acc;
        }
    return out;
}

// ---- resampling ----

inline Tensor upsample_nearest2x(const Tensor& x) {
    const Shape s = x.shape();
    Tensor out({s.n, s.c, s.h * 2, s.w * 2});
    float* od = out.mutable_data();
    const float* xd = x.data();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y) {
                const float* src = xd + ((1LL * n * s.c + c) * s.h + y) * s.w;
                float* d0 = od + ((1LL * n * s.c + c) * s.h * 2 + 2 * y) * (s.w * 2);
                float* d1 = d0 + s.w * 2;
                for (int xcol = 0; xcol < s.w; ++xcol) {
                    d0[2 * xcol] = d0[2 * xcol + 1] = src[xcol];
                    d1[2 * xcol] = d1[2 * xcol + 1] = src[xcol];
                }
            }
    return out;
}

inline Tensor upsample_nearest2x_backward(const Tensor& g) {
    const Shape s = g.shape();
    if (s.h % 2 || s.w % 2) throw shape_error("upsample backward needs even dims");
    Tensor out({s.n, s.c, s.h / 2, s.w / 2});
    float* od = out.mutable_data();
    const float* gd = g.data();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h / 2; ++y) {
                const float* g0 = gd + ((1LL * n * s.c + c) * s.h + 2 * y) * s.w;
                const float* g1 = g0 + s.w;
                float* dst = od + ((1LL * n * s.c + c) * (s.h / 2) + y) * (s.w / 2);
                for (int xcol = 0; xcol < s.w / 2; ++xcol)
                    dst[xcol] = (g0[2 * xcol] + g0[2 * xcol + 1]) +
                                (g1[2 * xcol] + g1[2 * xcol + 1]);
            }
    return out;
}

struct BilinearTap {
    int i0, i1;
    float w0, w1;
};

inline std::vector<BilinearTap> bilinear_taps(int in_size, int out_size) {
    std::vector<BilinearTap> taps(out_size);
    const double scale = (double)in_size / out_size;
    for (int o = 0; o < out_size; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        double f = std::floor(src);
        int i0 = (int)f;
        float w1 = (float)(src - f);
        int i1 = i0 + 1;
        if (i0 < 0) i0 = 0;
        if (i1 < 0) i1 = 0;
        if (i0 > in_size - 1) i0 = in_size - 1;
        if (i1 > in_size - 1) i1 = in_size - 1;
        taps[o] = {i0, i1, 1.0f - w1, w1};
    }
    return taps;
}

// Bilinear resize with half-pixel centers (the usual align_corners=false
// convention), edges clamped.
inline Tensor resize_bilinear(const Tensor& x, int oh, int ow) {
    const Shape s = x.shape();
    if (oh < 1 || ow < 1) throw shape_error("resize_bilinear: bad output size");
    if (s.h == oh && s.w == ow) return x;
    auto ty = bilinear_taps(s.h, oh);
    auto tx = bilinear_taps(s.w, ow);
    Tensor out({s.n, s.c, oh, ow});
    float* od = out.mutable_data();
    const float* xd = x.data();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const float* plane = xd + (1LL * n * s.c + c) * s.h * s.w;
            float* dst = od + (1LL * n * s.c + c) * oh * ow;
            for (int oy = 0; oy < oh; ++oy) {
                const float* r0 = plane + 1LL * ty[oy].i0 * s.w;
                const float* r1 = plane + 1LL * ty[oy].i1 * s.w;
                const float wy0 = ty[oy].w0, wy1 = ty[oy].w1;
                float* drow = dst + 1LL * oy * ow;
                for (int ox = 0; ox < ow; ++ox) {
                    const BilinearTap& t = tx[ox];
                    float top = r0[t.i0] * t.w0 + r0[t.i1] * t.w1;
                    float bot = r1[t.i0] * t.w0 + r1[t.i1] * t.w1;
                    drow[ox] = top * wy0 + bot * wy1;
                }
            }
        }
    return out;
}

inline Tensor resize_bilinear_backward(const Tensor& g, int in_h, int in_w) {
    const Shape s = g.shape();
    auto ty = bilinear_taps(in_h, s.h);
    auto tx = bilinear_taps(in_w, s.w);
    Tensor out({s.n, s.c, in_h, in_w});
    float* od = out.mutable_data();
    const float* gd = g.data();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            float* dst = od + (1LL * n * s.c + c) * in_h * in_w;
            const float* gp = gd + (1LL * n * s.c + c) * s.h * s.w;
            for (int oy = 0; oy < s.h; ++oy)
                for (int ox = 0; ox < s.w; ++ox) {
                    const float gv = gp[1LL * oy * s.w + ox];
                    const BilinearTap& a = ty[oy];
                    const BilinearTap& b = tx[ox];
                    dst[1LL * a.i0 * in_w + b.i0] += gv * a.w0 * b.w0;
                    dst[1LL * a.i0 * in_w + b.i1] += gv * a.w0 * b.w1;
                    dst[1LL * a.i1 * in_w + b.i0] += gv * a.w1 * b.w0;
                    dst[1LL * a.i1 * in_w + b.i1] += gv * a.w1 * b.w1;
                }
        }
    return out;
}

// ---- normalization ----

struct ChannelNormStats {
    Tensor y;
    std::vector<float> mean;     // per (n,c)
    std::vector<float> inv_std;  // per (n,c)
};

// Per-(sample, channel) normalization over spatial positions followed by a
// learned per-channel scale and shift (gamma/beta shaped 1xCx1x1).
inline ChannelNormStats channel_norm_fwd(const Tensor& x, const Tensor& gamma,
                                         const Tensor& beta, float eps = 1e-5f) {
    const Shape s = x.shape();
    const Shape gs = gamma.shape(), bs = beta.shape();
    if (gs.n != 1 || gs.c != s.c || gs.h != 1 || gs.w != 1 || !(gs == bs))
        throw shape_error("channel_norm: gamma/beta must be 1x" + std::to_string(s.c) +
                          "x1x1");
    ChannelNormStats st;
    st.y = Tensor(s);
    st.mean.resize(1LL * s.n * s.c);
    st.inv_std.resize(1LL * s.n * s.c);
    float* od = st.y.mutable_data();
    const float* xd = x.data();
    const float* gd = gamma.data();
    const float* bd = beta.data();
    const long long plane = 1LL * s.h * s.w;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const float* p = xd + (1LL * n * s.c + c) * plane;
            double sum = 0.0, sq = 0.0;
            for (long long i = 0; i < plane; ++i) {
                sum += p[i];
                sq += (double)p[i] * p[i];
            }
            double mean = sum / plane;
            double var = sq / plane - mean * mean;
            if (var < 0.0) var = 0.0;
            float inv = (float)(1.0 / std::sqrt(var + eps));
            st.mean[1LL * n * s.c + c] = (float)mean;
            st.inv_std[1LL * n * s.c + c] = inv;
            float* dst = od + (1LL * n * s.c + c) * plane;
            const float m = (float)mean, gsc = gd[c], bsh = bd[c];
            for (long long i = 0; i < plane; ++i) dst[i] = (p[i] - m) * inv * gsc + bsh;
        }
    require_finite(st.y, "channel_norm");
    return st;
}

// ---- reductions ----

inline double sum_all_d(const Tensor& x) {
    double acc = 0.0;
    const float* p = x.data();
    long long n = x.numel();
    for (long long i = 0; i < n; ++i) acc += p[i];
    return acc;
}

inline Tensor sum_all(const Tensor& x) {
    Tensor out = Tensor::scalar((float)sum_all_d(x));
    require_finite(out, "sum_all");
    return out;
}

inline Tensor mean_all(const Tensor& x) {
    Tensor out = Tensor::scalar((float)(sum_all_d(x) / x.numel()));
    require_finite(out, "mean_all");
    return out;
}

// ---- geometry helpers ----

inline Tensor crop(const Tensor& x, int y0, int x0, int h, int w) {
    const Shape s = x.shape();
    if (y0 < 0 || x0 < 0 || h < 1 || w < 1 || y0 + h > s.h || x0 + w > s.w)
        throw shape_error("crop: window " + std::to_string(h) + "x" + std::to_string(w) +
                          "+" + std::to_string(y0) + "+" + std::to_string(x0) +
                          " outside " + s.str());
    Tensor out({s.n, s.c, h, w});
    float* od = out.mutable_data();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < h; ++y) {
                const float* src = x.data() + ((1LL * n * s.c + c) * s.h + y0 + y) * s.w + x0;
                std::copy(src, src + w, od + ((1LL * n * s.c + c) * h + y) * w);
            }
    return out;
}

enum class PadMode { reflect, replicate };

inline Tensor pad_edges(const Tensor& x, int top, int bottom, int left, int right,
                        PadMode mode) {
    const Shape s = x.shape();
    if (top < 0 || bottom < 0 || left < 0 || right < 0) throw shape_error("pad_edges: negative pad");
    if (mode == PadMode::reflect && (top >= s.h || bottom >= s.h || left >= s.w || right >= s.w))
        throw shape_error("pad_edges: reflect pad wider than input");
    int oh = s.h + top + bottom, ow = s.w + left + right;
    auto mirror = [](int i, int size, PadMode m) {
        if (i < 0) return m == PadMode::reflect ? -i : 0;
        if (i >= size) return m == PadMode::reflect ? 2 * size - 2 - i : size - 1;
        return i;
    };
    Tensor out({s.n, s.c, oh, ow});
    float* od = out.mutable_data();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < oh; ++y) {
                int sy = mirror(y - top, s.h, mode);
                const float* src = x.data() + ((1LL * n * s.c + c) * s.h + sy) * s.w;
                float* dst = od + ((1LL * n * s.c + c) * oh + y) * ow;
                for (int xcol = 0; xcol < ow; ++xcol)
                    dst[xcol] = src[mirror(xcol - left, s.w, mode)];
            }
    return out;
}

}  // namespace edib::ops
