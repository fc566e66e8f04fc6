#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "edib/tensor.hpp"

// Two-tap separable 2-D discrete wavelet transform. The vertical pass runs
// first, then the horizontal pass; a sub-band name's first letter is the
// vertical filter, the second the horizontal one (LH = vertical low,
// horizontal high). Decimation keeps even phases; odd spatial dims are
// rejected rather than padded.

namespace edib::wav {

struct WaveletBasis {
    std::string name;
    std::array<float, 2> dec_lo{}, dec_hi{};  // analysis taps
    std::array<float, 2> rec_lo{}, rec_hi{};  // synthesis taps

    // Synthesis taps come from inverting the 2x2 analysis matrix
    // [[lo0, lo1], [hi0, hi1]], so perfect reconstruction holds for any
    // invertible tap pair, orthonormal or not.
    static WaveletBasis from_taps(std::string name, std::array<float, 2> lo,
                                  std::array<float, 2> hi) {
        double det = (double)lo[0] * hi[1] - (double)lo[1] * hi[0];
        if (det == 0.0) throw data_error("wavelet basis '" + name + "' is singular");
        WaveletBasis b;
        b.name = std::move(name);
        b.dec_lo = lo;
        b.dec_hi = hi;
        b.rec_lo = {(float)(hi[1] / det), (float)(-hi[0] / det)};
        b.rec_hi = {(float)(-lo[1] / det), (float)(lo[0] / det)};
        return b;
    }

    static WaveletBasis make(std::string_view name) {
        const float r = 0.70710678118654752f;  // 1/sqrt(2)
        if (name == "haar") return from_taps("haar", {r, r}, {r, -r});
        // The order-1 biorthogonal pairs coincide numerically; they differ
        // from haar only in the sign convention of the detail taps.
        if (name == "bior1.1") return from_taps("bior1.1", {r, r}, {-r, r});
        if (name == "rbio1.1") return from_taps("rbio1.1", {r, r}, {-r, r});
        throw data_error("unknown wavelet basis: " + std::string(name));
    }
};

namespace detail {

inline void require_even(const Shape& s) {
    if (s.h % 2 || s.w % 2)
        throw shape_error("dwt requires even spatial dims, got " + s.str());
    if (s.h < 2 || s.w < 2)
        throw shape_error("dwt requires spatial dims >= 2, got " + s.str());
}

}  // namespace detail

// Forward transform with explicit taps, all four sub-bands stacked along the
// channel axis as [LL | LH | HL | HH], each block c channels wide. Keeping
// one output tensor makes the transform a single node for autodiff.
inline Tensor dwt2_stacked_taps(const Tensor& x, const std::array<float, 2>& lo,
                                const std::array<float, 2>& hi) {
    const Shape s = x.shape();
    detail::require_even(s);
    const int hh = s.h / 2, hw = s.w / 2;
    Tensor out({s.n, 4 * s.c, hh, hw});
    float* od = out.mutable_data();
    // Intermediate rows are kept in 64-bit so cascaded levels stay within a
    // single 32-bit rounding of the exact transform.
    std::vector<double> vlo(1LL * hh * s.w), vhi(1LL * hh * s.w);
    const double l0 = lo[0], l1 = lo[1], h0 = hi[0], h1 = hi[1];
    const long long oplane = 1LL * hh * hw;

    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const float* plane = x.data() + (1LL * n * s.c + c) * s.h * s.w;
            for (int k = 0; k < hh; ++k) {
                const float* r0 = plane + 1LL * (2 * k) * s.w;
                const float* r1 = r0 + s.w;
                double* lrow = vlo.data() + 1LL * k * s.w;
                double* hrow = vhi.data() + 1LL * k * s.w;
                for (int j = 0; j < s.w; ++j) {
                    lrow[j] = l0 * r0[j] + l1 * r1[j];
                    hrow[j] = h0 * r0[j] + h1 * r1[j];
                }
            }
            float* ll = od + ((1LL * n * 4 + 0) * s.c + c) * oplane;
            float* lh = od + ((1LL * n * 4 + 1) * s.c + c) * oplane;
            float* hl = od + ((1LL * n * 4 + 2) * s.c + c) * oplane;
            float* hhb = od + ((1LL * n * 4 + 3) * s.c + c) * oplane;
            for (int k = 0; k < hh; ++k) {
                const double* lrow = vlo.data() + 1LL * k * s.w;
                const double* hrow = vhi.data() + 1LL * k * s.w;
                for (int j = 0; j < hw; ++j) {
                    ll[1LL * k * hw + j] = (float)(l0 * lrow[2 * j] + l1 * lrow[2 * j + 1]);
                    lh[1LL * k * hw + j] = (float)(h0 * lrow[2 * j] + h1 * lrow[2 * j + 1]);
                    hl[1LL * k * hw + j] = (float)(l0 * hrow[2 * j] + l1 * hrow[2 * j + 1]);
                    hhb[1LL * k * hw + j] = (float)(h0 * hrow[2 * j] + h1 * hrow[2 * j + 1]);
                }
            }
        }
    return out;
}

// Inverse of dwt2_stacked_taps. With taps set to a basis' synthesis pair it
// reconstructs the signal; with the analysis pair it is the exact adjoint of
// the forward transform, which is how the backward pass uses it.
inline Tensor idwt2_stacked_taps(const Tensor& sb, const std::array<float, 2>& lo,
                                 const std::array<float, 2>& hi) {
    const Shape s = sb.shape();
    if (s.c % 4) throw shape_error("stacked sub-bands need 4k channels, got " + s.str());
    const int c = s.c / 4;
    const int oh = s.h * 2, ow = s.w * 2;
    Tensor out({s.n, c, oh, ow});
    float* od = out.mutable_data();
    std::vector<double> vlo(1LL * s.h * ow), vhi(1LL * s.h * ow);
    const double l0 = lo[0], l1 = lo[1], h0 = hi[0], h1 = hi[1];
    const long long iplane = 1LL * s.h * s.w;

    for (int n = 0; n < s.n; ++n)
        for (int ch = 0; ch < c; ++ch) {
            const float* ll = sb.data() + ((1LL * n * 4 + 0) * c + ch) * iplane;
            const float* lh = sb.data() + ((1LL * n * 4 + 1) * c + ch) * iplane;
            const float* hl = sb.data() + ((1LL * n * 4 + 2) * c + ch) * iplane;
            const float* hh = sb.data() + ((1LL * n * 4 + 3) * c + ch) * iplane;
            for (int k = 0; k < s.h; ++k) {
                double* lrow = vlo.data() + 1LL * k * ow;
                double* hrow = vhi.data() + 1LL * k * ow;
                for (int j = 0; j < s.w; ++j) {
                    const double a = ll[1LL * k * s.w + j], b = lh[1LL * k * s.w + j];
                    const double d = hl[1LL * k * s.w + j], e = hh[1LL * k * s.w + j];
                    lrow[2 * j] = l0 * a + h0 * b;
                    lrow[2 * j + 1] = l1 * a + h1 * b;
                    hrow[2 * j] = l0 * d + h0 * e;
                    hrow[2 * j + 1] = l1 * d + h1 * e;
                }
            }
            float* plane = od + (1LL * n * c + ch) * oh * ow;
            for (int k = 0; k < s.h; ++k) {
                const double* lrow = vlo.data() + 1LL * k * ow;
                const double* hrow = vhi.data() + 1LL * k * ow;
                float* r0 = plane + 1LL * (2 * k) * ow;
                float* r1 = r0 + ow;
                for (int j = 0; j < ow; ++j) {
                    r0[j] = (float)(l0 * lrow[j] + h0 * hrow[j]);
                    r1[j] = (float)(l1 * lrow[j] + h1 * hrow[j]);
                }
            }
        }
    return out;
}

inline Tensor dwt2_stacked(const Tensor& x, const WaveletBasis& b) {
    return dwt2_stacked_taps(x, b.dec_lo, b.dec_hi);
}
inline Tensor idwt2_stacked(const Tensor& sb, const WaveletBasis& b) {
    return idwt2_stacked_taps(sb, b.rec_lo, b.rec_hi);
}

struct SubbandSet {
    Tensor ll, lh, hl, hh;
};

inline SubbandSet split_stacked(const Tensor& sb);
inline Tensor join_subbands(const SubbandSet& s);

inline SubbandSet dwt2(const Tensor& x, const WaveletBasis& b) {
    return split_stacked(dwt2_stacked(x, b));
}

inline Tensor idwt2(const SubbandSet& s, const WaveletBasis& b) {
    return idwt2_stacked(join_subbands(s), b);
}

// Multi-level pyramid: details[k] holds the (LH, HL, HH) bands of level k+1,
// top_ll is the approximation after the last level.
struct WaveletPyramid {
    Tensor top_ll;
    std::vector<std::array<Tensor, 3>> details;
    int levels() const { return (int)details.size(); }
};

inline WaveletPyramid wavelet_decompose(const Tensor& x, int levels, const WaveletBasis& b) {
    if (levels < 1 || levels > 3)
        throw shape_error("wavelet_decompose: levels must be in {1, 2, 3}, got " +
                          std::to_string(levels));
    WaveletPyramid p;
    Tensor cur = x;
    for (int k = 0; k < levels; ++k) {
        SubbandSet s = dwt2(cur, b);
        p.details.push_back({s.lh, s.hl, s.hh});
        cur = s.ll;
    }
    p.top_ll = cur;
    return p;
}

inline Tensor wavelet_reconstruct(const WaveletPyramid& p, const WaveletBasis& b) {
    Tensor cur = p.top_ll;
    for (int k = p.levels() - 1; k >= 0; --k)
        cur = idwt2({cur, p.details[k][0], p.details[k][1], p.details[k][2]}, b);
    return cur;
}

}  // namespace edib::wav

#include "edib/tensor_ops.hpp"

namespace edib::wav {

inline SubbandSet split_stacked(const Tensor& sb) {
    const int c = sb.shape().c / 4;
    return {ops::slice_channels(sb, 0, c), ops::slice_channels(sb, c, 2 * c),
            ops::slice_channels(sb, 2 * c, 3 * c), ops::slice_channels(sb, 3 * c, 4 * c)};
}

inline Tensor join_subbands(const SubbandSet& s) {
    return ops::concat_channels({s.ll, s.lh, s.hl, s.hh});
}

}  // namespace edib::wav
