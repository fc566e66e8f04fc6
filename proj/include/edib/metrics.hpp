#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "edib/tensor.hpp"

namespace edib::metrics {

// 10*log10(peak^2 / MSE), +infinity when the images are identical.
inline double psnr(const Tensor& a, const Tensor& b, double peak) {
    if (!(a.shape() == b.shape()))
        throw shape_error("psnr: shape mismatch " + a.shape().str() + " vs " +
                          b.shape().str());
    if (!(peak > 0.0)) throw shape_error("psnr: peak must be > 0");
    double mse = 0.0;
    const float* ad = a.data();
    const float* bd = b.data();
    for (long long i = 0; i < a.numel(); ++i) {
        double d = (double)ad[i] - bd[i];
        mse += d * d;
    }
    mse /= (double)a.numel();
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {

inline std::array<double, 11> ssim_window() {
    std::array<double, 11> g{};
    double sum = 0.0;
    for (int k = 0; k < 11; ++k) {
        double d = k - 5;
        g[k] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        sum += g[k];
    }
    for (double& v : g) v /= sum;
    return g;
}

// Valid-mode separable Gaussian filter of one channel plane, in double.
inline std::vector<double> gauss_valid(const std::vector<double>& plane, int h, int w,
                                       const std::array<double, 11>& g) {
    const int ow = w - 10, oh = h - 10;
    std::vector<double> tmp((size_t)h * ow), out((size_t)oh * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < 11; ++k) s += g[k] * plane[(size_t)y * w + x + k];
            tmp[(size_t)y * ow + x] = s;
        }
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < 11; ++k) s += g[k] * tmp[(size_t)(y + k) * ow + x];
            out[(size_t)y * ow + x] = s;
        }
    return out;
}

}  // namespace detail

// Mean local SSIM over valid 11x11 Gaussian windows (sigma 1.5, K1=0.01,
// K2=0.03), computed per channel and averaged across channels and batch.
inline double ssim(const Tensor& a, const Tensor& b, double peak) {
    const Shape s = a.shape();
    if (!(s == b.shape()))
        throw shape_error("ssim: shape mismatch " + a.shape().str() + " vs " +
                          b.shape().str());
    if (!(peak > 0.0)) throw shape_error("ssim: peak must be > 0");
    if (s.h < 11 || s.w < 11)
        throw shape_error("ssim: spatial dims must be >= 11, got " + s.str());

    const auto g = detail::ssim_window();
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    const long long plane = 1LL * s.h * s.w;
    double total = 0.0;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const float* ap = a.data() + (1LL * n * s.c + c) * plane;
            const float* bp = b.data() + (1LL * n * s.c + c) * plane;
            std::vector<double> va(plane), vb(plane), vaa(plane), vbb(plane), vab(plane);
            for (long long i = 0; i < plane; ++i) {
                va[i] = ap[i];
                vb[i] = bp[i];
                vaa[i] = va[i] * va[i];
                vbb[i] = vb[i] * vb[i];
                vab[i] = va[i] * vb[i];
            }
            auto mu_a = detail::gauss_valid(va, s.h, s.w, g);
            auto mu_b = detail::gauss_valid(vb, s.h, s.w, g);
            auto m_aa = detail::gauss_valid(vaa, s.h, s.w, g);
            auto m_bb = detail::gauss_valid(vbb, s.h, s.w, g);
            auto m_ab = detail::gauss_valid(vab, s.h, s.w, g);
            double acc = 0.0;
            for (size_t i = 0; i < mu_a.size(); ++i) {
                const double ma = mu_a[i], mb = mu_b[i];
                const double sa = m_aa[i] - ma * ma;
                const double sb = m_bb[i] - mb * mb;
                const double sab = m_ab[i] - ma * mb;
                acc += ((2.0 * ma * mb + c1) * (2.0 * sab + c2)) /
                       ((ma * ma + mb * mb + c1) * (sa + sb + c2));
            }
            total += acc / (double)mu_a.size();
        }
    return total / ((double)s.n * s.c);
}

}  // namespace edib::metrics
