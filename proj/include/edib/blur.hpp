#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "edib/tensor.hpp"
#include "edib/tensor_ops.hpp"

// Synthetic blur: true convolution of an image with a small normalized
// kernel, plus a bank abstraction for drawing kernels reproducibly.

namespace edib::blur {

struct BlurKernel {
    std::string name;
    int kh = 0, kw = 0;
    std::vector<float> taps;  // row-major, non-negative, unit sum

    float at(int y, int x) const { return taps[(size_t)y * kw + x]; }
};

struct KernelBank {
    std::vector<BlurKernel> kernels;
    int size() const { return (int)kernels.size(); }
};

namespace detail {

inline BlurKernel parse_kernel(std::istream& in, const std::string& name) {
    BlurKernel k;
    k.name = name;
    if (!(in >> k.kh >> k.kw))
        throw data_error("kernel '" + name + "': missing or malformed size header");
    if (k.kh < 1 || k.kw < 1 || k.kh > 41 || k.kw > 41)
        throw data_error("kernel '" + name + "': sides must be in [1, 41], got " +
                         std::to_string(k.kh) + "x" + std::to_string(k.kw));
    if (k.kh % 2 == 0 || k.kw % 2 == 0)
        throw data_error("kernel '" + name + "': sides must be odd, got " +
                         std::to_string(k.kh) + "x" + std::to_string(k.kw));
    k.taps.resize((size_t)k.kh * k.kw);
    double sum = 0.0;
    for (size_t i = 0; i < k.taps.size(); ++i) {
        double v;
        if (!(in >> v))
            throw data_error("kernel '" + name + "': expected " +
                             std::to_string(k.taps.size()) + " taps, got " + std::to_string(i));
        if (!std::isfinite(v) || v < 0.0)
            throw data_error("kernel '" + name + "': taps must be finite and >= 0");
        k.taps[i] = (float)v;
        sum += v;
    }
    std::string extra;
    if (in >> extra)
        throw data_error("kernel '" + name + "': trailing content after taps");
    if (sum <= 0.0) throw data_error("kernel '" + name + "': taps sum to zero");
    for (float& t : k.taps) t = (float)((double)t / sum);
    return k;
}

}  // namespace detail

inline BlurKernel load_kernel(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open kernel file: " + path);
    return detail::parse_kernel(in, std::filesystem::path(path).stem().string());
}

// Kernels load in lexicographic filename order so bank indices are stable
// across runs and machines.
inline KernelBank load_kernel_bank(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw data_error("kernel bank path is not a directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    KernelBank bank;
    for (const auto& f : files) bank.kernels.push_back(load_kernel(f.string()));
    if (bank.kernels.empty()) throw data_error("kernel bank directory is empty: " + dir);
    return bank;
}

// True convolution (kernel flipped) per channel with replicate padding, so
// the output keeps the input's shape and a unit-sum kernel preserves flat
// regions exactly.
inline Tensor apply_blur(const Tensor& x, const BlurKernel& k) {
    const Shape s = x.shape();
    if (k.kh > s.h || k.kw > s.w)
        throw shape_error("blur kernel " + std::to_string(k.kh) + "x" + std::to_string(k.kw) +
                          " is larger than image " + s.str());
    const int ch = (k.kh - 1) / 2, cw = (k.kw - 1) / 2;
    Tensor xp = ops::pad_edges(x, ch, ch, cw, cw, ops::PadMode::replicate);
    const Shape ps = xp.shape();
    Tensor out(s);
    float* od = out.mutable_data();
    const float* pd = xp.data();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const float* plane = pd + (1LL * n * s.c + c) * ps.h * ps.w;
            float* oplane = od + (1LL * n * s.c + c) * s.h * s.w;
            for (int oy = 0; oy < s.h; ++oy)
                for (int ox = 0; ox < s.w; ++ox) {
                    double acc = 0.0;
                    for (int ky = 0; ky < k.kh; ++ky) {
                        const float* row =
                            plane + (1LL * oy + (k.kh - 1 - ky)) * ps.w + (k.kw - 1);
                        const float* tap = &k.taps[(size_t)ky * k.kw];
                        for (int kx = 0; kx < k.kw; ++kx)
                            acc += (double)tap[kx] * row[ox - kx];
                    }
                    oplane[(size_t)oy * s.w + ox] = (float)acc;
                }
        }
    require_finite(out, "apply_blur");
    return out;
}

struct BlurPair {
    Tensor blurred, sharp;
    std::string kernel_id;
    int kernel_index = -1;
};

// Seed in, pair out: the generator is owned by the call, so identical seeds
// give identical pairs and distinct seeds can run in parallel.
inline BlurPair make_pair(const Tensor& x, const KernelBank& bank, unsigned long long seed) {
    if (bank.kernels.empty()) throw data_error("make_pair: empty kernel bank");
    std::mt19937 rng((unsigned)(seed ^ (seed >> 32)));
    double u = (double)(rng() >> 8) * (1.0 / 16777216.0);
    int idx = std::min((int)bank.kernels.size() - 1, (int)(u * bank.kernels.size()));
    BlurPair p;
    p.sharp = x;
    p.blurred = apply_blur(x, bank.kernels[idx]);
    p.kernel_id = bank.kernels[idx].name;
    p.kernel_index = idx;
    return p;
}

}  // namespace edib::blur
