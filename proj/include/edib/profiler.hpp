#pragma once

#include <algorithm>
#include <chrono>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "edib/model.hpp"
#include "edib/tensor_ops.hpp"

// Static complexity accounting and wall-clock benchmarking. The counting
// walk mirrors model_forward stage by stage without allocating tensors, and
// draws every parameter count from the model's schema so the params total
// matches a real ParamStore exactly.

namespace edib::prof {

struct LayerEntry {
    std::string name;
    long long params = 0;
    long long flops = 0;
    Shape out{1, 1, 1, 1};
};

struct ComplexityReport {
    long long params = 0;
    long long macs = 0;   // convolution multiply-accumulates
    long long flops = 0;  // 2 per MAC plus the per-element costs below
    long long peak_activation_bytes = 0;
    std::vector<LayerEntry> per_layer;
};

// Per-element FLOP conventions for non-convolution ops:
//   silu 4, sigmoid 3, elementwise add/sub/mul 1, channel_norm 4,
//   global_avg_pool 1, channel-broadcast mul 1, dwt/idwt 6 per full-res
//   element, bilinear resize 7 per output element; pure data movement
//   (nearest upsample, concat, slice, pad, crop) counts 0.
namespace flop_cost {
constexpr long long silu = 4, sigmoid = 3, elementwise = 1, channel_norm = 4;
constexpr long long gap = 1, channel_mul = 1, wavelet = 6, bilinear = 7;
}  // namespace flop_cost

namespace detail {

struct Walk {
    std::map<std::string, long long> schema;  // tensor name -> element count
    ComplexityReport rep;
    long long live = 0, peak = 0;

    static long long numel(const Shape& s) { return s.numel(); }
    static long long bytes(const Shape& s) { return s.numel() * 4; }

    long long take(const std::string& name) {
        auto it = schema.find(name);
        if (it == schema.end())
            throw shape_error("profiler walk references unknown parameter: " + name);
        long long n = it->second;
        schema.erase(it);
        return n;
    }

    void entry(const std::string& name, long long params, long long flops, Shape out,
               long long transient_bytes = 0) {
        rep.per_layer.push_back({name, params, flops, out});
        rep.params += params;
        rep.flops += flops;
        peak = std::max(peak, live + bytes(out) + transient_bytes);
    }

    // A named conv with its activation grid; flops follow the pinned formula
    // 2*cin*cout*kh*kw*hout*wout (bias add not counted).
    Shape conv(const std::string& prefix, Shape in, int cout, int k, int stride) {
        const int pad = (k - 1) / 2;
        edib::ops::ConvGeom g =
            edib::ops::conv_out_dims(in, {cout, in.c, k, k}, stride, pad);
        Shape out{in.n, cout, g.oh, g.ow};
        long long params = take(prefix + ".weight") + take(prefix + ".bias");
        long long m = 2LL * in.c * cout * k * k * g.oh * g.ow * in.n;
        rep.macs += m / 2;
        entry(prefix, params, m, out);
        return out;
    }

    void unary(const std::string& name, const Shape& s, long long per_element) {
        entry(name, 0, per_element * numel(s), s);
    }

    Shape residual_block(const std::string& prefix, Shape in) {
        Shape h = conv(prefix + ".conv1", in, in.c, 3, 1);
        unary(prefix + ".silu", h, flop_cost::silu);
        h = conv(prefix + ".conv2", h, in.c, 3, 1);
        unary(prefix + ".add", h, flop_cost::elementwise);
        peak = std::max(peak, live + 2 * bytes(in));  // two block temporaries
        return in;
    }

    Shape blocks(const std::string& prefix, int count, Shape in) {
        for (int b = 0; b < count; ++b)
            in = residual_block(prefix + ".block" + std::to_string(b), in);
        return in;
    }

    Shape norm(const std::string& prefix, Shape in) {
        long long params = take(prefix + ".scale") + take(prefix + ".shift");
        entry(prefix, params, flop_cost::channel_norm * numel(in), in);
        return in;
    }

    Shape attention(const std::string& prefix, Shape in, int reduce) {
        unary(prefix + ".gap", {in.n, in.c, 1, 1}, flop_cost::gap * in.h * in.w);
        Shape s = conv(prefix + ".reduce", {in.n, in.c, 1, 1}, in.c / reduce, 1, 1);
        unary(prefix + ".silu", s, flop_cost::silu);
        s = conv(prefix + ".expand", s, in.c, 1, 1);
        unary(prefix + ".sigmoid", s, flop_cost::sigmoid);
        unary(prefix + ".scale_mul", in, flop_cost::channel_mul);
        return in;
    }
};

}  // namespace detail

// Symbolic forward walk at batch 1. Input dims are padded up to the model's
// spatial multiple first, mirroring what the deblur pipeline does.
inline ComplexityReport count_complexity(const model::ModelConfig& cfg,
                                         std::pair<int, int> image_hw,
                                         std::pair<int, int> depth_hw) {
    cfg.validate();
    detail::Walk w;
    for (const auto& ps : model::parameter_schema(cfg)) w.schema[ps.name] = ps.shape.numel();

    const int mult = cfg.spatial_multiple();
    auto round_up = [mult](int v) { return ((v + mult - 1) / mult) * mult; };
    const int H = round_up(image_hw.first), W = round_up(image_hw.second);
    const int d = cfg.base_channels;
    using detail::Walk;
    namespace fc = flop_cost;

    Shape img{1, 3, H, W};
    w.live += Walk::bytes(img);
    w.entry("input.image", 0, 0, img);

    // Analysis pyramid: every level's stacked bands stay live until the
    // reconstruction at the end of the forward pass.
    std::vector<Shape> bands;
    Shape cur = img;
    for (int k = 1; k <= cfg.levels; ++k) {
        Shape stacked{1, 4 * cur.c, cur.h / 2, cur.w / 2};
        w.entry("wavelet.dwt" + std::to_string(k), 0,
                fc::wavelet * Walk::numel(cur), stacked);
        w.live += Walk::bytes(stacked);
        if (k == 1)
            w.live -= Walk::bytes(img);  // the raw image dies after level 1
        bands.push_back(stacked);
        cur = Shape{1, 3, stacked.h, stacked.w};
    }

    // Sub-band embedding.
    Shape g1{1, 3, H >> cfg.levels, W >> cfg.levels};
    Shape z;
    if (cfg.levels == 1) {
        z = w.conv("wavelet_block.conv_ll", g1, d, 3, 1);
    } else {
        for (const char* band : {"ll", "lh", "hl", "hh"})
            w.conv(std::string("wavelet_block.conv_") + band, g1, d / 4, 3, 1);
        z = Shape{1, d, g1.h, g1.w};
        w.entry("wavelet_block.concat", 0, 0, z, Walk::bytes(z));
    }
    w.live += Walk::bytes(z);

    // Encoder with skips at levels 1 and 2.
    std::array<Shape, 2> skips;
    for (int lvl = 1; lvl <= 3; ++lvl) {
        z = w.blocks("encoder.level" + std::to_string(lvl), cfg.encoder_blocks[lvl - 1], z);
        if (lvl < 3) {
            skips[lvl - 1] = z;
            w.live += Walk::bytes(z);  // skip stays live until the decoder
            Shape down = w.conv("encoder.down" + std::to_string(lvl), z, 2 * z.c, 3, 2);
            w.unary("encoder.down" + std::to_string(lvl) + ".silu", down, fc::silu);
            w.live += Walk::bytes(down) - Walk::bytes(z);
            z = down;
        }
    }

    // Depth trunk at native depth resolution, resized onto the deepest grid.
    Shape dstream{0, 0, 0, 0};
    if (cfg.use_depth) {
        Shape dep{1, 1, depth_hw.first, depth_hw.second};
        w.live += Walk::bytes(dep);
        w.entry("input.depth", 0, 0, dep);
        Shape t = w.conv("depth.stem", dep, d, 3, 1);
        w.unary("depth.stem.silu", t, fc::silu);
        t = w.conv("depth.down1", t, 2 * d, 3, 2);
        w.unary("depth.down1.silu", t, fc::silu);
        t = w.conv("depth.down2", t, 4 * d, 3, 2);
        w.unary("depth.down2.silu", t, fc::silu);
        t = w.blocks("depth.mid", cfg.depth_trunk_blocks[0], t);
        t = w.conv("depth.down3", t, 8 * d, 3, 2);
        w.unary("depth.down3.silu", t, fc::silu);
        t = w.blocks("depth.deep", cfg.depth_trunk_blocks[1], t);
        t = w.conv("depth.project", t, 4 * d, 1, 1);
        dstream = Shape{1, 4 * d, z.h, z.w};
        w.entry("depth.resize", 0, fc::bilinear * Walk::numel(dstream), dstream);
        w.live += Walk::bytes(dstream) - Walk::bytes(dep);
    }

    // Decoder: adapter, blocks, upsample + fuse per level.
    for (int lvl = 3; lvl >= 1; --lvl) {
        const std::string lv = std::to_string(lvl);
        const std::string ap = "adapter.level" + lv;
        if (cfg.use_depth) {
            w.norm(ap + ".norm_z", z);
            w.conv(ap + ".bias_z", z, z.c, 1, 1);
            w.norm(ap + ".norm_d", dstream);
            w.conv(ap + ".bias_d", dstream, dstream.c, 1, 1);
            w.conv(ap + ".branch_a", dstream, dstream.c, 3, 1);
            w.conv(ap + ".branch_b", dstream, dstream.c, 3, 1);
            w.unary(ap + ".gate", dstream, fc::sigmoid + fc::elementwise);
            w.unary(ap + ".gate_mul", z, fc::elementwise);
            Shape cat{1, 2 * z.c, z.h, z.w};
            w.entry(ap + ".concat", 0, 0, cat, Walk::bytes(cat));
            w.conv(ap + ".fuse", cat, z.c, 3, 1);
            w.attention(ap + ".ca_z", z, cfg.attention_reduce);
            w.unary(ap + ".residual_add", z, fc::elementwise);
            w.attention(ap + ".ca_d", dstream, cfg.attention_reduce);
            w.peak = std::max(w.peak, w.live + 4 * Walk::bytes(z));
        }
        z = w.blocks("decoder.level" + lv, cfg.decoder_blocks[lvl - 1], z);
        if (lvl > 1) {
            Shape up{1, z.c, z.h * 2, z.w * 2};
            w.entry("decoder.up" + std::to_string(lvl - 1) + ".nearest", 0, 0, up,
                    Walk::bytes(up));
            Shape uc = w.conv("decoder.up" + std::to_string(lvl - 1), up, up.c, 3, 1);
            w.unary("decoder.up" + std::to_string(lvl - 1) + ".silu", uc, fc::silu);
            Shape cat{1, uc.c + uc.c / 2, uc.h, uc.w};
            w.entry("decoder.skip_concat" + std::to_string(lvl - 1), 0, 0, cat,
                    Walk::bytes(cat));
            Shape fused = w.conv("decoder.fuse" + std::to_string(lvl - 1), cat, uc.c / 2, 1, 1);
            w.live += Walk::bytes(fused) - Walk::bytes(z) - Walk::bytes(skips[lvl - 2]);
            z = fused;
            if (cfg.use_depth) {
                Shape dup{1, dstream.c, dstream.h * 2, dstream.w * 2};
                w.entry(ap + ".prop.nearest", 0, 0, dup, Walk::bytes(dup));
                Shape dn = w.conv(ap + ".prop", dup, dstream.c / 2, 1, 1);
                w.live += Walk::bytes(dn) - Walk::bytes(dstream);
                dstream = dn;
            }
        }
    }
    if (cfg.use_depth) w.live -= Walk::bytes(dstream);  // depth stream ends here

    // Residual heads and synthesis cascade.
    for (const char* band : {"ll", "lh", "hl", "hh"})
        w.conv(std::string("head.") + band, z, 3, 3, 1);
    Shape deep = bands.back();
    w.unary("head.residual_add", deep, fc::elementwise);
    w.live -= Walk::bytes(z);
    cur = Shape{1, 3, deep.h * 2, deep.w * 2};
    w.entry("reconstruct.idwt" + std::to_string(cfg.levels), 0,
            fc::wavelet * Walk::numel(cur), cur);
    w.live += Walk::bytes(cur) - Walk::bytes(bands.back());
    for (int k = cfg.levels - 2; k >= 0; --k) {
        Shape out{1, 3, cur.h * 2, cur.w * 2};
        w.entry("reconstruct.idwt" + std::to_string(k + 1), 0,
                fc::wavelet * Walk::numel(out), out);
        w.live += Walk::bytes(out) - Walk::bytes(cur) - Walk::bytes(bands[k]);
        cur = out;
    }

    if (!w.schema.empty()) {
        std::string missing;
        for (const auto& kv : w.schema) missing += " " + kv.first;
        throw shape_error("profiler walk did not visit parameters:" + missing);
    }
    w.rep.peak_activation_bytes = w.peak;
    return w.rep;
}

// Line-oriented key=value serialization of the report.
inline std::string report_text(const ComplexityReport& r) {
    std::ostringstream out;
    out << "params=" << r.params << "\n";
    out << "macs=" << r.macs << "\n";
    out << "flops=" << r.flops << "\n";
    out << "peak_activation_bytes=" << r.peak_activation_bytes << "\n";
    for (size_t i = 0; i < r.per_layer.size(); ++i) {
        const LayerEntry& e = r.per_layer[i];
        const std::string key = "per_layer[" + std::to_string(i) + "]";
        out << key << ".name=" << e.name << "\n";
        out << key << ".params=" << e.params << "\n";
        out << key << ".flops=" << e.flops << "\n";
        out << key << ".output_shape=" << e.out.n << "x" << e.out.c << "x" << e.out.h << "x"
            << e.out.w << "\n";
    }
    return out.str();
}

struct BenchStats {
    double median_s = 0.0;
    double iqr_s = 0.0;
    int repeats = 0;
    int threads = 1;  // all kernels are single-threaded
    std::vector<double> samples_s;
};

// Median and interquartile range over timed forward passes, after one
// untimed warm-up pass.
inline BenchStats benchmark_forward(const model::ModelConfig& cfg, const ParamStore& params,
                                    std::pair<int, int> image_hw, std::pair<int, int> depth_hw,
                                    int repeats) {
    cfg.validate();
    if (repeats < 1) throw shape_error("benchmark_forward: repeats must be >= 1");
    const int mult = cfg.spatial_multiple();
    auto round_up = [mult](int v) { return ((v + mult - 1) / mult) * mult; };
    Tensor img = Tensor::full({1, 3, round_up(image_hw.first), round_up(image_hw.second)},
                              0.25f);
    Tensor dep = Tensor::full({1, 1, depth_hw.first, depth_hw.second}, 0.5f);
    const Tensor* dp = cfg.use_depth ? &dep : nullptr;

    model::infer(img, dp, cfg, params);  // warm-up
    BenchStats st;
    st.repeats = repeats;
    for (int i = 0; i < repeats; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        model::infer(img, dp, cfg, params);
        auto t1 = std::chrono::steady_clock::now();
        st.samples_s.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::vector<double> sorted = st.samples_s;
    std::sort(sorted.begin(), sorted.end());
    auto quantile = [&sorted](double q) {
        const double pos = q * (sorted.size() - 1);
        const size_t lo = (size_t)pos;
        const size_t hi = std::min(lo + 1, sorted.size() - 1);
        const double frac = pos - lo;
        return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
    };
    st.median_s = quantile(0.5);
    st.iqr_s = quantile(0.75) - quantile(0.25);
    return st;
}

}  // namespace edib::prof
