#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "edib/autodiff.hpp"
#include "edib/params.hpp"
#include "edib/tensor.hpp"
#include "edib/wavelet.hpp"

// Depth-guided deblurring network operating in the wavelet domain. The image
// is decomposed into a multi-level pyramid; a U-shaped network predicts
// residual corrections for the deepest level's sub-band coefficients, the
// finer detail bands pass through untouched, and the inverse transform
// returns to pixel space. Output heads and adapter fusion convs start at
// zero, so a freshly initialized model is an exact identity map.

namespace edib::model {

struct ModelConfig {
    int base_channels = 16;  // width at the shallowest u-net level
    int levels = 2;          // wavelet decomposition levels (1..3)
    std::string wavelet = "haar";
    bool use_depth = true;

    // Residual block counts indexed by u-net level (shallowest first). The
    // default concentrates capacity at the deepest, cheapest grid.
    std::array<int, 3> encoder_blocks{2, 2, 6};
    std::array<int, 3> decoder_blocks{2, 2, 6};

    int attention_reduce = 2;  // channel-attention bottleneck ratio

    // Depth trunk: residual block counts for its two deepest stages (4d and
    // 8d wide). The trunk runs at the depth map's native resolution and is
    // resampled onto the image grid only at the end, so its cost does not
    // scale with the image pyramid.
    std::array<int, 2> depth_trunk_blocks{2, 5};

    int level_channels(int level) const { return base_channels << (level - 1); }

    void validate() const {
        if (base_channels < 4 || base_channels % 4)
            throw shape_error("base_channels must be a positive multiple of 4");
        if (levels < 1 || levels > 3)
            throw shape_error("decomposition levels must be between 1 and 3");
        if (attention_reduce < 1 || base_channels % (2 * attention_reduce))
            throw shape_error("attention_reduce must divide every level width");
        for (int b : encoder_blocks)
            if (b < 1) throw shape_error("encoder block counts must be >= 1");
        for (int b : decoder_blocks)
            if (b < 1) throw shape_error("decoder block counts must be >= 1");
        for (int b : depth_trunk_blocks)
            if (b < 0) throw shape_error("depth trunk block counts must be >= 0");
        wav::WaveletBasis::make(wavelet);  // throws on unknown basis
    }

    // Spatial alignment required of network inputs: the deepest u-net grid
    // is the image size over 2^levels and two stride-2 stages.
    int spatial_multiple() const { return 1 << (levels + 2); }
};

// ---- parameter schema ----

enum class InitKind { fan_in_uniform, zeros, ones };

struct ParamSpec {
    std::string name;
    Shape shape;
    InitKind init;
};

namespace detail {

inline void conv_spec(std::vector<ParamSpec>& out, const std::string& prefix, int cin,
                      int cout, int k, InitKind init = InitKind::fan_in_uniform) {
    out.push_back({prefix + ".weight", {cout, cin, k, k}, init});
    out.push_back({prefix + ".bias", {1, cout, 1, 1},
                   init == InitKind::fan_in_uniform ? InitKind::zeros : init});
}

inline void block_spec(std::vector<ParamSpec>& out, const std::string& prefix, int c) {
    conv_spec(out, prefix + ".conv1", c, c, 3);
    conv_spec(out, prefix + ".conv2", c, c, 3);
}

inline void norm_spec(std::vector<ParamSpec>& out, const std::string& prefix, int c) {
    out.push_back({prefix + ".scale", {1, c, 1, 1}, InitKind::ones});
    out.push_back({prefix + ".shift", {1, c, 1, 1}, InitKind::zeros});
}

inline void attention_spec(std::vector<ParamSpec>& out, const std::string& prefix, int c,
                           int reduce) {
    conv_spec(out, prefix + ".reduce", c, c / reduce, 1);
    conv_spec(out, prefix + ".expand", c / reduce, c, 1);
}

}  // namespace detail

inline std::vector<ParamSpec> parameter_schema(const ModelConfig& cfg) {
    cfg.validate();
    using namespace detail;
    std::vector<ParamSpec> sp;
    const int d = cfg.base_channels;

    // Sub-band embedding. A single-level decomposition feeds only the
    // approximation band to the network; deeper ones embed all four bands of
    // the deepest level.
    if (cfg.levels == 1) {
        conv_spec(sp, "wavelet_block.conv_ll", 3, d, 3);
    } else {
        for (const char* band : {"ll", "lh", "hl", "hh"})
            conv_spec(sp, std::string("wavelet_block.conv_") + band, 3, d / 4, 3);
    }

    for (int lvl = 1; lvl <= 3; ++lvl) {
        const int c = cfg.level_channels(lvl);
        for (int b = 0; b < cfg.encoder_blocks[lvl - 1]; ++b)
            block_spec(sp, "encoder.level" + std::to_string(lvl) + ".block" + std::to_string(b),
                       c);
        if (lvl < 3)
            conv_spec(sp, "encoder.down" + std::to_string(lvl), c, 2 * c, 3);
    }

    for (int lvl = 3; lvl >= 1; --lvl) {
        const int c = cfg.level_channels(lvl);
        for (int b = 0; b < cfg.decoder_blocks[lvl - 1]; ++b)
            block_spec(sp, "decoder.level" + std::to_string(lvl) + ".block" + std::to_string(b),
                       c);
        if (lvl > 1) {
            // Upsampling conv keeps the width; the 1x1 fusion conv brings the
            // skip concatenation down to the next level's width.
            conv_spec(sp, "decoder.up" + std::to_string(lvl - 1), c, c, 3);
            conv_spec(sp, "decoder.fuse" + std::to_string(lvl - 1), c + c / 2, c / 2, 1);
        }
    }

    for (const char* band : {"ll", "lh", "hl", "hh"})
        conv_spec(sp, std::string("head.") + band, d, 3, 3, InitKind::zeros);

    if (cfg.use_depth) {
        conv_spec(sp, "depth.stem", 1, d, 3);
        conv_spec(sp, "depth.down1", d, 2 * d, 3);
        conv_spec(sp, "depth.down2", 2 * d, 4 * d, 3);
        for (int b = 0; b < cfg.depth_trunk_blocks[0]; ++b)
            block_spec(sp, "depth.mid.block" + std::to_string(b), 4 * d);
        conv_spec(sp, "depth.down3", 4 * d, 8 * d, 3);
        for (int b = 0; b < cfg.depth_trunk_blocks[1]; ++b)
            block_spec(sp, "depth.deep.block" + std::to_string(b), 8 * d);
        conv_spec(sp, "depth.project", 8 * d, 4 * d, 1);

        for (int lvl = 3; lvl >= 1; --lvl) {
            const int c = cfg.level_channels(lvl);
            const std::string p = "adapter.level" + std::to_string(lvl);
            norm_spec(sp, p + ".norm_z", c);
            norm_spec(sp, p + ".norm_d", c);
            conv_spec(sp, p + ".bias_z", c, c, 1);
            conv_spec(sp, p + ".bias_d", c, c, 1);
            conv_spec(sp, p + ".branch_a", c, c, 3);
            conv_spec(sp, p + ".branch_b", c, c, 3);
            conv_spec(sp, p + ".fuse", 2 * c, c, 3, InitKind::zeros);
            detail::attention_spec(sp, p + ".ca_z", c, cfg.attention_reduce);
            detail::attention_spec(sp, p + ".ca_d", c, cfg.attention_reduce);
            if (lvl > 1) conv_spec(sp, p + ".prop", c, c / 2, 1);
        }
    }
    return sp;
}

// Deterministic initialization: one mt19937 stream consumed in schema order.
// Conv weights draw from U(-sqrt(1/fan_in), sqrt(1/fan_in)); output heads
// and adapter fusion convs start at zero (identity mapping), normalization
// scales at one.
inline ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
    std::mt19937 rng((std::uint32_t)(seed ^ (seed >> 32)));
    auto unit = [&rng]() {  // uniform in [0,1) with 24 bits, portable bitwise
        return (float)(rng() >> 8) * (1.0f / 16777216.0f);
    };
    ParamStore store;
    for (const ParamSpec& ps : parameter_schema(cfg)) {
        Tensor t(ps.shape);
        if (ps.init == InitKind::fan_in_uniform) {
            const float bound = std::sqrt(1.0f / ((float)ps.shape.c * ps.shape.h * ps.shape.w));
            float* p = t.mutable_data();
            for (long long i = 0; i < t.numel(); ++i) p[i] = (2.0f * unit() - 1.0f) * bound;
        } else if (ps.init == InitKind::ones) {
            t = Tensor::full(ps.shape, 1.0f);
        }
        store.add(ps.name, std::move(t));
    }
    return store;
}

// Parameter tensors wrapped as autodiff leaves (or constants when tape is
// null), addressable by name during the forward pass.
struct BoundParams {
    const ParamStore* store = nullptr;
    std::vector<ad::Var> vars;

    const ad::Var& operator[](const std::string& name) const {
        return vars[store->require(name)];
    }
};

inline BoundParams bind_params(const ParamStore& store, ad::GradTape* tape) {
    BoundParams bp;
    bp.store = &store;
    bp.vars.reserve(store.size());
    for (int i = 0; i < store.size(); ++i)
        bp.vars.push_back(tape ? ad::make_leaf(*tape, store.value(i))
                                : ad::make_const(store.value(i)));
    return bp;
}

namespace detail {

inline ad::Var conv(const BoundParams& bp, const std::string& prefix, const ad::Var& x,
                    int stride = 1) {
    const ad::Var& w = bp[prefix + ".weight"];
    const ad::Var& b = bp[prefix + ".bias"];
    return ad::conv2d(x, w, &b, stride, (w.shape().h - 1) / 2);
}

inline ad::Var residual_block(const BoundParams& bp, const std::string& prefix,
                              const ad::Var& x) {
    return ad::add(x, conv(bp, prefix + ".conv2", ad::silu(conv(bp, prefix + ".conv1", x))));
}

inline ad::Var run_blocks(const BoundParams& bp, const std::string& prefix, int count,
                          ad::Var x) {
    for (int b = 0; b < count; ++b)
        x = residual_block(bp, prefix + ".block" + std::to_string(b), x);
    return x;
}

// Squeeze-and-excite style channel attention: gap -> 1x1 reduce -> silu ->
// 1x1 expand -> sigmoid, applied multiplicatively.
inline ad::Var channel_attention(const BoundParams& bp, const std::string& prefix,
                                 const ad::Var& x) {
    ad::Var s = ad::global_avg_pool(x);
    s = ad::silu(conv(bp, prefix + ".reduce", s));
    s = ad::sigmoid(conv(bp, prefix + ".expand", s));
    return ad::mul_channels(x, s);
}

}  // namespace detail

// ---- network stages ----

struct WaveletFeatures {
    ad::Var features;                   // embedded deepest-level sub-bands
    std::vector<ad::Var> level_bands;   // stacked [LL|LH|HL|HH] per level, finest first
};

inline WaveletFeatures wavelet_transform_block(const ad::Var& image, const ModelConfig& cfg,
                                               const BoundParams& bp) {
    const wav::WaveletBasis basis = wav::WaveletBasis::make(cfg.wavelet);
    WaveletFeatures wf;
    ad::Var cur = image;
    for (int k = 0; k < cfg.levels; ++k) {
        ad::Var stacked = ad::dwt2_stacked(cur, basis);
        wf.level_bands.push_back(stacked);
        cur = ad::slice_channels(stacked, 0, image.shape().c);
    }
    const ad::Var& deep = wf.level_bands.back();
    const int cb = image.shape().c;
    if (cfg.levels == 1) {
        wf.features = detail::conv(bp, "wavelet_block.conv_ll", ad::slice_channels(deep, 0, cb));
    } else {
        std::vector<ad::Var> parts;
        const char* bands[4] = {"ll", "lh", "hl", "hh"};
        for (int b = 0; b < 4; ++b)
            parts.push_back(detail::conv(bp, std::string("wavelet_block.conv_") + bands[b],
                                         ad::slice_channels(deep, b * cb, (b + 1) * cb)));
        wf.features = ad::concat_channels(parts);
    }
    return wf;
}

struct EncoderOut {
    ad::Var deep;
    std::array<ad::Var, 2> skips;  // pre-downsampling activations, levels 1 and 2
};

inline EncoderOut encoder_forward(const ad::Var& features, const ModelConfig& cfg,
                                  const BoundParams& bp) {
    EncoderOut eo;
    ad::Var z = features;
    for (int lvl = 1; lvl <= 3; ++lvl) {
        z = detail::run_blocks(bp, "encoder.level" + std::to_string(lvl),
                               cfg.encoder_blocks[lvl - 1], z);
        if (lvl < 3) {
            eo.skips[lvl - 1] = z;
            z = ad::silu(detail::conv(bp, "encoder.down" + std::to_string(lvl), z, 2));
        }
    }
    eo.deep = z;
    return eo;
}

// Depth trunk: stride-2 stages at the depth map's native resolution, then a
// bilinear resize onto the deepest u-net grid. Any depth resolution of at
// least 8x8 is accepted; alignment with the image grid happens only here.
inline ad::Var depth_encoder(const ad::Var& depth, int out_h, int out_w,
                             const ModelConfig& cfg, const BoundParams& bp) {
    const Shape ds = depth.shape();
    if (ds.c != 1) throw shape_error("depth map must have one channel, got " + ds.str());
    if (ds.h < 8 || ds.w < 8)
        throw shape_error("depth map must be at least 8x8, got " + ds.str());
    ad::Var d = ad::silu(detail::conv(bp, "depth.stem", depth));
    d = ad::silu(detail::conv(bp, "depth.down1", d, 2));
    d = ad::silu(detail::conv(bp, "depth.down2", d, 2));
    d = detail::run_blocks(bp, "depth.mid", cfg.depth_trunk_blocks[0], d);
    d = ad::silu(detail::conv(bp, "depth.down3", d, 2));
    d = detail::run_blocks(bp, "depth.deep", cfg.depth_trunk_blocks[1], d);
    d = detail::conv(bp, "depth.project", d);
    return ad::resize_bilinear(d, out_h, out_w);
}

struct AdapterOut {
    ad::Var z;       // conditioned u-net features
    ad::Var d_next;  // depth stream to propagate upward
};

// Depth-conditioned feature modulation. Both streams are normalized and
// re-biased; two parallel 3x3 branches on the depth stream form a
// multiplicative sigmoid gate over the normalized features; the gated result
// is fused back with the raw features through a zero-initialized 3x3 conv
// and added as a channel-attended residual, so an untrained adapter passes
// features through unchanged.
inline AdapterOut depth_adapter(const ad::Var& z, const ad::Var& d, const std::string& prefix,
                                const BoundParams& bp) {
    if (!(z.shape() == d.shape()))
        throw shape_error("depth adapter expects matching shapes, got " + z.shape().str() +
                          " vs " + d.shape().str());
    ad::Var z_n = detail::conv(bp, prefix + ".bias_z",
                               ad::channel_norm(z, bp[prefix + ".norm_z.scale"],
                                                bp[prefix + ".norm_z.shift"]));
    ad::Var d_n = detail::conv(bp, prefix + ".bias_d",
                               ad::channel_norm(d, bp[prefix + ".norm_d.scale"],
                                                bp[prefix + ".norm_d.shift"]));
    ad::Var gate = ad::sigmoid(ad::mul(detail::conv(bp, prefix + ".branch_a", d_n),
                                       detail::conv(bp, prefix + ".branch_b", d_n)));
    ad::Var z_cond = ad::mul(gate, z_n);
    ad::Var fused = detail::conv(bp, prefix + ".fuse", ad::concat_channels({z_cond, z}));
    AdapterOut out;
    out.z = ad::add(z, detail::channel_attention(bp, prefix + ".ca_z", fused));
    // The propagated stream attends over the raw depth features, not the
    // normalized ones, so at init the adapter reduces to exactly
    // (z, channel_attention(d)).
    out.d_next = detail::channel_attention(bp, prefix + ".ca_d", d);
    return out;
}

inline ad::Var decoder_forward(const ad::Var& deep, const std::array<ad::Var, 2>& skips,
                               const ad::Var* depth_feat, const ModelConfig& cfg,
                               const BoundParams& bp) {
    ad::Var z = deep;
    ad::Var d;
    if (cfg.use_depth) {
        if (!depth_feat) throw shape_error("decoder: config uses depth but none was provided");
        d = *depth_feat;
    }
    for (int lvl = 3; lvl >= 1; --lvl) {
        const std::string adapter = "adapter.level" + std::to_string(lvl);
        if (cfg.use_depth) {
            AdapterOut ao = depth_adapter(z, d, adapter, bp);
            z = ao.z;
            d = ao.d_next;
        }
        z = detail::run_blocks(bp, "decoder.level" + std::to_string(lvl),
                               cfg.decoder_blocks[lvl - 1], z);
        if (lvl > 1) {
            z = ad::silu(detail::conv(bp, "decoder.up" + std::to_string(lvl - 1),
                                      ad::upsample_nearest2x(z)));
            z = detail::conv(bp, "decoder.fuse" + std::to_string(lvl - 1),
                             ad::concat_channels({z, skips[lvl - 2]}));
            if (cfg.use_depth)
                d = detail::conv(bp, adapter + ".prop", ad::upsample_nearest2x(d));
        }
    }
    return z;
}

// Predict per-band residuals for the deepest level, add them to the input's
// own coefficients, then invert the pyramid with the finer detail bands
// passed through unchanged.
inline ad::Var predict_and_reconstruct(const ad::Var& decoded, const WaveletFeatures& wf,
                                       const ModelConfig& cfg, const BoundParams& bp) {
    const wav::WaveletBasis basis = wav::WaveletBasis::make(cfg.wavelet);
    std::vector<ad::Var> deltas;
    for (const char* band : {"ll", "lh", "hl", "hh"})
        deltas.push_back(detail::conv(bp, std::string("head.") + band, decoded));
    ad::Var bands = ad::add(wf.level_bands.back(), ad::concat_channels(deltas));
    ad::Var cur = ad::idwt2_stacked(bands, basis);
    for (int k = cfg.levels - 2; k >= 0; --k) {
        const ad::Var& stacked = wf.level_bands[k];
        const int cb = stacked.shape().c / 4;
        ad::Var joined =
            ad::concat_channels({cur, ad::slice_channels(stacked, cb, 4 * cb)});
        cur = ad::idwt2_stacked(joined, basis);
    }
    return cur;
}

inline ad::Var model_forward(const ad::Var& image, const ad::Var* depth,
                             const ModelConfig& cfg, const BoundParams& bp) {
    cfg.validate();
    const Shape is = image.shape();
    if (is.c != 3) throw shape_error("model input must have 3 channels, got " + is.str());
    const int mult = cfg.spatial_multiple();
    if (is.h % mult || is.w % mult)
        throw shape_error("model input dims must be multiples of " + std::to_string(mult) +
                          ", got " + is.str());
    WaveletFeatures wf = wavelet_transform_block(image, cfg, bp);
    EncoderOut eo = encoder_forward(wf.features, cfg, bp);
    ad::Var dfeat;
    if (cfg.use_depth) {
        if (!depth) throw shape_error("model_forward: config uses depth but none was provided");
        if (depth->shape().n != is.n)
            throw shape_error("depth batch size does not match image batch size");
        dfeat = depth_encoder(*depth, eo.deep.shape().h, eo.deep.shape().w, cfg, bp);
    }
    ad::Var decoded =
        decoder_forward(eo.deep, eo.skips, cfg.use_depth ? &dfeat : nullptr, cfg, bp);
    return predict_and_reconstruct(decoded, wf, cfg, bp);
}

// Inference entry point: no tape, plain tensors in and out.
inline Tensor infer(const Tensor& image, const Tensor* depth, const ModelConfig& cfg,
                    const ParamStore& params) {
    BoundParams bp = bind_params(params, nullptr);
    ad::Var img = ad::make_const(image);
    ad::Var dep;
    if (depth) dep = ad::make_const(*depth);
    return model_forward(img, depth ? &dep : nullptr, cfg, bp).value;
}

}  // namespace edib::model
