#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "edib/autodiff.hpp"
#include "edib/blur.hpp"
#include "edib/model.hpp"
#include "edib/optimizer.hpp"
#include "edib/params.hpp"
#include "edib/tensor.hpp"
#include "edib/tensor_ops.hpp"
#include "edib/weights_io.hpp"

// Desk-scale training loop: per step, draw sharp/depth samples, synthesize
// blur, crop aligned patches, run forward/backward, and apply Adam under a
// cosine learning-rate schedule. Every random draw comes from a generator
// reseeded per step from (seed, step), so runs are bitwise reproducible and
// a resumed run continues the exact same stream.

namespace edib::train {

struct TrainConfig {
    double lr0 = 1e-4;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    int epochs = 50;
    int patch = 256;
    int batch = 4;
    float cosine_weight = 0.1f;  // weight of the cosine-similarity term
    std::uint64_t seed = 0;

    void validate(int levels) const {
        // lr0 = 0 is allowed so smoke runs can verify the constant-loss path.
        if (!(lr0 >= 0.0)) throw shape_error("train config: lr0 must be >= 0");
        if (cosine_weight < 0.0f)
            throw shape_error("train config: cosine_weight must be >= 0");
        if (epochs < 1) throw shape_error("train config: epochs must be >= 1");
        if (batch < 1) throw shape_error("train config: batch must be >= 1");
        const int mult = (1 << levels) * 4;
        if (patch < mult || patch % mult)
            throw shape_error("train config: patch must be a positive multiple of " +
                              std::to_string(mult) + ", got " + std::to_string(patch));
    }
};

// FNV-1a over the canonical field serialization; stored with checkpoints so
// a resume against a different recipe is refused.
inline std::uint32_t config_hash(const TrainConfig& tc) {
    std::string s = std::to_string(tc.lr0) + "|" + std::to_string(tc.beta1) + "|" +
                    std::to_string(tc.beta2) + "|" + std::to_string(tc.eps) + "|" +
                    std::to_string(tc.epochs) + "|" + std::to_string(tc.patch) + "|" +
                    std::to_string(tc.batch) + "|" + std::to_string(tc.cosine_weight) + "|" +
                    std::to_string(tc.seed);
    std::uint32_t h = 2166136261u;
    for (unsigned char c : s) {
        h ^= c;
        h *= 16777619u;
    }
    return h;
}

struct Sample {
    Tensor sharp;
    Tensor depth;  // ignored when has_depth is false
    bool has_depth = false;
    std::string name;
};
using Dataset = std::vector<Sample>;

namespace detail {

inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::mt19937 step_rng(std::uint64_t seed, long long step) {
    const std::uint64_t m = mix64(seed * 0x100000001b3ull + (std::uint64_t)step);
    return std::mt19937((std::uint32_t)(m ^ (m >> 32)));
}

inline float unit(std::mt19937& rng) {
    return (float)(rng() >> 8) * (1.0f / 16777216.0f);
}

inline int pick(std::mt19937& rng, int n) {
    return std::min(n - 1, (int)(unit(rng) * (float)n));
}

// Uniform draw from the 4-aligned offsets {0, 4, ..., <= span}.
inline int aligned_offset(std::mt19937& rng, int span) {
    const int cells = span / 4 + 1;
    return 4 * pick(rng, cells);
}

inline int round4(double v) {
    int r = (int)std::llround(v / 4.0) * 4;
    return r < 4 ? 4 : r;
}

// Bilinear resample of a window [sy0, sy0+sh) x [sx0, sx0+sw) of each plane
// onto an oh x ow grid, half-pixel convention inside the window, clamped at
// the plane border.
inline Tensor resample_window(const Tensor& src, double sy0, double sh, double sx0, double sw,
                              int oh, int ow) {
    const Shape s = src.shape();
    Tensor out({s.n, s.c, oh, ow});
    float* od = out.mutable_data();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const float* plane = src.data() + (1LL * n * s.c + c) * s.h * s.w;
            for (int y = 0; y < oh; ++y) {
                double fy = sy0 + ((double)y + 0.5) * sh / oh - 0.5;
                fy = std::min(std::max(fy, 0.0), (double)s.h - 1);
                const int y0 = (int)fy, y1 = std::min(y0 + 1, s.h - 1);
                const double wy = fy - y0;
                for (int x = 0; x < ow; ++x) {
                    double fx = sx0 + ((double)x + 0.5) * sw / ow - 0.5;
                    fx = std::min(std::max(fx, 0.0), (double)s.w - 1);
                    const int x0 = (int)fx, x1 = std::min(x0 + 1, s.w - 1);
                    const double wx = fx - x0;
                    const double v =
                        (1 - wy) * ((1 - wx) * plane[(size_t)y0 * s.w + x0] +
                                    wx * plane[(size_t)y0 * s.w + x1]) +
                        wy * ((1 - wx) * plane[(size_t)y1 * s.w + x0] +
                              wx * plane[(size_t)y1 * s.w + x1]);
                    od[((1LL * n * s.c + c) * oh + y) * ow + x] = (float)v;
                }
            }
        }
    return out;
}

}  // namespace detail

struct PatchPair {
    Tensor image;
    Tensor depth;  // empty when no depth was provided
    bool has_depth = false;
    int y0 = 0, x0 = 0;
};

// Uniform 4-aligned crop of the image; the depth crop covers the same
// physical region via proportional coordinates, resampled to the fixed
// depth-patch size patch*(d/full) rounded to a multiple of 4.
inline PatchPair sample_patch(const Tensor& image, const Tensor* depth, int patch,
                              std::mt19937& rng) {
    const Shape s = image.shape();
    if (patch < 1) throw shape_error("sample_patch: patch must be >= 1");
    if (s.h < patch || s.w < patch)
        throw shape_error("sample_patch: image " + s.str() + " is smaller than patch " +
                          std::to_string(patch));
    PatchPair p;
    p.y0 = detail::aligned_offset(rng, s.h - patch);
    p.x0 = detail::aligned_offset(rng, s.w - patch);
    p.image = ops::crop(image, p.y0, p.x0, patch, patch);
    if (depth) {
        const Shape ds = depth->shape();
        const double ry = (double)ds.h / s.h, rx = (double)ds.w / s.w;
        const int oh = detail::round4((double)patch * ry);
        const int ow = detail::round4((double)patch * rx);
        p.depth = detail::resample_window(*depth, p.y0 * ry, patch * ry, p.x0 * rx,
                                          patch * rx, oh, ow);
        p.has_depth = true;
    }
    return p;
}

// mean|pred - target| plus the weighted per-sample cosine-distance term,
// averaged over the batch. Zero vectors take cosine similarity 0 (guarded).
inline ad::Var loss_var(const ad::Var& pred, const ad::Var& target, float lambda) {
    ad::Var l1 = ad::mean_all(ad::abs(ad::sub(pred, target)));
    if (lambda == 0.0f) return l1;
    ad::Var cos = ad::cosine_sim_per_sample(pred, target);
    ad::Var cos_term = ad::mean_all(ad::affine(cos, -1.0f, 1.0f));
    return ad::add(l1, ad::affine(cos_term, lambda, 0.0f));
}

inline double loss(const Tensor& pred, const Tensor& target, float lambda) {
    return loss_var(ad::make_const(pred), ad::make_const(target), lambda).value.item();
}

struct LossRow {
    long long step = 0;
    double lr = 0, l1 = 0, cosine = 0, total = 0;
};

inline std::string loss_curve_csv(const std::vector<LossRow>& rows) {
    std::string out = "step,lr,l1,cosine,total\n";
    char buf[160];
    for (const LossRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%lld,%.10g,%.10g,%.10g,%.10g\n", r.step, r.lr, r.l1,
                      r.cosine, r.total);
        out += buf;
    }
    return out;
}

struct TrainHooks {
    std::function<void(const LossRow&)> on_step;
    std::function<void(int epoch, const ParamStore&, const opt::AdamState&, long long step)>
        on_epoch;
};

struct TrainResult {
    ParamStore params;
    opt::AdamState state;
    long long steps = 0;
    std::vector<LossRow> curve;
};

namespace detail {

struct Batch {
    Tensor blurred, sharp, depth;
    bool has_depth = false;
};

inline Batch assemble_batch(const Dataset& data, const blur::KernelBank& bank,
                            const TrainConfig& tcfg, bool want_depth, std::mt19937& rng) {
    std::vector<Tensor> blurred, sharp, depth;
    for (int b = 0; b < tcfg.batch; ++b) {
        const Sample& smp = data[pick(rng, (int)data.size())];
        if (want_depth && !smp.has_depth)
            throw data_error("training sample '" + smp.name +
                             "' has no depth map but the model config uses depth");
        const std::uint64_t khi = rng();
        const std::uint64_t kseed = (khi << 32) | (std::uint64_t)rng();
        blur::BlurPair pair = blur::make_pair(smp.sharp, bank, kseed);
        // One offset pair crops the blurred and sharp images identically.
        std::mt19937 crop_rng(rng());
        PatchPair pb = sample_patch(pair.blurred, want_depth ? &smp.depth : nullptr,
                                    tcfg.patch, crop_rng);
        Tensor sp = ops::crop(pair.sharp, pb.y0, pb.x0, tcfg.patch, tcfg.patch);
        blurred.push_back(pb.image);
        sharp.push_back(sp);
        if (want_depth) depth.push_back(pb.depth);
    }
    Batch out;
    for (size_t i = 1; i < blurred.size(); ++i) {
        if (!(blurred[i].shape() == blurred[0].shape()))
            throw data_error("batch members have mismatched patch shapes");
        if (want_depth && !(depth[i].shape() == depth[0].shape()))
            throw data_error("batch members have mismatched depth-patch shapes; use depth "
                             "maps with a consistent resolution ratio");
    }
    out.blurred = ops::concat_batch(blurred);
    out.sharp = ops::concat_batch(sharp);
    if (want_depth) {
        out.depth = ops::concat_batch(depth);
        out.has_depth = true;
    }
    return out;
}

}  // namespace detail

// Full training run. When resume is non-null, continues from its parameters,
// moments, and step counter; per-step reseeding makes the continued run
// identical to an uninterrupted one.
struct ResumePoint {
    ParamStore params;
    opt::AdamState state;
    long long step = 0;
};

inline TrainResult train(const Dataset& data, const blur::KernelBank& bank,
                         const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                         const TrainHooks& hooks = {}, const ResumePoint* resume = nullptr) {
    mcfg.validate();
    tcfg.validate(mcfg.levels);
    if (data.empty()) throw data_error("training dataset is empty");
    if (bank.kernels.empty()) throw data_error("training kernel bank is empty");

    TrainResult res;
    long long start_step = 0;
    if (resume) {
        res.params = resume->params;
        res.state = resume->state;
        start_step = resume->step;
    } else {
        res.params = model::init_params(mcfg, tcfg.seed);
        res.state = opt::AdamState::init(res.params);
    }

    const long long steps_per_epoch = ((long long)data.size() + tcfg.batch - 1) / tcfg.batch;
    const long long total_steps = steps_per_epoch * tcfg.epochs;

    for (long long step = start_step + 1; step <= total_steps; ++step) {
        const double lr = opt::cosine_lr(step - 1, total_steps, tcfg.lr0);
        LossRow row{step, lr, 0, 0, 0};
        try {
            std::mt19937 rng = detail::step_rng(tcfg.seed, step);
            detail::Batch batch =
                detail::assemble_batch(data, bank, tcfg, mcfg.use_depth, rng);

            ad::GradTape tape;
            model::BoundParams bp = model::bind_params(res.params, &tape);
            ad::Var img = ad::make_const(batch.blurred);
            ad::Var dep;
            if (batch.has_depth) dep = ad::make_const(batch.depth);
            ad::Var pred =
                model::model_forward(img, batch.has_depth ? &dep : nullptr, mcfg, bp);
            ad::Var target = ad::make_const(batch.sharp);

            ad::Var l1 = ad::mean_all(ad::abs(ad::sub(pred, target)));
            ad::Var total = l1;
            if (tcfg.cosine_weight != 0.0f) {
                ad::Var cos = ad::cosine_sim_per_sample(pred, target);
                ad::Var dist = ad::mean_all(ad::affine(cos, -1.0f, 1.0f));
                row.cosine = dist.value.item();
                total = ad::add(l1, ad::affine(dist, tcfg.cosine_weight, 0.0f));
            }
            row.l1 = l1.value.item();
            row.total = total.value.item();
            if (!std::isfinite(row.total))
                throw numeric_error("non-finite loss (l1=" + std::to_string(row.l1) +
                                    ", cosine=" + std::to_string(row.cosine) + ")");

            ad::Gradients grads = ad::backward(total);
            std::vector<Tensor> gv;
            gv.reserve(res.params.size());
            for (int i = 0; i < res.params.size(); ++i) gv.push_back(grads.at(bp.vars[i]));
            opt::adam_step(res.params, gv, res.state, (float)lr, tcfg.beta1, tcfg.beta2,
                           tcfg.eps, step);
        } catch (const numeric_error& e) {
            throw numeric_error("training aborted at step " + std::to_string(step) +
                                " (lr=" + std::to_string(lr) + "): " + e.what());
        }

        res.curve.push_back(row);
        if (hooks.on_step) hooks.on_step(row);
        if (step % steps_per_epoch == 0 && hooks.on_epoch)
            hooks.on_epoch((int)(step / steps_per_epoch), res.params, res.state, step);
    }
    res.steps = total_steps;
    return res;
}

// ---- checkpointing ----

inline void save_checkpoint(const std::string& path, const ParamStore& params,
                            const opt::AdamState& st, const TrainConfig& tcfg) {
    io::save_weights(path, params);
    ParamStore side;
    for (int i = 0; i < params.size(); ++i) side.add("m." + params.name(i), st.m[i]);
    for (int i = 0; i < params.size(); ++i) side.add("v." + params.name(i), st.v[i]);
    side.add("opt.step", Tensor::scalar(std::bit_cast<float>((std::uint32_t)st.step)));
    side.add("opt.cfg_hash", Tensor::scalar(std::bit_cast<float>(config_hash(tcfg))));
    io::save_weights(path + ".opt", side);
}

// Loads weights plus the optimizer sidecar and validates against the model
// schema and the training recipe's hash.
inline ResumePoint load_checkpoint(const std::string& path, const model::ModelConfig& mcfg,
                                   const TrainConfig& tcfg) {
    ResumePoint rp;
    rp.params = model::init_params(mcfg, 0);
    io::load_weights_into(path, rp.params);
    ParamStore side = io::load_weights(path + ".opt");
    rp.state = opt::AdamState::init(rp.params);
    for (int i = 0; i < rp.params.size(); ++i) {
        int mi = side.find("m." + rp.params.name(i));
        int vi = side.find("v." + rp.params.name(i));
        if (mi < 0 || vi < 0)
            throw data_error("optimizer sidecar " + path + ".opt is missing moments for " +
                             rp.params.name(i));
        rp.state.m[i] = side.value(mi);
        rp.state.v[i] = side.value(vi);
    }
    int si = side.find("opt.step"), hi = side.find("opt.cfg_hash");
    if (si < 0 || hi < 0)
        throw data_error("optimizer sidecar " + path + ".opt lacks step/config metadata");
    rp.state.step = (long long)std::bit_cast<std::uint32_t>(side.value(si).item());
    rp.step = rp.state.step;
    const std::uint32_t hash = std::bit_cast<std::uint32_t>(side.value(hi).item());
    if (hash != config_hash(tcfg))
        throw data_error("checkpoint " + path +
                         " was written under a different training config (hash mismatch)");
    return rp;
}

}  // namespace edib::train
