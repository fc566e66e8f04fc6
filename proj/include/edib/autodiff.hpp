#pragma once

#include <array>
#include <functional>
#include <utility>
#include <vector>

#include "edib/tensor.hpp"
#include "edib/tensor_ops.hpp"
#include "edib/wavelet.hpp"

// Reverse-mode autodiff. Ops record nodes on a GradTape as they execute; a
// node stores its parents and a closure producing vector-Jacobian products.
// Vars with no tape attached skip recording entirely, so the same forward
// code serves training and inference. Parent indices always precede child
// indices, so the backward sweep is a single reverse pass over the tape.

namespace edib::ad {

class GradTape {
  public:
    struct Node {
        Shape shape;
        std::vector<int> parents;  // -1 marks an untracked input
        std::function<std::vector<Tensor>(const Tensor&)> vjp;  // empty for leaves
    };

    int add_node(Shape shape, std::vector<int> parents,
                 std::function<std::vector<Tensor>(const Tensor&)> vjp) {
        nodes_.push_back({shape, std::move(parents), std::move(vjp)});
        return (int)nodes_.size() - 1;
    }

    const Node& node(int i) const { return nodes_[i]; }
    int size() const { return (int)nodes_.size(); }
    void clear() { nodes_.clear(); }

  private:
    std::vector<Node> nodes_;
};

struct Var {
    Tensor value;
    GradTape* tape = nullptr;
    int node = -1;

    bool tracked() const { return tape != nullptr && node >= 0; }
    const Shape& shape() const { return value.shape(); }
};

inline Var make_leaf(GradTape& tape, Tensor v) {
    Shape s = v.shape();
    return {std::move(v), &tape, tape.add_node(s, {}, nullptr)};
}

inline Var make_const(Tensor v) { return {std::move(v), nullptr, -1}; }

namespace detail {

inline GradTape* join_tape(std::initializer_list<const Var*> vars) {
    GradTape* t = nullptr;
    for (const Var* v : vars) {
        if (!v->tape) continue;
        if (t && t != v->tape)
            throw shape_error("autodiff: operands recorded on different tapes");
        t = v->tape;
    }
    return t;
}

inline int parent_id(const Var& v, GradTape* t) {
    return (t && v.tape == t) ? v.node : -1;
}

}  // namespace detail

class Gradients {
  public:
    explicit Gradients(std::vector<Tensor> by_node) : by_node_(std::move(by_node)) {}

    bool has(const Var& v) const {
        return v.tracked() && v.node < (int)by_node_.size() && by_node_[v.node].defined();
    }

    // Gradient of the loss w.r.t. v; untouched nodes yield zeros.
    Tensor at(const Var& v) const {
        if (!v.tracked()) throw shape_error("Gradients::at: var is not on a tape");
        if (!has(v)) return Tensor::zeros(v.shape());
        return by_node_[v.node];
    }

  private:
    std::vector<Tensor> by_node_;
};

inline Gradients backward(const Var& loss) {
    if (!loss.tracked()) throw shape_error("backward: loss is not recorded on a tape");
    if (loss.value.numel() != 1)
        throw shape_error("backward: loss must be scalar, got " + loss.shape().str());
    GradTape& tape = *loss.tape;
    std::vector<Tensor> grads(tape.size());
    grads[loss.node] = Tensor::scalar(1.0f);
    for (int i = loss.node; i >= 0; --i) {
        if (!grads[i].defined()) continue;
        const GradTape::Node& nd = tape.node(i);
        if (!nd.vjp) continue;
        std::vector<Tensor> parts = nd.vjp(grads[i]);
        for (size_t j = 0; j < nd.parents.size(); ++j) {
            int p = nd.parents[j];
            if (p < 0 || !parts[j].defined()) continue;
            if (!grads[p].defined())
                grads[p] = parts[j];
            else
                grads[p] = ops::add(grads[p], parts[j]);
        }
        grads[i] = Tensor();  // free intermediate gradient storage early
    }
    return Gradients(std::move(grads));
}

// ---- recorded operations ----

inline Var conv2d(const Var& x, const Var& w, const Var* bias, int stride, int pad) {
    Tensor out = ops::conv2d(x.value, w.value, bias ? &bias->value : nullptr, stride, pad);
    GradTape* t = bias ? detail::join_tape({&x, &w, bias}) : detail::join_tape({&x, &w});
    if (!t) return make_const(std::move(out));
    int px = detail::parent_id(x, t), pw = detail::parent_id(w, t);
    int pb = bias ? detail::parent_id(*bias, t) : -1;
    Tensor xv = x.value, wv = w.value;
    Shape xs = x.shape(), ws = w.shape();
    bool nx = px >= 0, nw = pw >= 0, nb = pb >= 0;
    auto vjp = [=](const Tensor& g) {
        std::vector<Tensor> r(3);
        if (nx) r[0] = ops::conv2d_grad_input(g, wv, xs, stride, pad);
        if (nw) r[1] = ops::conv2d_grad_weight(g, xv, ws, stride, pad);
        if (nb) r[2] = ops::conv2d_grad_bias(g);
        return r;
    };
    return {out, t, t->add_node(out.shape(), {px, pw, pb}, vjp)};
}

inline Var silu(const Var& x) {
    Tensor out = ops::silu(x.value);
    if (!x.tracked()) return make_const(std::move(out));
    Tensor xv = x.value;
    auto vjp = [xv](const Tensor& g) {
        Tensor dx = ops::zip(g, xv,
                             [](float gv, float v) {
                                 float s = ops::sigmoid_stable(v);
                                 return gv * s * (1.0f + v * (1.0f - s));
                             },
                             "silu_grad");
        return std::vector<Tensor>{dx};
    };
    return {out, x.tape, x.tape->add_node(out.shape(), {x.node}, vjp)};
}

inline Var sigmoid(const Var& x) {
    Tensor out = ops::sigmoid(x.value);
    if (!x.tracked()) return make_const(std::move(out));
    Tensor y = out;
    auto vjp = [y](const Tensor& g) {
        Tensor dx = ops::zip(g, y, [](float gv, float yv) { return gv * yv * (1.0f - yv); },
                             "sigmoid_grad");
        return std::vector<Tensor>{dx};
    };
    return {out, x.tape, x.tape->add_node(out.shape(), {x.node}, vjp)};
}

inline Var add(const Var& a, const Var& b) {
    Tensor out = ops::add(a.value, b.value);
    GradTape* t = detail::join_tape({&a, &b});
    if (!t) return make_const(std::move(out));
    auto vjp = [](const Tensor& g) { return std::vector<Tensor>{g, g}; };
    return {out, t, t->add_node(out.shape(), {detail::parent_id(a, t), detail::parent_id(b, t)}, vjp)};
}

inline Var sub(const Var& a, const Var& b) {
    Tensor out = ops::sub(a.value, b.value);
    GradTape* t = detail::join_tape({&a, &b});
    if (!t) return make_const(std::move(out));
    auto vjp = [](const Tensor& g) {
        return std::vector<Tensor>{g, ops::affine(g, -1.0f, 0.0f)};
    };
    return {out, t, t->add_node(out.shape(), {detail::parent_id(a, t), detail::parent_id(b, t)}, vjp)};
}

inline Var mul(const Var& a, const Var& b) {
    Tensor out = ops::mul(a.value, b.value);
    GradTape* t = detail::join_tape({&a, &b});
    if (!t) return make_const(std::move(out));
    Tensor av = a.value, bv = b.value;
    auto vjp = [av, bv](const Tensor& g) {
        return std::vector<Tensor>{ops::mul(g, bv), ops::mul(g, av)};
    };
    return {out, t, t->add_node(out.shape(), {detail::parent_id(a, t), detail::parent_id(b, t)}, vjp)};
}

inline Var affine(const Var& x, float scale, float shift) {
    Tensor out = ops::affine(x.value, scale, shift);
    if (!x.tracked()) return make_const(std::move(out));
    auto vjp = [scale](const Tensor& g) {
        return std::vector<Tensor>{ops::affine(g, scale, 0.0f)};
    };
    return {out, x.tape, x.tape->add_node(out.shape(), {x.node}, vjp)};
}

inline Var concat_channels(const std::vector<Var>& parts) {
    std::vector<Tensor> vals;
    vals.reserve(parts.size());
    GradTape* t = nullptr;
    for (const Var& p : parts) {
        vals.push_back(p.value);
        if (p.tape) {
            if (t && t != p.tape)
                throw shape_error("autodiff: operands recorded on different tapes");
            t = p.tape;
        }
    }
    Tensor out = ops::concat_channels(vals);
    if (!t) return make_const(std::move(out));
    std::vector<int> parents;
    std::vector<int> spans;
    for (const Var& p : parts) {
        parents.push_back(detail::parent_id(p, t));
        spans.push_back(p.shape().c);
    }
    auto vjp = [spans](const Tensor& g) {
        std::vector<Tensor> r;
        int c0 = 0;
        for (int span : spans) {
            r.push_back(ops::slice_channels(g, c0, c0 + span));
            c0 += span;
        }
        return r;
    };
    return {out, t, t->add_node(out.shape(), std::move(parents), vjp)};
}

inline Var slice_channels(const Var& x, int c0, int c1) {
    Tensor out = ops::slice_channels(x.value, c0, c1);
    if (!x.tracked()) return make_const(std::move(out));
    int ctot = x.shape().c;
    auto vjp = [ctot, c0](const Tensor& g) {
        return std::vector<Tensor>{ops::pad_channels_into(g, ctot, c0)};
    };
    return {out, x.tape, x.tape->add_node(out.shape(), {x.node}, vjp)};
}

inline Var global_avg_pool(const Var& x) {
    Tensor out = ops::global_avg_pool(x.value);
    if (!x.tracked()) return make_const(std::move(out));
    Shape xs = x.shape();
    auto vjp = [xs](const Tensor& g) {
        Tensor dx(xs);
        float* dd = dx.mutable_data();
        const float* gd = g.data();
        const float inv = 1.0f / ((float)xs.h * xs.w);
        long long plane = 1LL * xs.h * xs.w;
        for (int n = 0; n < xs.n; ++n)
            for (int c = 0; c < xs.c; ++c) {
                float v = gd[1LL * n * xs.c + c] * inv;
                float* dst = dd + (1LL * n * xs.c + c) * plane;
                for (long long i = 0; i < plane; ++i) dst[i] = v;
            }
        return std::vector<Tensor>{dx};
    };
    return {out, x.tape, x.tape->add_node(out.shape(), {x.node}, vjp)};
}

inline Var mul_channels(const Var& x, const Var& scale) {
    Tensor out = ops::mul_channels(x.value, scale.value);
    GradTape* t = detail::join_tape({&x, &scale});
    if (!t) return make_const(std::move(out));
    Tensor xv = x.value, sv = scale.value;
    auto vjp = [xv, sv](const Tensor& g) {
        return std::vector<Tensor>{ops::mul_channels(g, sv), ops::sum_spatial_product(g, xv)};
    };
    return {out, t,
            t->add_node(out.shape(), {detail::parent_id(x, t), detail::parent_id(scale, t)}, vjp)};
}

inline Var upsample_nearest2x(const Var& x) {
    Tensor out = ops::upsample_nearest2x(x.value);
    if (!x.tracked()) return make_const(std::move(out));
    auto vjp = [](const Tensor& g) {
        return std::vector<Tensor>{ops::upsample_nearest2x_backward(g)};
    };
    return {out, x.tape, x.tape->add_node(out.shape(), {x.node}, vjp)};
}

inline Var resize_bilinear(const Var& x, int oh, int ow) {
    Tensor out = ops::resize_bilinear(x.value, oh, ow);
    if (!x.tracked()) return make_const(std::move(out));
    int ih = x.shape().h, iw = x.shape().w;
    auto vjp = [ih, iw](const Tensor& g) {
        return std::vector<Tensor>{ops::resize_bilinear_backward(g, ih, iw)};
    };
    return {out, x.tape, x.tape->add_node(out.shape(), {x.node}, vjp)};
}

inline Var channel_norm(const Var& x, const Var& gamma, const Var& beta, float eps = 1e-5f) {
    ops::ChannelNormStats st = ops::channel_norm_fwd(x.value, gamma.value, beta.value, eps);
    GradTape* t = detail::join_tape({&x, &gamma, &beta});
    if (!t) return make_const(std::move(st.y));
    Tensor xv = x.value, gv = gamma.value;
    std::vector<float> mean = st.mean, inv = st.inv_std;
    Shape xs = x.shape();
    auto vjp = [=](const Tensor& g) {
        Tensor dx(xs), dgamma({1, xs.c, 1, 1}), dbeta({1, xs.c, 1, 1});
        float* dxd = dx.mutable_data();
        float* dgd = dgamma.mutable_data();
        float* dbd = dbeta.mutable_data();
        const float* gd = g.data();
        const float* xd = xv.data();
        const float* gammad = gv.data();
        const long long plane = 1LL * xs.h * xs.w;
        std::vector<double> dg_acc(xs.c, 0.0), db_acc(xs.c, 0.0);
        for (int n = 0; n < xs.n; ++n)
            for (int c = 0; c < xs.c; ++c) {
                const long long off = (1LL * n * xs.c + c) * plane;
                const float m = mean[1LL * n * xs.c + c];
                const float is = inv[1LL * n * xs.c + c];
                double gsum = 0.0, gxsum = 0.0;
                for (long long i = 0; i < plane; ++i) {
                    float xh = (xd[off + i] - m) * is;
                    gsum += gd[off + i];
                    gxsum += (double)gd[off + i] * xh;
                    db_acc[c] += gd[off + i];
                    dg_acc[c] += (double)gd[off + i] * xh;
                }
                const float gmean = (float)(gsum / plane);
                const float gxmean = (float)(gxsum / plane);
                const float scale = gammad[c] * is;
                for (long long i = 0; i < plane; ++i) {
                    float xh = (xd[off + i] - m) * is;
                    dxd[off + i] = scale * (gd[off + i] - gmean - xh * gxmean);
                }
            }
        for (int c = 0; c < xs.c; ++c) {
            dgd[c] = (float)dg_acc[c];
            dbd[c] = (float)db_acc[c];
        }
        return std::vector<Tensor>{dx, dgamma, dbeta};
    };
    return {st.y, t,
            t->add_node(xs,
                        {detail::parent_id(x, t), detail::parent_id(gamma, t),
                         detail::parent_id(beta, t)},
                        vjp)};
}

inline Var abs(const Var& x) {
    Tensor out = ops::abs_t(x.value);
    if (!x.tracked()) return make_const(std::move(out));
    Tensor xv = x.value;
    auto vjp = [xv](const Tensor& g) {
        Tensor dx = ops::zip(g, xv,
                             [](float gv, float v) {
                                 return v > 0.0f ? gv : (v < 0.0f ? -gv : 0.0f);
                             },
                             "abs_grad");
        return std::vector<Tensor>{dx};
    };
    return {out, x.tape, x.tape->add_node(out.shape(), {x.node}, vjp)};
}

inline Var mean_all(const Var& x) {
    Tensor out = ops::mean_all(x.value);
    if (!x.tracked()) return make_const(std::move(out));
    Shape xs = x.shape();
    auto vjp = [xs](const Tensor& g) {
        return std::vector<Tensor>{Tensor::full(xs, g.data()[0] / (float)xs.numel())};
    };
    return {out, x.tape, x.tape->add_node(out.shape(), {x.node}, vjp)};
}

inline Var sum_all(const Var& x) {
    Tensor out = ops::sum_all(x.value);
    if (!x.tracked()) return make_const(std::move(out));
    Shape xs = x.shape();
    auto vjp = [xs](const Tensor& g) {
        return std::vector<Tensor>{Tensor::full(xs, g.data()[0])};
    };
    return {out, x.tape, x.tape->add_node(out.shape(), {x.node}, vjp)};
}

// Per-sample cosine similarity flattened over (c,h,w), output (n,1,1,1).
// Samples whose norms fall below eps contribute cosine 0 with zero gradient,
// so all-black patches cannot produce NaNs.
inline Var cosine_sim_per_sample(const Var& a, const Var& b, float eps = 1e-8f) {
    const Shape s = a.shape();
    if (!(s == b.shape()))
        throw shape_error("cosine_sim_per_sample: shape mismatch " + s.str() + " vs " +
                          b.shape().str());
    const long long per = 1LL * s.c * s.h * s.w;
    std::vector<double> dots(s.n), nas(s.n), nbs(s.n);
    Tensor out({s.n, 1, 1, 1});
    float* od = out.mutable_data();
    for (int n = 0; n < s.n; ++n) {
        const float* pa = a.value.data() + n * per;
        const float* pb = b.value.data() + n * per;
        double dot = 0.0, na2 = 0.0, nb2 = 0.0;
        for (long long i = 0; i < per; ++i) {
            dot += (double)pa[i] * pb[i];
            na2 += (double)pa[i] * pa[i];
            nb2 += (double)pb[i] * pb[i];
        }
        dots[n] = dot;
        nas[n] = std::sqrt(na2);
        nbs[n] = std::sqrt(nb2);
        od[n] = (nas[n] < eps || nbs[n] < eps) ? 0.0f : (float)(dot / (nas[n] * nbs[n]));
    }
    require_finite(out, "cosine_sim_per_sample");
    GradTape* t = detail::join_tape({&a, &b});
    if (!t) return make_const(std::move(out));
    Tensor av = a.value, bv = b.value;
    auto vjp = [=](const Tensor& g) {
        Tensor da(s), db(s);
        float* dad = da.mutable_data();
        float* dbd = db.mutable_data();
        const float* gd = g.data();
        for (int n = 0; n < s.n; ++n) {
            const double na = nas[n], nb = nbs[n];
            float* wa = dad + n * per;
            float* wb = dbd + n * per;
            if (na < eps || nb < eps) continue;  // gradient stays zero
            const float* pa = av.data() + n * per;
            const float* pb = bv.data() + n * per;
            const double c = dots[n] / (na * nb);
            const float gn = gd[n];
            const float inv_ab = (float)(1.0 / (na * nb));
            const float ca = (float)(c / (na * na));
            const float cb = (float)(c / (nb * nb));
            for (long long i = 0; i < per; ++i) {
                wa[i] = gn * (pb[i] * inv_ab - ca * pa[i]);
                wb[i] = gn * (pa[i] * inv_ab - cb * pb[i]);
            }
        }
        return std::vector<Tensor>{da, db};
    };
    return {out, t,
            t->add_node(out.shape(), {detail::parent_id(a, t), detail::parent_id(b, t)}, vjp)};
}

inline Var dwt2_stacked(const Var& x, const wav::WaveletBasis& basis) {
    Tensor out = wav::dwt2_stacked(x.value, basis);
    if (!x.tracked()) return make_const(std::move(out));
    auto lo = basis.dec_lo, hi = basis.dec_hi;
    auto vjp = [lo, hi](const Tensor& g) {
        // Adjoint of the analysis transform is the synthesis structure run
        // with the analysis taps.
        return std::vector<Tensor>{wav::idwt2_stacked_taps(g, lo, hi)};
    };
    return {out, x.tape, x.tape->add_node(out.shape(), {x.node}, vjp)};
}

inline Var idwt2_stacked(const Var& sb, const wav::WaveletBasis& basis) {
    Tensor out = wav::idwt2_stacked(sb.value, basis);
    if (!sb.tracked()) return make_const(std::move(out));
    auto lo = basis.rec_lo, hi = basis.rec_hi;
    auto vjp = [lo, hi](const Tensor& g) {
        return std::vector<Tensor>{wav::dwt2_stacked_taps(g, lo, hi)};
    };
    return {out, sb.tape, sb.tape->add_node(out.shape(), {sb.node}, vjp)};
}

}  // namespace edib::ad
