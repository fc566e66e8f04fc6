#pragma once

#include <cmath>
#include <vector>

#include "edib/params.hpp"
#include "edib/tensor.hpp"

namespace edib::opt {

struct AdamConfig {
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;  // added outside the square root
};

struct AdamState {
    long long step = 0;  // number of completed updates
    std::vector<Tensor> m, v;

    static AdamState init(const ParamStore& params) {
        AdamState st;
        st.m.reserve(params.size());
        st.v.reserve(params.size());
        for (int i = 0; i < params.size(); ++i) {
            st.m.push_back(Tensor::zeros(params.value(i).shape()));
            st.v.push_back(Tensor::zeros(params.value(i).shape()));
        }
        return st;
    }
};

// One Adam update over every parameter, in store order. step is the 1-based
// index of this update and drives bias correction. grads must align with the
// store element for element; anything else is a caller bug and is rejected
// rather than silently broadcast.
inline void adam_step(ParamStore& params, const std::vector<Tensor>& grads, AdamState& st,
                      float lr, float beta1, float beta2, float eps, long long step) {
    if ((int)grads.size() != params.size() || (int)st.m.size() != params.size() ||
        (int)st.v.size() != params.size())
        throw shape_error("adam_step: gradient/state count does not match parameter count");
    if (step < 1) throw shape_error("adam_step: step must be >= 1");
    const float c1 = (float)(1.0 / (1.0 - std::pow((double)beta1, (double)step)));
    const float c2 = (float)(1.0 / (1.0 - std::pow((double)beta2, (double)step)));
    for (int i = 0; i < params.size(); ++i) {
        const Tensor& g = grads[i];
        if (!(g.shape() == params.value(i).shape()))
            throw shape_error("adam_step: gradient for " + params.name(i) + " has shape " +
                              g.shape().str() + ", parameter has " +
                              params.value(i).shape().str());
        Tensor p = params.value(i);
        float* pd = p.mutable_data();
        float* md = st.m[i].mutable_data();
        float* vd = st.v[i].mutable_data();
        const float* gd = g.data();
        const long long n = p.numel();
        for (long long k = 0; k < n; ++k) {
            md[k] = beta1 * md[k] + (1.0f - beta1) * gd[k];
            vd[k] = beta2 * vd[k] + (1.0f - beta2) * gd[k] * gd[k];
            const float mhat = md[k] * c1;
            const float vhat = vd[k] * c2;
            pd[k] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
        require_finite(p, "adam_step");
        params.set_value(i, std::move(p));
    }
    st.step = step;
}

inline void adam_step(ParamStore& params, const std::vector<Tensor>& grads, AdamState& st,
                      float lr, const AdamConfig& cfg = {}) {
    adam_step(params, grads, st, lr, cfg.beta1, cfg.beta2, cfg.eps, st.step + 1);
}

// Cosine decay from lr0 at step 0 to 0 at step total: lr0*(1+cos(pi*t/T))/2.
inline double cosine_lr(long long step, long long total_steps, double lr0) {
    if (total_steps < 1) throw shape_error("cosine_lr: total_steps must be >= 1");
    if (step < 0) step = 0;
    if (step > total_steps) step = total_steps;
    return lr0 * 0.5 * (1.0 + std::cos(M_PI * (double)step / (double)total_steps));
}

}  // namespace edib::opt
