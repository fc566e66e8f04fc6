#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "edib/optimizer.hpp"
#include "edib/params.hpp"
#include "edib/tensor.hpp"

using Catch::Approx;
using edib::ParamStore;
using edib::Shape;
using edib::Tensor;
namespace opt = edib::opt;

namespace {

// Scalar Adam reference in double precision, straight from the update rule.
struct ScalarAdamRef {
    double m = 0.0, v = 0.0;
    long long t = 0;

    double step(double p, double g, double lr, double b1 = 0.9, double b2 = 0.999,
                double eps = 1e-8) {
        ++t;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        double mhat = m / (1.0 - std::pow(b1, (double)t));
        double vhat = v / (1.0 - std::pow(b2, (double)t));
        return p - lr * mhat / (std::sqrt(vhat) + eps);
    }
};

}  // namespace

TEST_CASE("first adam update moves by almost exactly lr", "[optimizer]") {
    // With bias correction, step one reduces to p -= lr * g/(|g| + eps).
    ParamStore params;
    params.add("p", Tensor::scalar(1.0f));
    opt::AdamState st = opt::AdamState::init(params);
    opt::adam_step(params, {Tensor::scalar(0.1f)}, st, 1e-4f);
    REQUIRE(params.value(0).item() == Approx(1.0 - 1e-4).epsilon(1e-6));
    REQUIRE(st.step == 1);
}

TEST_CASE("adam trajectory matches scalar double reference", "[optimizer]") {
    std::mt19937 rng(51);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    ParamStore params;
    params.add("p", Tensor({1, 1, 1, 3}, {0.5f, -0.25f, 2.0f}));
    opt::AdamState st = opt::AdamState::init(params);
    ScalarAdamRef ref[3];
    double refp[3] = {0.5, -0.25, 2.0};
    for (int step = 0; step < 50; ++step) {
        Tensor g({1, 1, 1, 3}, {dist(rng), dist(rng), dist(rng)});
        opt::adam_step(params, {g}, st, 1e-3f);
        for (int i = 0; i < 3; ++i) refp[i] = ref[i].step(refp[i], g.data()[i], 1e-3);
        for (int i = 0; i < 3; ++i)
            REQUIRE(params.value(0).data()[i] == Approx(refp[i]).margin(1e-5));
    }
}

TEST_CASE("adam rejects mismatched gradients", "[optimizer]") {
    ParamStore params;
    params.add("a", Tensor::zeros({1, 2, 3, 3}));
    opt::AdamState st = opt::AdamState::init(params);
    REQUIRE_THROWS_AS(opt::adam_step(params, {}, st, 1e-3f), edib::shape_error);
    REQUIRE_THROWS_AS(opt::adam_step(params, {Tensor::zeros({1, 2, 3, 4})}, st, 1e-3f),
                      edib::shape_error);
    REQUIRE_THROWS_AS(
        opt::adam_step(params, {Tensor::full({1, 2, 3, 3}, std::nanf(""))}, st, 1e-3f),
        edib::numeric_error);
}

TEST_CASE("adam updates are bitwise repeatable", "[optimizer]") {
    auto run = [] {
        ParamStore params;
        params.add("p", Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
        opt::AdamState st = opt::AdamState::init(params);
        for (int i = 0; i < 10; ++i) {
            Tensor g({1, 1, 2, 2},
                     {0.1f * (i + 1), -0.2f, 0.05f * i, 0.3f});
            opt::adam_step(params, {g}, st, 2e-3f);
        }
        return params.value(0);
    };
    Tensor a = run(), b = run();
    for (long long i = 0; i < a.numel(); ++i) REQUIRE(a.data()[i] == b.data()[i]);
}

TEST_CASE("cosine schedule endpoints and midpoints", "[optimizer]") {
    const double lr0 = 3e-4;
    REQUIRE(opt::cosine_lr(0, 1000, lr0) == Approx(lr0));
    REQUIRE(opt::cosine_lr(1000, 1000, lr0) == Approx(0.0).margin(1e-12));
    REQUIRE(opt::cosine_lr(500, 1000, lr0) == Approx(lr0 / 2));
    REQUIRE(opt::cosine_lr(250, 1000, lr0) == Approx(lr0 * 0.5 * (1.0 + std::cos(M_PI / 4))));
    // Monotone non-increasing over the whole range.
    double prev = opt::cosine_lr(0, 177, lr0);
    for (long long t = 1; t <= 177; ++t) {
        double cur = opt::cosine_lr(t, 177, lr0);
        REQUIRE(cur <= prev + 1e-15);
        prev = cur;
    }
    REQUIRE_THROWS_AS(opt::cosine_lr(0, 0, lr0), edib::shape_error);
}

TEST_CASE("explicit-step adam matches the stateful overload", "[optimizer]") {
    auto make = [] {
        ParamStore p;
        Tensor w = Tensor::zeros({1, 1, 2, 2});
        float* d = w.mutable_data();
        for (int i = 0; i < 4; ++i) d[i] = 0.3f * (i + 1);
        p.add("w", w);
        return p;
    };
    ParamStore pa = make(), pb = make();
    opt::AdamState sa = opt::AdamState::init(pa), sb = opt::AdamState::init(pb);
    Tensor g = Tensor::full({1, 1, 2, 2}, 0.25f);
    for (int t = 1; t <= 7; ++t) {
        opt::adam_step(pa, {g}, sa, 1e-3f);
        opt::adam_step(pb, {g}, sb, 1e-3f, 0.9f, 0.999f, 1e-8f, t);
    }
    REQUIRE(sa.step == sb.step);
    for (int i = 0; i < 4; ++i) REQUIRE(pa.value(0).data()[i] == pb.value(0).data()[i]);
    REQUIRE_THROWS_AS(opt::adam_step(pa, {g}, sa, 1e-3f, 0.9f, 0.999f, 1e-8f, 0),
                      edib::shape_error);
}

TEST_CASE("adam with zero learning rate leaves parameters unchanged", "[optimizer]") {
    ParamStore p;
    Tensor w = Tensor::full({1, 2, 2, 2}, 1.5f);
    p.add("w", w);
    opt::AdamState st = opt::AdamState::init(p);
    opt::adam_step(p, {Tensor::full({1, 2, 2, 2}, 0.7f)}, st, 0.0f);
    for (long long i = 0; i < w.numel(); ++i) REQUIRE(p.value(0).data()[i] == 1.5f);
    REQUIRE(st.step == 1);
}
