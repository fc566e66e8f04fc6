#include <catch2/catch_amalgamated.hpp>

#include <functional>
#include <random>
#include <vector>

#include "edib/autodiff.hpp"
#include "edib/tensor.hpp"
#include "edib/tensor_ops.hpp"
#include "edib/wavelet.hpp"

using Catch::Approx;
using edib::Shape;
using edib::Tensor;
namespace ad = edib::ad;
namespace ops = edib::ops;

namespace {

Tensor random_tensor(Shape s, std::mt19937& rng, float lo = -1.0f, float hi = 1.0f) {
    std::uniform_real_distribution<float> dist(lo, hi);
    Tensor t(s);
    float* p = t.mutable_data();
    for (long long i = 0; i < t.numel(); ++i) p[i] = dist(rng);
    return t;
}

using GraphFn = std::function<ad::Var(const std::vector<ad::Var>&)>;

// Finite-difference oracle: the graph output is projected to a scalar with a
// fixed random vector, each input element is perturbed centrally, and the
// quotient is compared against the recorded vector-Jacobian product.
void check_grads(const GraphFn& f, std::vector<Tensor> inputs, double h = 1e-3,
                 double rel = 2e-2, double abs_floor = 5e-4) {
    ad::GradTape tape;
    std::vector<ad::Var> leaves;
    leaves.reserve(inputs.size());
    for (const Tensor& t : inputs) leaves.push_back(ad::make_leaf(tape, t));
    ad::Var out = f(leaves);
    REQUIRE(out.tracked());

    std::mt19937 prng(1234);
    Tensor proj = random_tensor(out.shape(), prng);
    ad::Var loss = ad::sum_all(ad::mul(out, ad::make_const(proj)));
    ad::Gradients grads = ad::backward(loss);

    auto eval = [&](const std::vector<Tensor>& ins) {
        std::vector<ad::Var> consts;
        consts.reserve(ins.size());
        for (const Tensor& t : ins) consts.push_back(ad::make_const(t));
        Tensor o = f(consts).value;
        double s = 0.0;
        for (long long i = 0; i < o.numel(); ++i) s += (double)o.data()[i] * proj.data()[i];
        return s;
    };

    for (size_t k = 0; k < inputs.size(); ++k) {
        Tensor g = grads.at(leaves[k]);
        for (long long i = 0; i < inputs[k].numel(); ++i) {
            std::vector<Tensor> plus = inputs, minus = inputs;
            plus[k].mutable_data()[i] += (float)h;
            minus[k].mutable_data()[i] -= (float)h;
            double fd = (eval(plus) - eval(minus)) / (2.0 * h);
            double tol = std::max(abs_floor, rel * std::fabs(fd));
            REQUIRE(g.data()[i] == Approx(fd).margin(tol));
        }
    }
}

}  // namespace

TEST_CASE("conv2d gradients vs finite differences", "[autodiff]") {
    std::mt19937 rng(21);
    for (int stride : {1, 2}) {
        Tensor x = random_tensor({2, 2, 5, 6}, rng);
        Tensor w = random_tensor({3, 2, 3, 3}, rng);
        Tensor b = random_tensor({1, 3, 1, 1}, rng);
        check_grads(
            [stride](const std::vector<ad::Var>& in) {
                return ad::conv2d(in[0], in[1], &in[2], stride, 1);
            },
            {x, w, b});
    }
}

TEST_CASE("activation gradients vs finite differences", "[autodiff]") {
    std::mt19937 rng(22);
    Tensor x = random_tensor({1, 2, 4, 4}, rng, -3.0f, 3.0f);
    check_grads([](const std::vector<ad::Var>& in) { return ad::silu(in[0]); }, {x});
    check_grads([](const std::vector<ad::Var>& in) { return ad::sigmoid(in[0]); }, {x});
    // abs is non-smooth at zero; keep samples away from it.
    Tensor far = random_tensor({1, 2, 4, 4}, rng, 0.2f, 1.5f);
    Tensor sign = random_tensor({1, 2, 4, 4}, rng);
    float* fp = far.mutable_data();
    for (long long i = 0; i < far.numel(); ++i)
        if (sign.data()[i] < 0) fp[i] = -fp[i];
    check_grads([](const std::vector<ad::Var>& in) { return ad::abs(in[0]); }, {far});
}

TEST_CASE("arithmetic gradients vs finite differences", "[autodiff]") {
    std::mt19937 rng(23);
    Tensor a = random_tensor({2, 2, 3, 3}, rng);
    Tensor b = random_tensor({2, 2, 3, 3}, rng);
    check_grads([](const std::vector<ad::Var>& in) { return ad::add(in[0], in[1]); }, {a, b});
    check_grads([](const std::vector<ad::Var>& in) { return ad::sub(in[0], in[1]); }, {a, b});
    check_grads([](const std::vector<ad::Var>& in) { return ad::mul(in[0], in[1]); }, {a, b});
    check_grads([](const std::vector<ad::Var>& in) { return ad::affine(in[0], -1.7f, 0.4f); },
                {a});
}

TEST_CASE("channel plumbing gradients vs finite differences", "[autodiff]") {
    std::mt19937 rng(24);
    Tensor a = random_tensor({1, 2, 3, 4}, rng);
    Tensor b = random_tensor({1, 3, 3, 4}, rng);
    Tensor c = random_tensor({1, 1, 3, 4}, rng);
    check_grads(
        [](const std::vector<ad::Var>& in) {
            return ad::concat_channels({in[0], in[1], in[2]});
        },
        {a, b, c});
    check_grads([](const std::vector<ad::Var>& in) { return ad::slice_channels(in[0], 1, 3); },
                {b});
}

TEST_CASE("pooling and broadcast gradients vs finite differences", "[autodiff]") {
    std::mt19937 rng(25);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor s = random_tensor({2, 3, 1, 1}, rng);
    check_grads([](const std::vector<ad::Var>& in) { return ad::global_avg_pool(in[0]); }, {x});
    check_grads([](const std::vector<ad::Var>& in) { return ad::mul_channels(in[0], in[1]); },
                {x, s});
}

TEST_CASE("resampling gradients vs finite differences", "[autodiff]") {
    std::mt19937 rng(26);
    Tensor x = random_tensor({1, 2, 4, 4}, rng);
    check_grads([](const std::vector<ad::Var>& in) { return ad::upsample_nearest2x(in[0]); },
                {x});
    check_grads([](const std::vector<ad::Var>& in) { return ad::resize_bilinear(in[0], 7, 9); },
                {x});
    Tensor big = random_tensor({1, 2, 8, 6}, rng);
    check_grads([](const std::vector<ad::Var>& in) { return ad::resize_bilinear(in[0], 3, 4); },
                {big});
}

TEST_CASE("channel_norm gradients vs finite differences", "[autodiff]") {
    std::mt19937 rng(27);
    Tensor x = random_tensor({2, 2, 5, 5}, rng, -2.0f, 2.0f);
    Tensor gamma = random_tensor({1, 2, 1, 1}, rng, 0.5f, 1.5f);
    Tensor beta = random_tensor({1, 2, 1, 1}, rng);
    check_grads(
        [](const std::vector<ad::Var>& in) { return ad::channel_norm(in[0], in[1], in[2]); },
        {x, gamma, beta}, 1e-3, 3e-2, 1e-3);
}

TEST_CASE("reduction gradients vs finite differences", "[autodiff]") {
    std::mt19937 rng(28);
    Tensor x = random_tensor({2, 2, 3, 3}, rng);
    check_grads([](const std::vector<ad::Var>& in) { return ad::mean_all(in[0]); }, {x});
    check_grads([](const std::vector<ad::Var>& in) { return ad::sum_all(in[0]); }, {x});
}

TEST_CASE("cosine similarity gradients vs finite differences", "[autodiff]") {
    std::mt19937 rng(29);
    Tensor a = random_tensor({2, 2, 3, 3}, rng, 0.2f, 1.0f);
    Tensor b = random_tensor({2, 2, 3, 3}, rng, 0.2f, 1.0f);
    check_grads(
        [](const std::vector<ad::Var>& in) { return ad::cosine_sim_per_sample(in[0], in[1]); },
        {a, b});
}

TEST_CASE("cosine similarity guards zero vectors with zero gradient", "[autodiff]") {
    ad::GradTape tape;
    ad::Var a = ad::make_leaf(tape, Tensor::zeros({1, 1, 2, 2}));
    ad::Var b = ad::make_leaf(tape, Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
    ad::Var c = ad::cosine_sim_per_sample(a, b);
    REQUIRE(c.value.item() == 0.0f);
    ad::Gradients g = ad::backward(ad::sum_all(c));
    for (long long i = 0; i < 4; ++i) {
        REQUIRE(g.at(a).data()[i] == 0.0f);
        REQUIRE(g.at(b).data()[i] == 0.0f);
    }
}

TEST_CASE("wavelet transform gradients vs finite differences", "[autodiff]") {
    std::mt19937 rng(30);
    const auto basis = edib::wav::WaveletBasis::make("haar");
    Tensor x = random_tensor({1, 2, 4, 6}, rng);
    check_grads(
        [&basis](const std::vector<ad::Var>& in) { return ad::dwt2_stacked(in[0], basis); },
        {x});
    Tensor sb = random_tensor({1, 8, 2, 3}, rng);
    check_grads(
        [&basis](const std::vector<ad::Var>& in) { return ad::idwt2_stacked(in[0], basis); },
        {sb});
}

TEST_CASE("reused values accumulate gradient from every consumer", "[autodiff]") {
    std::mt19937 rng(31);
    Tensor x = random_tensor({1, 1, 2, 2}, rng);
    // f(x) = x*x + x used twice plus a concat re-use.
    check_grads(
        [](const std::vector<ad::Var>& in) {
            ad::Var sq = ad::mul(in[0], in[0]);
            ad::Var both = ad::add(sq, in[0]);
            return ad::concat_channels({both, in[0]});
        },
        {x});
}

TEST_CASE("composite block gradient matches finite differences", "[autodiff]") {
    std::mt19937 rng(32);
    Tensor x = random_tensor({1, 3, 6, 6}, rng);
    Tensor w1 = random_tensor({3, 3, 3, 3}, rng, -0.4f, 0.4f);
    Tensor b1 = random_tensor({1, 3, 1, 1}, rng, -0.1f, 0.1f);
    Tensor w2 = random_tensor({3, 3, 3, 3}, rng, -0.4f, 0.4f);
    Tensor b2 = random_tensor({1, 3, 1, 1}, rng, -0.1f, 0.1f);
    check_grads(
        [](const std::vector<ad::Var>& in) {
            ad::Var h = ad::silu(ad::conv2d(in[0], in[1], &in[2], 1, 1));
            return ad::add(in[0], ad::conv2d(h, in[3], &in[4], 1, 1));
        },
        {x, w1, b1, w2, b2});
}

TEST_CASE("tape bookkeeping errors", "[autodiff]") {
    ad::GradTape t1, t2;
    ad::Var a = ad::make_leaf(t1, Tensor::scalar(1.0f));
    ad::Var b = ad::make_leaf(t2, Tensor::scalar(2.0f));
    REQUIRE_THROWS_AS(ad::add(a, b), edib::shape_error);

    ad::Var big = ad::make_leaf(t1, Tensor::full({1, 1, 2, 2}, 1.0f));
    REQUIRE_THROWS_AS(ad::backward(big), edib::shape_error);

    ad::Var untracked = ad::make_const(Tensor::scalar(1.0f));
    REQUIRE_THROWS_AS(ad::backward(untracked), edib::shape_error);
}

TEST_CASE("constants are not recorded and untouched leaves read as zeros", "[autodiff]") {
    ad::GradTape tape;
    ad::Var x = ad::make_leaf(tape, Tensor::scalar(3.0f));
    ad::Var unused = ad::make_leaf(tape, Tensor::full({1, 1, 2, 2}, 1.0f));
    ad::Var k = ad::make_const(Tensor::scalar(4.0f));
    int before = tape.size();
    ad::Var y = ad::mul(ad::make_const(Tensor::scalar(2.0f)), k);
    REQUIRE_FALSE(y.tracked());
    REQUIRE(tape.size() == before);

    ad::Gradients g = ad::backward(ad::mul(x, ad::make_const(Tensor::scalar(5.0f))));
    REQUIRE(g.at(x).item() == Approx(5.0f));
    REQUIRE_FALSE(g.has(unused));
    REQUIRE(g.at(unused).shape() == Shape{1, 1, 2, 2});
    REQUIRE(g.at(unused).data()[0] == 0.0f);
}
