#include <catch2/catch_amalgamated.hpp>

#include <string>

#include "edib/blur.hpp"
#include "edib/config_io.hpp"
#include "edib/image_io.hpp"
#include "edib/weights_io.hpp"

using Catch::Approx;
using edib::Tensor;
namespace io = edib::io;

namespace {
const std::string kRoot = EDIB_SOURCE_DIR;
}

TEST_CASE("weight container fixture decodes to the pinned values", "[io]") {
    edib::ParamStore store = io::load_weights(kRoot + "/fixtures/weights_tiny.edbw");
    REQUIRE(store.size() == 2);
    REQUIRE(store.name(0) == "conv.weight");
    REQUIRE((store.value(0).shape() == edib::Shape{1, 2, 2, 2}));
    const float want[8] = {0.5f, -0.25f, 1.5f, -2.0f, 0.125f, 3.0f, -0.5f, 0.75f};
    for (int i = 0; i < 8; ++i) REQUIRE(store.value(0).data()[i] == want[i]);
    REQUIRE(store.name(1) == "conv.bias");
    REQUIRE(store.value(1).data()[0] == 42.0f);
}

TEST_CASE("pixmap fixtures decode to the pinned values", "[io]") {
    Tensor g8 = io::load_image(kRoot + "/fixtures/tiny.pgm");
    REQUIRE((g8.shape() == edib::Shape{1, 1, 2, 2}));
    REQUIRE(g8.data()[0] == 0.0f);
    REQUIRE(g8.data()[1] == Approx(64.0 / 255.0));
    REQUIRE(g8.data()[2] == Approx(128.0 / 255.0));
    REQUIRE(g8.data()[3] == 1.0f);

    Tensor g16 = io::load_image(kRoot + "/fixtures/tiny16.pgm");
    REQUIRE((g16.shape() == edib::Shape{1, 1, 2, 2}));
    REQUIRE(g16.data()[0] == 0.0f);
    REQUIRE(g16.data()[1] == Approx(1.0 / 65535.0));
    REQUIRE(g16.data()[2] == Approx(32768.0 / 65535.0));
    REQUIRE(g16.data()[3] == 1.0f);

    Tensor c8 = io::load_image(kRoot + "/fixtures/tiny.ppm");
    REQUIRE((c8.shape() == edib::Shape{1, 3, 1, 2}));
    REQUIRE(c8.data()[0] == 1.0f);                       // r of px0
    REQUIRE(c8.data()[1] == Approx(128.0 / 255.0));      // r of px1
    REQUIRE(c8.data()[2] == 0.0f);                       // g of px0
    REQUIRE(c8.data()[4] == 0.0f);                       // b of px0
}

TEST_CASE("png fixtures decode to the pinned values", "[io]") {
    Tensor img = io::load_image(kRoot + "/fixtures/tiny.png");
    REQUIRE((img.shape() == edib::Shape{1, 3, 2, 2}));
    REQUIRE(img.data()[0] == 0.0f);
    REQUIRE(img.data()[1] == 1.0f);
    REQUIRE(img.data()[2] == Approx(64.0 / 255.0));
    REQUIRE(img.data()[3] == Approx(128.0 / 255.0));
    REQUIRE(img.data()[4] == 1.0f);                       // g channel starts
    REQUIRE(img.data()[11] == Approx(250.0 / 255.0));

    // Depth fixture under the millimeter convention: per-image max puts the
    // plateau at 0.25, fixed range puts it at 0.1.
    Tensor rel = io::load_depth(kRoot + "/fixtures/depth_tiny.png", io::DepthNorm::per_image_max);
    REQUIRE((rel.shape() == edib::Shape{1, 1, 4, 4}));
    REQUIRE(rel.data()[0] == Approx(0.25).epsilon(1e-6));
    REQUIRE(rel.data()[15] == Approx(1.0).epsilon(1e-6));
    Tensor fixed = io::load_depth(kRoot + "/fixtures/depth_tiny.png", io::DepthNorm::fixed_range);
    REQUIRE(fixed.data()[0] == Approx(0.1).epsilon(1e-6));
    REQUIRE(fixed.data()[15] == Approx(0.4).epsilon(1e-6));
}

TEST_CASE("config fixtures parse to the documented defaults", "[io]") {
    edib::model::ModelConfig mc = io::load_model_config(kRoot + "/fixtures/model.cfg");
    edib::model::ModelConfig def;
    REQUIRE(mc.base_channels == def.base_channels);
    REQUIRE(mc.levels == def.levels);
    REQUIRE(mc.wavelet == def.wavelet);
    REQUIRE(mc.use_depth == def.use_depth);
    REQUIRE(mc.encoder_blocks == def.encoder_blocks);
    REQUIRE(mc.decoder_blocks == def.decoder_blocks);
    REQUIRE(mc.attention_reduce == def.attention_reduce);
    REQUIRE(mc.depth_trunk_blocks == def.depth_trunk_blocks);

    edib::train::TrainConfig tc = io::load_train_config(kRoot + "/fixtures/train.cfg", mc.levels);
    edib::train::TrainConfig tdef;
    REQUIRE(tc.lr0 == tdef.lr0);
    REQUIRE(tc.epochs == tdef.epochs);
    REQUIRE(tc.patch == tdef.patch);
    REQUIRE(tc.batch == tdef.batch);
    REQUIRE(tc.cosine_weight == tdef.cosine_weight);
    REQUIRE(tc.seed == tdef.seed);
}

TEST_CASE("shipped kernel bank parses with unit sums", "[io]") {
    edib::blur::KernelBank bank = edib::blur::load_kernel_bank(kRoot + "/kernels");
    REQUIRE(bank.size() == 4);
    REQUIRE(bank.kernels[2].name == "k2_motion_h");
    REQUIRE(bank.kernels[2].kh == 1);
    REQUIRE(bank.kernels[2].kw == 5);
    for (const auto& k : bank.kernels) {
        double sum = 0.0;
        for (float t : k.taps) sum += t;
        REQUIRE(sum == Approx(1.0).margin(1e-6));
    }
}
