#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "edib/cli.hpp"

using namespace edib;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("edib_cli_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
    std::string write(const std::string& name, const std::string& bytes) const {
        std::ofstream out(path / name, std::ios::binary);
        out.write(bytes.data(), (std::streamsize)bytes.size());
        return (path / name).string();
    }
    std::string subdir(const std::string& name) const {
        fs::create_directories(path / name);
        return (path / name).string();
    }
};

int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("edib");
    for (const std::string& a : args) argv.push_back(a.c_str());
    return cli::cli_main((int)argv.size(), argv.data());
}

Tensor random_image(int c, int h, int w, unsigned seed) {
    std::mt19937 rng(seed);
    Tensor t({1, c, h, w});
    float* d = t.mutable_data();
    for (long long i = 0; i < t.numel(); ++i)
        d[i] = 0.1f + 0.8f * (float)(rng() >> 8) * (1.0f / 16777216.0f);
    return t;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Largest per-pixel difference in 8-bit quantization levels.
double max_level_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double mx = 0;
    for (long long i = 0; i < a.numel(); ++i)
        mx = std::max(mx, std::fabs((double)a.data()[i] - b.data()[i]) * 255.0);
    return mx;
}

void write_kernel_bank(const TempDir& tmp, const std::string& dirname) {
    const std::string dir = tmp.subdir(dirname);
    std::ofstream k0(fs::path(dir) / "k0_box.txt");
    k0 << "3 3\n";
    for (int i = 0; i < 3; ++i) k0 << "0.111111 0.111111 0.111111\n";
    k0.close();
    std::ofstream k1(fs::path(dir) / "k1_motion.txt");
    k1 << "1 5\n0.2 0.2 0.2 0.2 0.2\n";
    k1.close();
}

std::string write_model_config(const TempDir& tmp, const std::string& name, bool use_depth) {
    model::ModelConfig cfg;
    cfg.base_channels = 8;
    cfg.levels = 2;
    cfg.use_depth = use_depth;
    cfg.encoder_blocks = {1, 1, 1};
    cfg.decoder_blocks = {1, 1, 1};
    cfg.depth_trunk_blocks = {1, 1};
    return tmp.write(name, io::model_config_text(cfg));
}

std::string write_init_weights(const TempDir& tmp, const std::string& name, bool use_depth,
                               unsigned seed = 7) {
    model::ModelConfig cfg;
    cfg.base_channels = 8;
    cfg.levels = 2;
    cfg.use_depth = use_depth;
    cfg.encoder_blocks = {1, 1, 1};
    cfg.decoder_blocks = {1, 1, 1};
    cfg.depth_trunk_blocks = {1, 1};
    ParamStore params = model::init_params(cfg, seed);
    const std::string path = tmp.file(name);
    io::save_weights(path, params);
    return path;
}

}  // namespace

TEST_CASE("dwt then idwt round-trips within one quantization level", "[cli]") {
    TempDir tmp;
    for (auto [h, w] : {std::pair{64, 48}, std::pair{37, 41}}) {
        const std::string in = tmp.file("in" + std::to_string(h) + ".png");
        io::save_image(random_image(3, h, w, 11 + h), in, 8);
        const std::string dir = tmp.file("bands" + std::to_string(h));
        const std::string out = tmp.file("out" + std::to_string(h) + ".png");
        REQUIRE(run_cli({"dwt", "--in", in, "--out-dir", dir, "--wavelet", "haar",
                         "--levels", "2"}) == 0);
        CHECK(fs::exists(fs::path(dir) / "level1_lh.png"));
        CHECK(fs::exists(fs::path(dir) / "level2_hh.png"));
        CHECK(fs::exists(fs::path(dir) / "level2_ll.png"));
        CHECK(fs::exists(fs::path(dir) / "meta.txt"));
        REQUIRE(run_cli({"idwt", "--in-dir", dir, "--out", out, "--wavelet", "haar"}) == 0);
        Tensor a = io::load_image(in);
        Tensor b = io::load_image(out);
        CHECK(max_level_diff(a, b) <= 1.0 + 1e-6);
    }
}

TEST_CASE("dwt respects the levels flag and rejects bad values", "[cli]") {
    TempDir tmp;
    const std::string in = tmp.file("in.png");
    io::save_image(random_image(3, 32, 32, 3), in, 8);
    const std::string dir = tmp.file("bands3");
    REQUIRE(run_cli({"dwt", "--in", in, "--out-dir", dir, "--levels", "3"}) == 0);
    CHECK(fs::exists(fs::path(dir) / "level3_ll.png"));
    CHECK(fs::exists(fs::path(dir) / "level3_hh.png"));
    CHECK_FALSE(fs::exists(fs::path(dir) / "level2_ll.png"));
    CHECK(run_cli({"dwt", "--in", in, "--out-dir", dir, "--levels", "4"}) == 1);
    CHECK(run_cli({"dwt", "--in", in, "--out-dir", dir, "--wavelet", "db4"}) == 1);
}

TEST_CASE("idwt validates the wavelet flag against metadata", "[cli]") {
    TempDir tmp;
    const std::string in = tmp.file("in.png");
    io::save_image(random_image(3, 32, 32, 4), in, 8);
    const std::string dir = tmp.file("bands");
    REQUIRE(run_cli({"dwt", "--in", in, "--out-dir", dir, "--wavelet", "bior1.1"}) == 0);
    CHECK(run_cli({"idwt", "--in-dir", dir, "--out", tmp.file("o.png"), "--wavelet",
                   "haar"}) == 2);
    CHECK(run_cli({"idwt", "--in-dir", dir, "--out", tmp.file("o.png"), "--wavelet",
                   "bior1.1"}) == 0);
    // Omitting the flag uses the recorded basis.
    CHECK(run_cli({"idwt", "--in-dir", dir, "--out", tmp.file("o2.png")}) == 0);
}

TEST_CASE("blur subcommand is deterministic and records the kernel id", "[cli]") {
    TempDir tmp;
    write_kernel_bank(tmp, "kernels");
    const std::string in = tmp.file("sharp.png");
    io::save_image(random_image(3, 40, 56, 5), in, 8);

    REQUIRE(run_cli({"blur", "--in", in, "--kernels", tmp.file("kernels"), "--seed", "9",
                     "--out", tmp.file("b1.png"), "--kernel-id-out", tmp.file("k1.txt")}) ==
            0);
    REQUIRE(run_cli({"blur", "--in", in, "--kernels", tmp.file("kernels"), "--seed", "9",
                     "--out", tmp.file("b2.png"), "--kernel-id-out", tmp.file("k2.txt")}) ==
            0);
    CHECK(read_file(tmp.file("b1.png")) == read_file(tmp.file("b2.png")));
    const std::string meta = read_file(tmp.file("k1.txt"));
    CHECK(meta.find("kernel_id=") != std::string::npos);
    CHECK(meta.find("kernel_index=") != std::string::npos);
    CHECK(meta == read_file(tmp.file("k2.txt")));

    // A different seed may pick another kernel; the output must still decode.
    REQUIRE(run_cli({"blur", "--in", in, "--kernels", tmp.file("kernels"), "--seed", "1",
                     "--out", tmp.file("b3.png")}) == 0);
    CHECK(io::load_image(tmp.file("b3.png")).shape() == Shape{1, 3, 40, 56});
}

TEST_CASE("deblur at freshly initialized weights is the identity", "[cli]") {
    TempDir tmp;
    const std::string cfg = write_model_config(tmp, "model.cfg", false);
    const std::string wts = write_init_weights(tmp, "init.edbw", false);
    for (auto [h, w] : {std::pair{64, 96}, std::pair{50, 70}}) {
        const std::string in = tmp.file("in" + std::to_string(h) + ".png");
        io::save_image(random_image(3, h, w, 20 + h), in, 8);
        const std::string out = tmp.file("out" + std::to_string(h) + ".png");
        REQUIRE(run_cli({"deblur", "--in", in, "--weights", wts, "--config", cfg, "--out",
                         out}) == 0);
        Tensor a = io::load_image(in);
        Tensor b = io::load_image(out);
        CHECK(max_level_diff(a, b) <= 1.0 + 1e-6);
    }
}

TEST_CASE("deblur with depth at init is the identity and requires the flag", "[cli]") {
    TempDir tmp;
    const std::string cfg = write_model_config(tmp, "model_d.cfg", true);
    const std::string wts = write_init_weights(tmp, "init_d.edbw", true);
    const std::string in = tmp.file("in.png");
    io::save_image(random_image(3, 64, 64, 33), in, 8);
    Tensor depth16 = random_image(1, 16, 16, 34);
    const std::string dpath = tmp.file("depth.png");
    io::save_image(depth16, dpath, 16);

    // Missing --depth is a usage error when the config enables depth.
    CHECK(run_cli({"deblur", "--in", in, "--weights", wts, "--config", cfg, "--out",
                   tmp.file("o.png")}) == 1);

    const std::string out = tmp.file("out.png");
    REQUIRE(run_cli({"deblur", "--in", in, "--depth", dpath, "--weights", wts, "--config",
                     cfg, "--out", out}) == 0);
    CHECK(max_level_diff(io::load_image(in), io::load_image(out)) <= 1.0 + 1e-6);
}

TEST_CASE("deblur error paths map to exit codes", "[cli]") {
    TempDir tmp;
    const std::string cfg = write_model_config(tmp, "model.cfg", false);
    const std::string wts = write_init_weights(tmp, "init.edbw", false);
    // Nonexistent input -> data error.
    CHECK(run_cli({"deblur", "--in", tmp.file("absent.png"), "--weights", wts, "--config",
                   cfg, "--out", tmp.file("o.png")}) == 2);
    // Gray input -> data error.
    const std::string gray = tmp.file("gray.png");
    io::save_image(random_image(1, 32, 32, 9), gray, 8);
    CHECK(run_cli({"deblur", "--in", gray, "--weights", wts, "--config", cfg, "--out",
                   tmp.file("o.png")}) == 2);
    // Weights with an unknown tensor name -> data error.
    ParamStore bogus;
    bogus.add("surprise.weight", Tensor::zeros({1, 1, 1, 1}));
    const std::string bpath = tmp.file("bogus.edbw");
    io::save_weights(bpath, bogus);
    const std::string in = tmp.file("in.png");
    io::save_image(random_image(3, 32, 32, 10), in, 8);
    CHECK(run_cli({"deblur", "--in", in, "--weights", bpath, "--config", cfg, "--out",
                   tmp.file("o.png")}) == 2);
    // Missing required flag -> usage error.
    CHECK(run_cli({"deblur", "--in", in, "--weights", wts, "--out", tmp.file("o.png")}) ==
          1);
    // Unknown subcommand -> usage error.
    CHECK(run_cli({"sharpen"}) == 1);
}

TEST_CASE("train subcommand writes checkpoints and a loss curve", "[cli]") {
    TempDir tmp;
    write_kernel_bank(tmp, "kernels");
    const std::string data = tmp.subdir("data");
    io::save_image(random_image(3, 64, 64, 41), (fs::path(data) / "a.png").string(), 8);
    io::save_image(random_image(3, 64, 64, 42), (fs::path(data) / "b.png").string(), 8);
    const std::string cfg = write_model_config(tmp, "model.cfg", false);
    const std::string tcfg = tmp.write("train.cfg",
                                       "lr0=0.001\nepochs=2\nbatch=1\npatch=64\n"
                                       "cosine_weight=0.1\nseed=3\n");
    const std::string ckpt = tmp.file("run1.edbw");
    REQUIRE(run_cli({"train", "--data", data, "--kernels", tmp.file("kernels"), "--config",
                     cfg, "--train-config", tcfg, "--out-ckpt", ckpt}) == 0);
    CHECK(fs::exists(ckpt));
    CHECK(fs::exists(ckpt + ".opt"));
    CHECK(fs::exists(ckpt + ".epoch1"));
    CHECK(fs::exists(ckpt + ".epoch2"));
    const std::string csv = read_file(ckpt + ".loss.csv");
    CHECK(csv.rfind("step,lr,l1,cosine,total\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 4 steps

    // Identical invocation produces bitwise-identical artifacts.
    const std::string ckpt2 = tmp.file("run2.edbw");
    REQUIRE(run_cli({"train", "--data", data, "--kernels", tmp.file("kernels"), "--config",
                     cfg, "--train-config", tcfg, "--out-ckpt", ckpt2}) == 0);
    CHECK(read_file(ckpt) == read_file(ckpt2));
    CHECK(read_file(ckpt + ".loss.csv") == read_file(ckpt2 + ".loss.csv"));

    // Depth-enabled config over a depth-free dataset names the image.
    const std::string dcfg = write_model_config(tmp, "model_d.cfg", true);
    CHECK(run_cli({"train", "--data", data, "--kernels", tmp.file("kernels"), "--config",
                   dcfg, "--train-config", tcfg, "--out-ckpt", tmp.file("x.edbw")}) == 2);
}

TEST_CASE("eval reports per-image and aggregate metrics", "[cli]") {
    TempDir tmp;
    write_kernel_bank(tmp, "kernels");
    const std::string pairs = tmp.subdir("pairs");
    const std::string sharp_path = (fs::path(pairs) / "x.sharp.png").string();
    io::save_image(random_image(3, 48, 48, 51), sharp_path, 8);
    REQUIRE(run_cli({"blur", "--in", sharp_path, "--kernels", tmp.file("kernels"), "--seed",
                     "2", "--out", (fs::path(pairs) / "x.blur.png").string()}) == 0);
    const std::string cfg = write_model_config(tmp, "model.cfg", false);
    const std::string wts = write_init_weights(tmp, "init.edbw", false);
    const std::string report = tmp.file("report.txt");
    REQUIRE(run_cli({"eval", "--pairs", pairs, "--weights", wts, "--config", cfg,
                     "--report", report}) == 0);
    const std::string text = read_file(report);
    CHECK(text.find("count=1") != std::string::npos);
    CHECK(text.find("image.x.psnr=") != std::string::npos);
    CHECK(text.find("image.x.ssim=") != std::string::npos);
    CHECK(text.find("aggregate.psnr_mean=") != std::string::npos);
    CHECK(text.find("aggregate.ssim_mean=") != std::string::npos);

    // Empty pairs directory is a data error.
    const std::string empty = tmp.subdir("empty");
    CHECK(run_cli({"eval", "--pairs", empty, "--weights", wts, "--config", cfg, "--report",
                   tmp.file("r2.txt")}) == 2);
}

TEST_CASE("profile emits key=value and json reports", "[cli]") {
    TempDir tmp;
    const std::string cfg = tmp.write("c16.cfg", "base_channels=16\nlevels=2\n");
    const std::string report = tmp.file("prof.txt");
    REQUIRE(run_cli({"profile", "--config", cfg, "--image-hw", "1440x1920", "--depth-hw",
                     "192x256", "--report", report}) == 0);
    const std::string text = read_file(report);
    CHECK(text.find("params=") != std::string::npos);
    CHECK(text.find("macs=") != std::string::npos);
    CHECK(text.find("flops=") != std::string::npos);
    CHECK(text.find("peak_activation_bytes=") != std::string::npos);
    CHECK(text.find("per_layer[0].name=") != std::string::npos);

    const std::string jreport = tmp.file("prof.json");
    REQUIRE(run_cli({"profile", "--config", cfg, "--report", jreport}) == 0);
    nlohmann::json j = nlohmann::json::parse(read_file(jreport));
    CHECK(j["params"].get<long long>() > 0);
    CHECK(j["flops"].get<long long>() > 0);
    CHECK(j["peak_activation_bytes"].get<long long>() > 0);
    REQUIRE(j["per_layer"].is_array());
    CHECK(j["per_layer"].size() > 0);
    CHECK(j["per_layer"][0].contains("name"));
    CHECK(j["per_layer"][0].contains("output_shape"));

    // Text and json agree on the totals.
    const long long text_flops =
        std::stoll(text.substr(text.find("flops=") + 6));
    CHECK(text_flops == j["flops"].get<long long>());

    // Malformed size flag is a usage error.
    CHECK(run_cli({"profile", "--config", cfg, "--image-hw", "big", "--report",
                   tmp.file("r.txt")}) == 1);
}

TEST_CASE("bench runs a tiny timing loop", "[cli]") {
    TempDir tmp;
    const std::string cfg = write_model_config(tmp, "model.cfg", false);
    const std::string wts = write_init_weights(tmp, "init.edbw", false);
    CHECK(run_cli({"bench", "--config", cfg, "--weights", wts, "--repeats", "1",
                   "--image-hw", "64x64", "--depth-hw", "16x16"}) == 0);
    CHECK(run_cli({"bench", "--config", cfg, "--weights", wts, "--repeats", "0",
                   "--image-hw", "64x64"}) == 1);
}

TEST_CASE("help exits cleanly", "[cli]") {
    CHECK(run_cli({"--help"}) == 0);
    CHECK(run_cli({"dwt", "--help"}) == 0);
}

TEST_CASE("padded processing matches pre-aligned processing on the interior", "[cli]") {
    model::ModelConfig cfg;
    cfg.base_channels = 8;
    cfg.levels = 2;
    cfg.use_depth = false;
    cfg.encoder_blocks = {1, 1, 1};
    cfg.decoder_blocks = {1, 1, 1};
    cfg.depth_trunk_blocks = {1, 1};
    ParamStore params = model::init_params(cfg, 31);
    Tensor aligned = random_image(3, 64, 96, 19);
    Tensor out_aligned = model::infer(aligned, nullptr, cfg, params);

    // The same content arriving unaligned goes through pad -> infer -> crop.
    Tensor sub = ops::crop(aligned, 0, 0, 57, 89);
    auto [padded, box] = io::pad_reflectless(sub, cfg.spatial_multiple());
    REQUIRE(padded.shape().h == 64);
    REQUIRE(padded.shape().w == 96);
    Tensor out_cropped = io::crop_box(model::infer(padded, nullptr, cfg, params), box);
    REQUIRE(out_cropped.shape().h == 57);
    REQUIRE(out_cropped.shape().w == 89);

    // Interior = at least 8 px away from the replicated right/bottom edge.
    double worst = 0.0;
    const edib::Shape os = out_cropped.shape();
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y + 8 < os.h; ++y)
            for (int x = 0; x + 8 < os.w; ++x) {
                const double a = out_aligned.data()[((long long)c * 64 + y) * 96 + x];
                const double b = out_cropped.data()[((long long)c * os.h + y) * os.w + x];
                worst = std::max(worst, std::fabs(a - b));
            }
    REQUIRE(worst <= 1e-5);
}
