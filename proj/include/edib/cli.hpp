#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "edib/blur.hpp"
#include "edib/config_io.hpp"
#include "edib/image_io.hpp"
#include "edib/metrics.hpp"
#include "edib/model.hpp"
#include "edib/profiler.hpp"
#include "edib/trainer.hpp"
#include "edib/wavelet.hpp"
#include "edib/weights_io.hpp"

// Command-line surface. Exit codes: 0 success, 1 usage error, 2 data error,
// 3 numeric error. Every thrown message names the offending file or flag.

namespace edib::cli {

struct usage_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

namespace fs = std::filesystem;

inline std::pair<int, int> parse_hw(const std::string& flag, const std::string& val) {
    size_t x = val.find('x');
    if (x == std::string::npos || x == 0 || x + 1 >= val.size())
        throw usage_error(flag + " expects HxW (e.g. 1440x1920), got '" + val + "'");
    try {
        size_t p1 = 0, p2 = 0;
        int h = std::stoi(val.substr(0, x), &p1);
        int w = std::stoi(val.substr(x + 1), &p2);
        if (p1 != x || p2 != val.size() - x - 1 || h < 1 || w < 1)
            throw std::invalid_argument("");
        return {h, w};
    } catch (const std::exception&) {
        throw usage_error(flag + " expects HxW (e.g. 1440x1920), got '" + val + "'");
    }
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot open file for writing: " + path);
    out.write(text.data(), (std::streamsize)text.size());
    if (!out) throw data_error("write failed: " + path);
}

inline Tensor scale_shift(const Tensor& x, float scale, float shift) {
    Tensor out(x.shape());
    const float* s = x.data();
    float* d = out.mutable_data();
    for (long long i = 0; i < x.numel(); ++i) d[i] = s[i] * scale + shift;
    return out;
}

inline bool has_image_ext(const std::string& name) {
    for (const char* ext : {".png", ".ppm", ".pgm", ".pnm"})
        if (name.size() > std::strlen(ext) &&
            name.compare(name.size() - std::strlen(ext), std::strlen(ext), ext) == 0)
            return true;
    return false;
}

inline std::string strip_image_ext(const std::string& name) {
    size_t dot = name.rfind('.');
    return dot == std::string::npos ? name : name.substr(0, dot);
}

inline std::vector<std::string> sorted_dir_files(const std::string& dir) {
    if (!fs::is_directory(dir)) throw data_error("not a directory: " + dir);
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    return names;
}

inline std::string find_companion(const std::string& dir, const std::string& stem,
                                  const std::string& role) {
    for (const char* ext : {".png", ".ppm", ".pgm", ".pnm"}) {
        fs::path cand = fs::path(dir) / (stem + "." + role + ext);
        if (fs::exists(cand)) return cand.string();
    }
    return "";
}

inline long long meta_int(const std::map<std::string, std::string>& kv, const std::string& key,
                          const std::string& origin) {
    auto it = kv.find(key);
    if (it == kv.end()) throw data_error(origin + ": missing key '" + key + "'");
    return io::detail::to_int(key, it->second, origin);
}

inline std::string meta_str(const std::map<std::string, std::string>& kv,
                            const std::string& key, const std::string& origin) {
    auto it = kv.find(key);
    if (it == kv.end()) throw data_error(origin + ": missing key '" + key + "'");
    return it->second;
}

inline wav::WaveletBasis basis_from_flag(const std::string& name) {
    try {
        return wav::WaveletBasis::make(name);
    } catch (const data_error& e) {
        throw usage_error(std::string("--wavelet: ") + e.what());
    }
}

inline ParamStore load_model_weights(const std::string& weights,
                                     const model::ModelConfig& cfg) {
    ParamStore params = model::init_params(cfg, 0);
    io::load_weights_into(weights, params);
    return params;
}

// ---- dwt / idwt ----

inline void run_dwt(const std::string& in, const std::string& out_dir,
                    const std::string& wavelet, int levels) {
    if (levels < 1 || levels > 3) throw usage_error("--levels must be 1, 2, or 3");
    wav::WaveletBasis basis = basis_from_flag(wavelet);
    Tensor img = io::load_image(in);
    auto [padded, box] = io::pad_reflectless(img, 1 << levels);
    wav::WaveletPyramid pyr = wav::wavelet_decompose(padded, levels, basis);

    fs::create_directories(out_dir);
    const char* band_names[3] = {"lh", "hl", "hh"};
    // Orthonormal taps keep level-k approximations within [0, 2^k] and
    // details within [-2^(k-1), 2^(k-1)]; the affine maps below place both
    // exactly inside [0, 1] for 16-bit storage, and meta.txt records what
    // inverts them.
    for (int k = 1; k <= levels; ++k)
        for (int b = 0; b < 3; ++b) {
            const float scale = 1.0f / (float)(1 << k);
            Tensor vis = scale_shift(pyr.details[k - 1][b], scale, 0.5f);
            io::save_image(vis, (fs::path(out_dir) / ("level" + std::to_string(k) + "_" +
                                                      band_names[b] + ".png"))
                                    .string(),
                           16);
        }
    Tensor llvis = scale_shift(pyr.top_ll, 1.0f / (float)(1 << levels), 0.0f);
    io::save_image(
        llvis,
        (fs::path(out_dir) / ("level" + std::to_string(levels) + "_ll.png")).string(), 16);

    const Shape is = img.shape();
    const Shape ps = padded.shape();
    std::string meta;
    meta += "wavelet=" + basis.name + "\n";
    meta += "levels=" + std::to_string(levels) + "\n";
    meta += "channels=" + std::to_string(is.c) + "\n";
    meta += "orig_h=" + std::to_string(is.h) + "\n";
    meta += "orig_w=" + std::to_string(is.w) + "\n";
    meta += "padded_h=" + std::to_string(ps.h) + "\n";
    meta += "padded_w=" + std::to_string(ps.w) + "\n";
    write_text_file((fs::path(out_dir) / "meta.txt").string(), meta);
    std::cout << "wrote " << (3 * levels + 1) << " sub-band images and meta.txt to "
              << out_dir << "\n";
}

inline void run_idwt(const std::string& in_dir, const std::string& out,
                     const std::string& wavelet) {
    const std::string meta_path = (fs::path(in_dir) / "meta.txt").string();
    auto kv = io::detail::parse_kv_file(meta_path);
    const std::string meta_wavelet = meta_str(kv, "wavelet", meta_path);
    if (!wavelet.empty() && wavelet != meta_wavelet)
        throw data_error("--wavelet '" + wavelet + "' disagrees with " + meta_path + " ('" +
                         meta_wavelet + "')");
    wav::WaveletBasis basis = basis_from_flag(meta_wavelet);
    const int levels = (int)meta_int(kv, "levels", meta_path);
    const int channels = (int)meta_int(kv, "channels", meta_path);
    const int orig_h = (int)meta_int(kv, "orig_h", meta_path);
    const int orig_w = (int)meta_int(kv, "orig_w", meta_path);
    const int padded_h = (int)meta_int(kv, "padded_h", meta_path);
    const int padded_w = (int)meta_int(kv, "padded_w", meta_path);
    if (levels < 1 || levels > 3)
        throw data_error(meta_path + ": levels must be 1..3");

    wav::WaveletPyramid pyr;
    const char* band_names[3] = {"lh", "hl", "hh"};
    for (int k = 1; k <= levels; ++k) {
        std::array<Tensor, 3> bands;
        for (int b = 0; b < 3; ++b) {
            const std::string path =
                (fs::path(in_dir) / ("level" + std::to_string(k) + "_" + band_names[b] +
                                     ".png"))
                    .string();
            Tensor vis = io::load_image(path);
            const Shape s = vis.shape();
            if (s.c != channels || s.h != padded_h >> k || s.w != padded_w >> k)
                throw data_error("sub-band image has unexpected shape: " + path);
            bands[b] = scale_shift(vis, (float)(1 << k), -0.5f * (float)(1 << k));
        }
        pyr.details.push_back(bands);
    }
    const std::string ll_path =
        (fs::path(in_dir) / ("level" + std::to_string(levels) + "_ll.png")).string();
    Tensor llvis = io::load_image(ll_path);
    if (llvis.shape().c != channels || llvis.shape().h != padded_h >> levels ||
        llvis.shape().w != padded_w >> levels)
        throw data_error("sub-band image has unexpected shape: " + ll_path);
    pyr.top_ll = scale_shift(llvis, (float)(1 << levels), 0.0f);

    Tensor rec = wav::wavelet_reconstruct(pyr, basis);
    io::save_image(io::crop_box(rec, {0, 0, orig_h, orig_w}), out, 8);
    std::cout << "wrote " << out << "\n";
}

// ---- blur ----

inline void run_blur(const std::string& in, const std::string& kernels, std::uint64_t seed,
                     const std::string& out, const std::string& id_out) {
    Tensor img = io::load_image(in);
    blur::KernelBank bank = blur::load_kernel_bank(kernels);
    blur::BlurPair pair = blur::make_pair(img, bank, seed);
    io::save_image(pair.blurred, out, 8);
    if (!id_out.empty()) {
        std::string meta;
        meta += "kernel_id=" + pair.kernel_id + "\n";
        meta += "kernel_index=" + std::to_string(pair.kernel_index) + "\n";
        meta += "seed=" + std::to_string(seed) + "\n";
        write_text_file(id_out, meta);
    }
    std::cout << "blurred " << in << " with kernel " << pair.kernel_id << " -> " << out
              << "\n";
}

// ---- deblur ----

inline void run_deblur(const std::string& in, const std::string& depth_path,
                       const std::string& weights, const std::string& config,
                       const std::string& out) {
    model::ModelConfig cfg = io::load_model_config(config);
    ParamStore params = load_model_weights(weights, cfg);
    Tensor img = io::load_image(in);
    if (img.shape().c != 3)
        throw data_error("deblur input must be a 3-channel image: " + in);
    Tensor depth;
    const Tensor* dp = nullptr;
    if (cfg.use_depth) {
        if (depth_path.empty())
            throw usage_error("--depth is required because " + config + " sets use_depth");
        depth = io::load_depth(depth_path);
        dp = &depth;
    }
    auto [padded, box] = io::pad_reflectless(img, cfg.spatial_multiple());
    Tensor pred = model::infer(padded, dp, cfg, params);
    io::save_image(io::crop_box(pred, box), out, 8);
    std::cout << "wrote " << out << "\n";
}

// ---- train ----

inline train::Dataset load_dataset(const std::string& dir, bool want_depth) {
    train::Dataset data;
    for (const std::string& name : sorted_dir_files(dir)) {
        if (!has_image_ext(name)) continue;
        if (name.find(".depth.") != std::string::npos) continue;
        const std::string path = (fs::path(dir) / name).string();
        train::Sample s;
        s.sharp = io::load_image(path);
        s.name = name;
        if (s.sharp.shape().c != 3)
            throw data_error("training image must be 3-channel: " + path);
        const std::string dpath = find_companion(dir, strip_image_ext(name), "depth");
        if (!dpath.empty()) {
            s.depth = io::load_depth(dpath);
            s.has_depth = true;
        } else if (want_depth) {
            throw data_error("no depth map found for " + path +
                             " (expected <stem>.depth.png)");
        }
        data.push_back(std::move(s));
    }
    if (data.empty()) throw data_error("no images found in " + dir);
    return data;
}

inline void run_train(const std::string& data_dir, const std::string& kernels,
                      const std::string& config, const std::string& train_config,
                      const std::string& out_ckpt) {
    model::ModelConfig cfg = io::load_model_config(config);
    train::TrainConfig tc = io::load_train_config(train_config, cfg.levels);
    blur::KernelBank bank = blur::load_kernel_bank(kernels);
    train::Dataset data = load_dataset(data_dir, cfg.use_depth);

    train::TrainHooks hooks;
    hooks.on_step = [](const train::LossRow& r) {
        std::printf("step=%lld lr=%.6g l1=%.6g cosine=%.6g total=%.6g\n", r.step, r.lr, r.l1,
                    r.cosine, r.total);
    };
    hooks.on_epoch = [&](int epoch, const ParamStore& p, const opt::AdamState& st,
                         long long) {
        train::save_checkpoint(out_ckpt + ".epoch" + std::to_string(epoch), p, st, tc);
    };
    train::TrainResult res = train::train(data, bank, cfg, tc, hooks);
    train::save_checkpoint(out_ckpt, res.params, res.state, tc);
    write_text_file(out_ckpt + ".loss.csv", train::loss_curve_csv(res.curve));
    std::cout << "trained " << res.steps << " steps; checkpoint " << out_ckpt
              << ", loss curve " << out_ckpt << ".loss.csv\n";
}

// ---- eval ----

inline void run_eval(const std::string& pairs, const std::string& weights,
                     const std::string& config, const std::string& report) {
    model::ModelConfig cfg = io::load_model_config(config);
    ParamStore params = load_model_weights(weights, cfg);

    std::string body;
    double psnr_sum = 0, ssim_sum = 0;
    int count = 0;
    char buf[160];
    for (const std::string& name : sorted_dir_files(pairs)) {
        const size_t tag = name.find(".blur.");
        if (tag == std::string::npos || !has_image_ext(name)) continue;
        const std::string stem = name.substr(0, tag);
        const std::string blur_path = (fs::path(pairs) / name).string();
        const std::string sharp_path = find_companion(pairs, stem, "sharp");
        if (sharp_path.empty())
            throw data_error("no sharp image found for " + blur_path +
                             " (expected " + stem + ".sharp.png)");
        Tensor blurred = io::load_image(blur_path);
        Tensor sharp = io::load_image(sharp_path);
        if (!(blurred.shape() == sharp.shape()))
            throw data_error("blur/sharp shapes differ for " + blur_path + " vs " +
                             sharp_path);
        Tensor depth;
        const Tensor* dp = nullptr;
        if (cfg.use_depth) {
            const std::string dpath = find_companion(pairs, stem, "depth");
            if (dpath.empty())
                throw data_error("no depth map found for " + blur_path + " (expected " +
                                 stem + ".depth.png)");
            depth = io::load_depth(dpath);
            dp = &depth;
        }
        auto [padded, box] = io::pad_reflectless(blurred, cfg.spatial_multiple());
        Tensor pred = io::crop_box(model::infer(padded, dp, cfg, params), box);
        const double p = metrics::psnr(pred, sharp, 1.0);
        const double s = metrics::ssim(pred, sharp, 1.0);
        std::snprintf(buf, sizeof buf, "image.%s.psnr=%.6f\nimage.%s.ssim=%.6f\n",
                      stem.c_str(), p, stem.c_str(), s);
        body += buf;
        psnr_sum += p;
        ssim_sum += s;
        ++count;
    }
    if (count == 0) throw data_error("no <stem>.blur.* images found in " + pairs);
    std::string text = "count=" + std::to_string(count) + "\n" + body;
    std::snprintf(buf, sizeof buf, "aggregate.psnr_mean=%.6f\naggregate.ssim_mean=%.6f\n",
                  psnr_sum / count, ssim_sum / count);
    text += buf;
    write_text_file(report, text);
    std::cout << buf;
}

// ---- profile / bench ----

inline void run_profile(const std::string& config, const std::string& image_hw,
                        const std::string& depth_hw, const std::string& report) {
    model::ModelConfig cfg = io::load_model_config(config);
    auto ihw = parse_hw("--image-hw", image_hw);
    auto dhw = parse_hw("--depth-hw", depth_hw);
    prof::ComplexityReport rep = prof::count_complexity(cfg, ihw, dhw);
    if (report.size() > 5 && report.compare(report.size() - 5, 5, ".json") == 0) {
        nlohmann::json j;
        j["params"] = rep.params;
        j["macs"] = rep.macs;
        j["flops"] = rep.flops;
        j["peak_activation_bytes"] = rep.peak_activation_bytes;
        j["per_layer"] = nlohmann::json::array();
        for (const prof::LayerEntry& e : rep.per_layer) {
            nlohmann::json je;
            je["name"] = e.name;
            je["params"] = e.params;
            je["flops"] = e.flops;
            je["output_shape"] = std::to_string(e.out.n) + "x" + std::to_string(e.out.c) +
                                 "x" + std::to_string(e.out.h) + "x" +
                                 std::to_string(e.out.w);
            j["per_layer"].push_back(je);
        }
        write_text_file(report, j.dump(2) + "\n");
    } else {
        write_text_file(report, prof::report_text(rep));
    }
    std::cout << "params=" << rep.params << "\n"
              << "macs=" << rep.macs << "\n"
              << "flops=" << rep.flops << "\n"
              << "peak_activation_bytes=" << rep.peak_activation_bytes << "\n";
}

inline void run_bench(const std::string& config, const std::string& weights, int repeats,
                      const std::string& image_hw, const std::string& depth_hw) {
    if (repeats < 1) throw usage_error("--repeats must be >= 1");
    model::ModelConfig cfg = io::load_model_config(config);
    ParamStore params = load_model_weights(weights, cfg);
    auto ihw = parse_hw("--image-hw", image_hw);
    auto dhw = parse_hw("--depth-hw", depth_hw);
    prof::BenchStats st = prof::benchmark_forward(cfg, params, ihw, dhw, repeats);
    std::printf("median_s=%.6f\niqr_s=%.6f\nrepeats=%d\nthreads=%d\n", st.median_s, st.iqr_s,
                st.repeats, st.threads);
}

}  // namespace detail

inline int cli_main(int argc, const char* const* argv) {
    CLI::App app{"depth-guided wavelet-domain image deblurring toolkit"};
    app.require_subcommand(1);

    // dwt
    auto* dwt = app.add_subcommand("dwt", "decompose an image into wavelet sub-band images");
    std::string dwt_in, dwt_out_dir, dwt_wavelet = "haar";
    int dwt_levels = 2;
    dwt->add_option("--in", dwt_in, "input image")->required();
    dwt->add_option("--out-dir", dwt_out_dir, "output directory for sub-bands")->required();
    dwt->add_option("--wavelet", dwt_wavelet, "wavelet basis");
    dwt->add_option("--levels", dwt_levels, "decomposition levels (1..3)");

    // idwt
    auto* idwt = app.add_subcommand("idwt", "reconstruct an image from sub-band images");
    std::string idwt_in_dir, idwt_out, idwt_wavelet;
    idwt->add_option("--in-dir", idwt_in_dir, "directory produced by dwt")->required();
    idwt->add_option("--out", idwt_out, "output image")->required();
    idwt->add_option("--wavelet", idwt_wavelet, "wavelet basis (must match meta.txt)");

    // blur
    auto* blr = app.add_subcommand("blur", "synthesize a blurred observation");
    std::string blur_in, blur_kernels, blur_out, blur_id_out;
    std::uint64_t blur_seed = 0;
    blr->add_option("--in", blur_in, "sharp input image")->required();
    blr->add_option("--kernels", blur_kernels, "kernel bank directory")->required();
    blr->add_option("--seed", blur_seed, "kernel selection seed");
    blr->add_option("--out", blur_out, "blurred output image")->required();
    blr->add_option("--kernel-id-out", blur_id_out, "write chosen kernel id here");

    // deblur
    auto* deb = app.add_subcommand("deblur", "run the network on a blurred image");
    std::string deb_in, deb_depth, deb_weights, deb_config, deb_out;
    deb->add_option("--in", deb_in, "blurred input image")->required();
    deb->add_option("--depth", deb_depth, "depth map (required if config uses depth)");
    deb->add_option("--weights", deb_weights, "weight container")->required();
    deb->add_option("--config", deb_config, "model config file")->required();
    deb->add_option("--out", deb_out, "deblurred output image")->required();

    // train
    auto* trn = app.add_subcommand("train", "train on a directory of sharp images");
    std::string trn_data, trn_kernels, trn_config, trn_tconfig, trn_ckpt;
    trn->add_option("--data", trn_data, "directory of sharp images (+ optional depth)")
        ->required();
    trn->add_option("--kernels", trn_kernels, "kernel bank directory")->required();
    trn->add_option("--config", trn_config, "model config file")->required();
    trn->add_option("--train-config", trn_tconfig, "train config file")->required();
    trn->add_option("--out-ckpt", trn_ckpt, "checkpoint output path")->required();

    // eval
    auto* evl = app.add_subcommand("eval", "evaluate PSNR/SSIM over blur/sharp pairs");
    std::string evl_pairs, evl_weights, evl_config, evl_report;
    evl->add_option("--pairs", evl_pairs, "directory of <stem>.blur/<stem>.sharp images")
        ->required();
    evl->add_option("--weights", evl_weights, "weight container")->required();
    evl->add_option("--config", evl_config, "model config file")->required();
    evl->add_option("--report", evl_report, "report output path")->required();

    // profile
    auto* prf = app.add_subcommand("profile", "static parameter/FLOP complexity report");
    std::string prf_config, prf_image_hw = "1440x1920", prf_depth_hw = "192x256", prf_report;
    prf->add_option("--config", prf_config, "model config file")->required();
    prf->add_option("--image-hw", prf_image_hw, "input size as HxW");
    prf->add_option("--depth-hw", prf_depth_hw, "depth size as HxW");
    prf->add_option("--report", prf_report, "report output path (.json for JSON)")
        ->required();

    // bench
    auto* bch = app.add_subcommand("bench", "time forward passes");
    std::string bch_config, bch_weights, bch_image_hw = "704x960", bch_depth_hw = "96x128";
    int bch_repeats = 3;
    bch->add_option("--config", bch_config, "model config file")->required();
    bch->add_option("--weights", bch_weights, "weight container")->required();
    bch->add_option("--repeats", bch_repeats, "timed repeats")->required();
    bch->add_option("--image-hw", bch_image_hw, "input size as HxW");
    bch->add_option("--depth-hw", bch_depth_hw, "depth size as HxW");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (dwt->parsed()) {
            detail::run_dwt(dwt_in, dwt_out_dir, dwt_wavelet, dwt_levels);
        } else if (idwt->parsed()) {
            detail::run_idwt(idwt_in_dir, idwt_out, idwt_wavelet);
        } else if (blr->parsed()) {
            detail::run_blur(blur_in, blur_kernels, blur_seed, blur_out, blur_id_out);
        } else if (deb->parsed()) {
            detail::run_deblur(deb_in, deb_depth, deb_weights, deb_config, deb_out);
        } else if (trn->parsed()) {
            detail::run_train(trn_data, trn_kernels, trn_config, trn_tconfig, trn_ckpt);
        } else if (evl->parsed()) {
            detail::run_eval(evl_pairs, evl_weights, evl_config, evl_report);
        } else if (prf->parsed()) {
            detail::run_profile(prf_config, prf_image_hw, prf_depth_hw, prf_report);
        } else if (bch->parsed()) {
            detail::run_bench(bch_config, bch_weights, bch_repeats, bch_image_hw,
                              bch_depth_hw);
        }
    } catch (const usage_error& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace edib::cli
