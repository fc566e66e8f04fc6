#pragma once

#include <array>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "edib/image_io.hpp"
#include "edib/model.hpp"
#include "edib/trainer.hpp"

// Line-oriented key=value config files. Blank lines and lines starting with
// '#' are ignored; values keep interior spaces but are trimmed at both ends.

namespace edib::io {

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::map<std::string, std::string> parse_kv_text(const std::string& text,
                                                        const std::string& origin) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw data_error(origin + ":" + std::to_string(lineno) +
                             ": expected key=value, got '" + t + "'");
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        if (key.empty())
            throw data_error(origin + ":" + std::to_string(lineno) + ": empty key");
        if (kv.count(key))
            throw data_error(origin + ":" + std::to_string(lineno) + ": duplicate key '" +
                             key + "'");
        kv[key] = val;
    }
    return kv;
}

inline std::map<std::string, std::string> parse_kv_file(const std::string& path) {
    std::vector<unsigned char> bytes = read_all(path);
    return parse_kv_text(std::string(bytes.begin(), bytes.end()), path);
}

inline long to_int(const std::string& key, const std::string& val, const std::string& origin) {
    size_t pos = 0;
    long v = 0;
    try {
        v = std::stol(val, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != val.size() || val.empty())
        throw data_error(origin + ": key '" + key + "' expects an integer, got '" + val + "'");
    return v;
}

inline double to_real(const std::string& key, const std::string& val,
                      const std::string& origin) {
    size_t pos = 0;
    double v = 0;
    try {
        v = std::stod(val, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != val.size() || val.empty())
        throw data_error(origin + ": key '" + key + "' expects a number, got '" + val + "'");
    return v;
}

inline bool to_bool(const std::string& key, const std::string& val, const std::string& origin) {
    if (val == "true" || val == "1" || val == "yes") return true;
    if (val == "false" || val == "0" || val == "no") return false;
    throw data_error(origin + ": key '" + key + "' expects true/false, got '" + val + "'");
}

template <size_t N>
std::array<int, N> to_int_list(const std::string& key, const std::string& val,
                               const std::string& origin) {
    std::vector<std::string> parts;
    size_t start = 0;
    while (true) {
        size_t comma = val.find(',', start);
        parts.push_back(trim(comma == std::string::npos ? val.substr(start)
                                                        : val.substr(start, comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (parts.size() != N)
        throw data_error(origin + ": key '" + key + "' expects " + std::to_string(N) +
                         " comma-separated integers, got '" + val + "'");
    std::array<int, N> out{};
    for (size_t i = 0; i < N; ++i) out[i] = (int)to_int(key, parts[i], origin);
    return out;
}

}  // namespace detail

inline model::ModelConfig parse_model_config(const std::map<std::string, std::string>& kv,
                                             const std::string& origin) {
    model::ModelConfig cfg;
    for (const auto& [key, val] : kv) {
        if (key == "base_channels")
            cfg.base_channels = (int)detail::to_int(key, val, origin);
        else if (key == "levels")
            cfg.levels = (int)detail::to_int(key, val, origin);
        else if (key == "wavelet")
            cfg.wavelet = val;
        else if (key == "use_depth")
            cfg.use_depth = detail::to_bool(key, val, origin);
        else if (key == "encoder_blocks")
            cfg.encoder_blocks = detail::to_int_list<3>(key, val, origin);
        else if (key == "decoder_blocks")
            cfg.decoder_blocks = detail::to_int_list<3>(key, val, origin);
        else if (key == "attention_reduce")
            cfg.attention_reduce = (int)detail::to_int(key, val, origin);
        else if (key == "depth_trunk_blocks")
            cfg.depth_trunk_blocks = detail::to_int_list<2>(key, val, origin);
        else
            throw data_error(origin + ": unknown model config key '" + key + "'");
    }
    try {
        cfg.validate();
    } catch (const shape_error& e) {
        throw data_error(origin + ": " + e.what());
    }
    return cfg;
}

inline model::ModelConfig load_model_config(const std::string& path) {
    return parse_model_config(detail::parse_kv_file(path), path);
}

inline train::TrainConfig parse_train_config(const std::map<std::string, std::string>& kv,
                                             const std::string& origin, int levels) {
    train::TrainConfig tc;
    for (const auto& [key, val] : kv) {
        if (key == "lr0")
            tc.lr0 = detail::to_real(key, val, origin);
        else if (key == "beta1")
            tc.beta1 = (float)detail::to_real(key, val, origin);
        else if (key == "beta2")
            tc.beta2 = (float)detail::to_real(key, val, origin);
        else if (key == "eps")
            tc.eps = (float)detail::to_real(key, val, origin);
        else if (key == "epochs")
            tc.epochs = (int)detail::to_int(key, val, origin);
        else if (key == "patch")
            tc.patch = (int)detail::to_int(key, val, origin);
        else if (key == "batch")
            tc.batch = (int)detail::to_int(key, val, origin);
        else if (key == "cosine_weight")
            tc.cosine_weight = (float)detail::to_real(key, val, origin);
        else if (key == "seed")
            tc.seed = (std::uint64_t)detail::to_int(key, val, origin);
        else
            throw data_error(origin + ": unknown train config key '" + key + "'");
    }
    try {
        tc.validate(levels);
    } catch (const shape_error& e) {
        throw data_error(origin + ": " + e.what());
    }
    return tc;
}

inline train::TrainConfig load_train_config(const std::string& path, int levels) {
    return parse_train_config(detail::parse_kv_file(path), path, levels);
}

inline std::string model_config_text(const model::ModelConfig& cfg) {
    std::string s;
    s += "base_channels=" + std::to_string(cfg.base_channels) + "\n";
    s += "levels=" + std::to_string(cfg.levels) + "\n";
    s += "wavelet=" + cfg.wavelet + "\n";
    s += std::string("use_depth=") + (cfg.use_depth ? "true" : "false") + "\n";
    s += "encoder_blocks=" + std::to_string(cfg.encoder_blocks[0]) + "," +
         std::to_string(cfg.encoder_blocks[1]) + "," + std::to_string(cfg.encoder_blocks[2]) +
         "\n";
    s += "decoder_blocks=" + std::to_string(cfg.decoder_blocks[0]) + "," +
         std::to_string(cfg.decoder_blocks[1]) + "," + std::to_string(cfg.decoder_blocks[2]) +
         "\n";
    s += "attention_reduce=" + std::to_string(cfg.attention_reduce) + "\n";
    s += "depth_trunk_blocks=" + std::to_string(cfg.depth_trunk_blocks[0]) + "," +
         std::to_string(cfg.depth_trunk_blocks[1]) + "\n";
    return s;
}

}  // namespace edib::io
