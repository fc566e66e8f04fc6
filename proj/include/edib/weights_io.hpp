#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "edib/params.hpp"
#include "edib/tensor.hpp"

// Binary weight container: magic "EDBW", u32 version (= 1), u32 tensor
// count, then per tensor a u32 name length + UTF-8 name, u8 rank, rank u32
// dims, and the raw 32-bit float payload. All integers and floats are
// little-endian regardless of host. Save -> load is bitwise identity.

namespace edib::io {

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4] = {(char)(v & 0xff), (char)((v >> 8) & 0xff), (char)((v >> 16) & 0xff),
                 (char)((v >> 24) & 0xff)};
    out.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read((char*)b, 4)) throw data_error("truncated weight container: " + path);
    return (std::uint32_t)b[0] | ((std::uint32_t)b[1] << 8) | ((std::uint32_t)b[2] << 16) |
           ((std::uint32_t)b[3] << 24);
}

}  // namespace detail

inline void save_weights(const std::string& path, const ParamStore& store) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot open weight file for writing: " + path);
    out.write("EDBW", 4);
    detail::put_u32(out, 1);
    detail::put_u32(out, (std::uint32_t)store.size());
    for (int i = 0; i < store.size(); ++i) {
        const std::string& name = store.name(i);
        const Tensor& t = store.value(i);
        detail::put_u32(out, (std::uint32_t)name.size());
        out.write(name.data(), (std::streamsize)name.size());
        out.put((char)4);
        const Shape s = t.shape();
        detail::put_u32(out, (std::uint32_t)s.n);
        detail::put_u32(out, (std::uint32_t)s.c);
        detail::put_u32(out, (std::uint32_t)s.h);
        detail::put_u32(out, (std::uint32_t)s.w);
        for (long long k = 0; k < t.numel(); ++k)
            detail::put_u32(out, std::bit_cast<std::uint32_t>(t.data()[k]));
    }
    if (!out) throw data_error("failed writing weight file: " + path);
}

// Generic load: accepts any tensor names; ranks 1..4 are right-aligned into
// the (n, c, h, w) shape with leading ones.
inline ParamStore load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open weight file: " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::string(magic, 4) != "EDBW")
        throw data_error("not a weight container (bad magic): " + path);
    const std::uint32_t version = detail::get_u32(in, path);
    if (version != 1)
        throw data_error("unsupported weight container version " + std::to_string(version) +
                         ": " + path);
    const std::uint32_t count = detail::get_u32(in, path);
    ParamStore store;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = detail::get_u32(in, path);
        if (name_len == 0 || name_len > 4096)
            throw data_error("implausible tensor name length in " + path);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len))
            throw data_error("truncated weight container: " + path);
        int rank = in.get();
        if (rank < 1 || rank > 4)
            throw data_error("tensor '" + name + "' has unsupported rank in " + path);
        int dims[4] = {1, 1, 1, 1};
        for (int r = 0; r < rank; ++r) {
            std::uint32_t d = detail::get_u32(in, path);
            if (d == 0 || d > (1u << 24))
                throw data_error("tensor '" + name + "' has implausible dim in " + path);
            dims[4 - rank + r] = (int)d;
        }
        Tensor t({dims[0], dims[1], dims[2], dims[3]});
        float* p = t.mutable_data();
        for (long long k = 0; k < t.numel(); ++k)
            p[k] = std::bit_cast<float>(detail::get_u32(in, path));
        store.add(name, std::move(t));
    }
    return store;
}

// Schema-validated load: the file must carry exactly the names of `store`,
// with matching shapes; unknown and missing names are reported by name.
inline void load_weights_into(const std::string& path, ParamStore& store) {
    ParamStore loaded = load_weights(path);
    std::string unknown, missing;
    for (int i = 0; i < loaded.size(); ++i)
        if (store.find(loaded.name(i)) < 0) unknown += " " + loaded.name(i);
    for (int i = 0; i < store.size(); ++i)
        if (loaded.find(store.name(i)) < 0) missing += " " + store.name(i);
    if (!unknown.empty())
        throw data_error("weight file " + path + " has unknown tensors:" + unknown);
    if (!missing.empty())
        throw data_error("weight file " + path + " is missing tensors:" + missing);
    for (int i = 0; i < store.size(); ++i) {
        const Tensor& t = loaded.value(loaded.find(store.name(i)));
        if (!(t.shape() == store.value(i).shape()))
            throw data_error("weight file " + path + ": tensor '" + store.name(i) +
                             "' has shape " + t.shape().str() + ", expected " +
                             store.value(i).shape().str());
        store.set_value(i, t);
    }
}

}  // namespace edib::io
