#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "edib/tensor.hpp"
#include "edib/tensor_ops.hpp"

// Image and depth raster I/O. Two on-disk families are supported: binary
// portable pixmaps (P5/P6, 16-bit samples big-endian per the format) and
// PNG (gray or RGB, 8- or 16-bit). Tensors carry values in [0,1]; saving
// clamps to [0,1] and quantizes round-half-up.

namespace edib::io {

struct CropBox {
    int y0 = 0, x0 = 0, h = 0, w = 0;
};

namespace detail {

// Decoded raster with raw integer samples (interleaved), before any scaling.
struct Raster {
    int h = 0, w = 0, channels = 0;
    int maxval = 255;  // 255 for 8-bit, 65535 for 16-bit (PNM: header maxval)
    std::vector<std::uint16_t> samples;
};

struct File {
    std::FILE* f = nullptr;
    explicit File(const std::string& path, const char* mode) : f(std::fopen(path.c_str(), mode)) {}
    ~File() {
        if (f) std::fclose(f);
    }
    File(const File&) = delete;
    File& operator=(const File&) = delete;
};

inline std::vector<unsigned char> read_all(const std::string& path) {
    File fp(path, "rb");
    if (!fp.f) throw data_error("cannot open file: " + path);
    std::vector<unsigned char> bytes;
    unsigned char buf[65536];
    size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, fp.f)) > 0) bytes.insert(bytes.end(), buf, buf + n);
    return bytes;
}

// ---- PNM (P5 gray / P6 rgb) ----

struct PnmCursor {
    const unsigned char* p;
    const unsigned char* end;
    const std::string& path;

    void skip_space() {
        while (p < end) {
            if (*p == '#') {
                while (p < end && *p != '\n') ++p;
            } else if (std::isspace(*p)) {
                ++p;
            } else {
                break;
            }
        }
    }
    long next_int() {
        skip_space();
        if (p >= end || !std::isdigit(*p)) throw data_error("malformed pixmap header in " + path);
        long v = 0;
        while (p < end && std::isdigit(*p)) {
            v = v * 10 + (*p - '0');
            if (v > 1000000000L) throw data_error("pixmap header value out of range in " + path);
            ++p;
        }
        return v;
    }
};

inline Raster load_pnm(const std::vector<unsigned char>& bytes, const std::string& path) {
    if (bytes.size() < 2) throw data_error("truncated pixmap file: " + path);
    const char m0 = (char)bytes[0], m1 = (char)bytes[1];
    if (m0 != 'P' || (m1 != '5' && m1 != '6'))
        throw data_error("unsupported pixmap magic in " + path);
    Raster r;
    r.channels = m1 == '5' ? 1 : 3;
    PnmCursor cur{bytes.data() + 2, bytes.data() + bytes.size(), path};
    const long w = cur.next_int();
    const long h = cur.next_int();
    const long maxval = cur.next_int();
    if (w < 1 || h < 1 || w > 1 << 20 || h > 1 << 20)
        throw data_error("pixmap dimensions out of range in " + path);
    if (maxval < 1 || maxval > 65535)
        throw data_error("pixmap maxval out of range in " + path);
    // Exactly one whitespace byte separates the header from the raster.
    if (cur.p >= cur.end || !std::isspace(*cur.p))
        throw data_error("malformed pixmap header in " + path);
    ++cur.p;
    r.w = (int)w;
    r.h = (int)h;
    r.maxval = (int)maxval;
    const long long count = (long long)w * h * r.channels;
    const int bytes_per = maxval > 255 ? 2 : 1;
    if (cur.end - cur.p < count * bytes_per)
        throw data_error("truncated pixmap file: " + path);
    r.samples.resize(count);
    const unsigned char* s = cur.p;
    if (bytes_per == 1) {
        for (long long i = 0; i < count; ++i) r.samples[i] = s[i];
    } else {
        for (long long i = 0; i < count; ++i)
            r.samples[i] = (std::uint16_t)((s[2 * i] << 8) | s[2 * i + 1]);
    }
    return r;
}

inline void save_pnm(const Raster& r, const std::string& path) {
    File fp(path, "wb");
    if (!fp.f) throw data_error("cannot open file for writing: " + path);
    std::string header = std::string(r.channels == 1 ? "P5" : "P6") + "\n" +
                         std::to_string(r.w) + " " + std::to_string(r.h) + "\n" +
                         std::to_string(r.maxval) + "\n";
    if (std::fwrite(header.data(), 1, header.size(), fp.f) != header.size())
        throw data_error("write failed: " + path);
    const long long count = (long long)r.w * r.h * r.channels;
    if (r.maxval > 255) {
        std::vector<unsigned char> out(count * 2);
        for (long long i = 0; i < count; ++i) {
            out[2 * i] = (unsigned char)(r.samples[i] >> 8);
            out[2 * i + 1] = (unsigned char)(r.samples[i] & 0xff);
        }
        if (std::fwrite(out.data(), 1, out.size(), fp.f) != out.size())
            throw data_error("write failed: " + path);
    } else {
        std::vector<unsigned char> out(count);
        for (long long i = 0; i < count; ++i) out[i] = (unsigned char)r.samples[i];
        if (std::fwrite(out.data(), 1, out.size(), fp.f) != out.size())
            throw data_error("write failed: " + path);
    }
}

// ---- PNG ----

inline Raster load_png(const std::string& path) {
    File fp(path, "rb");
    if (!fp.f) throw data_error("cannot open file: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw data_error("png reader allocation failed for " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw data_error("png reader allocation failed for " + path);
    }
    // All C++ state lives outside the setjmp region; the longjmp path only
    // touches plain flags and the libpng structs.
    Raster r;
    std::vector<unsigned char> rowbuf;
    std::vector<png_bytep> rows;
    bool failed = false;
    if (setjmp(png_jmpbuf(png))) {
        failed = true;
    } else {
        png_init_io(png, fp.f);
        png_read_info(png, info);
        const png_uint_32 w = png_get_image_width(png, info);
        const png_uint_32 h = png_get_image_height(png, info);
        const int depth = png_get_bit_depth(png, info);
        const int color = png_get_color_type(png, info);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
        if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS))
            png_set_strip_alpha(png);
        png_set_interlace_handling(png);
        png_read_update_info(png, info);
        const int channels = png_get_channels(png, info);
        const int out_depth = png_get_bit_depth(png, info);
        const size_t rowbytes = png_get_rowbytes(png, info);
        r.w = (int)w;
        r.h = (int)h;
        r.channels = channels;
        r.maxval = out_depth == 16 ? 65535 : 255;
        rowbuf.resize(rowbytes * h);
        rows.resize(h);
        for (png_uint_32 y = 0; y < h; ++y) rows[y] = rowbuf.data() + (size_t)y * rowbytes;
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);
        r.samples.resize((long long)w * h * channels);
        if (out_depth == 16) {
            for (png_uint_32 y = 0; y < h; ++y) {
                const unsigned char* s = rows[y];
                std::uint16_t* d = r.samples.data() + (long long)y * w * channels;
                for (long long i = 0; i < (long long)w * channels; ++i)
                    d[i] = (std::uint16_t)((s[2 * i] << 8) | s[2 * i + 1]);
            }
        } else {
            for (png_uint_32 y = 0; y < h; ++y) {
                const unsigned char* s = rows[y];
                std::uint16_t* d = r.samples.data() + (long long)y * w * channels;
                for (long long i = 0; i < (long long)w * channels; ++i) d[i] = s[i];
            }
        }
    }
    png_destroy_read_struct(&png, &info, nullptr);
    if (failed) throw data_error("failed to decode png file: " + path);
    if (r.channels != 1 && r.channels != 3)
        throw data_error("unsupported channel count " + std::to_string(r.channels) + " in " +
                         path);
    return r;
}

inline void save_png(const Raster& r, const std::string& path) {
    File fp(path, "wb");
    if (!fp.f) throw data_error("cannot open file for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw data_error("png writer allocation failed for " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw data_error("png writer allocation failed for " + path);
    }
    const int depth = r.maxval > 255 ? 16 : 8;
    const int color = r.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    const long long row_samples = (long long)r.w * r.channels;
    std::vector<unsigned char> rowbuf((size_t)(row_samples * (depth / 8)) * r.h);
    std::vector<png_bytep> rows(r.h);
    for (int y = 0; y < r.h; ++y) {
        unsigned char* d = rowbuf.data() + (size_t)y * row_samples * (depth / 8);
        rows[y] = d;
        const std::uint16_t* s = r.samples.data() + (long long)y * row_samples;
        if (depth == 16) {
            for (long long i = 0; i < row_samples; ++i) {
                d[2 * i] = (unsigned char)(s[i] >> 8);
                d[2 * i + 1] = (unsigned char)(s[i] & 0xff);
            }
        } else {
            for (long long i = 0; i < row_samples; ++i) d[i] = (unsigned char)s[i];
        }
    }
    bool failed = false;
    if (setjmp(png_jmpbuf(png))) {
        failed = true;
    } else {
        png_init_io(png, fp.f);
        png_set_IHDR(png, info, r.w, r.h, depth, color, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        png_write_image(png, rows.data());
        png_write_end(png, nullptr);
    }
    png_destroy_write_struct(&png, &info);
    if (failed) throw data_error("failed to encode png file: " + path);
}

inline bool has_suffix(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

inline Raster load_raster(const std::string& path) {
    std::vector<unsigned char> head = read_all(path);
    if (head.size() >= 8 && head[0] == 0x89 && head[1] == 'P' && head[2] == 'N' &&
        head[3] == 'G')
        return load_png(path);
    if (head.size() >= 2 && head[0] == 'P' && (head[1] == '5' || head[1] == '6'))
        return load_pnm(head, path);
    throw data_error("unsupported image format: " + path);
}

inline void save_raster(const Raster& r, const std::string& path) {
    if (has_suffix(path, ".png")) {
        save_png(r, path);
    } else if (has_suffix(path, ".pgm") || has_suffix(path, ".ppm") ||
               has_suffix(path, ".pnm")) {
        save_pnm(r, path);
    } else {
        throw data_error("unsupported image extension (use .png/.pgm/.ppm/.pnm): " + path);
    }
}

}  // namespace detail

// Decodes to a [1, c, h, w] tensor with values sample/maxval in [0, 1].
inline Tensor load_image(const std::string& path) {
    detail::Raster r = detail::load_raster(path);
    Tensor t({1, r.channels, r.h, r.w});
    float* d = t.mutable_data();
    const double scale = 1.0 / r.maxval;
    const long long plane = (long long)r.h * r.w;
    for (long long y = 0; y < r.h; ++y)
        for (long long x = 0; x < r.w; ++x)
            for (int c = 0; c < r.channels; ++c)
                d[c * plane + y * r.w + x] =
                    (float)(r.samples[(y * r.w + x) * r.channels + c] * scale);
    return t;
}

// Clamps to [0,1] and quantizes round-half-up at the requested bit depth.
inline void save_image(const Tensor& img, const std::string& path, int bit_depth = 8) {
    const Shape s = img.shape();
    if (s.n != 1 || (s.c != 1 && s.c != 3))
        throw shape_error("save_image expects a [1,1|3,h,w] tensor, got " + s.str() +
                          " for " + path);
    if (bit_depth != 8 && bit_depth != 16)
        throw shape_error("save_image bit depth must be 8 or 16 for " + path);
    detail::Raster r;
    r.h = s.h;
    r.w = s.w;
    r.channels = s.c;
    r.maxval = bit_depth == 16 ? 65535 : 255;
    r.samples.resize((long long)s.h * s.w * s.c);
    const float* d = img.data();
    const long long plane = (long long)s.h * s.w;
    for (long long y = 0; y < s.h; ++y)
        for (long long x = 0; x < s.w; ++x)
            for (int c = 0; c < s.c; ++c) {
                double v = d[c * plane + y * s.w + x];
                v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
                r.samples[(y * s.w + x) * s.c + c] =
                    (std::uint16_t)std::floor(v * r.maxval + 0.5);
            }
    detail::save_raster(r, path);
}

enum class DepthNorm { per_image_max, fixed_range };

// Raw integers are millimeters; values become meters/1000 and are then
// normalized either by the per-image maximum (default) or a fixed 0-10 m
// range.
inline Tensor load_depth(const std::string& path, DepthNorm mode = DepthNorm::per_image_max) {
    detail::Raster r = detail::load_raster(path);
    if (r.channels != 1)
        throw data_error("depth map must be single-channel, got " +
                         std::to_string(r.channels) + " channels in " + path);
    Tensor t({1, 1, r.h, r.w});
    float* d = t.mutable_data();
    const long long count = (long long)r.h * r.w;
    if (mode == DepthNorm::per_image_max) {
        std::uint16_t mx = 0;
        for (long long i = 0; i < count; ++i) mx = std::max(mx, r.samples[i]);
        const double inv = mx > 0 ? 1.0 / mx : 0.0;
        for (long long i = 0; i < count; ++i) d[i] = (float)(r.samples[i] * inv);
    } else {
        for (long long i = 0; i < count; ++i) {
            double meters = r.samples[i] / 1000.0;
            d[i] = (float)(meters > 10.0 ? 1.0 : meters / 10.0);
        }
    }
    return t;
}

// Replicate-pads right/bottom up to the next multiple; the crop box restores
// the original extent after processing.
inline std::pair<Tensor, CropBox> pad_reflectless(const Tensor& image, int multiple) {
    if (multiple < 1) throw shape_error("pad_reflectless: multiple must be >= 1");
    const Shape s = image.shape();
    const int ph = (s.h + multiple - 1) / multiple * multiple;
    const int pw = (s.w + multiple - 1) / multiple * multiple;
    CropBox box{0, 0, s.h, s.w};
    if (ph == s.h && pw == s.w) return {image, box};
    return {ops::pad_edges(image, 0, ph - s.h, 0, pw - s.w, ops::PadMode::replicate), box};
}

inline Tensor crop_box(const Tensor& t, const CropBox& box) {
    return ops::crop(t, box.y0, box.x0, box.h, box.w);
}

}  // namespace edib::io
