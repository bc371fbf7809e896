// Copyright Contributors to the cityforge project
// SPDX-License-Identifier: Apache-2.0
//
// PNG codecs for the on-disk raster formats (libpng).
//
//   <base>.sem.png   8-bit indexed, palette index = semantic class id
//   <base>.hbu.png   16-bit grayscale bottom-up heights (cells)
//   <base>.htd.png   16-bit grayscale top-down heights (cells)
//   instance maps    16-bit grayscale ids
//
// Files are written to a temporary sibling and renamed into place.

#pragma once

#include "cityforge/core.hpp"
#include "cityforge/layout.hpp"

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace cityforge {

struct Rgb8 {
    std::uint8_t r = 0, g = 0, b = 0;
    friend constexpr bool operator==(Rgb8, Rgb8) = default;
};

using Image8 = Grid2D<std::uint8_t>;
using Image16 = Grid2D<std::uint16_t>;
using ImageRgb = Grid2D<Rgb8>;

/// Display colours for semantic maps (index = class id).
inline const std::array<Rgb8, kNumClasses> &semantic_palette() {
    static const std::array<Rgb8, kNumClasses> palette{{
        {0, 0, 0},       // null
        {255, 0, 0},     // road
        {255, 128, 0},   // highway
        {255, 255, 0},   // building facade
        {0, 200, 0},     // vegetation
        {0, 0, 255},     // water
        {0, 255, 255},   // other / construction
        {255, 0, 255},   // vehicle
        {200, 160, 0},   // building roof
    }};
    return palette;
}

namespace detail {

struct PngText {
    std::string key;
    std::string value;
};

struct FileCloser {
    void operator()(std::FILE *f) const {
        if (f) std::fclose(f);
    }
};

[[noreturn]] inline void png_error_handler(png_structp, png_const_charp msg) { throw DataError(std::string("libpng: ") + msg); }
inline void png_warning_handler(png_structp, png_const_charp) {}

inline void write_png_rows(const std::filesystem::path &path, int width, int height, int bit_depth, int color_type,
                           const std::vector<std::uint8_t> &rows, std::span<const Rgb8> palette = {},
                           std::span<const PngText> texts = {}) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(tmp.c_str(), "wb"));
        if (!fp) throw DataError("cannot open '" + tmp.string() + "' for writing");
        png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
        png_infop info = png_create_info_struct(png);
        try {
            png_init_io(png, fp.get());
            png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
                         color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
            std::vector<png_color> pal;
            if (!palette.empty()) {
                for (const auto &c : palette) pal.push_back({c.r, c.g, c.b});
                png_set_PLTE(png, info, pal.data(), static_cast<int>(pal.size()));
            }
            std::vector<png_text> text_chunks;
            for (const auto &t : texts) {
                png_text chunk{};
                chunk.compression = PNG_TEXT_COMPRESSION_NONE;
                chunk.key = const_cast<char *>(t.key.c_str());
                chunk.text = const_cast<char *>(t.value.c_str());
                chunk.text_length = t.value.size();
                text_chunks.push_back(chunk);
            }
            if (!text_chunks.empty()) png_set_text(png, info, text_chunks.data(), static_cast<int>(text_chunks.size()));
            png_write_info(png, info);
            const std::size_t stride = rows.size() / static_cast<std::size_t>(std::max(height, 1));
            for (int y = 0; y < height; ++y)
                png_write_row(png, const_cast<png_bytep>(rows.data() + static_cast<std::size_t>(y) * stride));
            png_write_end(png, nullptr);
        } catch (...) {
            png_destroy_write_struct(&png, &info);
            throw;
        }
        png_destroy_write_struct(&png, &info);
    }
    std::filesystem::rename(tmp, path);
}

struct PngData {
    int width = 0;
    int height = 0;
    int bit_depth = 0;
    int color_type = 0;
    std::vector<std::uint8_t> rows;
    std::size_t stride = 0;
    std::vector<PngText> texts;
};

inline PngData read_png_rows(const std::filesystem::path &path) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DependencyError("cannot open '" + path.string() + "'");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
    png_infop info = png_create_info_struct(png);
    PngData out;
    try {
        png_init_io(png, fp.get());
        png_read_info(png, info);
        out.width = static_cast<int>(png_get_image_width(png, info));
        out.height = static_cast<int>(png_get_image_height(png, info));
        out.bit_depth = png_get_bit_depth(png, info);
        out.color_type = png_get_color_type(png, info);
        if (out.bit_depth < 8) png_set_packing(png);
        png_read_update_info(png, info);
        out.stride = png_get_rowbytes(png, info);
        out.rows.resize(out.stride * static_cast<std::size_t>(out.height));
        for (int y = 0; y < out.height; ++y) png_read_row(png, out.rows.data() + static_cast<std::size_t>(y) * out.stride, nullptr);
        png_textp text = nullptr;
        int n = 0;
        if (png_get_text(png, info, &text, &n) > 0)
            for (int i = 0; i < n; ++i) out.texts.push_back({text[i].key, std::string(text[i].text, text[i].text_length)});
        png_read_end(png, nullptr);
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

} // namespace detail

inline void write_png_gray8(const std::filesystem::path &path, const Image8 &img) {
    std::vector<std::uint8_t> rows(img.values().begin(), img.values().end());
    detail::write_png_rows(path, img.width(), img.height(), 8, PNG_COLOR_TYPE_GRAY, rows);
}

inline void write_png_gray16(const std::filesystem::path &path, const Image16 &img) {
    std::vector<std::uint8_t> rows;
    rows.reserve(img.size() * 2);
    for (const auto v : img.values()) {
        rows.push_back(static_cast<std::uint8_t>(v >> 8));
        rows.push_back(static_cast<std::uint8_t>(v & 0xFF));
    }
    detail::write_png_rows(path, img.width(), img.height(), 16, PNG_COLOR_TYPE_GRAY, rows);
}

inline void write_png_rgb(const std::filesystem::path &path, const ImageRgb &img) {
    std::vector<std::uint8_t> rows;
    rows.reserve(img.size() * 3);
    for (const auto &c : img.values()) {
        rows.push_back(c.r);
        rows.push_back(c.g);
        rows.push_back(c.b);
    }
    detail::write_png_rows(path, img.width(), img.height(), 8, PNG_COLOR_TYPE_RGB, rows);
}

inline void write_png_indexed(const std::filesystem::path &path, const Image8 &img, std::span<const Rgb8> palette,
                              std::span<const detail::PngText> texts = {}) {
    std::vector<std::uint8_t> rows(img.values().begin(), img.values().end());
    detail::write_png_rows(path, img.width(), img.height(), 8, PNG_COLOR_TYPE_PALETTE, rows, palette, texts);
}

inline Image8 read_png_gray8(const std::filesystem::path &path) {
    const auto d = detail::read_png_rows(path);
    if (d.color_type != PNG_COLOR_TYPE_GRAY || d.bit_depth != 8)
        throw DataError("'" + path.string() + "' is not an 8-bit grayscale PNG");
    Image8 img(d.width, d.height);
    for (int y = 0; y < d.height; ++y)
        for (int x = 0; x < d.width; ++x) img(x, y) = d.rows[static_cast<std::size_t>(y) * d.stride + static_cast<std::size_t>(x)];
    return img;
}

inline Image16 read_png_gray16(const std::filesystem::path &path) {
    const auto d = detail::read_png_rows(path);
    if (d.color_type != PNG_COLOR_TYPE_GRAY || d.bit_depth != 16)
        throw DataError("'" + path.string() + "' is not a 16-bit grayscale PNG");
    Image16 img(d.width, d.height);
    for (int y = 0; y < d.height; ++y)
        for (int x = 0; x < d.width; ++x) {
            const auto *p = d.rows.data() + static_cast<std::size_t>(y) * d.stride + static_cast<std::size_t>(x) * 2;
            img(x, y) = static_cast<std::uint16_t>((p[0] << 8) | p[1]);
        }
    return img;
}

inline ImageRgb read_png_rgb(const std::filesystem::path &path) {
    const auto d = detail::read_png_rows(path);
    if (d.color_type != PNG_COLOR_TYPE_RGB || d.bit_depth != 8)
        throw DataError("'" + path.string() + "' is not an 8-bit RGB PNG");
    ImageRgb img(d.width, d.height);
    for (int y = 0; y < d.height; ++y)
        for (int x = 0; x < d.width; ++x) {
            const auto *p = d.rows.data() + static_cast<std::size_t>(y) * d.stride + static_cast<std::size_t>(x) * 3;
            img(x, y) = {p[0], p[1], p[2]};
        }
    return img;
}

/// Raw palette indices of an indexed PNG.
inline Image8 read_png_indexed(const std::filesystem::path &path, std::vector<detail::PngText> *texts = nullptr) {
    auto d = detail::read_png_rows(path);
    if (d.color_type != PNG_COLOR_TYPE_PALETTE || d.bit_depth > 8)
        throw DataError("'" + path.string() + "' is not an indexed PNG");
    Image8 img(d.width, d.height);
    for (int y = 0; y < d.height; ++y)
        for (int x = 0; x < d.width; ++x) img(x, y) = d.rows[static_cast<std::size_t>(y) * d.stride + static_cast<std::size_t>(x)];
    if (texts) *texts = std::move(d.texts);
    return img;
}

// ---------------------------------------------------------------------------
// Layout triplets and instance maps.

inline constexpr const char *kPixelScaleKey = "cityforge:pixel_scale";

struct LayoutPaths {
    std::filesystem::path semantic, bottom_up, top_down;
};

inline LayoutPaths layout_paths(const std::filesystem::path &basename) {
    const auto b = basename.string();
    return {b + ".sem.png", b + ".hbu.png", b + ".htd.png"};
}

inline Image8 semantic_to_indices(const SemanticMap &m) {
    Image8 img(m.width(), m.height());
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) img(x, y) = code(m(x, y));
    return img;
}

inline void write_semantic_png(const std::filesystem::path &path, const SemanticMap &m) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", m.pixel_scale);
    const std::array<detail::PngText, 1> texts{{{kPixelScaleKey, buf}}};
    write_png_indexed(path, semantic_to_indices(m), semantic_palette(), texts);
}

inline SemanticMap read_semantic_png(const std::filesystem::path &path) {
    std::vector<detail::PngText> texts;
    const auto idx = read_png_indexed(path, &texts);
    SemanticMap m(idx.width(), idx.height());
    for (const auto &t : texts)
        if (t.key == kPixelScaleKey) m.pixel_scale = std::stod(t.value);
    for (int y = 0; y < idx.height(); ++y)
        for (int x = 0; x < idx.width(); ++x) m(x, y) = class_from_code(idx(x, y));
    return m;
}

inline void save_layout(const std::filesystem::path &basename, const CityLayout &layout) {
    layout.validate();
    const auto p = layout_paths(basename);
    write_semantic_png(p.semantic, layout.semantic);
    write_png_gray16(p.bottom_up, layout.heights.bottom_up);
    write_png_gray16(p.top_down, layout.heights.top_down);
}

inline CityLayout load_layout(const std::filesystem::path &basename) {
    const auto p = layout_paths(basename);
    for (const auto &f : {p.semantic, p.bottom_up, p.top_down})
        if (!std::filesystem::exists(f)) throw DependencyError("missing layout file '" + f.string() + "' (run `ingest` first)");
    CityLayout layout;
    layout.semantic = read_semantic_png(p.semantic);
    layout.heights.bottom_up = read_png_gray16(p.bottom_up);
    layout.heights.top_down = read_png_gray16(p.top_down);
    layout.validate();
    return layout;
}

inline void save_instances(const std::filesystem::path &path, const InstanceMap &m) {
    Image16 img(m.width(), m.height());
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            if (m(x, y) > 65535) throw DataError("instance id does not fit a 16-bit PNG");
            img(x, y) = static_cast<std::uint16_t>(m(x, y));
        }
    write_png_gray16(path, img);
}

inline InstanceMap load_instances(const std::filesystem::path &path) {
    const auto img = read_png_gray16(path);
    InstanceMap m{Grid2D<std::uint32_t>(img.width(), img.height(), 0), 0};
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            m.labels(x, y) = img(x, y);
            m.count = std::max<std::uint32_t>(m.count, img(x, y));
        }
    return m;
}

} // namespace cityforge
