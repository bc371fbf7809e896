// Copyright Contributors to the cityforge project
// SPDX-License-Identifier: Apache-2.0
//
// Bird's-eye-view city layout: a semantic raster plus a pair of height
// fields that together define an implicit 3D label volume. A voxel (i, j, k)
// carries the pixel's class when bottom_up(i, j) <= k <= top_down(i, j).

#pragma once

#include "cityforge/core.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <string_view>

namespace cityforge {

enum class SemanticClass : std::uint8_t {
    Null = 0,
    Road = 1,
    Highway = 2,
    BuildingFacade = 3,
    Vegetation = 4,
    Water = 5,
    Other = 6,
    Vehicle = 7,
    BuildingRoof = 8,
};

inline constexpr int kNumClasses = 9;

/// Meters per pixel of Web Mercator at zoom 18 on the equator.
inline constexpr double kZoom18PixelScale = 40075016.685578488 / (256.0 * 262144.0);

constexpr bool is_registered_class(std::uint8_t code) { return code < kNumClasses; }

constexpr bool is_building(SemanticClass c) {
    return c == SemanticClass::BuildingFacade || c == SemanticClass::BuildingRoof;
}

constexpr std::uint8_t code(SemanticClass c) { return static_cast<std::uint8_t>(c); }

inline SemanticClass class_from_code(std::uint8_t code) {
    if (!is_registered_class(code)) throw DataError("unregistered semantic class code " + std::to_string(code));
    return static_cast<SemanticClass>(code);
}

inline std::string_view class_name(SemanticClass c) {
    switch (c) {
    case SemanticClass::Null: return "null";
    case SemanticClass::Road: return "road";
    case SemanticClass::Highway: return "highway";
    case SemanticClass::BuildingFacade: return "building";
    case SemanticClass::Vegetation: return "vegetation";
    case SemanticClass::Water: return "water";
    case SemanticClass::Other: return "other";
    case SemanticClass::Vehicle: return "vehicle";
    case SemanticClass::BuildingRoof: return "roof";
    }
    return "null";
}

using SemanticRaster = Grid2D<SemanticClass>;
using HeightRaster = Grid2D<std::uint16_t>;

struct SemanticMap {
    SemanticRaster cells;
    double pixel_scale = kZoom18PixelScale;

    SemanticMap() = default;
    SemanticMap(int width, int height, double scale = kZoom18PixelScale)
        : cells(width, height, SemanticClass::Null), pixel_scale(scale) {}

    int width() const { return cells.width(); }
    int height() const { return cells.height(); }
    SemanticClass &operator()(int x, int y) { return cells(x, y); }
    SemanticClass operator()(int x, int y) const { return cells(x, y); }

    friend bool operator==(const SemanticMap &, const SemanticMap &) = default;
};

struct HeightFieldPair {
    HeightRaster bottom_up;
    HeightRaster top_down;

    HeightFieldPair() = default;
    HeightFieldPair(int width, int height) : bottom_up(width, height, 0), top_down(width, height, 0) {}

    friend bool operator==(const HeightFieldPair &, const HeightFieldPair &) = default;
};

struct CityLayout {
    SemanticMap semantic;
    HeightFieldPair heights;

    CityLayout() = default;
    CityLayout(int width, int height, double pixel_scale = kZoom18PixelScale)
        : semantic(width, height, pixel_scale), heights(width, height) {}

    int width() const { return semantic.width(); }
    int height() const { return semantic.height(); }
    bool contains(int x, int y) const { return semantic.cells.contains(x, y); }

    /// Writes one column; NULL columns always carry zero heights.
    void set(int x, int y, SemanticClass c, int bottom_up, int top_down) {
        if (c == SemanticClass::Null) bottom_up = top_down = 0;
        semantic(x, y) = c;
        heights.bottom_up(x, y) = static_cast<std::uint16_t>(std::clamp(bottom_up, 0, 65535));
        heights.top_down(x, y) = static_cast<std::uint16_t>(std::clamp(top_down, 0, 65535));
    }

    void clear(int x, int y) { set(x, y, SemanticClass::Null, 0, 0); }

    /// Throws DataError when a structural invariant is violated.
    void validate() const {
        if (width() < 1 || height() < 1) throw DataError("layout must be at least 1x1");
        if (heights.bottom_up.width() != width() || heights.bottom_up.height() != height() ||
            heights.top_down.width() != width() || heights.top_down.height() != height())
            throw DataError("height fields do not match the semantic map dimensions");
        for (int y = 0; y < height(); ++y) {
            for (int x = 0; x < width(); ++x) {
                const auto c = semantic(x, y);
                if (!is_registered_class(code(c))) throw DataError("unregistered class in semantic map");
                const int bu = heights.bottom_up(x, y);
                const int td = heights.top_down(x, y);
                if (c == SemanticClass::Null && (bu != 0 || td != 0))
                    throw DataError("NULL cell with non-zero height at (" + std::to_string(x) + "," + std::to_string(y) + ")");
                if (c != SemanticClass::Null && bu > td)
                    throw DataError("bottom_up exceeds top_down at (" + std::to_string(x) + "," + std::to_string(y) + ")");
            }
        }
    }

    friend bool operator==(const CityLayout &, const CityLayout &) = default;
};

/// Label of voxel (i, j, k). Queries outside the raster are empty.
inline SemanticClass volume_lookup(const CityLayout &layout, int i, int j, int k) {
    if (!layout.contains(i, j) || k < 0) return SemanticClass::Null;
    const auto c = layout.semantic(i, j);
    if (c == SemanticClass::Null) return c;
    return (layout.heights.bottom_up(i, j) <= k && k <= layout.heights.top_down(i, j)) ? c : SemanticClass::Null;
}

struct VolumeDims {
    int w = 0;
    int h = 0;
    int d = 0;

    friend constexpr bool operator==(VolumeDims, VolumeDims) = default;
};

// ---------------------------------------------------------------------------
// Local windows.

struct PixelCoord {
    int x = 0;
    int y = 0;

    friend constexpr bool operator==(PixelCoord, PixelCoord) = default;
};

/// Extent of a local window: rows (N_H), columns (N_W), vertical cells (N_D).
struct WindowSize {
    int rows = 1;
    int cols = 1;
    int depth = 1;
};

struct LocalWindow {
    PixelCoord origin;   ///< parent pixel of local (0, 0)
    WindowSize size;
    CityLayout content;  ///< cols x rows crop
    std::uint32_t instance = 0;  ///< non-zero once isolated
    bool roof_rule = false;      ///< top-most building voxel reads as roof

    VolumeDims dims() const { return {size.cols, size.rows, size.depth}; }

    /// Label of local voxel (i, j, k), honouring the facade/roof split.
    SemanticClass lookup(int i, int j, int k) const {
        if (k >= size.depth) return SemanticClass::Null;
        const auto c = volume_lookup(content, i, j, k);
        if (!roof_rule || !is_building(c)) return c;
        return k == content.heights.top_down(i, j) ? SemanticClass::BuildingRoof : SemanticClass::BuildingFacade;
    }
};

/// Crop centred on `center` (the centre maps to local index size/2); cells
/// outside the parent are NULL and top_down is capped at depth-1.
inline LocalWindow extract_local_window(const CityLayout &layout, PixelCoord center, WindowSize size) {
    if (size.rows < 1 || size.cols < 1 || size.depth < 1) throw DataError("window size must be positive");
    LocalWindow win;
    win.size = size;
    win.origin = {center.x - size.cols / 2, center.y - size.rows / 2};
    win.content = CityLayout(size.cols, size.rows, layout.semantic.pixel_scale);
    const int cap = size.depth - 1;
    for (int y = 0; y < size.rows; ++y) {
        for (int x = 0; x < size.cols; ++x) {
            const int px = win.origin.x + x;
            const int py = win.origin.y + y;
            if (!layout.contains(px, py)) continue;
            const auto c = layout.semantic(px, py);
            const int bu = layout.heights.bottom_up(px, py);
            if (c == SemanticClass::Null || bu > cap) continue;
            win.content.set(x, y, c, bu, std::min<int>(layout.heights.top_down(px, py), cap));
        }
    }
    return win;
}

// ---------------------------------------------------------------------------
// Building instances.

struct InstanceMap {
    Grid2D<std::uint32_t> labels;
    std::uint32_t count = 0;

    int width() const { return labels.width(); }
    int height() const { return labels.height(); }
    std::uint32_t operator()(int x, int y) const { return labels(x, y); }

    friend bool operator==(const InstanceMap &, const InstanceMap &) = default;
};

/// 4-connected components of building pixels, numbered 1..n in raster-scan
/// order of first encounter.
inline InstanceMap instantiate_buildings(const SemanticMap &semantic) {
    InstanceMap out{Grid2D<std::uint32_t>(semantic.width(), semantic.height(), 0), 0};
    std::vector<PixelCoord> stack;
    for (int y = 0; y < semantic.height(); ++y) {
        for (int x = 0; x < semantic.width(); ++x) {
            if (!is_building(semantic(x, y)) || out.labels(x, y) != 0) continue;
            const std::uint32_t id = ++out.count;
            out.labels(x, y) = id;
            stack.push_back({x, y});
            while (!stack.empty()) {
                const auto p = stack.back();
                stack.pop_back();
                for (const auto &[dx, dy] : kNeighbors4) {
                    const int nx = p.x + dx;
                    const int ny = p.y + dy;
                    if (!semantic.cells.contains(nx, ny) || out.labels(nx, ny) != 0) continue;
                    if (!is_building(semantic(nx, ny))) continue;
                    out.labels(nx, ny) = id;
                    stack.push_back({nx, ny});
                }
            }
        }
    }
    return out;
}

/// Keeps only the building cells of instance `id` (given in parent
/// coordinates); everything else in the window becomes NULL.
inline LocalWindow isolate_instance(const LocalWindow &window, const InstanceMap &instances, std::uint32_t id) {
    if (id == 0) throw DataError("instance id must be >= 1");
    LocalWindow out = window;
    out.instance = id;
    for (int y = 0; y < window.size.rows; ++y) {
        for (int x = 0; x < window.size.cols; ++x) {
            const int px = window.origin.x + x;
            const int py = window.origin.y + y;
            const bool keep = is_building(window.content.semantic(x, y)) &&
                              instances.labels.at_or(px, py, 0) == id;
            if (!keep) out.content.clear(x, y);
        }
    }
    return out;
}

/// Switches on the roof rule: k == top_down reads BUILDING_ROOF, lower
/// occupied cells read BUILDING_FACADE.
inline LocalWindow relabel_facade_roof(const LocalWindow &window, std::uint32_t id) {
    LocalWindow out = window;
    out.instance = id;
    out.roof_rule = true;
    return out;
}

/// Buffer-free centred variant of extract+isolate+relabel for one instance:
/// the window is the instance's bounding box grown by `margin` pixels.
inline LocalWindow building_window(const CityLayout &layout, const InstanceMap &instances, std::uint32_t id,
                                   int depth, int margin = 2) {
    int x0 = layout.width(), y0 = layout.height(), x1 = -1, y1 = -1;
    for (int y = 0; y < layout.height(); ++y)
        for (int x = 0; x < layout.width(); ++x)
            if (instances(x, y) == id) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) {
        LocalWindow empty = extract_local_window(CityLayout(1, 1, layout.semantic.pixel_scale), {0, 0}, {1, 1, depth});
        empty.instance = id;
        empty.roof_rule = true;
        return empty;
    }
    const int cols = x1 - x0 + 1 + 2 * margin;
    const int rows = y1 - y0 + 1 + 2 * margin;
    const PixelCoord center{x0 - margin + cols / 2, y0 - margin + rows / 2};
    auto win = extract_local_window(layout, center, {rows, cols, depth});
    return relabel_facade_roof(isolate_instance(win, instances, id), id);
}

// ---------------------------------------------------------------------------
// Sliding-window extrapolation.

struct TileRequest {
    PixelCoord origin;          ///< top-left pixel of the tile in the target
    int tile_size = 512;
    const CityLayout *conditioning = nullptr;  ///< tile-sized crop of committed content
    const Mask *known = nullptr;               ///< 1 where conditioning is committed
};

/// Produces one tile_size x tile_size layout per request.
using TileSource = std::function<CityLayout(const TileRequest &)>;

struct ExtrapolationOptions {
    int tile_size = 512;
    double overlap = 0.25;

    int stride() const { return tile_size - static_cast<int>(std::lround(tile_size * overlap)); }
};

/// Number of window placements along an axis of `extent` pixels.
inline int extrapolation_steps(int extent, const ExtrapolationOptions &opt) {
    if (extent <= opt.tile_size) return 1;
    const int stride = opt.stride();
    return (extent - opt.tile_size + stride - 1) / stride + 1;
}

/// Assembles a width x height layout tile by tile in row-major order.
/// Committed pixels are handed to the source as conditioning and are never
/// overwritten; tiles hanging past the target edge are cropped.
inline CityLayout tiled_extrapolate(const TileSource &source, int width, int height,
                                    const ExtrapolationOptions &opt = {}) {
    if (opt.tile_size < 1 || opt.stride() < 1) throw ConfigError("invalid extrapolation tile geometry");
    if (width < opt.tile_size || height < opt.tile_size)
        throw ConfigError("target size must be at least one tile (" + std::to_string(opt.tile_size) + ")");

    CityLayout out;
    Mask committed(width, height, 0);
    const int steps_x = extrapolation_steps(width, opt);
    const int steps_y = extrapolation_steps(height, opt);
    const int ts = opt.tile_size;

    for (int sy = 0; sy < steps_y; ++sy) {
        for (int sx = 0; sx < steps_x; ++sx) {
            const PixelCoord o{sx * opt.stride(), sy * opt.stride()};
            CityLayout cond(ts, ts, out.width() > 0 ? out.semantic.pixel_scale : kZoom18PixelScale);
            Mask known(ts, ts, 0);
            if (out.width() > 0) {
                for (int y = 0; y < ts; ++y)
                    for (int x = 0; x < ts; ++x) {
                        const int gx = o.x + x, gy = o.y + y;
                        if (gx >= width || gy >= height || !committed(gx, gy)) continue;
                        known(x, y) = 1;
                        cond.set(x, y, out.semantic(gx, gy), out.heights.bottom_up(gx, gy), out.heights.top_down(gx, gy));
                    }
            }
            const CityLayout tile = source(TileRequest{o, ts, &cond, &known});
            if (tile.width() != ts || tile.height() != ts)
                throw DataError("tile source returned a " + std::to_string(tile.width()) + "x" +
                                std::to_string(tile.height()) + " tile, expected " + std::to_string(ts));
            if (out.width() == 0) out = CityLayout(width, height, tile.semantic.pixel_scale);
            for (int y = 0; y < ts; ++y)
                for (int x = 0; x < ts; ++x) {
                    const int gx = o.x + x, gy = o.y + y;
                    if (gx >= width || gy >= height || committed(gx, gy)) continue;
                    out.set(gx, gy, tile.semantic(x, y), tile.heights.bottom_up(x, y), tile.heights.top_down(x, y));
                    committed(gx, gy) = 1;
                }
        }
    }
    return out;
}

} // namespace cityforge
