// Copyright Contributors to the cityforge project
// SPDX-License-Identifier: Apache-2.0
//
// Seeded procedural layout source. Content is a pure function of global
// pixel coordinates, so any tile agrees with its neighbours in the overlap
// and the extrapolation conditioning is satisfied by construction.

#pragma once

#include "cityforge/layout.hpp"
#include "cityforge/osm.hpp"

namespace cityforge {

struct ProceduralCityOptions {
    std::uint64_t seed = 0;
    double pixel_scale = kZoom18PixelScale;
    int block = 96;          ///< road grid period, pixels
    int road_width = 12;     ///< pixels
    int lot = 24;            ///< building lot size inside a block, pixels
    double min_height_m = 12.0;
    double max_height_m = 48.0;
    double park_fraction = 0.15;
    double water_fraction = 0.05;
};

class ProceduralCity {
  public:
    explicit ProceduralCity(ProceduralCityOptions opt = {}) : opt_(opt) {}

    const ProceduralCityOptions &options() const { return opt_; }

    /// Column content at global pixel (gx, gy): class, bottom_up, top_down.
    void column(std::int64_t gx, std::int64_t gy, SemanticClass &cls, int &bu, int &td) const {
        bu = td = 0;
        cls = SemanticClass::Null;
        const std::int64_t b = opt_.block;
        const std::int64_t bx = floor_div(gx, b), by = floor_div(gy, b);
        const std::int64_t lx = gx - bx * b, ly = gy - by * b;
        const double ps = opt_.pixel_scale;
        if (lx < opt_.road_width || ly < opt_.road_width) {
            cls = SemanticClass::Road;
            td = meters_to_cells(kRoadHeightM, ps);
            return;
        }
        const double kind = unit_double(hash_values(opt_.seed, 0x51u, bx, by));
        if (kind < opt_.water_fraction) {
            cls = SemanticClass::Water;
            return;
        }
        if (kind < opt_.water_fraction + opt_.park_fraction) {
            cls = SemanticClass::Vegetation;
            PerlinField perlin{opt_.seed ^ 0x7065726cu, 64.0, 8.0, 16.0};
            td = meters_to_cells(perlin_sample(perlin, static_cast<double>(gx), static_cast<double>(gy)), ps);
            return;
        }
        // Building lots with a 3 px setback; some lots are left as greenery.
        const std::int64_t inner = b - opt_.road_width;
        const std::int64_t ix = lx - opt_.road_width, iy = ly - opt_.road_width;
        const std::int64_t lots = std::max<std::int64_t>(1, inner / opt_.lot);
        const std::int64_t lot_w = inner / lots;
        const std::int64_t kx = std::min(ix / lot_w, lots - 1), ky = std::min(iy / lot_w, lots - 1);
        const std::int64_t ox = ix - kx * lot_w, oy = iy - ky * lot_w;
        const std::uint64_t h = hash_values(opt_.seed, 0xB1u, bx, by, kx, ky);
        const bool vacant = unit_double(h) < 0.2;
        const std::int64_t setback = 3;
        if (!vacant && ox >= setback && oy >= setback && ox < lot_w - setback && oy < lot_w - setback) {
            cls = SemanticClass::BuildingFacade;
            const double hm = opt_.min_height_m + (opt_.max_height_m - opt_.min_height_m) * unit_double(splitmix64(h));
            td = meters_to_cells(hm, ps);
            return;
        }
        cls = vacant ? SemanticClass::Vegetation : SemanticClass::Other;
        if (vacant) {
            PerlinField perlin{opt_.seed ^ 0x7065726cu, 64.0, 8.0, 16.0};
            td = meters_to_cells(perlin_sample(perlin, static_cast<double>(gx), static_cast<double>(gy)), ps);
        }
    }

    CityLayout region(std::int64_t x0, std::int64_t y0, int width, int height) const {
        CityLayout out(width, height, opt_.pixel_scale);
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                SemanticClass c;
                int bu, td;
                column(x0 + x, y0 + y, c, bu, td);
                out.set(x, y, c, bu, td);
            }
        return out;
    }

    /// Adapter for tiled_extrapolate.
    TileSource tile_source() const {
        return [self = *this](const TileRequest &req) {
            return self.region(req.origin.x, req.origin.y, req.tile_size, req.tile_size);
        };
    }

  private:
    static std::int64_t floor_div(std::int64_t a, std::int64_t b) {
        const std::int64_t q = a / b;
        return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
    }

    ProceduralCityOptions opt_;
};

struct SampleCityOptions {
    int size = 256;
    int depth = 64;
    int buildings = 10;
    std::uint64_t seed = 0;
};

/// A small square city: a road grid, one park, one pond and `buildings`
/// rectangular buildings of varied height, all below `depth` cells.
inline CityLayout make_sample_city(const SampleCityOptions &opt = {}) {
    const double ps = kZoom18PixelScale;
    CityLayout city(opt.size, opt.size, ps);
    const int road_td = meters_to_cells(kRoadHeightM, ps);
    const int block = std::max(32, opt.size / 3);
    const int road_w = 14;
    Rng rng(opt.seed ^ 0x53414d50u);

    for (int y = 0; y < opt.size; ++y)
        for (int x = 0; x < opt.size; ++x) {
            const int lx = (x + road_w / 2) % block, ly = (y + road_w / 2) % block;
            if (lx < road_w || ly < road_w) city.set(x, y, SemanticClass::Road, 0, road_td);
            else city.set(x, y, SemanticClass::Other, 0, 0);
        }

    // Blocks are the cells between roads; park and pond take two of them.
    std::vector<std::array<int, 4>> blocks;  // x0, y0, x1, y1 inclusive
    for (int by = 0; by * block < opt.size; ++by)
        for (int bx = 0; bx * block < opt.size; ++bx) {
            const int x0 = std::max(0, bx * block - road_w / 2 + road_w), y0 = std::max(0, by * block - road_w / 2 + road_w);
            const int x1 = std::min(opt.size - 1, (bx + 1) * block - road_w / 2 - 1);
            const int y1 = std::min(opt.size - 1, (by + 1) * block - road_w / 2 - 1);
            if (x1 - x0 >= 12 && y1 - y0 >= 12) blocks.push_back({x0, y0, x1, y1});
        }
    PerlinField perlin{opt.seed, 64.0, 8.0, 16.0};
    std::size_t next_block = 0;
    if (blocks.size() > 2) {
        const auto &park = blocks[next_block++];
        for (int y = park[1]; y <= park[3]; ++y)
            for (int x = park[0]; x <= park[2]; ++x)
                city.set(x, y, SemanticClass::Vegetation, 0, meters_to_cells(perlin_sample(perlin, x, y), ps));
        const auto &pond = blocks[next_block++];
        for (int y = pond[1] + 3; y <= pond[3] - 3; ++y)
            for (int x = pond[0] + 3; x <= pond[2] - 3; ++x) city.set(x, y, SemanticClass::Water, 0, 0);
    }

    // Buildings: split the remaining blocks into lots, one building per lot.
    std::vector<std::array<int, 4>> lots;
    for (std::size_t i = next_block; i < blocks.size(); ++i) {
        const auto &b = blocks[i];
        const int mx = (b[0] + b[2]) / 2, my = (b[1] + b[3]) / 2;
        lots.push_back({b[0], b[1], mx - 1, my - 1});
        lots.push_back({mx + 1, b[1], b[2], my - 1});
        lots.push_back({b[0], my + 1, mx - 1, b[3]});
        lots.push_back({mx + 1, my + 1, b[2], b[3]});
    }
    for (std::size_t i = lots.size(); i > 1; --i) std::swap(lots[i - 1], lots[rng.below(i)]);
    const int max_td = opt.depth - 2;
    for (int n = 0; n < opt.buildings && n < static_cast<int>(lots.size()); ++n) {
        const auto &l = lots[static_cast<std::size_t>(n)];
        const int w = l[2] - l[0] + 1, h = l[3] - l[1] + 1;
        const int inset_x = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, w / 6))));
        const int inset_y = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, h / 6))));
        const int td = 12 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, max_td - 12))));
        for (int y = l[1] + inset_y; y <= l[3] - inset_y; ++y)
            for (int x = l[0] + inset_x; x <= l[2] - inset_x; ++x) city.set(x, y, SemanticClass::BuildingFacade, 0, td);
    }
    return city;
}

} // namespace cityforge
