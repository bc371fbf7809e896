// Copyright Contributors to the cityforge project
// SPDX-License-Identifier: Apache-2.0

#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace cf = cityforge;
using cf::SemanticClass;

namespace {

// 64x64 raster just north of the equator at zoom 18.
cf::MercatorGrid equator_grid(int size = 64) {
    cf::MercatorGrid g;
    g.zoom = 18;
    g.origin_x = 33554432;
    g.origin_y = 33554432 - size;
    g.width = size;
    g.height = size;
    return g;
}

cf::LonLat at_pixel(const cf::MercatorGrid &g, double x, double y) {
    const auto ll = cf::unproject_mercator(static_cast<double>(g.origin_x) + x, static_cast<double>(g.origin_y) + y, g.zoom);
    return {ll.x, ll.y};
}

cf::GeoFeature rect(const cf::MercatorGrid &g, SemanticClass c, double x0, double y0, double x1, double y1) {
    cf::GeoFeature f;
    f.klass = c;
    f.geometry = cf::GeometryKind::Polygon;
    f.coords = {at_pixel(g, x0, y0), at_pixel(g, x1, y0), at_pixel(g, x1, y1), at_pixel(g, x0, y1), at_pixel(g, x0, y0)};
    return f;
}

cf::GeoFeature line(const cf::MercatorGrid &g, SemanticClass c, std::vector<cf::Vec2> pts, double width_m) {
    cf::GeoFeature f;
    f.klass = c;
    f.geometry = cf::GeometryKind::Polyline;
    for (auto p : pts) f.coords.push_back(at_pixel(g, p.x, p.y));
    f.width_m = width_m;
    return f;
}

} // namespace

TEST(Mercator, WorldCentre) {
    const auto p = cf::project_mercator(0.0, 0.0, 18);
    EXPECT_EQ(p.x, 33554432.0);
    EXPECT_EQ(p.y, 33554432.0);
}

TEST(Mercator, RightEdge) {
    EXPECT_EQ(cf::project_mercator(180.0, 0.0, 18).x, 67108864.0);
    EXPECT_EQ(cf::project_mercator(-180.0, 0.0, 18).x, 0.0);
}

TEST(Mercator, EquatorResolution) {
    EXPECT_NEAR(cf::ground_resolution(0.0, 18), 0.5972, 5e-4);
    EXPECT_NEAR(cf::ground_resolution(0.0, 18), 40075016.686 / (256.0 * 262144.0), 1e-6);
}

TEST(Mercator, OutOfBandLatitudeRejected) {
    EXPECT_THROW(cf::project_mercator(0.0, 85.06, 18), cf::RangeError);
    EXPECT_THROW(cf::project_mercator(0.0, -89.0, 18), cf::RangeError);
    EXPECT_THROW(cf::project_mercator(181.0, 0.0, 18), cf::RangeError);
    EXPECT_NO_THROW(cf::project_mercator(0.0, 85.05, 18));
}

TEST(Mercator, MonotoneAndRoundTrip) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> lon(-180.0, 180.0), lat(-85.0, 85.0);
    for (int i = 0; i < 20000; ++i) {
        const double a = lon(rng), b = lat(rng);
        const auto p = cf::project_mercator(a, b, 18);
        const auto q = cf::project_mercator(std::min(180.0, a + 1e-4), b, 18);
        const auto r = cf::project_mercator(a, std::min(85.05, b + 1e-4), 18);
        ASSERT_GT(q.x, p.x - 1e-12);
        ASSERT_LT(r.y, p.y);
        const auto ll = cf::unproject_mercator(p.x, p.y, 18);
        ASSERT_NEAR(ll.x, a, 1e-9);
        ASSERT_NEAR(ll.y, b, 1e-9);
    }
}

TEST(Mercator, GridFromBboxCoversBox) {
    const auto g = cf::grid_from_bbox(103.850001991, 1.288631087, 103.851369917, 1.289998667, 18);
    EXPECT_EQ(g.width, 256);
    EXPECT_EQ(g.height, 256);
    EXPECT_NEAR(g.pixel_scale(), cf::ground_resolution(1.2893, 18), 1e-6);
}

TEST(Perlin, LatticePointsGiveMidpoint) {
    const cf::PerlinField f{42, 64.0, 8.0, 16.0};
    for (int i = -3; i < 4; ++i)
        for (int j = -3; j < 4; ++j) EXPECT_DOUBLE_EQ(cf::perlin_sample(f, i * 64.0, j * 64.0), 12.0);
}

TEST(Perlin, DeterministicAndSeeded) {
    const cf::PerlinField a{1}, b{1}, c{2};
    int differ = 0;
    for (int i = 0; i < 100; ++i) {
        const double x = 3.7 * i, y = 11.3 * i + 5;
        EXPECT_EQ(cf::perlin_sample(a, x, y), cf::perlin_sample(b, x, y));
        differ += cf::perlin_sample(a, x, y) != cf::perlin_sample(c, x, y);
    }
    EXPECT_GT(differ, 50);
}

TEST(Perlin, RangeSweep) {
    const cf::PerlinField f{9};
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1e5, 1e5);
    double lo = 1e9, hi = -1e9;
    for (int i = 0; i < 200000; ++i) {
        const double v = cf::perlin_sample(f, u(rng), u(rng));
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    EXPECT_GE(lo, 8.0);
    EXPECT_LE(hi, 16.0);
    EXPECT_LT(lo, 10.0);
    EXPECT_GT(hi, 14.0);
}

TEST(Rasterize, EmptyFeatureListIsAllNull) {
    const auto l = cf::rasterize({}, equator_grid(), cf::PerlinField{});
    for (auto c : l.semantic.cells.values()) EXPECT_EQ(c, SemanticClass::Null);
    for (auto h : l.heights.top_down.values()) EXPECT_EQ(h, 0);
}

TEST(Rasterize, RoadHeightAndWidth) {
    const auto g = equator_grid();
    const auto l = cf::rasterize({line(g, SemanticClass::Road, {{4, 32}, {60, 32}}, 7.0)}, g, cf::PerlinField{});
    const double ps = g.pixel_scale();
    const int td = static_cast<int>(std::lround(4.0 / ps));
    EXPECT_EQ(td, 7);
    int rows = 0;
    for (int y = 0; y < 64; ++y) {
        if (l.semantic(32, y) != SemanticClass::Road) continue;
        ++rows;
        EXPECT_EQ(l.heights.top_down(32, y), td);
        EXPECT_EQ(l.heights.bottom_up(32, y), 0);
    }
    // 7 m / 0.597 m = 11.7 px band centred on the row boundary at y = 32.
    EXPECT_GE(rows, 11);
    EXPECT_LE(rows, 12);
    l.validate();
}

TEST(Rasterize, NarrowPolylineStillOnePixelWide) {
    const auto g = equator_grid();
    const auto l = cf::rasterize({line(g, SemanticClass::Road, {{4, 20.5}, {60, 20.5}}, 0.05)}, g, cf::PerlinField{});
    for (int x = 5; x < 59; ++x) EXPECT_EQ(l.semantic(x, 20), SemanticClass::Road) << x;
}

TEST(Rasterize, VegetationHeightsInRange) {
    const auto g = equator_grid();
    const auto l = cf::rasterize({rect(g, SemanticClass::Vegetation, 0, 0, 64, 64)}, g, cf::PerlinField{5});
    const double ps = g.pixel_scale();
    const int lo = static_cast<int>(std::lround(8.0 / ps)), hi = static_cast<int>(std::lround(16.0 / ps));
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            ASSERT_EQ(l.semantic(x, y), SemanticClass::Vegetation);
            ASSERT_GE(l.heights.top_down(x, y), lo);
            ASSERT_LE(l.heights.top_down(x, y), hi);
        }
}

TEST(Rasterize, BuildingBeatsWaterRegardlessOfOrder) {
    const auto g = equator_grid();
    auto water = rect(g, SemanticClass::Water, 0, 0, 40, 40);
    auto building = rect(g, SemanticClass::BuildingFacade, 20, 20, 50, 50);
    building.height_m = 30.0;
    for (const auto &fs : {std::vector{water, building}, std::vector{building, water}}) {
        const auto l = cf::rasterize(fs, g, cf::PerlinField{});
        EXPECT_EQ(l.semantic(30, 30), SemanticClass::BuildingFacade);
        EXPECT_EQ(l.heights.top_down(30, 30), static_cast<int>(std::lround(30.0 / g.pixel_scale())));
        EXPECT_EQ(l.semantic(10, 10), SemanticClass::Water);
        EXPECT_EQ(l.heights.top_down(10, 10), 0);
    }
}

TEST(Rasterize, PriorityOrderRoadOverVegetation) {
    const auto g = equator_grid();
    const auto l = cf::rasterize({line(g, SemanticClass::Road, {{0, 32}, {64, 32}}, 7.0),
                                  rect(g, SemanticClass::Vegetation, 0, 0, 64, 64),
                                  rect(g, SemanticClass::Other, 0, 0, 64, 64)},
                                 g, cf::PerlinField{});
    EXPECT_EQ(l.semantic(10, 32), SemanticClass::Road);
    EXPECT_EQ(l.semantic(10, 5), SemanticClass::Vegetation);
}

TEST(Rasterize, MissingBuildingHeightDefaults) {
    const auto g = equator_grid();
    const auto l = cf::rasterize({rect(g, SemanticClass::BuildingFacade, 10, 10, 20, 20)}, g, cf::PerlinField{});
    EXPECT_EQ(l.heights.top_down(15, 15), static_cast<int>(std::lround(18.0 / g.pixel_scale())));
}

TEST(Rasterize, EvenOddFillAndClipping) {
    const auto g = equator_grid();
    // Polygon far larger than the raster is clipped silently.
    auto big = rect(g, SemanticClass::Water, -100, -100, 200, 200);
    const auto l = cf::rasterize({big}, g, cf::PerlinField{});
    for (auto c : l.semantic.cells.values()) ASSERT_EQ(c, SemanticClass::Water);
    // Bow-tie ring: crossing point region is covered once on each side.
    cf::GeoFeature bow;
    bow.klass = SemanticClass::Other;
    bow.coords = {at_pixel(g, 8, 8), at_pixel(g, 56, 56), at_pixel(g, 56, 8), at_pixel(g, 8, 56), at_pixel(g, 8, 8)};
    const auto m = cf::rasterize({bow}, g, cf::PerlinField{});
    EXPECT_EQ(m.semantic(12, 32), SemanticClass::Other);
    EXPECT_EQ(m.semantic(52, 32), SemanticClass::Other);
    EXPECT_EQ(m.semantic(32, 12), SemanticClass::Null);
}

TEST(Rasterize, Deterministic) {
    std::ifstream in(std::string(CITYFORGE_SOURCE_DIR) + "/data/sample_features.ndjson");
    ASSERT_TRUE(in);
    const auto features = cf::read_features(in);
    const auto g = cf::grid_from_bbox(103.850001991, 1.288631087, 103.851369917, 1.289998667, 18);
    const auto a = cf::rasterize(features, g, cf::PerlinField{3});
    const auto b = cf::rasterize(features, g, cf::PerlinField{3});
    EXPECT_EQ(a, b);
    EXPECT_NO_THROW(a.validate());
    EXPECT_EQ(cf::instantiate_buildings(a.semantic).count, 11u);
}

TEST(Features, NdjsonParsingAndErrors) {
    std::istringstream ok(
        "# comment\n\n"
        R"({"class":"road","type":"polyline","coords":[[0,0],[0.001,0]],"width_m":7})"
        "\n");
    const auto fs = cf::read_features(ok);
    ASSERT_EQ(fs.size(), 1u);
    EXPECT_EQ(fs[0].klass, SemanticClass::Road);
    EXPECT_EQ(fs[0].width_m, 7.0);

    std::istringstream open_ring(R"({"class":"water","type":"polygon","coords":[[0,0],[1,0],[1,1],[0,1]]})");
    EXPECT_THROW(cf::read_features(open_ring), cf::DataError);
    std::istringstream bad_lat(R"({"class":"water","type":"polyline","coords":[[0,0],[0,86]]})");
    EXPECT_THROW(cf::read_features(bad_lat), cf::RangeError);
    std::istringstream junk("{not json");
    EXPECT_THROW(cf::read_features(junk), cf::DataError);
    std::istringstream unknown(R"({"class":"lava","type":"polyline","coords":[[0,0],[0,1]]})");
    EXPECT_THROW(cf::read_features(unknown), cf::DataError);
}

TEST(Features, OsmXmlFrontEnd) {
    std::istringstream xml(R"(<?xml version="1.0"?>
<osm version="0.6">
  <node id="1" lat="0.0" lon="0.0"/>
  <node id="2" lat="0.0" lon="0.001"/>
  <node id="3" lat="0.001" lon="0.001"/>
  <node id="4" lat="0.001" lon="0.0"/>
  <way id="10"><nd ref="1"/><nd ref="2"/><tag k="highway" v="residential"/></way>
  <way id="11"><nd ref="1"/><nd ref="2"/><nd ref="3"/><nd ref="4"/><nd ref="1"/>
    <tag k="building" v="yes"/><tag k="building:levels" v="5"/></way>
  <way id="12"><nd ref="1"/><nd ref="2"/><nd ref="3"/><nd ref="4"/><nd ref="1"/><tag k="natural" v="water"/></way>
  <way id="13"><nd ref="1"/><nd ref="2"/><nd ref="3"/><nd ref="4"/><nd ref="1"/><tag k="leisure" v="park"/></way>
  <way id="14"><nd ref="1"/><nd ref="2"/><tag k="highway" v="footway"/></way>
  <way id="15"><nd ref="1"/><nd ref="2"/><tag k="highway" v="motorway"/><tag k="lanes" v="4"/></way>
</osm>)");
    const auto fs = cf::read_osm_xml(xml);
    ASSERT_EQ(fs.size(), 5u);
    EXPECT_EQ(fs[0].klass, SemanticClass::Road);
    EXPECT_EQ(fs[0].width_m, cf::kDefaultRoadWidthM);
    EXPECT_EQ(fs[1].klass, SemanticClass::BuildingFacade);
    EXPECT_EQ(fs[1].height_m, 15.0);
    EXPECT_EQ(fs[2].klass, SemanticClass::Water);
    EXPECT_EQ(fs[3].klass, SemanticClass::Vegetation);
    EXPECT_EQ(fs[4].klass, SemanticClass::Highway);
    EXPECT_EQ(fs[4].width_m, 14.0);
}
