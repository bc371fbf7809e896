// Copyright Contributors to the cityforge project
// SPDX-License-Identifier: Apache-2.0
//
// Geodata ingestion: Web Mercator projection, seeded Perlin noise for
// greenery heights, a line-delimited feature format (plus a small OSM XML
// front-end) and the priority rasterizer that turns features into a layout.

#pragma once

#include "cityforge/core.hpp"
#include "cityforge/layout.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace cityforge {

// ---------------------------------------------------------------------------
// Web Mercator (EPSG:3857) in global pixel coordinates.

inline constexpr double kMaxMercatorLatitude = 85.0511287798066;
inline constexpr double kEarthCircumference = 40075016.685578488;

inline double world_pixels(int zoom) { return 256.0 * std::ldexp(1.0, zoom); }

/// Ground meters per pixel at `lat_deg`.
inline double ground_resolution(double lat_deg, int zoom) {
    return kEarthCircumference * std::cos(deg2rad(lat_deg)) / world_pixels(zoom);
}

inline Vec2 project_mercator(double lon_deg, double lat_deg, int zoom) {
    if (!(lat_deg > -kMaxMercatorLatitude && lat_deg < kMaxMercatorLatitude))
        throw RangeError("latitude " + std::to_string(lat_deg) + " outside the Web Mercator band");
    if (!(lon_deg >= -180.0 && lon_deg <= 180.0))
        throw RangeError("longitude " + std::to_string(lon_deg) + " outside [-180, 180]");
    if (zoom < 0 || zoom > 30) throw RangeError("zoom level out of range");
    const double size = world_pixels(zoom);
    const double phi = deg2rad(lat_deg);
    const double x = (lon_deg + 180.0) / 360.0 * size;
    const double y = (1.0 - std::log(std::tan(phi) + 1.0 / std::cos(phi)) / kPi) / 2.0 * size;
    return {x, y};
}

/// Inverse of project_mercator; returns (lon, lat) in degrees.
inline Vec2 unproject_mercator(double x_px, double y_px, int zoom) {
    const double size = world_pixels(zoom);
    const double lon = x_px / size * 360.0 - 180.0;
    const double lat = rad2deg(std::atan(std::sinh(kPi * (1.0 - 2.0 * y_px / size))));
    return {lon, lat};
}

struct MercatorGrid {
    int zoom = 18;
    std::int64_t origin_x = 0;  ///< global pixel of raster column 0
    std::int64_t origin_y = 0;  ///< global pixel of raster row 0
    int width = 1;
    int height = 1;

    /// Meters per pixel at the raster centre latitude.
    double pixel_scale() const {
        const auto ll = unproject_mercator(static_cast<double>(origin_x) + width * 0.5,
                                           static_cast<double>(origin_y) + height * 0.5, zoom);
        return ground_resolution(ll.y, zoom);
    }

    void validate() const {
        const double extent = world_pixels(zoom);
        if (width < 1 || height < 1) throw ConfigError("raster must be at least 1x1");
        if (origin_x < 0 || origin_y < 0 || origin_x + width > extent || origin_y + height > extent)
            throw ConfigError("raster does not fit inside the zoom-" + std::to_string(zoom) + " world");
    }
};

/// Smallest pixel-aligned grid covering the lon/lat box.
inline MercatorGrid grid_from_bbox(double lon0, double lat0, double lon1, double lat1, int zoom) {
    const auto a = project_mercator(std::min(lon0, lon1), std::max(lat0, lat1), zoom);
    const auto b = project_mercator(std::max(lon0, lon1), std::min(lat0, lat1), zoom);
    MercatorGrid g;
    g.zoom = zoom;
    g.origin_x = static_cast<std::int64_t>(std::floor(a.x));
    g.origin_y = static_cast<std::int64_t>(std::floor(a.y));
    g.width = std::max(1, static_cast<int>(std::ceil(b.x) - static_cast<double>(g.origin_x)));
    g.height = std::max(1, static_cast<int>(std::ceil(b.y) - static_cast<double>(g.origin_y)));
    g.validate();
    return g;
}

// ---------------------------------------------------------------------------
// Perlin noise.

struct PerlinField {
    std::uint64_t seed = 0;
    double cell_size = 64.0;  ///< pixels per lattice cell
    double lo = 8.0;          ///< output range, meters
    double hi = 16.0;
};

namespace detail {

inline double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

inline double lattice_dot(std::uint64_t seed, std::int64_t ix, std::int64_t iy, double dx, double dy) {
    const double angle = 2.0 * kPi * unit_double(hash_values(seed, ix, iy));
    return std::cos(angle) * dx + std::sin(angle) * dy;
}

} // namespace detail

/// Classic 2D gradient noise in [-1, 1] at lattice coordinates (u, v).
/// Unit gradients bound the raw value by sqrt(1/2); it is rescaled to fill
/// the unit interval.
inline double perlin_noise(std::uint64_t seed, double u, double v) {
    const double fu = std::floor(u), fv = std::floor(v);
    const auto ix = static_cast<std::int64_t>(fu);
    const auto iy = static_cast<std::int64_t>(fv);
    const double dx = u - fu, dy = v - fv;
    const double n00 = detail::lattice_dot(seed, ix, iy, dx, dy);
    const double n10 = detail::lattice_dot(seed, ix + 1, iy, dx - 1.0, dy);
    const double n01 = detail::lattice_dot(seed, ix, iy + 1, dx, dy - 1.0);
    const double n11 = detail::lattice_dot(seed, ix + 1, iy + 1, dx - 1.0, dy - 1.0);
    const double sx = detail::fade(dx), sy = detail::fade(dy);
    const double nx0 = n00 + sx * (n10 - n00);
    const double nx1 = n01 + sx * (n11 - n01);
    const double n = nx0 + sy * (nx1 - nx0);
    return std::clamp(n * std::numbers::sqrt2, -1.0, 1.0);
}

/// Noise at pixel (x, y) mapped affinely onto [lo, hi].
inline double perlin_sample(const PerlinField &field, double x, double y) {
    const double raw = perlin_noise(field.seed, x / field.cell_size, y / field.cell_size);
    return std::clamp(field.lo + (field.hi - field.lo) * (raw + 1.0) * 0.5, field.lo, field.hi);
}

// ---------------------------------------------------------------------------
// Features.

enum class GeometryKind { Polygon, Polyline };

struct LonLat {
    double lon = 0.0;
    double lat = 0.0;
    friend constexpr bool operator==(LonLat, LonLat) = default;
};

struct GeoFeature {
    GeometryKind geometry = GeometryKind::Polygon;
    std::vector<LonLat> coords;
    SemanticClass klass = SemanticClass::Other;
    std::optional<double> height_m;     ///< buildings
    std::optional<double> width_m;      ///< roads and highways
    std::optional<double> bottom_up_m;  ///< elevated decks / overhangs

    void validate() const {
        for (const auto &c : coords) {
            if (!(c.lon >= -180.0 && c.lon <= 180.0)) throw RangeError("feature longitude outside [-180, 180]");
            if (!(c.lat > -kMaxMercatorLatitude && c.lat < kMaxMercatorLatitude))
                throw RangeError("feature latitude outside the Web Mercator band");
        }
        if (geometry == GeometryKind::Polygon) {
            if (coords.size() < 4) throw DataError("polygon needs at least 3 distinct vertices plus closure");
            if (!(coords.front() == coords.back())) throw DataError("polygon ring is not closed");
        } else if (coords.size() < 2) {
            throw DataError("polyline needs at least 2 vertices");
        }
        if (width_m && !(*width_m > 0.0)) throw DataError("width_m must be positive");
        if (height_m && !(*height_m >= 0.0)) throw DataError("height_m must be non-negative");
        if (bottom_up_m && !(*bottom_up_m >= 0.0)) throw DataError("bottom_up_m must be non-negative");
    }
};

inline constexpr double kDefaultBuildingHeightM = 18.0;
inline constexpr double kRoadHeightM = 4.0;
inline constexpr double kDefaultRoadWidthM = 7.0;

inline SemanticClass class_from_name(std::string_view name) {
    if (name == "road") return SemanticClass::Road;
    if (name == "highway") return SemanticClass::Highway;
    if (name == "building") return SemanticClass::BuildingFacade;
    if (name == "vegetation") return SemanticClass::Vegetation;
    if (name == "water") return SemanticClass::Water;
    if (name == "other") return SemanticClass::Other;
    throw DataError("unknown feature class '" + std::string(name) + "'");
}

/// Parses one feature record:
///   {"class": "road|highway|building|vegetation|water|other",
///    "type": "polygon|polyline", "coords": [[lon, lat], ...],
///    "height_m": 25, "width_m": 7, "bottom_up_m": 0}
inline GeoFeature feature_from_json(const nlohmann::json &j) {
    GeoFeature f;
    try {
        f.klass = class_from_name(j.at("class").get<std::string>());
        const auto type = j.at("type").get<std::string>();
        if (type == "polygon") f.geometry = GeometryKind::Polygon;
        else if (type == "polyline") f.geometry = GeometryKind::Polyline;
        else throw DataError("unknown geometry type '" + type + "'");
        for (const auto &c : j.at("coords")) f.coords.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
        if (j.contains("height_m")) f.height_m = j["height_m"].get<double>();
        if (j.contains("width_m")) f.width_m = j["width_m"].get<double>();
        if (j.contains("bottom_up_m")) f.bottom_up_m = j["bottom_up_m"].get<double>();
    } catch (const nlohmann::json::exception &e) {
        throw DataError(std::string("malformed feature record: ") + e.what());
    }
    f.validate();
    return f;
}

inline nlohmann::json feature_to_json(const GeoFeature &f) {
    nlohmann::json j;
    j["class"] = std::string(class_name(f.klass));
    j["type"] = f.geometry == GeometryKind::Polygon ? "polygon" : "polyline";
    auto coords = nlohmann::json::array();
    for (const auto &c : f.coords) coords.push_back({c.lon, c.lat});
    j["coords"] = std::move(coords);
    if (f.height_m) j["height_m"] = *f.height_m;
    if (f.width_m) j["width_m"] = *f.width_m;
    if (f.bottom_up_m) j["bottom_up_m"] = *f.bottom_up_m;
    return j;
}

/// One JSON object per line; blank lines and lines starting with '#' are skipped.
inline std::vector<GeoFeature> read_features(std::istream &in) {
    std::vector<GeoFeature> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error &e) {
            throw DataError("features line " + std::to_string(lineno) + ": " + e.what());
        }
        try {
            out.push_back(feature_from_json(j));
        } catch (const RangeError &e) {
            throw RangeError("features line " + std::to_string(lineno) + ": " + e.what());
        } catch (const DataError &e) {
            throw DataError("features line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// OSM XML front-end. Handles <node>, <way>/<nd>/<tag>; relations are ignored.

namespace detail {

inline std::map<std::string, std::string, std::less<>> xml_attributes(std::string_view tag) {
    std::map<std::string, std::string, std::less<>> attrs;
    std::size_t i = 0;
    while (i < tag.size()) {
        const auto eq = tag.find('=', i);
        if (eq == std::string_view::npos) break;
        std::size_t ks = tag.rfind(' ', eq);
        ks = (ks == std::string_view::npos) ? 0 : ks + 1;
        std::string key(tag.substr(ks, eq - ks));
        const auto q = eq + 1 < tag.size() ? tag[eq + 1] : '"';
        const auto vs = eq + 2;
        const auto ve = tag.find(q, vs);
        if (ve == std::string_view::npos) break;
        std::string value(tag.substr(vs, ve - vs));
        for (const auto &[ent, rep] : {std::pair{"&quot;", "\""}, {"&apos;", "'"}, {"&lt;", "<"}, {"&gt;", ">"}, {"&amp;", "&"}}) {
            for (auto p = value.find(ent); p != std::string::npos; p = value.find(ent, p + 1))
                value.replace(p, std::strlen(ent), rep);
        }
        attrs.emplace(std::move(key), std::move(value));
        i = ve + 1;
    }
    return attrs;
}

inline std::optional<double> parse_meters(const std::string &s) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        return v;
    } catch (const std::exception &) {
        return std::nullopt;
    }
}

inline std::optional<GeoFeature> classify_way(const std::map<std::string, std::string, std::less<>> &tags, bool closed) {
    auto tag = [&](std::string_view k) -> std::string {
        const auto it = tags.find(k);
        return it == tags.end() ? std::string{} : it->second;
    };
    GeoFeature f;
    if (const auto hw = tag("highway"); !hw.empty()) {
        static const std::vector<std::string> skip{"footway", "path", "cycleway", "steps", "pedestrian", "bridleway", "corridor", "proposed", "construction"};
        if (std::find(skip.begin(), skip.end(), hw) != skip.end()) return std::nullopt;
        const bool major = hw == "motorway" || hw == "trunk" || hw == "motorway_link" || hw == "trunk_link";
        f.klass = major ? SemanticClass::Highway : SemanticClass::Road;
        f.geometry = GeometryKind::Polyline;
        if (auto w = parse_meters(tag("width"))) f.width_m = *w;
        else if (auto lanes = parse_meters(tag("lanes"))) f.width_m = std::max(1.0, *lanes) * 3.5;
        else if (major) f.width_m = 14.0;
        else if (hw == "primary" || hw == "secondary") f.width_m = 10.5;
        else f.width_m = kDefaultRoadWidthM;
        if (auto mh = parse_meters(tag("min_height"))) f.bottom_up_m = *mh;
        return f;
    }
    if (!closed) return std::nullopt;
    f.geometry = GeometryKind::Polygon;
    const auto building = tag("building");
    if (!building.empty() && building != "no") {
        f.klass = SemanticClass::BuildingFacade;
        if (auto h = parse_meters(tag("height"))) f.height_m = *h;
        else if (auto lv = parse_meters(tag("building:levels"))) f.height_m = *lv * 3.0;
        if (auto mh = parse_meters(tag("min_height"))) f.bottom_up_m = *mh;
        return f;
    }
    const auto natural = tag("natural"), landuse = tag("landuse"), leisure = tag("leisure");
    if (natural == "water" || tag("waterway") == "riverbank" || landuse == "reservoir" || landuse == "basin") {
        f.klass = SemanticClass::Water;
        return f;
    }
    if (leisure == "park" || leisure == "garden" || landuse == "grass" || landuse == "forest" || landuse == "meadow" ||
        landuse == "village_green" || natural == "wood" || natural == "scrub" || natural == "grassland") {
        f.klass = SemanticClass::Vegetation;
        return f;
    }
    if (landuse == "construction" || landuse == "brownfield") {
        f.klass = SemanticClass::Other;
        return f;
    }
    return std::nullopt;
}

} // namespace detail

inline std::vector<GeoFeature> read_osm_xml(std::istream &in) {
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    std::unordered_map<std::string, LonLat> nodes;
    std::vector<GeoFeature> out;

    bool in_way = false;
    std::vector<std::string> refs;
    std::map<std::string, std::string, std::less<>> tags;

    auto finish_way = [&] {
        const bool closed = refs.size() >= 4 && refs.front() == refs.back();
        if (auto f = detail::classify_way(tags, closed)) {
            bool ok = true;
            for (const auto &r : refs) {
                const auto it = nodes.find(r);
                if (it == nodes.end()) { ok = false; break; }
                f->coords.push_back(it->second);
            }
            if (ok) {
                try {
                    f->validate();
                    out.push_back(std::move(*f));
                } catch (const DataError &) {
                    // degenerate way; skip
                }
            }
        }
        refs.clear();
        tags.clear();
        in_way = false;
    };

    std::size_t pos = 0;
    while ((pos = text.find('<', pos)) != std::string::npos) {
        const auto end = text.find('>', pos);
        if (end == std::string::npos) break;
        std::string_view tag(text.data() + pos + 1, end - pos - 1);
        pos = end + 1;
        if (tag.empty() || tag[0] == '?' || tag[0] == '!') continue;
        if (tag.starts_with("/way")) {
            if (in_way) finish_way();
            continue;
        }
        const bool self_closing = tag.back() == '/';
        const auto name_end = tag.find_first_of(" \t\r\n/");
        const auto name = tag.substr(0, name_end);
        if (name == "node") {
            auto a = detail::xml_attributes(tag);
            if (a.count("id") && a.count("lat") && a.count("lon")) {
                try {
                    nodes[a["id"]] = {std::stod(a["lon"]), std::stod(a["lat"])};
                } catch (const std::logic_error &) {
                    throw DataError("OSM node '" + a["id"] + "' has a non-numeric coordinate");
                }
            }
        } else if (name == "way") {
            in_way = true;
            refs.clear();
            tags.clear();
            if (self_closing) finish_way();
        } else if (name == "nd" && in_way) {
            auto a = detail::xml_attributes(tag);
            if (a.count("ref")) refs.push_back(a["ref"]);
        } else if (name == "tag" && in_way) {
            auto a = detail::xml_attributes(tag);
            if (a.count("k") && a.count("v")) tags[a["k"]] = a["v"];
        }
    }
    return out;
}

/// Dispatches on extension: `.osm` / `.xml` use the OSM front-end, anything
/// else is read as line-delimited JSON features.
inline std::vector<GeoFeature> load_features(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw DependencyError("cannot open features file '" + path + "'");
    const bool xml = path.ends_with(".osm") || path.ends_with(".xml");
    return xml ? read_osm_xml(in) : read_features(in);
}

// ---------------------------------------------------------------------------
// Rasterization.

/// Higher paints over lower.
inline int paint_priority(SemanticClass c) {
    switch (c) {
    case SemanticClass::Other: return 1;
    case SemanticClass::Water: return 2;
    case SemanticClass::Vegetation: return 3;
    case SemanticClass::Road: return 4;
    case SemanticClass::Highway: return 5;
    case SemanticClass::BuildingFacade:
    case SemanticClass::BuildingRoof: return 6;
    default: return 0;
    }
}

namespace detail {

/// Calls visit(x, y) for every pixel whose centre lies inside the even-odd
/// interior of `ring`.
template <typename Visit>
void fill_polygon(std::span<const Vec2> ring, int width, int height, Visit &&visit) {
    if (ring.size() < 3) return;
    double ymin = ring[0].y, ymax = ring[0].y;
    for (const auto &p : ring) {
        ymin = std::min(ymin, p.y);
        ymax = std::max(ymax, p.y);
    }
    const int y0 = std::max(0, static_cast<int>(std::floor(ymin - 0.5)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(ymax)));
    std::vector<double> xs;
    for (int y = y0; y <= y1; ++y) {
        const double yc = y + 0.5;
        xs.clear();
        for (std::size_t i = 0; i < ring.size(); ++i) {
            const Vec2 a = ring[i];
            const Vec2 b = ring[(i + 1) % ring.size()];
            if ((a.y <= yc) == (b.y <= yc)) continue;
            xs.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            const int xa = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
            const int xb = std::min(width - 1, static_cast<int>(std::ceil(xs[k + 1] - 0.5)) - 1);
            for (int x = xa; x <= xb; ++x) visit(x, y);
        }
    }
}

inline double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
    const Vec2 ab = b - a;
    const double len2 = dot(ab, ab);
    double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return norm(p - (a + ab * t));
}

/// Round-capped stroke: pixels whose centre is within width/2 of the polyline.
template <typename Visit>
void stroke_polyline(std::span<const Vec2> line, double width_px, int width, int height, Visit &&visit) {
    const double half = std::max(width_px, 1.0) * 0.5;
    Mask seen(width, height, 0);
    for (std::size_t i = 0; i + 1 < line.size(); ++i) {
        const Vec2 a = line[i], b = line[i + 1];
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - half - 1)));
        const int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + half + 1)));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - half - 1)));
        const int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + half + 1)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                if (seen(x, y)) continue;
                if (detail::point_segment_distance({x + 0.5, y + 0.5}, a, b) <= half + 1e-9) {
                    seen(x, y) = 1;
                    visit(x, y);
                }
            }
    }
}

} // namespace detail

inline int meters_to_cells(double meters, double pixel_scale) {
    return static_cast<int>(std::lround(meters / pixel_scale));
}

/// Burns features into a layout. Overlaps resolve by class priority
/// (OTHER < WATER < VEGETATION < ROAD < HIGHWAY < BUILDING), ties by file
/// order. bottom_up is 0 unless a feature carries bottom_up_m.
inline CityLayout rasterize(const std::vector<GeoFeature> &features, const MercatorGrid &grid, const PerlinField &perlin) {
    grid.validate();
    const double ps = grid.pixel_scale();
    CityLayout out(grid.width, grid.height, ps);

    std::vector<std::size_t> order(features.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return paint_priority(features[a].klass) < paint_priority(features[b].klass);
    });

    const int road_cells = meters_to_cells(kRoadHeightM, ps);
    std::vector<Vec2> pts;
    for (const std::size_t idx : order) {
        const auto &f = features[idx];
        f.validate();
        pts.clear();
        for (const auto &c : f.coords) {
            const auto p = project_mercator(c.lon, c.lat, grid.zoom);
            pts.push_back({p.x - static_cast<double>(grid.origin_x), p.y - static_cast<double>(grid.origin_y)});
        }
        const int bu = f.bottom_up_m ? meters_to_cells(*f.bottom_up_m, ps) : 0;
        auto paint = [&](int x, int y) {
            int td = 0;
            switch (f.klass) {
            case SemanticClass::Road:
            case SemanticClass::Highway: td = bu + road_cells; break;
            case SemanticClass::BuildingFacade:
            case SemanticClass::BuildingRoof:
                td = std::max(bu, meters_to_cells(f.height_m.value_or(kDefaultBuildingHeightM), ps));
                break;
            case SemanticClass::Vegetation:
                td = meters_to_cells(perlin_sample(perlin, static_cast<double>(grid.origin_x + x),
                                                   static_cast<double>(grid.origin_y + y)), ps);
                break;
            default: td = 0; break;
            }
            const auto klass = f.klass == SemanticClass::BuildingRoof ? SemanticClass::BuildingFacade : f.klass;
            const int lo = (klass == SemanticClass::Vegetation || klass == SemanticClass::Water || klass == SemanticClass::Other) ? 0 : bu;
            out.set(x, y, klass, lo, std::max(lo, td));
        };
        if (f.geometry == GeometryKind::Polygon) {
            // Drop the duplicated closing vertex.
            detail::fill_polygon(std::span<const Vec2>(pts.data(), pts.size() - 1), grid.width, grid.height, paint);
        } else {
            const double width_px = f.width_m.value_or(kDefaultRoadWidthM) / ps;
            detail::stroke_polyline(pts, width_px, grid.width, grid.height, paint);
        }
    }
    return out;
}

} // namespace cityforge
