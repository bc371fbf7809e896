// Copyright Contributors to the cityforge project
// SPDX-License-Identifier: Apache-2.0
//
// HD-map extraction from a semantic layout: road edges (Canny + polyline
// vectorization), lane centerlines (thinning + graph traversal), directed
// lanes, Bezier junction connectors, road-line markings and signals.

#pragma once

#include "cityforge/core.hpp"
#include "cityforge/layout.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cityforge {

// ---------------------------------------------------------------------------
// Raster helpers.

/// ROAD and HIGHWAY pixels.
inline Mask road_mask(const SemanticMap &semantic) {
    Mask m(semantic.width(), semantic.height(), 0);
    for (int y = 0; y < semantic.height(); ++y)
        for (int x = 0; x < semantic.width(); ++x) {
            const auto c = semantic(x, y);
            m(x, y) = (c == SemanticClass::Road || c == SemanticClass::Highway) ? 1 : 0;
        }
    return m;
}

inline int count_neighbors8(const Mask &m, int x, int y) {
    int n = 0;
    for (const auto &[dx, dy] : kNeighbors8) n += m.at_or(x + dx, y + dy, 0) ? 1 : 0;
    return n;
}

/// Number of 8-connected components of set pixels.
inline int count_components8(const Mask &m) {
    Mask seen(m.width(), m.height(), 0);
    std::vector<PixelCoord> stack;
    int n = 0;
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            if (!m(x, y) || seen(x, y)) continue;
            ++n;
            seen(x, y) = 1;
            stack.push_back({x, y});
            while (!stack.empty()) {
                const auto p = stack.back();
                stack.pop_back();
                for (const auto &[dx, dy] : kNeighbors8) {
                    const int nx = p.x + dx, ny = p.y + dy;
                    if (m.at_or(nx, ny, 0) && !seen(nx, ny)) {
                        seen(nx, ny) = 1;
                        stack.push_back({nx, ny});
                    }
                }
            }
        }
    return n;
}

/// Exact Euclidean distance from each set pixel to the nearest unset pixel
/// (pixel centres). Unset pixels read 0; a mask without any unset pixel
/// reads +inf everywhere.
inline Grid2D<double> distance_transform(const Mask &m) {
    const int w = m.width(), h = m.height();
    constexpr double big = 1e20;
    Grid2D<double> f(w, h, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) f(x, y) = m(x, y) ? big : 0.0;

    // Felzenszwalb-Huttenlocher lower envelope of parabolas, per axis.
    auto pass = [](std::vector<double> &d, int n) {
        std::vector<double> out(static_cast<std::size_t>(n));
        std::vector<int> v(static_cast<std::size_t>(n));
        std::vector<double> z(static_cast<std::size_t>(n) + 1);
        int k = 0;
        v[0] = 0;
        z[0] = -kInf;
        z[1] = kInf;
        for (int q = 1; q < n; ++q) {
            double s;
            while (true) {
                const int p = v[static_cast<std::size_t>(k)];
                s = ((d[static_cast<std::size_t>(q)] + q * q) - (d[static_cast<std::size_t>(p)] + p * p)) / (2.0 * (q - p));
                if (s <= z[static_cast<std::size_t>(k)] && k > 0) --k;
                else break;
            }
            ++k;
            v[static_cast<std::size_t>(k)] = q;
            z[static_cast<std::size_t>(k)] = s;
            z[static_cast<std::size_t>(k) + 1] = kInf;
        }
        k = 0;
        for (int q = 0; q < n; ++q) {
            while (z[static_cast<std::size_t>(k) + 1] < q) ++k;
            const int p = v[static_cast<std::size_t>(k)];
            out[static_cast<std::size_t>(q)] = (q - p) * (q - p) + d[static_cast<std::size_t>(p)];
        }
        d = std::move(out);
    };

    std::vector<double> line;
    for (int x = 0; x < w; ++x) {
        line.assign(static_cast<std::size_t>(h), 0.0);
        for (int y = 0; y < h; ++y) line[static_cast<std::size_t>(y)] = f(x, y);
        pass(line, h);
        for (int y = 0; y < h; ++y) f(x, y) = line[static_cast<std::size_t>(y)];
    }
    for (int y = 0; y < h; ++y) {
        line.assign(static_cast<std::size_t>(w), 0.0);
        for (int x = 0; x < w; ++x) line[static_cast<std::size_t>(x)] = f(x, y);
        pass(line, w);
        for (int x = 0; x < w; ++x) f(x, y) = line[static_cast<std::size_t>(x)] >= big * 0.5 ? kInf : std::sqrt(line[static_cast<std::size_t>(x)]);
    }
    return f;
}

/// Per-pixel road half-width in pixels (distance to the mask edge).
inline Grid2D<double> road_half_widths(const Mask &road) {
    auto dt = distance_transform(road);
    for (auto &v : dt.values()) v = v > 0.0 ? std::max(0.5, v - 0.5) : 0.0;
    return dt;
}

// ---------------------------------------------------------------------------
// Canny edge detection.

struct CannyOptions {
    double sigma = 1.0;
    double low = 0.1;   ///< fraction of the maximum gradient magnitude
    double high = 0.3;
};

inline Mask canny(const Grid2D<double> &img, const CannyOptions &opt = {}) {
    const int w = img.width(), h = img.height();
    Mask edges(w, h, 0);
    if (w == 0 || h == 0) return edges;
    auto clampx = [&](int x) { return std::clamp(x, 0, w - 1); };
    auto clampy = [&](int y) { return std::clamp(y, 0, h - 1); };

    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * opt.sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-(i * i) / (2.0 * opt.sigma * opt.sigma));
        kernel[static_cast<std::size_t>(i + radius)] = v;
        ksum += v;
    }
    for (auto &v : kernel) v /= ksum;

    Grid2D<double> tmp(w, h, 0.0), blur(w, h, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) s += kernel[static_cast<std::size_t>(i + radius)] * img(clampx(x + i), y);
            tmp(x, y) = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) s += kernel[static_cast<std::size_t>(i + radius)] * tmp(x, clampy(y + i));
            blur(x, y) = s;
        }

    Grid2D<double> gx(w, h, 0.0), gy(w, h, 0.0), mag(w, h, 0.0);
    double max_mag = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto b = [&](int dx, int dy) { return blur(clampx(x + dx), clampy(y + dy)); };
            const double sx = (b(1, -1) + 2 * b(1, 0) + b(1, 1)) - (b(-1, -1) + 2 * b(-1, 0) + b(-1, 1));
            const double sy = (b(-1, 1) + 2 * b(0, 1) + b(1, 1)) - (b(-1, -1) + 2 * b(0, -1) + b(1, -1));
            gx(x, y) = sx;
            gy(x, y) = sy;
            mag(x, y) = std::hypot(sx, sy);
            max_mag = std::max(max_mag, mag(x, y));
        }
    if (max_mag <= 1e-12) return edges;

    // Non-maximum suppression along the quantized gradient direction. The
    // comparison is strict on one side so symmetric ridges keep one pixel.
    Grid2D<double> thin(w, h, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double m = mag(x, y);
            if (m <= 1e-12 * max_mag) continue;
            double angle = rad2deg(std::atan2(gy(x, y), gx(x, y)));
            if (angle < 0) angle += 180.0;
            int dx = 1, dy = 0;
            if (angle >= 22.5 && angle < 67.5) { dx = 1; dy = 1; }
            else if (angle >= 67.5 && angle < 112.5) { dx = 0; dy = 1; }
            else if (angle >= 112.5 && angle < 157.5) { dx = -1; dy = 1; }
            const double before = mag.at_or(x - dx, y - dy, 0.0);
            const double after = mag.at_or(x + dx, y + dy, 0.0);
            if (m > before && m >= after) thin(x, y) = m;
        }

    const double hi = opt.high * max_mag, lo = opt.low * max_mag;
    std::vector<PixelCoord> stack;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (thin(x, y) >= hi && !edges(x, y)) {
                edges(x, y) = 1;
                stack.push_back({x, y});
                while (!stack.empty()) {
                    const auto p = stack.back();
                    stack.pop_back();
                    for (const auto &[ddx, ddy] : kNeighbors8) {
                        const int nx = p.x + ddx, ny = p.y + ddy;
                        if (!edges.contains(nx, ny) || edges(nx, ny) || thin(nx, ny) < lo) continue;
                        edges(nx, ny) = 1;
                        stack.push_back({nx, ny});
                    }
                }
            }
    return edges;
}

/// Canny over the binarized ROAD+HIGHWAY mask.
inline Mask detect_road_edges(const SemanticMap &semantic, const CannyOptions &opt = {}) {
    const auto mask = road_mask(semantic);
    Grid2D<double> img(mask.width(), mask.height(), 0.0);
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x) img(x, y) = mask(x, y);
    return canny(img, opt);
}

// ---------------------------------------------------------------------------
// Vectorization.

struct PixelChain {
    std::vector<PixelCoord> pixels;
    bool closed = false;
};

inline Vec2 pixel_center(PixelCoord p) { return {p.x + 0.5, p.y + 0.5}; }

inline bool adjacent8(PixelCoord a, PixelCoord b) {
    return std::abs(a.x - b.x) <= 1 && std::abs(a.y - b.y) <= 1 && !(a == b);
}

/// Greedy 8-connected chain tracing. Every set pixel lands in exactly one
/// chain; chains start at endpoints where possible.
inline std::vector<PixelChain> trace_chains(const Mask &m) {
    Mask visited(m.width(), m.height(), 0);
    std::vector<PixelChain> chains;
    auto walk = [&](PixelCoord start) {
        PixelChain chain;
        chain.pixels.push_back(start);
        visited(start.x, start.y) = 1;
        PixelCoord cur = start;
        while (true) {
            std::optional<PixelCoord> next;
            for (const auto &[dx, dy] : kNeighbors4)
                if (m.at_or(cur.x + dx, cur.y + dy, 0) && !visited(cur.x + dx, cur.y + dy)) { next = PixelCoord{cur.x + dx, cur.y + dy}; break; }
            if (!next)
                for (const auto &[dx, dy] : kNeighbors8)
                    if (m.at_or(cur.x + dx, cur.y + dy, 0) && !visited(cur.x + dx, cur.y + dy)) { next = PixelCoord{cur.x + dx, cur.y + dy}; break; }
            if (!next) break;
            visited(next->x, next->y) = 1;
            chain.pixels.push_back(*next);
            cur = *next;
        }
        chain.closed = chain.pixels.size() >= 3 && adjacent8(chain.pixels.back(), chain.pixels.front());
        chains.push_back(std::move(chain));
    };
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x)
            if (m(x, y) && !visited(x, y) && count_neighbors8(m, x, y) == 1) walk({x, y});
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x)
            if (m(x, y) && !visited(x, y)) walk({x, y});
    return chains;
}

inline double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
    const Vec2 ab = b - a;
    const double len2 = dot(ab, ab);
    const double t = len2 > 0.0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
    return norm(p - (a + ab * t));
}

/// Douglas-Peucker; returns the kept indices (always includes both ends).
inline std::vector<std::size_t> douglas_peucker(std::span<const Vec2> pts, double eps) {
    if (pts.size() <= 2) {
        std::vector<std::size_t> all(pts.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
    }
    std::vector<std::uint8_t> keep(pts.size(), 0);
    keep.front() = keep.back() = 1;
    std::vector<std::pair<std::size_t, std::size_t>> stack{{0, pts.size() - 1}};
    while (!stack.empty()) {
        const auto [a, b] = stack.back();
        stack.pop_back();
        double best = -1.0;
        std::size_t idx = a;
        for (std::size_t i = a + 1; i < b; ++i) {
            const double d = point_segment_distance(pts[i], pts[a], pts[b]);
            if (d > best) { best = d; idx = i; }
        }
        if (best > eps) {
            keep[idx] = 1;
            stack.push_back({a, idx});
            stack.push_back({idx, b});
        }
    }
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < pts.size(); ++i)
        if (keep[i]) out.push_back(i);
    return out;
}

inline std::vector<Vec2> simplify_polyline(std::span<const Vec2> pts, double eps) {
    std::vector<Vec2> out;
    for (const auto i : douglas_peucker(pts, eps)) out.push_back(pts[i]);
    return out;
}

/// Maximum distance from any point of `pts` to the polyline `poly`.
inline double max_deviation(std::span<const Vec2> pts, std::span<const Vec2> poly) {
    double worst = 0.0;
    for (const auto &p : pts) {
        double best = poly.size() == 1 ? norm(p - poly[0]) : kInf;
        for (std::size_t i = 0; i + 1 < poly.size(); ++i) best = std::min(best, point_segment_distance(p, poly[i], poly[i + 1]));
        worst = std::max(worst, best);
    }
    return worst;
}

struct RoadEdgeGraph {
    std::vector<Vec2> nodes;
    std::vector<std::pair<int, int>> edges;
};

/// Traces edge chains and reduces them to corner points (Douglas-Peucker).
inline RoadEdgeGraph vectorize_edges(const Mask &edges, double eps = 1.5) {
    RoadEdgeGraph g;
    std::map<std::pair<int, int>, int> node_ids;
    auto node_for = [&](PixelCoord p) {
        const auto key = std::pair{p.x, p.y};
        if (auto it = node_ids.find(key); it != node_ids.end()) return it->second;
        const int id = static_cast<int>(g.nodes.size());
        g.nodes.push_back(pixel_center(p));
        node_ids.emplace(key, id);
        return id;
    };
    for (const auto &chain : trace_chains(edges)) {
        if (chain.pixels.size() < 2) continue;
        std::vector<PixelCoord> px = chain.pixels;
        if (chain.closed) px.push_back(px.front());
        std::vector<Vec2> pts;
        for (const auto &p : px) pts.push_back(pixel_center(p));
        std::vector<std::size_t> kept;
        if (chain.closed) {
            // Split the loop at its farthest point from the start.
            std::size_t far = 0;
            double best = -1.0;
            for (std::size_t i = 0; i < pts.size(); ++i)
                if (const double d = norm(pts[i] - pts[0]); d > best) { best = d; far = i; }
            const auto first = douglas_peucker(std::span<const Vec2>(pts.data(), far + 1), eps);
            const auto second = douglas_peucker(std::span<const Vec2>(pts.data() + far, pts.size() - far), eps);
            kept = first;
            for (std::size_t i = 1; i < second.size(); ++i) kept.push_back(second[i] + far);
        } else {
            kept = douglas_peucker(pts, eps);
        }
        for (std::size_t i = 0; i + 1 < kept.size(); ++i) {
            const int a = node_for(px[kept[i]]);
            const int b = node_for(px[kept[i + 1]]);
            if (a != b) g.edges.push_back({a, b});
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Thinning.

namespace detail {

/// Neighbours in Zhang-Suen order P2..P9 (N, NE, E, SE, S, SW, W, NW).
inline std::array<int, 8> zs_neighbors(const Mask &m, int x, int y) {
    std::array<int, 8> p{};
    for (std::size_t i = 0; i < 8; ++i) p[i] = m.at_or(x + kNeighbors8[i][0], y + kNeighbors8[i][1], 0) ? 1 : 0;
    return p;
}

/// Yokoi connectivity number (8-connectivity); 1 means deleting the pixel
/// preserves topology.
inline int yokoi8(const std::array<int, 8> &p) {
    // Reorder to E, NE, N, NW, W, SW, S, SE as in Yokoi's formulation.
    const std::array<int, 8> x{p[2], p[1], p[0], p[7], p[6], p[5], p[4], p[3]};
    int n = 0;
    for (int k = 0; k < 8; k += 2) {
        const int a = 1 - x[static_cast<std::size_t>(k)];
        const int b = 1 - x[static_cast<std::size_t>((k + 1) % 8)];
        const int c = 1 - x[static_cast<std::size_t>((k + 2) % 8)];
        n += a - a * b * c;
    }
    return n;
}

inline bool deletable(const Mask &m, int x, int y) {
    const auto p = zs_neighbors(m, x, y);
    int b = 0;
    for (const int v : p) b += v;
    return b >= 2 && yokoi8(p) == 1;
}

} // namespace detail

/// Zhang-Suen thinning. Deletions flagged by each sub-iteration are applied
/// only while the pixel is still a simple point, which keeps every
/// component (and hole) intact; a final pass removes staircase pixels and
/// leftover 2x2 blocks so the result is 8-thin.
inline Mask skeletonize(const Mask &mask) {
    Mask img = mask;
    for (auto &v : img.values()) v = v ? 1 : 0;
    const int w = img.width(), h = img.height();
    std::vector<PixelCoord> flagged;
    bool changed = true;
    while (changed) {
        changed = false;
        for (int sub = 0; sub < 2; ++sub) {
            flagged.clear();
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    if (!img(x, y)) continue;
                    const auto p = detail::zs_neighbors(img, x, y);
                    int b = 0, a = 0;
                    for (std::size_t i = 0; i < 8; ++i) {
                        b += p[i];
                        a += (p[i] == 0 && p[(i + 1) % 8] == 1) ? 1 : 0;
                    }
                    if (b < 2 || b > 6 || a != 1) continue;
                    // p[0]=P2 (N), p[2]=P4 (E), p[4]=P6 (S), p[6]=P8 (W)
                    const bool c = sub == 0 ? (p[0] * p[2] * p[4] == 0 && p[2] * p[4] * p[6] == 0)
                                            : (p[0] * p[2] * p[6] == 0 && p[0] * p[4] * p[6] == 0);
                    if (c) flagged.push_back({x, y});
                }
            for (const auto &q : flagged)
                if (detail::deletable(img, q.x, q.y)) {
                    img(q.x, q.y) = 0;
                    changed = true;
                }
        }
    }

    // Staircase corners: a pixel with two orthogonal 4-neighbours is
    // redundant when it is simple; its neighbours stay diagonally connected.
    changed = true;
    while (changed) {
        changed = false;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (!img(x, y)) continue;
                const auto p = detail::zs_neighbors(img, x, y);
                const bool corner = (p[0] && p[2]) || (p[2] && p[4]) || (p[4] && p[6]) || (p[6] && p[0]);
                if (corner && detail::deletable(img, x, y)) {
                    img(x, y) = 0;
                    changed = true;
                }
            }
    }

    // Sub-iteration asymmetry leaves a one-pixel 45 degree hook at some
    // line ends; drop the hook pixel (never iterated, so real diagonal
    // lines keep their length).
    std::vector<PixelCoord> hooks;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!img(x, y) || count_neighbors8(img, x, y) != 1) continue;
            PixelCoord q{};
            for (const auto &[dx, dy] : kNeighbors8)
                if (img.at_or(x + dx, y + dy, 0)) q = {x + dx, y + dy};
            if (q.x == x || q.y == y || count_neighbors8(img, q.x, q.y) != 2) continue;
            bool straight_run = false;
            for (const auto &[dx, dy] : kNeighbors4) {
                const PixelCoord r{q.x + dx, q.y + dy};
                if (img.at_or(r.x, r.y, 0) && !(r.x == x && r.y == y) && count_neighbors8(img, r.x, r.y) <= 2) straight_run = true;
            }
            if (straight_run) hooks.push_back({x, y});
        }
    for (const auto &p : hooks) img(p.x, p.y) = 0;
    return img;
}

/// True when no 2x2 block is fully set.
inline bool is_thin(const Mask &m) {
    for (int y = 0; y + 1 < m.height(); ++y)
        for (int x = 0; x + 1 < m.width(); ++x)
            if (m(x, y) && m(x + 1, y) && m(x, y + 1) && m(x + 1, y + 1)) return false;
    return true;
}

/// Removes end branches shorter than `min_length` pixels.
inline Mask prune_spurs(const Mask &skeleton, int min_length) {
    Mask img = skeleton;
    for (int round = 0; round < 4; ++round) {
        bool removed = false;
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x) {
                if (!img(x, y) || count_neighbors8(img, x, y) != 1) continue;
                std::vector<PixelCoord> branch{{x, y}};
                PixelCoord prev{-1, -1}, cur{x, y};
                bool hits_junction = false;
                while (static_cast<int>(branch.size()) <= min_length) {
                    std::optional<PixelCoord> next;
                    int n = 0;
                    for (const auto &[dx, dy] : kNeighbors8) {
                        const PixelCoord q{cur.x + dx, cur.y + dy};
                        if (!img.at_or(q.x, q.y, 0) || q == prev) continue;
                        if (std::find(branch.begin(), branch.end(), q) != branch.end()) continue;
                        ++n;
                        next = q;
                    }
                    if (n == 0) break;
                    if (n > 1 || count_neighbors8(img, next->x, next->y) >= 3) { hits_junction = true; break; }
                    prev = cur;
                    cur = *next;
                    branch.push_back(cur);
                }
                if (hits_junction && static_cast<int>(branch.size()) < min_length) {
                    for (const auto &q : branch) img(q.x, q.y) = 0;
                    removed = true;
                }
            }
        if (!removed) break;
    }
    return img;
}

// ---------------------------------------------------------------------------
// Lane graph.

enum class NodeKind { Junction, Endpoint, Loop };

struct GraphNode {
    int id = 0;
    Vec2 position;
    NodeKind kind = NodeKind::Endpoint;
};

struct Centerline {
    int id = 0;
    int from = -1;
    int to = -1;
    std::vector<Vec2> points;  ///< pixel coordinates
    double width_m = 0.0;
    bool highway = false;
    double surface_z = 0.0;    ///< top of the road surface, cells
};

enum class LaneDirection { Forward = 1, Backward = -1 };

struct Lane {
    int id = 0;
    int centerline = -1;
    int from_node = -1;  ///< node the lane leaves
    int to_node = -1;    ///< node the lane enters
    LaneDirection direction = LaneDirection::Forward;
    double offset_m = 0.0;  ///< signed offset to the right of the centerline
    double width_m = 3.5;
    bool highway = false;
    double surface_z = 0.0;
    std::vector<Vec2> points;  ///< in travel order
};

struct Connector {
    int id = 0;
    int junction = -1;
    int from_lane = -1;
    int to_lane = -1;
    std::array<Vec2, 4> control{};
};

enum class RoadLineStyle { SolidSingleWhite, SolidDoubleYellow, BrokenSingleWhite };

struct RoadLine {
    int id = 0;
    int centerline = -1;
    RoadLineStyle style = RoadLineStyle::SolidSingleWhite;
    double offset_m = 0.0;
    std::vector<Vec2> points;
};

enum class SignalKind { StopSign, TrafficLight };

struct SignalPlacement {
    int id = 0;
    int junction = -1;
    SignalKind kind = SignalKind::StopSign;
    Vec2 position;
    std::vector<int> governed_lanes;
};

struct LaneGraph {
    std::vector<GraphNode> nodes;
    std::vector<Centerline> centerlines;
    std::vector<Lane> lanes;
    std::vector<Connector> connectors;
    double pixel_scale = kZoom18PixelScale;
};

struct LaneGraphOptions {
    double simplify_eps = 1.0;  ///< px, applied to traced centerlines
    bool trim_at_junctions = true;
};

/// Trims `len` pixels of arc from the start of a polyline.
inline std::vector<Vec2> trim_front(const std::vector<Vec2> &pts, double len) {
    if (len <= 0.0 || pts.size() < 2) return pts;
    std::vector<Vec2> out;
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const double seg = norm(pts[i + 1] - pts[i]);
        if (acc + seg > len) {
            const double t = (len - acc) / seg;
            out.push_back(pts[i] + (pts[i + 1] - pts[i]) * t);
            out.insert(out.end(), pts.begin() + static_cast<std::ptrdiff_t>(i) + 1, pts.end());
            return out;
        }
        acc += seg;
    }
    return {pts.back()};
}

inline std::vector<Vec2> trim_back(const std::vector<Vec2> &pts, double len) {
    std::vector<Vec2> rev(pts.rbegin(), pts.rend());
    auto t = trim_front(rev, len);
    return {t.rbegin(), t.rend()};
}

inline double polyline_length(std::span<const Vec2> pts) {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) s += norm(pts[i + 1] - pts[i]);
    return s;
}

/// Walks the skeleton between junction clusters (pixels with >= 3 skeleton
/// neighbours) and endpoints, producing one centerline per chain. Road
/// width is twice the mean half-width sampled along the chain.
inline LaneGraph build_lane_graph(const Mask &skeleton, const Grid2D<double> &half_widths, double pixel_scale,
                                  const LaneGraphOptions &opt = {}) {
    LaneGraph g;
    g.pixel_scale = pixel_scale;
    const int w = skeleton.width(), h = skeleton.height();
    auto on = [&](int x, int y) { return skeleton.at_or(x, y, 0) != 0; };

    // Junction clusters.
    Grid2D<int> node_of(w, h, -1);
    std::vector<std::vector<PixelCoord>> cluster_pixels;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!on(x, y) || node_of(x, y) >= 0 || count_neighbors8(skeleton, x, y) < 3) continue;
            const int id = static_cast<int>(g.nodes.size());
            std::vector<PixelCoord> members{{x, y}};
            node_of(x, y) = id;
            for (std::size_t i = 0; i < members.size(); ++i)
                for (const auto &[dx, dy] : kNeighbors8) {
                    const int nx = members[i].x + dx, ny = members[i].y + dy;
                    if (on(nx, ny) && node_of(nx, ny) < 0 && count_neighbors8(skeleton, nx, ny) >= 3) {
                        node_of(nx, ny) = id;
                        members.push_back({nx, ny});
                    }
                }
            Vec2 c{};
            for (const auto &m : members) c = c + pixel_center(m);
            g.nodes.push_back({id, c * (1.0 / static_cast<double>(members.size())), NodeKind::Junction});
            cluster_pixels.push_back(std::move(members));
        }
    // Endpoints.
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (on(x, y) && count_neighbors8(skeleton, x, y) == 1) {
                const int id = static_cast<int>(g.nodes.size());
                node_of(x, y) = id;
                g.nodes.push_back({id, pixel_center({x, y}), NodeKind::Endpoint});
                cluster_pixels.push_back({{x, y}});
            }

    Mask used(w, h, 0);
    auto make_centerline = [&](int from, const std::vector<PixelCoord> &chain, int to) {
        std::vector<Vec2> pts{g.nodes[static_cast<std::size_t>(from)].position};
        double wsum = 0.0;
        int wn = 0;
        for (const auto &p : chain) {
            pts.push_back(pixel_center(p));
            wsum += half_widths.at_or(p.x, p.y, 0.0);
            ++wn;
        }
        if (to >= 0) pts.push_back(g.nodes[static_cast<std::size_t>(to)].position);
        // Drop duplicate consecutive points (endpoint nodes sit on their pixel).
        std::vector<Vec2> dedup;
        for (const auto &p : pts)
            if (dedup.empty() || norm(p - dedup.back()) > 1e-9) dedup.push_back(p);
        if (dedup.size() < 2) return;
        if (wn == 0) {
            for (const auto &cp : {cluster_pixels[static_cast<std::size_t>(from)].front()}) {
                wsum += half_widths.at_or(cp.x, cp.y, 0.0);
                ++wn;
            }
        }
        Centerline c;
        c.id = static_cast<int>(g.centerlines.size());
        c.from = from;
        c.to = to;
        c.points = simplify_polyline(dedup, opt.simplify_eps);
        c.width_m = 2.0 * (wsum / std::max(wn, 1)) * pixel_scale;
        g.centerlines.push_back(std::move(c));
    };

    // Walk from every node pixel into each unused non-node neighbour.
    const std::size_t initial_nodes = g.nodes.size();
    for (std::size_t n = 0; n < initial_nodes; ++n) {
        const auto members = cluster_pixels[n];
        for (const auto &start_px : members) {
            for (const auto &[dx, dy] : kNeighbors8) {
                PixelCoord cur{start_px.x + dx, start_px.y + dy};
                if (!on(cur.x, cur.y)) continue;
                const int cur_node = node_of(cur.x, cur.y);
                if (cur_node == static_cast<int>(n)) continue;
                if (cur_node >= 0) {
                    // Adjacent nodes: a zero-pixel chain; record once.
                    if (static_cast<std::size_t>(cur_node) > n && g.nodes[n].kind == NodeKind::Junction &&
                        g.nodes[static_cast<std::size_t>(cur_node)].kind == NodeKind::Junction) {
                        bool exists = false;
                        for (const auto &c : g.centerlines)
                            if ((c.from == static_cast<int>(n) && c.to == cur_node) || (c.to == static_cast<int>(n) && c.from == cur_node)) exists = true;
                        if (!exists) make_centerline(static_cast<int>(n), {}, cur_node);
                    }
                    continue;
                }
                if (used(cur.x, cur.y)) continue;
                std::vector<PixelCoord> chain{cur};
                used(cur.x, cur.y) = 1;
                int end_node = -1;
                PixelCoord prev = start_px;
                while (end_node < 0) {
                    std::optional<PixelCoord> next;
                    int next_node = -1;
                    for (const auto &[ex, ey] : kNeighbors8) {
                        const PixelCoord q{cur.x + ex, cur.y + ey};
                        if (!on(q.x, q.y) || q == prev) continue;
                        const int qn = node_of(q.x, q.y);
                        if (qn >= 0) {
                            if (qn != static_cast<int>(n) || chain.size() > 2) next_node = qn;
                            continue;
                        }
                        if (!used(q.x, q.y) && !next) next = q;
                    }
                    if (next) {
                        used(next->x, next->y) = 1;
                        chain.push_back(*next);
                        prev = cur;
                        cur = *next;
                    } else if (next_node >= 0) {
                        end_node = next_node;
                    } else {
                        break;
                    }
                }
                if (end_node < 0) {
                    // Chain ran out without reaching a node: cap it with one.
                    end_node = static_cast<int>(g.nodes.size());
                    g.nodes.push_back({end_node, pixel_center(chain.back()), NodeKind::Endpoint});
                    cluster_pixels.push_back({chain.back()});
                    node_of(chain.back().x, chain.back().y) = end_node;
                    chain.pop_back();
                }
                make_centerline(static_cast<int>(n), chain, end_node);
            }
        }
    }
    // Closed loops without any node.
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!on(x, y) || used(x, y) || node_of(x, y) >= 0) continue;
            const int id = static_cast<int>(g.nodes.size());
            g.nodes.push_back({id, pixel_center({x, y}), NodeKind::Loop});
            cluster_pixels.push_back({{x, y}});
            node_of(x, y) = id;
            std::vector<PixelCoord> chain;
            PixelCoord cur{x, y};
            while (true) {
                std::optional<PixelCoord> next;
                for (const auto &[dx, dy] : kNeighbors8) {
                    const PixelCoord q{cur.x + dx, cur.y + dy};
                    if (on(q.x, q.y) && !used(q.x, q.y) && node_of(q.x, q.y) < 0) { next = q; break; }
                }
                if (!next) break;
                used(next->x, next->y) = 1;
                chain.push_back(*next);
                cur = *next;
            }
            used(x, y) = 1;
            make_centerline(id, chain, id);
        }

    if (opt.trim_at_junctions) {
        // Pull centerline ends back from junctions so connectors have room.
        std::vector<double> setback(g.nodes.size(), 0.0);
        for (const auto &c : g.centerlines) {
            const double half_px = 0.5 * c.width_m / pixel_scale;
            for (const int n : {c.from, c.to})
                if (n >= 0 && g.nodes[static_cast<std::size_t>(n)].kind == NodeKind::Junction)
                    setback[static_cast<std::size_t>(n)] = std::max(setback[static_cast<std::size_t>(n)], half_px + 1.0);
        }
        for (auto &c : g.centerlines) {
            const double len = polyline_length(c.points);
            const double a = c.from >= 0 ? std::min(setback[static_cast<std::size_t>(c.from)], 0.4 * len) : 0.0;
            const double b = c.to >= 0 ? std::min(setback[static_cast<std::size_t>(c.to)], 0.4 * len) : 0.0;
            if (a > 0.0) c.points = trim_front(c.points, a);
            if (b > 0.0) c.points = trim_back(c.points, b);
        }
    }
    return g;
}

/// Standard design lane width.
inline constexpr double kLaneWidthM = 3.5;

inline int lane_count(double width_m) { return std::max(1, static_cast<int>(std::floor(width_m / kLaneWidthM + 1e-9))); }

/// Unit normal to the right of travel in the x, y, z-up frame (the frame
/// the renderer uses; on a y-down raster image it points left).
inline Vec2 right_normal(Vec2 dir) {
    const Vec2 t = normalized(dir);
    return {t.y, -t.x};
}

/// Offsets `pts` to the right of travel by `offset_px` using mitred joins.
inline std::vector<Vec2> offset_polyline(std::span<const Vec2> pts, double offset_px) {
    std::vector<Vec2> out;
    if (pts.size() < 2) return {pts.begin(), pts.end()};
    std::vector<Vec2> normals;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) normals.push_back(right_normal(pts[i + 1] - pts[i]));
    for (std::size_t i = 0; i < pts.size(); ++i) {
        Vec2 n;
        double scale = 1.0;
        if (i == 0) n = normals.front();
        else if (i + 1 == pts.size()) n = normals.back();
        else {
            n = normalized(normals[i - 1] + normals[i]);
            if (norm(n) < 1e-9) n = normals[i];
            scale = 1.0 / std::max(0.5, dot(n, normals[i]));
        }
        out.push_back(pts[i] + n * (offset_px * scale));
    }
    return out;
}

/// Splits a centerline into directed lanes 3.5 m apart. Forward lanes (the
/// larger share) run on the right of the centerline direction.
inline std::vector<Lane> derive_lanes(const Centerline &c, double width_m, double pixel_scale) {
    if (!(width_m > 0.0)) throw DataError("road width must be positive");
    const int n = lane_count(width_m);
    const int backward = n / 2;
    std::vector<Lane> lanes;
    for (int k = 0; k < n; ++k) {
        Lane l;
        l.centerline = c.id;
        l.offset_m = (k - (n - 1) * 0.5) * kLaneWidthM;
        l.direction = k < backward ? LaneDirection::Backward : LaneDirection::Forward;
        l.width_m = kLaneWidthM;
        l.highway = c.highway;
        l.surface_z = c.surface_z;
        l.points = offset_polyline(c.points, l.offset_m / pixel_scale);
        if (l.direction == LaneDirection::Forward) {
            l.from_node = c.from;
            l.to_node = c.to;
        } else {
            std::reverse(l.points.begin(), l.points.end());
            l.from_node = c.to;
            l.to_node = c.from;
        }
        lanes.push_back(std::move(l));
    }
    return lanes;
}

inline void derive_all_lanes(LaneGraph &g) {
    g.lanes.clear();
    for (const auto &c : g.centerlines) {
        for (auto &l : derive_lanes(c, c.width_m, g.pixel_scale)) {
            l.id = static_cast<int>(g.lanes.size());
            g.lanes.push_back(std::move(l));
        }
    }
}

// Cubic Bezier helpers.

inline Vec2 bezier_point(const std::array<Vec2, 4> &p, double t) {
    const double u = 1.0 - t;
    return p[0] * (u * u * u) + p[1] * (3 * u * u * t) + p[2] * (3 * u * t * t) + p[3] * (t * t * t);
}

inline Vec2 bezier_tangent(const std::array<Vec2, 4> &p, double t) {
    const double u = 1.0 - t;
    return (p[1] - p[0]) * (3 * u * u) + (p[2] - p[1]) * (6 * u * t) + (p[3] - p[2]) * (3 * t * t);
}

inline Vec2 bezier_second(const std::array<Vec2, 4> &p, double t) {
    return (p[2] - p[1] * 2.0 + p[0]) * (6 * (1.0 - t)) + (p[3] - p[2] * 2.0 + p[1]) * (6 * t);
}

/// De Casteljau evaluation for any degree.
inline Vec2 de_casteljau(std::vector<Vec2> pts, double t) {
    for (std::size_t n = pts.size(); n > 1; --n)
        for (std::size_t i = 0; i + 1 < n; ++i) pts[i] = pts[i] * (1.0 - t) + pts[i + 1] * t;
    return pts.front();
}

inline Vec2 lane_end_tangent(const Lane &l) {
    return normalized(l.points[l.points.size() - 1] - l.points[l.points.size() - 2]);
}

inline Vec2 lane_start_tangent(const Lane &l) { return normalized(l.points[1] - l.points[0]); }

inline std::array<Vec2, 4> make_connector_curve(Vec2 p0, Vec2 t_in, Vec2 p3, Vec2 t_out) {
    const double d = norm(p3 - p0) / 3.0;
    return {p0, p0 + t_in * d, p3 - t_out * d, p3};
}

/// Joins every incoming lane end to every outgoing lane start of another
/// road at each junction (no U-turns).
inline LaneGraph connect_intersections(LaneGraph g) {
    g.connectors.clear();
    for (const auto &node : g.nodes) {
        if (node.kind != NodeKind::Junction) continue;
        for (const auto &in : g.lanes) {
            if (in.to_node != node.id || in.points.size() < 2) continue;
            for (const auto &out : g.lanes) {
                if (out.from_node != node.id || out.points.size() < 2 || out.centerline == in.centerline) continue;
                const Vec2 p0 = in.points.back(), p3 = out.points.front();
                if (norm(p3 - p0) < 1e-6) continue;
                Connector c;
                c.id = static_cast<int>(g.connectors.size());
                c.junction = node.id;
                c.from_lane = in.id;
                c.to_lane = out.id;
                c.control = make_connector_curve(p0, lane_end_tangent(in), p3, lane_start_tangent(out));
                g.connectors.push_back(c);
            }
        }
    }
    return g;
}

/// Markings per centerline: double yellow between opposing lane groups,
/// broken white between same-direction neighbours, solid white outside.
inline std::vector<RoadLine> place_road_lines(const LaneGraph &g) {
    std::vector<RoadLine> out;
    for (const auto &c : g.centerlines) {
        std::vector<const Lane *> lanes;
        for (const auto &l : g.lanes)
            if (l.centerline == c.id) lanes.push_back(&l);
        if (lanes.empty()) continue;
        std::sort(lanes.begin(), lanes.end(), [](const Lane *a, const Lane *b) { return a->offset_m < b->offset_m; });
        auto add = [&](RoadLineStyle style, double offset_m) {
            RoadLine r;
            r.id = static_cast<int>(out.size());
            r.centerline = c.id;
            r.style = style;
            r.offset_m = offset_m;
            r.points = offset_polyline(c.points, offset_m / g.pixel_scale);
            out.push_back(std::move(r));
        };
        add(RoadLineStyle::SolidSingleWhite, lanes.front()->offset_m - lanes.front()->width_m * 0.5);
        for (std::size_t i = 0; i + 1 < lanes.size(); ++i) {
            const double boundary = 0.5 * (lanes[i]->offset_m + lanes[i + 1]->offset_m);
            add(lanes[i]->direction != lanes[i + 1]->direction ? RoadLineStyle::SolidDoubleYellow : RoadLineStyle::BrokenSingleWhite,
                boundary);
        }
        add(RoadLineStyle::SolidSingleWhite, lanes.back()->offset_m + lanes.back()->width_m * 0.5);
    }
    return out;
}

struct SignalOptions {
    int light_min_lanes = 6;
    int stop_min_lanes = 2;
};

/// A junction's approach count is the number of lanes on all roads meeting
/// there; busy junctions get a light, the rest a stop sign.
inline std::vector<SignalPlacement> place_signals(const LaneGraph &g, const SignalOptions &opt = {}) {
    std::vector<SignalPlacement> out;
    for (const auto &node : g.nodes) {
        if (node.kind != NodeKind::Junction) continue;
        int approaches = 0;
        std::vector<int> incoming;
        for (const auto &l : g.lanes) {
            if (l.from_node == node.id || l.to_node == node.id) ++approaches;
            if (l.to_node == node.id) incoming.push_back(l.id);
        }
        if (approaches < opt.stop_min_lanes) continue;
        SignalPlacement s;
        s.id = static_cast<int>(out.size());
        s.junction = node.id;
        s.kind = approaches >= opt.light_min_lanes ? SignalKind::TrafficLight : SignalKind::StopSign;
        s.position = node.position;
        s.governed_lanes = std::move(incoming);
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Full map.

struct HdMap {
    int width = 0;
    int height = 0;
    double pixel_scale = kZoom18PixelScale;
    RoadEdgeGraph road_edges;
    LaneGraph lanes;
    std::vector<RoadLine> road_lines;
    std::vector<SignalPlacement> signals;
};

struct HdMapOptions {
    CannyOptions canny;
    double edge_eps = 1.5;
    LaneGraphOptions lane_graph;
    int min_spur_px = 0;  ///< 0: derive from road width
    int border_pad_px = 32;
    SignalOptions signals;
};

/// Most common top-of-road height (top_down + 1) under a polyline.
inline double road_surface_z(const CityLayout &layout, std::span<const Vec2> pts) {
    std::map<int, int> hist;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const int steps = std::max(1, static_cast<int>(std::ceil(norm(pts[i + 1] - pts[i]))));
        for (int s = 0; s < steps; ++s) {
            const Vec2 p = pts[i] + (pts[i + 1] - pts[i]) * (static_cast<double>(s) / steps);
            const int x = static_cast<int>(std::floor(p.x)), y = static_cast<int>(std::floor(p.y));
            if (!layout.contains(x, y)) continue;
            const auto c = layout.semantic(x, y);
            if (c == SemanticClass::Road || c == SemanticClass::Highway) ++hist[layout.heights.top_down(x, y) + 1];
        }
    }
    int best = 0, best_n = -1;
    for (const auto &[z, n] : hist)
        if (n > best_n) { best = z; best_n = n; }
    return best;
}

inline HdMap build_hdmap(const CityLayout &layout, const HdMapOptions &opt = {}) {
    HdMap map;
    map.width = layout.width();
    map.height = layout.height();
    map.pixel_scale = layout.semantic.pixel_scale;
    map.road_edges = vectorize_edges(detect_road_edges(layout.semantic, opt.canny), opt.edge_eps);

    // Roads running off the raster continue outward (edge replication), so
    // thinning does not bend their centerlines into the raster corners.
    const auto road = road_mask(layout.semantic);
    const int pad = opt.border_pad_px;
    Mask padded(road.width() + 2 * pad, road.height() + 2 * pad, 0);
    for (int y = 0; y < padded.height(); ++y)
        for (int x = 0; x < padded.width(); ++x)
            padded(x, y) = road(std::clamp(x - pad, 0, road.width() - 1), std::clamp(y - pad, 0, road.height() - 1));
    const auto padded_half = road_half_widths(padded);
    const auto padded_skeleton = skeletonize(padded);
    Grid2D<double> half(road.width(), road.height(), 0.0);
    Mask skeleton(road.width(), road.height(), 0);
    for (int y = 0; y < road.height(); ++y)
        for (int x = 0; x < road.width(); ++x) {
            half(x, y) = padded_half(x + pad, y + pad);
            skeleton(x, y) = padded_skeleton(x + pad, y + pad);
        }
    int spur = opt.min_spur_px;
    if (spur <= 0) {
        double hsum = 0.0;
        int hn = 0;
        for (int y = 0; y < skeleton.height(); ++y)
            for (int x = 0; x < skeleton.width(); ++x)
                if (skeleton(x, y)) { hsum += half(x, y); ++hn; }
        spur = hn ? static_cast<int>(std::ceil(2.0 * hsum / hn)) : 0;
    }
    if (spur > 1) skeleton = prune_spurs(skeleton, spur);

    auto graph = build_lane_graph(skeleton, half, map.pixel_scale, opt.lane_graph);
    for (auto &c : graph.centerlines) {
        c.surface_z = road_surface_z(layout, c.points);
        int hw = 0, total = 0;
        for (const auto &p : c.points) {
            const int x = static_cast<int>(std::floor(p.x)), y = static_cast<int>(std::floor(p.y));
            if (!layout.contains(x, y)) continue;
            ++total;
            hw += layout.semantic(x, y) == SemanticClass::Highway ? 1 : 0;
        }
        c.highway = total > 0 && 2 * hw > total;
    }
    derive_all_lanes(graph);
    map.lanes = connect_intersections(std::move(graph));
    map.road_lines = place_road_lines(map.lanes);
    map.signals = place_signals(map.lanes, opt.signals);
    return map;
}

// ---------------------------------------------------------------------------
// JSON.

inline std::string_view to_string(RoadLineStyle s) {
    switch (s) {
    case RoadLineStyle::SolidSingleWhite: return "SOLID_SINGLE_WHITE";
    case RoadLineStyle::SolidDoubleYellow: return "SOLID_DOUBLE_YELLOW";
    case RoadLineStyle::BrokenSingleWhite: return "BROKEN_SINGLE_WHITE";
    }
    return "SOLID_SINGLE_WHITE";
}

inline RoadLineStyle road_line_style_from(std::string_view s) {
    if (s == "SOLID_SINGLE_WHITE") return RoadLineStyle::SolidSingleWhite;
    if (s == "SOLID_DOUBLE_YELLOW") return RoadLineStyle::SolidDoubleYellow;
    if (s == "BROKEN_SINGLE_WHITE") return RoadLineStyle::BrokenSingleWhite;
    throw DataError("unknown road line style '" + std::string(s) + "'");
}

inline std::string_view to_string(NodeKind k) {
    switch (k) {
    case NodeKind::Junction: return "junction";
    case NodeKind::Endpoint: return "endpoint";
    case NodeKind::Loop: return "loop";
    }
    return "endpoint";
}

inline NodeKind node_kind_from(std::string_view s) {
    if (s == "junction") return NodeKind::Junction;
    if (s == "endpoint") return NodeKind::Endpoint;
    if (s == "loop") return NodeKind::Loop;
    throw DataError("unknown node kind '" + std::string(s) + "'");
}

namespace detail {

inline nlohmann::json points_json(std::span<const Vec2> pts) {
    auto a = nlohmann::json::array();
    for (const auto &p : pts) a.push_back({p.x, p.y});
    return a;
}

inline std::vector<Vec2> points_from(const nlohmann::json &j) {
    std::vector<Vec2> out;
    for (const auto &p : j) out.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    return out;
}

} // namespace detail

inline nlohmann::json to_json(const HdMap &m) {
    using nlohmann::json;
    json j;
    j["width"] = m.width;
    j["height"] = m.height;
    j["pixel_scale"] = m.pixel_scale;

    json edge_nodes = json::array(), edges = json::array();
    for (std::size_t i = 0; i < m.road_edges.nodes.size(); ++i)
        edge_nodes.push_back({{"id", i}, {"position", {m.road_edges.nodes[i].x, m.road_edges.nodes[i].y}}});
    for (std::size_t i = 0; i < m.road_edges.edges.size(); ++i)
        edges.push_back({{"id", i}, {"a", m.road_edges.edges[i].first}, {"b", m.road_edges.edges[i].second}});
    j["road_edges"] = {{"nodes", edge_nodes}, {"edges", edges}};

    json nodes = json::array();
    for (const auto &n : m.lanes.nodes)
        nodes.push_back({{"id", n.id}, {"kind", to_string(n.kind)}, {"position", {n.position.x, n.position.y}}});
    j["nodes"] = nodes;

    json centerlines = json::array();
    for (const auto &c : m.lanes.centerlines)
        centerlines.push_back({{"id", c.id}, {"from", c.from}, {"to", c.to}, {"width_m", c.width_m}, {"highway", c.highway},
                               {"surface_z", c.surface_z}, {"points", detail::points_json(c.points)}});
    j["centerlines"] = centerlines;

    json lanes = json::array();
    for (const auto &l : m.lanes.lanes)
        lanes.push_back({{"id", l.id}, {"centerline", l.centerline}, {"from_node", l.from_node}, {"to_node", l.to_node},
                         {"direction", static_cast<int>(l.direction)}, {"offset_m", l.offset_m}, {"width_m", l.width_m},
                         {"highway", l.highway}, {"surface_z", l.surface_z}, {"points", detail::points_json(l.points)}});
    j["lanes"] = lanes;

    json connectors = json::array();
    for (const auto &c : m.lanes.connectors)
        connectors.push_back({{"id", c.id}, {"junction", c.junction}, {"from_lane", c.from_lane}, {"to_lane", c.to_lane},
                              {"control_points", detail::points_json(c.control)}});
    j["connectors"] = connectors;

    json lines = json::array();
    for (const auto &r : m.road_lines)
        lines.push_back({{"id", r.id}, {"centerline", r.centerline}, {"style", to_string(r.style)}, {"offset_m", r.offset_m},
                         {"points", detail::points_json(r.points)}});
    j["road_lines"] = lines;

    json signals = json::array();
    for (const auto &s : m.signals)
        signals.push_back({{"id", s.id}, {"junction", s.junction},
                           {"kind", s.kind == SignalKind::TrafficLight ? "TRAFFIC_LIGHT" : "STOP_SIGN"},
                           {"position", {s.position.x, s.position.y}}, {"governed_lanes", s.governed_lanes}});
    j["signals"] = signals;
    return j;
}

inline HdMap hdmap_from_json(const nlohmann::json &j) {
    HdMap m;
    try {
        m.width = j.at("width").get<int>();
        m.height = j.at("height").get<int>();
        m.pixel_scale = j.at("pixel_scale").get<double>();
        m.lanes.pixel_scale = m.pixel_scale;
        for (const auto &n : j.at("road_edges").at("nodes"))
            m.road_edges.nodes.push_back({n.at("position").at(0).get<double>(), n.at("position").at(1).get<double>()});
        for (const auto &e : j.at("road_edges").at("edges")) m.road_edges.edges.push_back({e.at("a").get<int>(), e.at("b").get<int>()});
        for (const auto &n : j.at("nodes"))
            m.lanes.nodes.push_back({n.at("id").get<int>(),
                                     {n.at("position").at(0).get<double>(), n.at("position").at(1).get<double>()},
                                     node_kind_from(n.at("kind").get<std::string>())});
        for (const auto &c : j.at("centerlines")) {
            Centerline cl;
            cl.id = c.at("id").get<int>();
            cl.from = c.at("from").get<int>();
            cl.to = c.at("to").get<int>();
            cl.width_m = c.at("width_m").get<double>();
            cl.highway = c.at("highway").get<bool>();
            cl.surface_z = c.at("surface_z").get<double>();
            cl.points = detail::points_from(c.at("points"));
            m.lanes.centerlines.push_back(std::move(cl));
        }
        for (const auto &l : j.at("lanes")) {
            Lane lane;
            lane.id = l.at("id").get<int>();
            lane.centerline = l.at("centerline").get<int>();
            lane.from_node = l.at("from_node").get<int>();
            lane.to_node = l.at("to_node").get<int>();
            lane.direction = l.at("direction").get<int>() >= 0 ? LaneDirection::Forward : LaneDirection::Backward;
            lane.offset_m = l.at("offset_m").get<double>();
            lane.width_m = l.at("width_m").get<double>();
            lane.highway = l.at("highway").get<bool>();
            lane.surface_z = l.at("surface_z").get<double>();
            lane.points = detail::points_from(l.at("points"));
            m.lanes.lanes.push_back(std::move(lane));
        }
        for (const auto &c : j.at("connectors")) {
            Connector con;
            con.id = c.at("id").get<int>();
            con.junction = c.at("junction").get<int>();
            con.from_lane = c.at("from_lane").get<int>();
            con.to_lane = c.at("to_lane").get<int>();
            const auto pts = detail::points_from(c.at("control_points"));
            if (pts.size() != 4) throw DataError("connector needs 4 control points");
            std::copy(pts.begin(), pts.end(), con.control.begin());
            m.lanes.connectors.push_back(con);
        }
        for (const auto &r : j.at("road_lines")) {
            RoadLine line;
            line.id = r.at("id").get<int>();
            line.centerline = r.at("centerline").get<int>();
            line.style = road_line_style_from(r.at("style").get<std::string>());
            line.offset_m = r.at("offset_m").get<double>();
            line.points = detail::points_from(r.at("points"));
            m.road_lines.push_back(std::move(line));
        }
        for (const auto &s : j.at("signals")) {
            SignalPlacement sp;
            sp.id = s.at("id").get<int>();
            sp.junction = s.at("junction").get<int>();
            sp.kind = s.at("kind").get<std::string>() == "TRAFFIC_LIGHT" ? SignalKind::TrafficLight : SignalKind::StopSign;
            sp.position = {s.at("position").at(0).get<double>(), s.at("position").at(1).get<double>()};
            sp.governed_lanes = s.at("governed_lanes").get<std::vector<int>>();
            m.signals.push_back(std::move(sp));
        }
    } catch (const nlohmann::json::exception &e) {
        throw DataError(std::string("malformed HD-map JSON: ") + e.what());
    }
    return m;
}

} // namespace cityforge
