// Copyright Contributors to the cityforge project
// SPDX-License-Identifier: Apache-2.0
//
// Independent reference implementations used by the tests. Each one is
// written the slow, obvious way and shares no code with the library beyond
// plain data types.

#pragma once

#include "cityforge/cityforge.hpp"

#include <cmath>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <map>
#include <queue>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include <unistd.h>

namespace oracle {

namespace cf = cityforge;

/// Dense label volume built by filling every column from bottom_up to
/// top_down inclusive.
struct DenseVolume {
    int w = 0, h = 0, d = 0;
    std::vector<std::uint8_t> labels;

    std::uint8_t at(int i, int j, int k) const {
        return labels[(static_cast<std::size_t>(k) * h + static_cast<std::size_t>(j)) * w + static_cast<std::size_t>(i)];
    }
};

inline DenseVolume materialize(const cf::CityLayout &layout, int depth) {
    DenseVolume v{layout.width(), layout.height(), depth, {}};
    v.labels.assign(static_cast<std::size_t>(v.w) * v.h * v.d, 0);
    for (int j = 0; j < v.h; ++j)
        for (int i = 0; i < v.w; ++i) {
            const auto c = layout.semantic(i, j);
            if (c == cf::SemanticClass::Null) continue;
            for (int k = layout.heights.bottom_up(i, j); k <= layout.heights.top_down(i, j) && k < depth; ++k)
                v.labels[(static_cast<std::size_t>(k) * v.h + static_cast<std::size_t>(j)) * v.w + static_cast<std::size_t>(i)] =
                    cf::code(c);
        }
    return v;
}

/// Random layout with every registered ground class and valid heights.
inline cf::CityLayout random_layout(std::mt19937_64 &rng, int w, int h, int max_height) {
    cf::CityLayout l(w, h);
    std::uniform_int_distribution<int> cls(0, 8), hh(0, max_height);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int a = hh(rng), b = hh(rng);
            if (a > b) std::swap(a, b);
            l.set(x, y, static_cast<cf::SemanticClass>(cls(rng)), a, b);
        }
    return l;
}

/// Breadth-first 4-connected component count over building pixels.
inline int count_building_components(const cf::SemanticMap &m) {
    std::vector<int> seen(static_cast<std::size_t>(m.width()) * m.height(), 0);
    int n = 0;
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            const auto idx = static_cast<std::size_t>(y) * m.width() + x;
            if (seen[idx] || !cf::is_building(m(x, y))) continue;
            ++n;
            std::queue<std::pair<int, int>> q;
            q.push({x, y});
            seen[idx] = 1;
            while (!q.empty()) {
                auto [cx, cy] = q.front();
                q.pop();
                const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
                for (int k = 0; k < 4; ++k) {
                    const int nx = cx + dx[k], ny = cy + dy[k];
                    if (nx < 0 || ny < 0 || nx >= m.width() || ny >= m.height()) continue;
                    const auto ni = static_cast<std::size_t>(ny) * m.width() + nx;
                    if (seen[ni] || !cf::is_building(m(nx, ny))) continue;
                    seen[ni] = 1;
                    q.push({nx, ny});
                }
            }
        }
    return n;
}

/// 8-connected components of a binary mask (breadth-first).
inline int count_components8(const cf::Mask &m) {
    std::vector<int> seen(m.size(), 0);
    int n = 0;
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            const auto idx = static_cast<std::size_t>(y) * m.width() + x;
            if (seen[idx] || !m(x, y)) continue;
            ++n;
            std::deque<std::pair<int, int>> q{{x, y}};
            seen[idx] = 1;
            while (!q.empty()) {
                auto [cx, cy] = q.front();
                q.pop_front();
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = cx + dx, ny = cy + dy;
                        if (nx < 0 || ny < 0 || nx >= m.width() || ny >= m.height()) continue;
                        const auto ni = static_cast<std::size_t>(ny) * m.width() + nx;
                        if (seen[ni] || !m(nx, ny)) continue;
                        seen[ni] = 1;
                        q.push_back({nx, ny});
                    }
            }
        }
    return n;
}

inline bool has_full_2x2(const cf::Mask &m) {
    for (int y = 0; y + 1 < m.height(); ++y)
        for (int x = 0; x + 1 < m.width(); ++x)
            if (m(x, y) && m(x + 1, y) && m(x, y + 1) && m(x + 1, y + 1)) return true;
    return false;
}

/// Random blobby road masks: a few thick random strokes.
inline cf::Mask random_road_mask(std::mt19937_64 &rng, int w, int h) {
    cf::Mask m(w, h, 0);
    std::uniform_real_distribution<double> ux(4, w - 5), uy(4, h - 5), ur(1.0, 4.0);
    std::uniform_int_distribution<int> nstrokes(1, 4);
    const int n = nstrokes(rng);
    for (int s = 0; s < n; ++s) {
        const double x0 = ux(rng), y0 = uy(rng), x1 = ux(rng), y1 = uy(rng), r = ur(rng);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double px = x + 0.5, py = y + 0.5;
                const double vx = x1 - x0, vy = y1 - y0;
                const double t = std::clamp(((px - x0) * vx + (py - y0) * vy) / std::max(1e-12, vx * vx + vy * vy), 0.0, 1.0);
                if (std::hypot(px - x0 - t * vx, py - y0 - t * vy) <= r) m(x, y) = 1;
            }
    }
    return m;
}

/// Spatial hash evaluated with 128-bit products truncated to 64 bits and a
/// remainder instead of a mask.
inline std::uint64_t hash_index(const std::array<std::int64_t, 3> &p, const std::vector<std::int64_t> &f, std::uint64_t entries) {
    static const std::uint64_t primes[5] = {1ULL, 2654435761ULL, 805459861ULL, 3674653429ULL, 2097192037ULL};
    auto wrap_mul = [](std::int64_t a, std::uint64_t b) {
        const unsigned __int128 full = static_cast<unsigned __int128>(static_cast<std::uint64_t>(a)) * b;
        return static_cast<std::uint64_t>(full % (static_cast<unsigned __int128>(1) << 64));
    };
    std::uint64_t h = 0;
    std::size_t k = 0;
    for (auto v : f) h ^= wrap_mul(v, primes[k++]);
    for (auto v : p) h ^= wrap_mul(v, primes[k++]);
    return h % entries;
}

/// Numeric quadrature of the absorption integral along a piecewise
/// constant density profile of (length, sigma) pieces, with `steps`
/// midpoint steps spread over the pieces by length. Returns the per-piece
/// weights and the final transmittance.
inline std::pair<std::vector<double>, double> quadrature(const std::vector<std::pair<double, double>> &pieces, int steps) {
    double total = 0.0;
    for (const auto &pc : pieces) total += pc.first;
    std::vector<double> weights(pieces.size(), 0.0);
    double log_t = 0.0;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        const auto [len, sigma] = pieces[i];
        const int n = std::max(1, static_cast<int>(std::lround(steps * len / total)));
        const double dt = len / n;
        for (int s = 0; s < n; ++s) {
            weights[i] += std::exp(log_t - sigma * dt * 0.5) * sigma * dt;
            log_t -= sigma * dt;
        }
    }
    return {weights, std::exp(log_t)};
}

/// Cell-centre test against an oriented rectangle.
inline bool in_rotated_rect(double px, double py, const cf::VehicleState &v) {
    const double t = cf::deg2rad(v.yaw);
    // Length runs along the heading (sin t, -cos t); width across it.
    const double hx = std::sin(t), hy = -std::cos(t);
    const double dx = px - v.center.x, dy = py - v.center.y;
    const double along = dx * hx + dy * hy;
    const double across = dx * (-hy) + dy * hx;
    return std::abs(along) <= 0.5 * v.dims.x && std::abs(across) <= 0.5 * v.dims.y;
}

/// Fine-step march towards the light; any occupied sample blocks.
template <typename Lookup>
int fine_visibility(const cf::VolumeDims &dims, Lookup &&lookup, const cf::Vec3 &p, const cf::Vec3 &l, double step = 1e-3) {
    for (double t = step; ; t += step) {
        const cf::Vec3 q = p + l * t;
        if (q.x < 0 || q.y < 0 || q.z < 0 || q.x >= dims.w || q.y >= dims.h || q.z >= dims.d) return 1;
        if (lookup(static_cast<int>(std::floor(q.x)), static_cast<int>(std::floor(q.y)), static_cast<int>(std::floor(q.z))) !=
            cf::SemanticClass::Null)
            return 0;
    }
}

/// Reprojection agreement between two renders of the same static volume.
/// A pixel counts when camera A sees a surface there and nothing in the
/// volume blocks camera B's line of sight to that surface point.
struct MultiViewStats {
    int compared = 0;
    int agree = 0;
    double fraction() const { return compared ? static_cast<double>(agree) / compared : 0.0; }
};

template <typename Lookup>
MultiViewStats multiview_agreement(const cf::VolumeDims &dims, Lookup &&lookup, const cf::RenderBuffers &a, const cf::Camera &ca,
                                   const cf::RenderBuffers &b, const cf::Camera &cb, double tolerance = 1.0) {
    auto occupied = [&](const cf::Vec3 &q) {
        if (q.x < 0 || q.y < 0 || q.z < 0 || q.x >= dims.w || q.y >= dims.h || q.z >= dims.d) return false;
        return lookup(static_cast<int>(std::floor(q.x)), static_cast<int>(std::floor(q.y)), static_cast<int>(std::floor(q.z))) !=
               cf::SemanticClass::Null;
    };
    MultiViewStats st;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            if (!(a.alpha(x, y) > 0.5)) continue;
            const auto ray = ca.pixel_ray(x, y);
            const cf::Vec3 p = ray.origin + ray.dir * a.depth(x, y);
            const auto uv = cb.project(p);
            if (!uv) continue;
            const int px = static_cast<int>(std::floor(uv->x)), py = static_cast<int>(std::floor(uv->y));
            if (px < 0 || py < 0 || px >= b.width || py >= b.height) continue;
            const cf::Vec3 to = p - cb.position;
            const double dist = cf::norm(to);
            const cf::Vec3 dir = to * (1.0 / dist);
            bool blocked = false;
            for (double t = 0.025; t < dist - 1.5 && !blocked; t += 0.05) blocked = occupied(cb.position + dir * t);
            if (blocked) continue;
            ++st.compared;
            if (b.alpha(px, py) > 0.5 && std::abs(b.depth(px, py) - dist) <= tolerance) ++st.agree;
        }
    return st;
}

/// Winner of a pixel by exhaustive sort on (depth, -kind, instance).
inline const cf::RenderBuffers *nearest_layer(const std::vector<const cf::RenderBuffers *> &layers, int x, int y) {
    const cf::RenderBuffers *best = nullptr;
    std::tuple<double, int, std::uint32_t> best_key{};
    for (const auto *l : layers) {
        if (!(l->alpha(x, y) > 0.5)) continue;
        const auto key = std::make_tuple(l->depth(x, y), -static_cast<int>(l->kind), l->instance(x, y));
        if (!best || key < best_key) {
            best = l;
            best_key = key;
        }
    }
    return best;
}

/// Scratch directory removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string &tag) {
        path = std::filesystem::temp_directory_path() /
               ("cityforge_" + tag + "_" + std::to_string(std::random_device{}()) + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir &) = delete;
    TempDir &operator=(const TempDir &) = delete;
};

} // namespace oracle
