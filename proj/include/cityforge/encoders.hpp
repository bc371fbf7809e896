// Copyright Contributors to the cityforge project
// SPDX-License-Identifier: Apache-2.0
//
// Scene parameterizations: multi-resolution spatial hashing with a seeded
// procedural feature table, periodic sin/cos encoding, and the building and
// vehicle point features consumed by the renderer.

#pragma once

#include "cityforge/core.hpp"
#include "cityforge/layout.hpp"

#include <atomic>
#include <vector>

namespace cityforge {

struct HashGridConfig {
    int levels = 16;
    std::uint64_t entries = std::uint64_t{1} << 19;
    int channels = 8;
    std::array<std::uint64_t, 5> primes{1, 2654435761ULL, 805459861ULL, 3674653429ULL, 2097192037ULL};
    double base_resolution = 16.0;
    double per_level_scale = 2.0;

    void validate() const {
        if (levels < 1 || channels < 1) throw ConfigError("hash grid needs at least one level and one channel");
        if (entries == 0 || (entries & (entries - 1)) != 0) throw ConfigError("hash table size must be a power of two");
        if (!(base_resolution > 0.0) || !(per_level_scale > 0.0)) throw ConfigError("hash grid resolutions must be positive");
    }

    double resolution(int level) const { return base_resolution * std::pow(per_level_scale, level); }
};

/// XOR of integer coordinates times their primes (feature dims first, then
/// x, y, z), reduced modulo the table size. Multiplication wraps at 64 bits.
inline std::uint64_t hash_index(const std::array<std::int64_t, 3> &p, std::span<const std::int64_t> f,
                                const HashGridConfig &cfg = {}) {
    if (f.size() + 3 > cfg.primes.size()) throw ConfigError("too many hashed dimensions for the prime table");
    std::uint64_t h = 0;
    std::size_t k = 0;
    for (const auto v : f) h ^= static_cast<std::uint64_t>(v) * cfg.primes[k++];
    for (const auto v : p) h ^= static_cast<std::uint64_t>(v) * cfg.primes[k++];
    return h & (cfg.entries - 1);
}

/// Seeded stand-in for learned hash-grid entries. Rows are generated on
/// demand from a counter-based hash, so the table costs no memory.
struct FeatureTable {
    std::uint64_t seed = 0;

    double value(int level, std::uint64_t index, int channel) const {
        return signed_unit(hash_values(seed, static_cast<std::uint64_t>(level), index, static_cast<std::uint64_t>(channel)));
    }
};

/// Trilinearly interpolated multi-level lookup. `p` is expected in [0, 1]^3
/// (callers normalize by their window extent); features are quantized at
/// the same per-level resolution and held fixed across the 8 corners.
inline std::vector<double> hash_feature(const Vec3 &p, std::span<const double> f, const FeatureTable &table,
                                        const HashGridConfig &cfg = {}) {
    std::vector<double> out(static_cast<std::size_t>(cfg.levels * cfg.channels), 0.0);
    std::vector<std::int64_t> fq(f.size());
    for (int l = 0; l < cfg.levels; ++l) {
        const double res = cfg.resolution(l);
        for (std::size_t i = 0; i < f.size(); ++i) fq[i] = static_cast<std::int64_t>(std::floor(f[i] * res));
        std::array<std::int64_t, 3> base{};
        std::array<double, 3> frac{};
        for (int a = 0; a < 3; ++a) {
            const double s = p[a] * res;
            const double fl = std::floor(s);
            base[static_cast<std::size_t>(a)] = static_cast<std::int64_t>(fl);
            frac[static_cast<std::size_t>(a)] = s - fl;
        }
        double *row = out.data() + static_cast<std::ptrdiff_t>(l) * cfg.channels;
        for (int corner = 0; corner < 8; ++corner) {
            double w = 1.0;
            std::array<std::int64_t, 3> q{};
            for (int a = 0; a < 3; ++a) {
                const int bit = (corner >> a) & 1;
                q[static_cast<std::size_t>(a)] = base[static_cast<std::size_t>(a)] + bit;
                w *= bit ? frac[static_cast<std::size_t>(a)] : 1.0 - frac[static_cast<std::size_t>(a)];
            }
            if (w == 0.0) continue;
            const auto idx = hash_index(q, fq, cfg);
            for (int c = 0; c < cfg.channels; ++c) row[c] += w * table.value(l, idx, c);
        }
    }
    return out;
}

/// Number of inputs clamped into [-1, 1] by sincos_encode (process-wide).
inline std::atomic<std::uint64_t> &sincos_clamp_count() {
    static std::atomic<std::uint64_t> count{0};
    return count;
}

/// sin(2^i pi x), cos(2^i pi x) for i < levels, element-major.
inline std::vector<double> sincos_encode(std::span<const double> x, int levels) {
    if (levels < 0) throw ConfigError("encoding level count must be non-negative");
    std::vector<double> out;
    out.reserve(2 * static_cast<std::size_t>(levels) * x.size());
    for (double v : x) {
        if (v < -1.0 || v > 1.0 || std::isnan(v)) {
            sincos_clamp_count().fetch_add(1, std::memory_order_relaxed);
            v = std::isnan(v) ? 0.0 : std::clamp(v, -1.0, 1.0);
        }
        double freq = kPi;
        for (int i = 0; i < levels; ++i) {
            out.push_back(std::sin(freq * v));
            out.push_back(std::cos(freq * v));
            freq *= 2.0;
        }
    }
    return out;
}

inline constexpr int kSinCosLevels = 10;
inline constexpr int kBuildingFeatureChannels = 63;
inline constexpr int kGlobalFeatureDims = 2;

using SceneFeature = std::vector<double>;

/// Seeded hash of a window's class histogram and height sums.
inline SceneFeature scene_feature_global(const LocalWindow &window, int d, std::uint64_t seed) {
    if (d < 1) throw ConfigError("feature dimension must be >= 1");
    std::array<std::uint64_t, kNumClasses> hist{};
    std::uint64_t bu_sum = 0, td_sum = 0, td_max = 0, mix = 0;
    const auto &c = window.content;
    for (int y = 0; y < c.height(); ++y)
        for (int x = 0; x < c.width(); ++x) {
            const auto cls = c.semantic(x, y);
            ++hist[code(cls)];
            if (cls == SemanticClass::Null) continue;
            bu_sum += c.heights.bottom_up(x, y);
            td_sum += c.heights.top_down(x, y);
            td_max = std::max<std::uint64_t>(td_max, c.heights.top_down(x, y));
            mix += hash_values(0x6d6978u, static_cast<std::uint64_t>(x), static_cast<std::uint64_t>(y), code(cls),
                               c.heights.bottom_up(x, y), c.heights.top_down(x, y));
        }
    std::uint64_t h = hash_values(seed, bu_sum, td_sum, td_max, mix, static_cast<std::uint64_t>(window.size.depth));
    for (const auto n : hist) h = hash_combine(h, n);
    SceneFeature f(static_cast<std::size_t>(d));
    for (int k = 0; k < d; ++k) f[static_cast<std::size_t>(k)] = signed_unit(hash_values(h, static_cast<std::uint64_t>(k)));
    return f;
}

/// Per-pixel channel `channel` of the building pixel feature.
inline double building_pixel_channel(const LocalWindow &window, int x, int y, int channel, std::uint64_t seed) {
    const auto &c = window.content;
    const auto cls = c.semantic(x, y);
    return signed_unit(hash_values(seed, 0x62706678u, static_cast<std::uint64_t>(x), static_cast<std::uint64_t>(y), code(cls),
                                   c.heights.bottom_up(x, y), c.heights.top_down(x, y), static_cast<std::uint64_t>(channel)));
}

/// 63 per-pixel channels plus the normalized height, sin/cos encoded.
inline std::vector<double> building_point_feature(const Vec3 &p, const LocalWindow &window, std::uint64_t seed) {
    const auto dims = window.dims();
    if (!(p.x >= 0.0 && p.x < dims.w && p.y >= 0.0 && p.y < dims.h && p.z >= 0.0 && p.z < dims.d))
        throw DataError("point lies outside the building window");
    const int x = static_cast<int>(std::floor(p.x)), y = static_cast<int>(std::floor(p.y));
    std::array<double, kBuildingFeatureChannels + 1> v{};
    for (int ch = 0; ch < kBuildingFeatureChannels; ++ch) v[static_cast<std::size_t>(ch)] = building_pixel_channel(window, x, y, ch, seed);
    v[kBuildingFeatureChannels] = 2.0 * p.z / dims.d - 1.0;
    return sincos_encode(v, kSinCosLevels);
}

/// Half-extent of the canonical vehicle window, in cells.
inline constexpr double kVehicleCanonicalExtent = 16.0;

/// Global feature followed by the canonical point scaled into [-1, 1].
inline std::vector<double> vehicle_point_feature(const Vec3 &p_canonical, std::span<const double> f_global,
                                                 double extent = kVehicleCanonicalExtent) {
    std::vector<double> v(f_global.begin(), f_global.end());
    v.push_back(p_canonical.x / extent);
    v.push_back(p_canonical.y / extent);
    v.push_back(p_canonical.z / extent);
    return sincos_encode(v, kSinCosLevels);
}

} // namespace cityforge
