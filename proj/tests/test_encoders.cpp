// Copyright Contributors to the cityforge project
// SPDX-License-Identifier: Apache-2.0

#include "support/oracles.hpp"

#include <gtest/gtest.h>

namespace cf = cityforge;
using cf::SemanticClass;

namespace {

std::vector<double> table_row(const cf::FeatureTable &t, int level, std::uint64_t idx, int channels) {
    std::vector<double> r;
    for (int c = 0; c < channels; ++c) r.push_back(t.value(level, idx, c));
    return r;
}

} // namespace

TEST(HashIndex, Examples) {
    const cf::HashGridConfig cfg;
    const std::vector<std::int64_t> f0{0, 0};
    EXPECT_EQ(cf::hash_index({0, 0, 0}, f0, cfg), 0u);
    EXPECT_EQ(cf::hash_index({1, 0, 0}, f0, cfg), 153493u);
    EXPECT_EQ(805459861ULL - 1536ULL * 524288ULL, 153493ULL);
}

TEST(HashIndex, Defaults) {
    const cf::HashGridConfig cfg;
    EXPECT_EQ(cfg.levels, 16);
    EXPECT_EQ(cfg.entries, 524288u);
    EXPECT_EQ(cfg.channels, 8);
    const std::array<std::uint64_t, 5> primes{1, 2654435761ULL, 805459861ULL, 3674653429ULL, 2097192037ULL};
    EXPECT_EQ(cfg.primes, primes);
    cf::HashGridConfig bad;
    bad.entries = 1000;
    EXPECT_THROW(bad.validate(), cf::ConfigError);
}

TEST(HashIndex, MatchesOracleAndBound) {
    const cf::HashGridConfig cfg;
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::int64_t> coord(-(std::int64_t{1} << 40), std::int64_t{1} << 40);
    for (int n = 0; n < 200000; ++n) {
        const std::array<std::int64_t, 3> p{coord(rng), coord(rng), coord(rng)};
        const std::vector<std::int64_t> f{coord(rng), coord(rng)};
        const auto got = cf::hash_index(p, f, cfg);
        ASSERT_LT(got, cfg.entries);
        ASSERT_EQ(got, oracle::hash_index(p, f, cfg.entries));
    }
}

TEST(HashIndex, DeterministicReplay) {
    const cf::HashGridConfig cfg;
    std::vector<std::uint64_t> first;
    for (int pass = 0; pass < 2; ++pass) {
        std::mt19937_64 rng(55);
        std::uniform_int_distribution<std::int64_t> coord(-100000, 100000);
        std::vector<std::uint64_t> out;
        out.reserve(1000000);
        for (int n = 0; n < 1000000; ++n) {
            const std::array<std::int64_t, 3> p{coord(rng), coord(rng), coord(rng)};
            const std::array<std::int64_t, 2> f{coord(rng), coord(rng)};
            out.push_back(cf::hash_index(p, f, cfg));
        }
        if (pass == 0) first = std::move(out);
        else EXPECT_EQ(first, out);
    }
}

TEST(HashFeature, LatticeCornerReturnsRow) {
    const cf::HashGridConfig cfg;
    const cf::FeatureTable table{17};
    const std::vector<double> f{0.25, -0.5};
    const cf::Vec3 p{3.0 / 16.0, 5.0 / 16.0, 11.0 / 16.0};
    const auto out = cf::hash_feature(p, f, table, cfg);
    ASSERT_EQ(out.size(), 128u);
    for (int l = 0; l < cfg.levels; ++l) {
        const double res = cfg.resolution(l);
        const std::array<std::int64_t, 3> q{static_cast<std::int64_t>(std::llround(p.x * res)), static_cast<std::int64_t>(std::llround(p.y * res)),
                                            static_cast<std::int64_t>(std::llround(p.z * res))};
        const std::vector<std::int64_t> fq{static_cast<std::int64_t>(std::floor(f[0] * res)), static_cast<std::int64_t>(std::floor(f[1] * res))};
        const auto row = table_row(table, l, oracle::hash_index(q, fq, cfg.entries), cfg.channels);
        for (int c = 0; c < cfg.channels; ++c) EXPECT_EQ(out[static_cast<std::size_t>(l * cfg.channels + c)], row[static_cast<std::size_t>(c)]);
    }
}

TEST(HashFeature, CellCentreIsCornerMean) {
    cf::HashGridConfig cfg;
    cfg.levels = 1;
    const cf::FeatureTable table{3};
    const std::vector<double> f{0.1, 0.9};
    const double res = cfg.resolution(0);
    const cf::Vec3 p{(4 + 0.5) / res, (7 + 0.5) / res, (2 + 0.5) / res};
    const auto out = cf::hash_feature(p, f, table, cfg);
    const std::vector<std::int64_t> fq{static_cast<std::int64_t>(std::floor(0.1 * res)), static_cast<std::int64_t>(std::floor(0.9 * res))};
    std::vector<double> mean(static_cast<std::size_t>(cfg.channels), 0.0);
    for (int dx = 0; dx < 2; ++dx)
        for (int dy = 0; dy < 2; ++dy)
            for (int dz = 0; dz < 2; ++dz) {
                const auto idx = oracle::hash_index({4 + dx, 7 + dy, 2 + dz}, fq, cfg.entries);
                const auto row = table_row(table, 0, idx, cfg.channels);
                for (int c = 0; c < cfg.channels; ++c) mean[static_cast<std::size_t>(c)] += row[static_cast<std::size_t>(c)] / 8.0;
            }
    for (int c = 0; c < cfg.channels; ++c) EXPECT_NEAR(out[static_cast<std::size_t>(c)], mean[static_cast<std::size_t>(c)], 1e-6);
}

TEST(HashFeature, DeterministicAndSeeded) {
    const std::vector<double> f{0.3, -0.2};
    const cf::Vec3 p{0.123, 0.456, 0.789};
    EXPECT_EQ(cf::hash_feature(p, f, cf::FeatureTable{1}), cf::hash_feature(p, f, cf::FeatureTable{1}));
    EXPECT_NE(cf::hash_feature(p, f, cf::FeatureTable{1}), cf::hash_feature(p, f, cf::FeatureTable{2}));
    for (double v : cf::hash_feature(p, f, cf::FeatureTable{1})) {
        EXPECT_TRUE(std::isfinite(v));
        EXPECT_LE(std::abs(v), 1.0);
    }
}

TEST(HashFeature, ContinuousInPosition) {
    const cf::HashGridConfig cfg;
    const cf::FeatureTable table{8};
    const std::vector<double> f{0.5, 0.5};
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const cf::Vec3 p{u(rng), u(rng), u(rng)};
        const auto a = cf::hash_feature(p, f, table, cfg);
        double prev_max = cf::kInf;
        for (double step : {1e-4, 1e-6, 1e-8, 1e-10}) {
            const auto b = cf::hash_feature(p + cf::Vec3{step, 0, 0}, f, table, cfg);
            double worst = 0.0;
            for (int l = 0; l < cfg.levels; ++l) {
                // Per level, trilinear interpolation of values in [-1, 1] has
                // slope at most 2 * resolution.
                const double bound = 2.0 * cfg.resolution(l) * step + 1e-12;
                for (int c = 0; c < cfg.channels; ++c) {
                    const auto k = static_cast<std::size_t>(l * cfg.channels + c);
                    const double d = std::abs(a[k] - b[k]);
                    if (bound < 2.0) {
                        ASSERT_LE(d, bound) << "level " << l << " step " << step;
                    }
                    worst = std::max(worst, d);
                }
            }
            EXPECT_LE(worst, prev_max + 1e-12);
            prev_max = worst;
        }
        EXPECT_LT(prev_max, 1e-3);
    }
}

TEST(SinCos, Examples) {
    const std::vector<double> zero{0.0};
    EXPECT_EQ(cf::sincos_encode(zero, 2), (std::vector<double>{0, 1, 0, 1}));
    const std::vector<double> half{0.5};
    const auto h = cf::sincos_encode(half, 1);
    EXPECT_NEAR(h[0], 1.0, 1e-15);
    EXPECT_NEAR(h[1], 0.0, 1e-15);
    const std::vector<double> x(64, 0.3);
    EXPECT_EQ(cf::sincos_encode(x, 10).size(), 1280u);
}

TEST(SinCos, OrderingAndIdentity) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> x(7);
    for (auto &v : x) v = u(rng);
    const auto e = cf::sincos_encode(x, 10);
    ASSERT_EQ(e.size(), 140u);
    for (std::size_t i = 0; i < x.size(); ++i)
        for (int l = 0; l < 10; ++l) {
            const double s = e[i * 20 + static_cast<std::size_t>(2 * l)], c = e[i * 20 + static_cast<std::size_t>(2 * l + 1)];
            EXPECT_NEAR(s, std::sin(std::ldexp(1.0, l) * cf::kPi * x[i]), 1e-12);
            EXPECT_NEAR(s * s + c * c, 1.0, 1e-12);
        }
}

TEST(SinCos, ClampsOutOfRange) {
    const auto before = cf::sincos_clamp_count().load();
    const std::vector<double> x{1.5, -3.0, 0.2};
    const auto e = cf::sincos_encode(x, 1);
    EXPECT_EQ(cf::sincos_clamp_count().load() - before, 2u);
    EXPECT_NEAR(e[0], std::sin(cf::kPi), 1e-15);
    EXPECT_NEAR(e[2], std::sin(-cf::kPi), 1e-15);
}

TEST(GlobalFeature, DeterministicAndSensitive) {
    const auto city = cf::make_sample_city({96, 64, 5, 4});
    const auto w = cf::extract_local_window(city, {48, 48}, {96, 96, 64});
    EXPECT_EQ(cf::scene_feature_global(w, 2, 9), cf::scene_feature_global(w, 2, 9));
    const auto empty = cf::extract_local_window(cf::CityLayout(8, 8), {4, 4}, {8, 8, 8});
    const auto base = cf::scene_feature_global(empty, 2, 9);
    EXPECT_EQ(base, cf::scene_feature_global(empty, 2, 9));
    for (double v : base) EXPECT_LE(std::abs(v), 1.0);
    EXPECT_THROW(cf::scene_feature_global(w, 0, 9), cf::ConfigError);

    // Random single-column edits of building heights.
    std::mt19937_64 rng(6);
    const auto inst = cf::instantiate_buildings(city.semantic);
    std::vector<cf::PixelCoord> building_px;
    for (int y = 0; y < 96; ++y)
        for (int x = 0; x < 96; ++x)
            if (inst(x, y)) building_px.push_back({x, y});
    ASSERT_FALSE(building_px.empty());
    const auto ref = cf::scene_feature_global(w, 2, 9);
    for (int n = 0; n < 50; ++n) {
        const auto px = building_px[rng() % building_px.size()];
        auto edited = w;
        auto &td = edited.content.heights.top_down(px.x, px.y);
        td = static_cast<std::uint16_t>(td == 10 ? 11 : 10);
        EXPECT_NE(cf::scene_feature_global(edited, 2, 9), ref);
    }
}

TEST(BuildingFeature, LengthAndDeterminism) {
    const auto city = cf::make_sample_city();
    const auto inst = cf::instantiate_buildings(city.semantic);
    const auto w = cf::building_window(city, inst, 1, 64);
    const cf::Vec3 p{5.5, 6.5, 10.25};
    const auto a = cf::building_point_feature(p, w, 4);
    EXPECT_EQ(a.size(), 1280u);
    EXPECT_EQ(a, cf::building_point_feature(p, w, 4));
    EXPECT_THROW(cf::building_point_feature({-1, 0, 0}, w, 4), cf::DataError);
    EXPECT_THROW(cf::building_point_feature({0, 0, 64}, w, 4), cf::DataError);
}

TEST(BuildingFeature, HeightOnlyChangesZSlots) {
    const auto city = cf::make_sample_city();
    const auto inst = cf::instantiate_buildings(city.semantic);
    const auto w = cf::building_window(city, inst, 2, 64);
    const auto a = cf::building_point_feature({3.2, 4.7, 8.0}, w, 1);
    const auto b = cf::building_point_feature({3.9, 4.1, 20.0}, w, 1);
    const std::size_t z_begin = 2 * 10 * 63;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (i < z_begin) {
            EXPECT_EQ(a[i], b[i]) << i;
        }
    }
    int differ = 0;
    for (std::size_t i = z_begin; i < a.size(); ++i) differ += a[i] != b[i];
    EXPECT_GT(differ, 0);
}

TEST(VehicleFeature, LengthAndOrigin) {
    const std::vector<double> f{0.0, 0.0};
    const auto e = cf::vehicle_point_feature({0, 0, 0}, f);
    ASSERT_EQ(e.size(), 100u);
    for (std::size_t i = 0; i < e.size(); i += 2) {
        EXPECT_EQ(e[i], 0.0);
        EXPECT_EQ(e[i + 1], 1.0);
    }
}

TEST(VehicleFeature, MirroredYawSymmetry) {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> yaw(-179.0, 179.0), pos(-6.0, 6.0);
    const std::vector<double> f{0.4, -0.7};
    for (int n = 0; n < 200; ++n) {
        cf::VehicleState a, b;
        a.center = b.center = {50, 60, 2};
        a.yaw = yaw(rng);
        b.yaw = -a.yaw;
        const cf::Vec3 d{pos(rng), pos(rng), pos(rng) * 0.3};
        const cf::Vec3 pa = a.center + d, pb = b.center + cf::Vec3{-d.x, d.y, d.z};
        const auto ea = cf::vehicle_point_feature(cf::canonicalize(pa, a), f);
        const auto eb = cf::vehicle_point_feature(cf::canonicalize(pb, b), f);
        // Canonical x flips sign: its sin slots negate, everything else matches.
        const std::size_t x_begin = 2 * 10 * 2, x_end = x_begin + 20;
        for (std::size_t i = 0; i < ea.size(); ++i) {
            if (i >= x_begin && i < x_end && i % 2 == 0) ASSERT_NEAR(ea[i], -eb[i], 1e-9);
            else ASSERT_NEAR(ea[i], eb[i], 1e-9);
        }
    }
}
