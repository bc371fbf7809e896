// Copyright Contributors to the cityforge project
// SPDX-License-Identifier: Apache-2.0
//
// Layer composition: background, per-building and per-vehicle renders are
// merged per pixel by nearest depth among the layers whose mask is set.

#pragma once

#include "cityforge/encoders.hpp"
#include "cityforge/layout.hpp"
#include "cityforge/render.hpp"
#include "cityforge/traffic.hpp"

#include <vector>

namespace cityforge {

struct LayerStack {
    RenderBuffers background;
    std::vector<RenderBuffers> buildings;
    std::vector<RenderBuffers> vehicles;
};

inline constexpr double kDepthTieEpsilon = 1e-9;

/// True when layer `a` beats layer `b` at a pixel both cover.
inline bool wins_over(const RenderBuffers &a, const RenderBuffers &b, int x, int y) {
    const double da = a.depth(x, y), db = b.depth(x, y);
    if (std::abs(da - db) > kDepthTieEpsilon) return da < db;
    if (a.kind != b.kind) return static_cast<int>(a.kind) > static_cast<int>(b.kind);
    return a.instance(x, y) < b.instance(x, y);
}

/// Nearest covering layer per pixel; uncovered pixels get `sky`.
inline RenderBuffers compose(const LayerStack &stack, const Vec3 &sky = RenderOptions{}.sky) {
    const int w = stack.background.width, h = stack.background.height;
    std::vector<const RenderBuffers *> layers{&stack.background};
    for (const auto &b : stack.buildings) layers.push_back(&b);
    for (const auto &v : stack.vehicles) layers.push_back(&v);
    for (const auto *l : layers)
        if (l->width != w || l->height != h) throw DataError("layer dimensions do not match");

    RenderBuffers out(w, h, LayerKind::Background);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const RenderBuffers *best = nullptr;
            for (const auto *l : layers)
                if (l->mask(x, y) && (!best || wins_over(*l, *best, x, y))) best = l;
            if (!best) {
                out.color(x, y) = sky;
                continue;
            }
            out.color(x, y) = best->color(x, y);
            out.semantic(x, y) = best->semantic(x, y);
            out.instance(x, y) = best->instance(x, y);
            out.depth(x, y) = best->depth(x, y);
            out.alpha(x, y) = best->alpha(x, y);
            out.residual(x, y) = best->residual(x, y);
            out.occlusion(x, y) = best->occlusion(x, y);
            out.hit(x, y) = best->hit(x, y);
            out.normal(x, y) = best->normal(x, y);
        }
    return out;
}

/// The masked sum sum_i M_i * I_i over all layers, evaluated literally.
inline Grid2D<Vec3> masked_sum(const LayerStack &stack) {
    const int w = stack.background.width, h = stack.background.height;
    Grid2D<Vec3> out(w, h, Vec3{});
    auto add = [&](const RenderBuffers &b) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double m = b.mask(x, y) ? 1.0 : 0.0;
                out(x, y) = out(x, y) + b.color(x, y) * m;
            }
    };
    add(stack.background);
    for (const auto &b : stack.buildings) add(b);
    for (const auto &v : stack.vehicles) add(v);
    return out;
}

// ---------------------------------------------------------------------------
// Whole-frame rendering.

struct SceneRenderOptions {
    RenderOptions render;
    int depth = 64;               ///< vertical extent of the scene window
    std::uint64_t style_seed = 0; ///< per-instance styles derive from this
    std::uint64_t feature_seed = 0;
    int building_margin = 2;
    /// Per-instance style overrides (building id or vehicle instance id).
    std::vector<std::pair<std::uint32_t, std::uint64_t>> style_overrides;

    std::uint64_t style_for(std::uint32_t instance) const {
        for (const auto &[id, seed] : style_overrides)
            if (id == instance) return seed;
        return hash_values(style_seed, 0x57796c65u, instance);
    }
};

/// Renders every layer of one frame: background, each building instance
/// and each vehicle.
inline LayerStack render_layers(const CityLayout &layout, const InstanceMap &instances, std::span<const VehicleState> vehicles,
                                const Camera &camera, const SceneRenderOptions &opt = {}) {
    LayerStack stack;
    const WindowSize full{layout.height(), layout.width(), opt.depth};
    const auto scene = extract_local_window(layout, {layout.width() / 2, layout.height() / 2}, full);
    stack.background = render_background(scene, camera, opt.render);
    for (std::uint32_t id = 1; id <= instances.count; ++id) {
        const auto win = building_window(layout, instances, id, opt.depth, opt.building_margin);
        stack.buildings.push_back(render_building(win, camera, opt.style_for(id), opt.render, opt.feature_seed));
    }
    for (const auto &v : vehicles) {
        // Scene feature from the layout around the vehicle.
        const PixelCoord c{static_cast<int>(std::floor(v.center.x)), static_cast<int>(std::floor(v.center.y))};
        const auto local = extract_local_window(layout, c, {kVehicleWindow, kVehicleWindow, opt.depth});
        const auto f = scene_feature_global(local, kGlobalFeatureDims, opt.feature_seed);
        stack.vehicles.push_back(
            render_vehicle(v, camera, opt.style_for(kVehicleInstanceBase + static_cast<std::uint32_t>(v.id)), opt.render, f));
    }
    return stack;
}

inline RenderBuffers render_frame(const CityLayout &layout, const InstanceMap &instances, std::span<const VehicleState> vehicles,
                                  const Camera &camera, const SceneRenderOptions &opt = {}) {
    return compose(render_layers(layout, instances, vehicles, camera, opt), opt.render.sky);
}

} // namespace cityforge
