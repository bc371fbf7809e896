// Copyright Contributors to the cityforge project
// SPDX-License-Identifier: Apache-2.0
//
// Volume rendering of layout windows: pinhole cameras, exact voxel
// traversal, closed-form absorption over constant-density segments,
// background/building/vehicle layers, and Lambertian relighting with hard
// shadows.

#pragma once

#include "cityforge/core.hpp"
#include "cityforge/encoders.hpp"
#include "cityforge/layout.hpp"
#include "cityforge/traffic.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <optional>
#include <thread>
#include <vector>

namespace cityforge {

// ---------------------------------------------------------------------------
// Camera.

struct Ray {
    Vec3 origin;
    Vec3 dir;  ///< unit length
};

/// Pinhole camera, OpenCV convention: rotation columns are the camera's
/// right, down and forward axes expressed in world coordinates.
struct Camera {
    double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
    int width = 960;
    int height = 540;
    Vec3 position;
    Mat3 rotation = Mat3::identity();

    void validate() const {
        if (!(fx > 0.0 && fy > 0.0)) throw ConfigError("camera focal lengths must be positive");
        if (width < 1 || height < 1) throw ConfigError("camera image size must be positive");
        const Mat3 rtr = rotation.transposed() * rotation;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                if (std::abs(rtr(r, c) - (r == c ? 1.0 : 0.0)) > 1e-9) throw ConfigError("camera rotation is not orthonormal");
    }

    /// Ray through image point (u, v); pixel centres sit at +0.5.
    Ray ray(double u, double v) const {
        const Vec3 d{(u - cx) / fx, (v - cy) / fy, 1.0};
        return {position, normalized(rotation * d)};
    }

    Ray pixel_ray(int px, int py) const { return ray(px + 0.5, py + 0.5); }

    /// Image point and camera-space depth of a world point in front of the
    /// camera.
    std::optional<Vec3> project(const Vec3 &world) const {
        const Vec3 c = rotation.transposed() * (world - position);
        if (c.z <= 1e-12) return std::nullopt;
        return Vec3{fx * c.x / c.z + cx, fy * c.y / c.z + cy, c.z};
    }
};

inline Camera look_at_camera(const Vec3 &position, const Vec3 &target, const Vec3 &up, int width, int height,
                             double fx = 0.0, double fy = 0.0) {
    const Vec3 f = normalized(target - position);
    const Vec3 r0 = cross(f, up);
    if (norm(f) < 1e-12 || norm(r0) < 1e-12) throw ConfigError("camera look-at direction is degenerate");
    const Vec3 r = normalized(r0);
    const Vec3 d = cross(f, r);
    Camera cam;
    cam.width = width;
    cam.height = height;
    // Default: 60 degree horizontal field of view.
    cam.fx = fx > 0.0 ? fx : 0.5 * width / std::tan(deg2rad(30.0));
    cam.fy = fy > 0.0 ? fy : cam.fx;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.position = position;
    cam.rotation = Mat3::from_columns(r, d, f);
    return cam;
}

/// Camera JSON: fx, fy, cx, cy, w, h, position, look_at, up.
inline Camera camera_from_json(const nlohmann::json &j) {
    try {
        auto vec = [&](const char *key, Vec3 def) {
            if (!j.contains(key)) return def;
            const auto &a = j.at(key);
            return Vec3{a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()};
        };
        const int w = j.value("w", 960), h = j.value("h", 540);
        if (!j.contains("position") || !j.contains("look_at")) throw ConfigError("camera needs 'position' and 'look_at'");
        Camera cam = look_at_camera(vec("position", {}), vec("look_at", {}), vec("up", {0, 0, 1}), w, h, j.value("fx", 0.0),
                                    j.value("fy", 0.0));
        cam.cx = j.value("cx", cam.cx);
        cam.cy = j.value("cy", cam.cy);
        cam.validate();
        return cam;
    } catch (const nlohmann::json::exception &e) {
        throw ConfigError(std::string("malformed camera JSON: ") + e.what());
    }
}

inline nlohmann::json to_json(const Camera &c, const Vec3 &look_at, const Vec3 &up = {0, 0, 1}) {
    return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"w", c.width}, {"h", c.height},
            {"position", {c.position.x, c.position.y, c.position.z}},
            {"look_at", {look_at.x, look_at.y, look_at.z}},
            {"up", {up.x, up.y, up.z}}};
}

/// Cameras on a circle of `radius` at `height` above `center`, all looking
/// at `center`.
inline std::vector<Camera> orbit_cameras(const Vec3 &center, double radius, double height, int frames, int width,
                                         int image_height, double start_deg = 0.0) {
    if (frames < 1) throw ConfigError("orbit needs at least one frame");
    std::vector<Camera> cams;
    for (int i = 0; i < frames; ++i) {
        const double a = deg2rad(start_deg + 360.0 * i / frames);
        const Vec3 pos{center.x + radius * std::cos(a), center.y + radius * std::sin(a), center.z + height};
        cams.push_back(look_at_camera(pos, center, {0, 0, 1}, width, image_height));
    }
    return cams;
}

// ---------------------------------------------------------------------------
// Voxel traversal.

struct DdaSegment {
    std::array<int, 3> cell{};
    double t_enter = 0.0;
    double t_exit = 0.0;
    int entry_axis = -1;   ///< axis of the face crossed to enter; -1 at the ray start
    int entry_sign = 0;    ///< step direction along entry_axis
};

/// Parametric overlap of a ray with the box [0,w] x [0,h] x [0,d].
inline bool clip_ray_box(const VolumeDims &dims, const Vec3 &o, const Vec3 &dir, double t_max, double &t0, double &t1,
                         int *entry_axis = nullptr) {
    const std::array<double, 3> hi{static_cast<double>(dims.w), static_cast<double>(dims.h), static_cast<double>(dims.d)};
    t0 = 0.0;
    t1 = t_max;
    int axis = -1;
    for (std::size_t a = 0; a < 3; ++a) {
        const double oa = o[a], da = dir[a];
        if (da == 0.0) {
            if (oa < 0.0 || oa > hi[a]) return false;
            continue;
        }
        double ta = (0.0 - oa) / da, tb = (hi[a] - oa) / da;
        if (ta > tb) std::swap(ta, tb);
        if (ta > t0) {
            t0 = ta;
            axis = static_cast<int>(a);
        }
        t1 = std::min(t1, tb);
    }
    if (entry_axis) *entry_axis = axis;
    return t0 < t1;
}

/// Visits the cells pierced by the ray in order; `fn(segment)` returns false
/// to stop early.
template <typename Fn>
void dda_traverse(const VolumeDims &dims, const Vec3 &o, const Vec3 &dir, double t_max, Fn &&fn) {
    if (!(norm(dir) > 1e-12) || !std::isfinite(norm(dir))) throw DataError("ray direction is degenerate");
    if (dims.w < 1 || dims.h < 1 || dims.d < 1) return;
    double t0, t1;
    int entry_axis = -1;
    if (!clip_ray_box(dims, o, dir, t_max, t0, t1, &entry_axis)) return;
    const std::array<int, 3> size{dims.w, dims.h, dims.d};
    std::array<int, 3> cell{}, step{};
    std::array<double, 3> t_next{}, t_delta{};
    const Vec3 p = o + dir * t0;
    for (std::size_t a = 0; a < 3; ++a) {
        const double pa = p[a];
        int c = static_cast<int>(std::floor(pa));
        if (dir[a] < 0.0 && pa == std::floor(pa)) c -= 1;
        cell[a] = std::clamp(c, 0, size[a] - 1);
        if (dir[a] > 0.0) {
            step[a] = 1;
            t_next[a] = (cell[a] + 1 - o[a]) / dir[a];
            t_delta[a] = 1.0 / dir[a];
        } else if (dir[a] < 0.0) {
            step[a] = -1;
            t_next[a] = (cell[a] - o[a]) / dir[a];
            t_delta[a] = -1.0 / dir[a];
        } else {
            step[a] = 0;
            t_next[a] = kInf;
            t_delta[a] = kInf;
        }
    }
    int entry_sign = entry_axis >= 0 ? step[static_cast<std::size_t>(entry_axis)] : 0;
    double t = t0;
    while (true) {
        std::size_t axis = 0;
        if (t_next[1] < t_next[axis]) axis = 1;
        if (t_next[2] < t_next[axis]) axis = 2;
        const double end = std::min(t_next[axis], t1);
        if (end > t) {
            if (!fn(DdaSegment{cell, t, end, entry_axis, entry_sign})) return;
        }
        if (t_next[axis] >= t1) return;
        cell[axis] += step[axis];
        if (cell[axis] < 0 || cell[axis] >= size[axis]) return;
        t = std::max(t, t_next[axis]);
        t_next[axis] += t_delta[axis];
        entry_axis = static_cast<int>(axis);
        entry_sign = step[axis];
    }
}

inline std::vector<DdaSegment> dda_traverse(const VolumeDims &dims, const Vec3 &o, const Vec3 &dir, double t_max) {
    std::vector<DdaSegment> out;
    dda_traverse(dims, o, dir, t_max, [&](const DdaSegment &s) {
        out.push_back(s);
        return true;
    });
    return out;
}

/// Far plane covering the whole box as seen from `o`.
inline double far_plane(const VolumeDims &dims, const Vec3 &o) {
    const Vec3 c{0.5 * dims.w, 0.5 * dims.h, 0.5 * dims.d};
    const double half_diag = 0.5 * std::sqrt(double(dims.w) * dims.w + double(dims.h) * dims.h + double(dims.d) * dims.d);
    return norm(o - c) + half_diag + 1.0;
}

// ---------------------------------------------------------------------------
// Buffers.

enum class LayerKind : std::uint8_t { Background = 0, Building = 1, Vehicle = 2 };

/// Instance ids at or above this value denote vehicles (id - base).
inline constexpr std::uint32_t kVehicleInstanceBase = 32768;

struct RenderBuffers {
    int width = 0;
    int height = 0;
    LayerKind kind = LayerKind::Background;
    Grid2D<Vec3> color;                 ///< linear RGB in [0, 1]
    Grid2D<SemanticClass> semantic;
    Grid2D<std::uint32_t> instance;
    Grid2D<double> depth;               ///< cells along the ray; +inf on a miss
    Grid2D<double> alpha;
    Grid2D<double> residual;            ///< transmittance left after the ray
    Grid2D<double> occlusion;           ///< weight absorbed by occluder-only cells
    Grid2D<double> hit;                 ///< ray parameter of the first surface entered
    Grid2D<Vec3> normal;                ///< face normal of that surface (world)

    RenderBuffers() = default;
    RenderBuffers(int w, int h, LayerKind k = LayerKind::Background)
        : width(w), height(h), kind(k), color(w, h, Vec3{}), semantic(w, h, SemanticClass::Null), instance(w, h, 0),
          depth(w, h, kInf), alpha(w, h, 0.0), residual(w, h, 1.0), occlusion(w, h, 0.0), hit(w, h, kInf),
          normal(w, h, Vec3{}) {}

    bool mask(int x, int y) const { return alpha(x, y) > 0.5; }
};

struct PixelSample {
    Vec3 color;
    SemanticClass semantic = SemanticClass::Null;
    double alpha = 0.0;
    double depth = kInf;
    double residual = 1.0;
    double occlusion = 0.0;
    double hit = kInf;
    Vec3 normal;
};

inline void store(RenderBuffers &b, int x, int y, const PixelSample &s) {
    b.color(x, y) = s.color;
    b.semantic(x, y) = s.semantic;
    b.alpha(x, y) = s.alpha;
    b.depth(x, y) = s.depth;
    b.residual(x, y) = s.residual;
    b.occlusion(x, y) = s.occlusion;
    b.hit(x, y) = s.hit;
    b.normal(x, y) = s.normal;
}

// ---------------------------------------------------------------------------
// Shading parameters.

/// Display colours per class (linear RGB).
inline const std::array<Vec3, kNumClasses> &render_palette() {
    static const std::array<Vec3, kNumClasses> p{{
        {0.00, 0.00, 0.00},  // null
        {0.36, 0.36, 0.38},  // road
        {0.30, 0.30, 0.33},  // highway
        {0.78, 0.72, 0.62},  // facade
        {0.28, 0.52, 0.24},  // vegetation
        {0.22, 0.42, 0.66},  // water
        {0.62, 0.58, 0.50},  // other
        {0.70, 0.16, 0.14},  // vehicle
        {0.55, 0.34, 0.28},  // roof
    }};
    return p;
}

struct RenderOptions {
    double sigma = 20.0;        ///< density of occupied cells, 1/cell
    double t_max = 0.0;         ///< far plane; 0 covers the whole volume
    double min_transmittance = 1e-10;
    bool texture = true;        ///< hash-grid jitter on class colours
    std::uint64_t texture_seed = 0;
    Vec3 sky{0.62, 0.76, 0.92};
    int threads = 1;
};

struct ShadingConfig {
    Vec3 light_dir = normalized(Vec3{0.4, -0.5, 0.77});  ///< towards the light
    double ambient = 0.2;
    double shadow_bias = 1e-3;

    void validate() const {
        if (std::abs(norm(light_dir) - 1.0) > 1e-9) throw ConfigError("light direction must be a unit vector");
        if (!(ambient >= 0.0 && ambient <= 1.0)) throw ConfigError("ambient term must lie in [0, 1]");
    }
};

// ---------------------------------------------------------------------------
// Integration.

/// Role of a class along a ray: skip, contribute, or absorb silently.
enum class CellRole : std::uint8_t { Empty, Visible, Occluder };

/// Front-to-back absorption along one ray. `lookup(i,j,k)` gives the class,
/// `role(cls)` its role and `shade(cls, point, cell)` its colour.
template <typename Lookup, typename Role, typename Shade>
PixelSample integrate_ray(const VolumeDims &dims, const Vec3 &o, const Vec3 &dir, const RenderOptions &opt,
                          Lookup &&lookup, Role &&role, Shade &&shade) {
    PixelSample s;
    std::array<double, kNumClasses> class_weight{};
    double transmittance = 1.0, depth_acc = 0.0;
    Vec3 color{};
    const double t_max = opt.t_max > 0.0 ? opt.t_max : far_plane(dims, o);
    dda_traverse(dims, o, dir, t_max, [&](const DdaSegment &seg) {
        const int axis = seg.entry_axis, sign = seg.entry_sign;
        const auto cls = lookup(seg.cell[0], seg.cell[1], seg.cell[2]);
        const CellRole r = cls == SemanticClass::Null ? CellRole::Empty : role(cls);
        if (r == CellRole::Empty) return true;
        const double len = seg.t_exit - seg.t_enter;
        const double a = -std::expm1(-opt.sigma * len);
        const double w = transmittance * a;
        if (s.hit == kInf) {
            s.hit = seg.t_enter;
            Vec3 n = dir * -1.0;
            if (axis >= 0) {
                n = Vec3{};
                n[static_cast<std::size_t>(axis)] = -static_cast<double>(sign);
            }
            s.normal = n;
        }
        if (r == CellRole::Visible) {
            const double mid = 0.5 * (seg.t_enter + seg.t_exit);
            color = color + shade(cls, o + dir * mid, seg.cell) * w;
            class_weight[code(cls)] += w;
            s.alpha += w;
            depth_acc += w * mid;
        } else {
            s.occlusion += w;
        }
        transmittance *= std::exp(-opt.sigma * len);
        return transmittance >= opt.min_transmittance;
    });
    s.residual = transmittance;
    s.color = color + opt.sky * transmittance;
    if (s.alpha > 0.0) {
        s.depth = depth_acc / s.alpha;
        std::size_t best = 1;
        for (std::size_t c = 1; c < class_weight.size(); ++c)
            if (class_weight[c] > class_weight[best]) best = c;
        s.semantic = static_cast<SemanticClass>(best);
    }
    // Rounding in the running sum can overshoot 1 by an ulp.
    s.alpha = std::min(s.alpha, 1.0);
    return s;
}

/// Runs `pixel(x, y)` over the image in row bands, one band per worker.
template <typename PixelFn>
void for_each_pixel(int width, int height, int threads, PixelFn &&pixel) {
    const int n = std::clamp(threads, 1, std::max(1, height));
    auto band = [&](int b) {
        const int y0 = height * b / n, y1 = height * (b + 1) / n;
        for (int y = y0; y < y1; ++y)
            for (int x = 0; x < width; ++x) pixel(x, y);
    };
    if (n == 1) {
        band(0);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    for (int b = 0; b < n; ++b)
        pool.emplace_back([&, b] {
            try {
                band(b);
            } catch (...) {
                errors[static_cast<std::size_t>(b)] = std::current_exception();
            }
        });
    for (auto &t : pool) t.join();
    for (auto &e : errors)
        if (e) std::rethrow_exception(e);
}

/// Texture jitter in [-1, 1] from a small hash grid over world position.
inline double texture_jitter(const Vec3 &world, std::uint64_t seed) {
    static const HashGridConfig cfg = [] {
        HashGridConfig c;
        c.levels = 3;
        c.channels = 1;
        c.base_resolution = 4.0;
        return c;
    }();
    const auto f = hash_feature(world * (1.0 / 64.0), {}, FeatureTable{seed}, cfg);
    return (f[0] + f[1] + f[2]) / 3.0;
}

inline Vec3 clamp01(const Vec3 &c) {
    return {std::clamp(c.x, 0.0, 1.0), std::clamp(c.y, 0.0, 1.0), std::clamp(c.z, 0.0, 1.0)};
}

/// Generic render of a window with the given roles and shader. `offset` is
/// subtracted from world ray origins to get window coordinates.
template <typename Role, typename Shade>
RenderBuffers render_window(const LocalWindow &window, const Vec3 &offset, const Camera &camera, const RenderOptions &opt,
                            LayerKind kind, Role &&role, Shade &&shade) {
    camera.validate();
    RenderBuffers out(camera.width, camera.height, kind);
    const auto dims = window.dims();
    for_each_pixel(camera.width, camera.height, opt.threads, [&](int x, int y) {
        const Ray r = camera.pixel_ray(x, y);
        const auto s = integrate_ray(
            dims, r.origin - offset, r.dir, opt, [&](int i, int j, int k) { return window.lookup(i, j, k); }, role, shade);
        store(out, x, y, s);
    });
    return out;
}

/// Static scenery. Building cells block rays but carry no colour or mask;
/// they are filled in by the per-building layers.
inline RenderBuffers render_background(const LocalWindow &window, const Camera &camera, const RenderOptions &opt = {}) {
    const Vec3 offset{static_cast<double>(window.origin.x), static_cast<double>(window.origin.y), 0.0};
    const auto &pal = render_palette();
    return render_window(
        window, offset, camera, opt, LayerKind::Background,
        [](SemanticClass c) { return is_building(c) ? CellRole::Occluder : CellRole::Visible; },
        [&](SemanticClass c, const Vec3 &p, const std::array<int, 3> &) {
            const Vec3 base = pal[code(c)];
            if (!opt.texture) return base;
            return clamp01(base * (1.0 + 0.12 * texture_jitter(p + offset, opt.texture_seed)));
        });
}

/// Every non-NULL cell visible (no occluder-only classes).
inline RenderBuffers render_full(const LocalWindow &window, const Camera &camera, const RenderOptions &opt = {}) {
    const Vec3 offset{static_cast<double>(window.origin.x), static_cast<double>(window.origin.y), 0.0};
    const auto &pal = render_palette();
    return render_window(
        window, offset, camera, opt, LayerKind::Background, [](SemanticClass) { return CellRole::Visible; },
        [&](SemanticClass c, const Vec3 &, const std::array<int, 3> &) { return pal[code(c)]; });
}

// ---------------------------------------------------------------------------
// Buildings.

/// Style-seeded linear read-out of the building point feature. The 63
/// pixel channels only depend on the column, so their share of the
/// projection is cached per column; the height share is evaluated per
/// sample.
class BuildingShader {
  public:
    static constexpr int kFeatureSize = 2 * kSinCosLevels * (kBuildingFeatureChannels + 1);

    BuildingShader(const LocalWindow &window, std::uint64_t style_seed, std::uint64_t feature_seed)
        : window_(window), style_(style_seed), feature_seed_(feature_seed),
          cache_(window.size.cols, window.size.rows, Vec3{}) {
        for (int c = 0; c < 3; ++c)
            for (int s = 0; s < kFeatureSize; ++s)
                weights_[static_cast<std::size_t>(c)][static_cast<std::size_t>(s)] =
                    signed_unit(hash_values(style_seed, 0x57u, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(s))) *
                    (2.0 / std::sqrt(static_cast<double>(kFeatureSize)));
        for (int y = 0; y < window.size.rows; ++y)
            for (int x = 0; x < window.size.cols; ++x) {
                if (window.content.semantic(x, y) == SemanticClass::Null) continue;
                std::array<double, kBuildingFeatureChannels> ch{};
                for (int k = 0; k < kBuildingFeatureChannels; ++k)
                    ch[static_cast<std::size_t>(k)] = building_pixel_channel(window, x, y, k, feature_seed);
                const auto enc = sincos_encode(ch, kSinCosLevels);
                Vec3 acc{};
                for (std::size_t s = 0; s < enc.size(); ++s)
                    for (std::size_t c = 0; c < 3; ++c) acc[c] += weights_[c][s] * enc[s];
                cache_(x, y) = acc;
            }
        // A per-building tint so neighbouring buildings differ.
        tint_ = Vec3{0.8 + 0.4 * unit_double(hash_values(style_seed, 1u)), 0.8 + 0.4 * unit_double(hash_values(style_seed, 2u)),
                     0.8 + 0.4 * unit_double(hash_values(style_seed, 3u))};
    }

    /// Projection of building_point_feature(p) onto the style weights.
    Vec3 projection(const Vec3 &p_local) const {
        const int x = static_cast<int>(std::floor(p_local.x)), y = static_cast<int>(std::floor(p_local.y));
        Vec3 acc = cache_.at_or(x, y, Vec3{});
        const double z = 2.0 * p_local.z / window_.size.depth - 1.0;
        const std::array<double, 1> zin{z};
        const auto enc = sincos_encode(zin, kSinCosLevels);
        const std::size_t base = 2 * kSinCosLevels * kBuildingFeatureChannels;
        for (std::size_t s = 0; s < enc.size(); ++s)
            for (std::size_t c = 0; c < 3; ++c) acc[c] += weights_[c][base + s] * enc[s];
        return acc;
    }

    Vec3 color(SemanticClass cls, const Vec3 &p_local) const {
        const Vec3 base = render_palette()[code(cls)];
        const Vec3 proj = projection(p_local);
        // Mostly luminance variation, with a faint hue shift.
        const double lum = 0.85 + 0.15 * std::tanh(proj.x);
        return clamp01(Vec3{base.x * tint_.x * (lum + 0.03 * std::tanh(proj.y)), base.y * tint_.y * lum,
                            base.z * tint_.z * (lum + 0.03 * std::tanh(proj.z))});
    }

    const std::array<std::array<double, kFeatureSize>, 3> &weights() const { return weights_; }

  private:
    const LocalWindow &window_;
    std::uint64_t style_;
    std::uint64_t feature_seed_;
    Grid2D<Vec3> cache_;
    std::array<std::array<double, kFeatureSize>, 3> weights_{};
    Vec3 tint_{1, 1, 1};
};

/// One building instance. The window must be isolated and relabelled;
/// rays are shifted by the building centre (window origin + size/2) so the
/// window is sampled in its own centred frame.
inline RenderBuffers render_building(const LocalWindow &window, const Camera &camera, std::uint64_t style_seed,
                                     const RenderOptions &opt = {}, std::uint64_t feature_seed = 0) {
    const double cx = window.origin.x + window.size.cols / 2, cy = window.origin.y + window.size.rows / 2;
    const Vec3 offset{cx - window.size.cols / 2, cy - window.size.rows / 2, 0.0};
    const BuildingShader shader(window, style_seed, feature_seed);
    auto out = render_window(
        window, offset, camera, opt, LayerKind::Building, [](SemanticClass) { return CellRole::Visible; },
        [&](SemanticClass c, const Vec3 &p, const std::array<int, 3> &) { return shader.color(c, p); });
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) out.instance(x, y) = out.mask(x, y) ? window.instance : 0;
    return out;
}

// ---------------------------------------------------------------------------
// Vehicles.

/// Edge length of the canonical vehicle window, cells.
inline constexpr int kVehicleWindow = 32;

/// The vehicle's box in its own frame, centred in a 32^3 window.
inline LocalWindow canonical_vehicle_window(const VehicleState &v) {
    VehicleState c = v;
    const double half = 0.5 * kVehicleWindow;
    c.center = {half, half, half};
    c.yaw = 0.0;
    c.pitch = 0.0;
    const auto rasters = boxes_to_maps(std::span<const VehicleState>(&c, 1), kVehicleWindow, kVehicleWindow);
    LocalWindow w;
    w.size = {kVehicleWindow, kVehicleWindow, kVehicleWindow};
    w.content = CityLayout(kVehicleWindow, kVehicleWindow);
    w.content.semantic = rasters.semantic;
    w.content.heights = rasters.heights;
    w.instance = kVehicleInstanceBase + static_cast<std::uint32_t>(v.id);
    return w;
}

class VehicleShader {
  public:
    static constexpr int kFeatureSize = 2 * kSinCosLevels * (kGlobalFeatureDims + 3);

    VehicleShader(std::uint64_t style_seed, SceneFeature f_global) : f_(std::move(f_global)) {
        for (int c = 0; c < 3; ++c)
            for (int s = 0; s < kFeatureSize; ++s)
                weights_[static_cast<std::size_t>(c)][static_cast<std::size_t>(s)] =
                    signed_unit(hash_values(style_seed, 0x56u, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(s))) *
                    (2.0 / std::sqrt(static_cast<double>(kFeatureSize)));
        const double hue = unit_double(hash_values(style_seed, 0x70u));
        paint_ = Vec3{0.5 + 0.45 * std::cos(2 * kPi * hue), 0.5 + 0.45 * std::cos(2 * kPi * (hue - 1.0 / 3.0)),
                      0.5 + 0.45 * std::cos(2 * kPi * (hue - 2.0 / 3.0))};
    }

    Vec3 color(const Vec3 &p_canonical) const {
        const auto enc = vehicle_point_feature(p_canonical, f_);
        Vec3 acc{};
        for (std::size_t s = 0; s < enc.size() && s < static_cast<std::size_t>(kFeatureSize); ++s)
            for (std::size_t c = 0; c < 3; ++c) acc[c] += weights_[c][s] * enc[s];
        return clamp01(Vec3{paint_.x * (0.7 + 0.3 * std::tanh(acc.x)), paint_.y * (0.7 + 0.3 * std::tanh(acc.y)),
                            paint_.z * (0.7 + 0.3 * std::tanh(acc.z))});
    }

  private:
    SceneFeature f_;
    std::array<std::array<double, kFeatureSize>, 3> weights_{};
    Vec3 paint_;
};

/// Renders one vehicle by mapping every ray into the vehicle's canonical
/// frame and sampling the canonical box window there.
inline RenderBuffers render_vehicle(const VehicleState &v, const Camera &camera, std::uint64_t style_seed,
                                    const RenderOptions &opt = {}, SceneFeature f_global = {}) {
    camera.validate();
    if (f_global.empty())
        for (int k = 0; k < kGlobalFeatureDims; ++k)
            f_global.push_back(signed_unit(hash_values(style_seed, 0x66u, static_cast<std::uint64_t>(k))));
    const auto window = canonical_vehicle_window(v);
    const VehicleShader shader(style_seed, f_global);
    const Mat3 r = rotation_matrix(v.yaw, v.pitch);
    const Mat3 rt = r.transposed();
    const double half = 0.5 * kVehicleWindow;
    const Vec3 shift{half, half, half};
    const auto dims = window.dims();
    RenderBuffers out(camera.width, camera.height, LayerKind::Vehicle);
    for_each_pixel(camera.width, camera.height, opt.threads, [&](int x, int y) {
        const Ray ray = camera.pixel_ray(x, y);
        const Vec3 o = r * (ray.origin - v.center) + shift;
        const Vec3 d = r * ray.dir;
        auto s = integrate_ray(
            dims, o, d, opt, [&](int i, int j, int k) { return window.lookup(i, j, k); },
            [](SemanticClass) { return CellRole::Visible; },
            [&](SemanticClass, const Vec3 &p, const std::array<int, 3> &) { return shader.color(p - shift); });
        if (s.hit != kInf) s.normal = rt * s.normal;
        store(out, x, y, s);
        out.instance(x, y) = out.mask(x, y) ? window.instance : 0;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Lighting.

/// Class of a world voxel: layout first, then the frame's vehicles.
struct SceneVolume {
    const CityLayout *layout = nullptr;
    const TrafficFrameRasters *traffic = nullptr;
    int depth = 64;

    VolumeDims dims() const { return {layout->width(), layout->height(), depth}; }

    SemanticClass operator()(int i, int j, int k) const {
        if (k >= depth) return SemanticClass::Null;
        const auto c = volume_lookup(*layout, i, j, k);
        if (c != SemanticClass::Null || !traffic) return c;
        if (!traffic->semantic.cells.contains(i, j) || traffic->semantic(i, j) == SemanticClass::Null) return SemanticClass::Null;
        const int bu = traffic->heights.bottom_up(i, j), td = traffic->heights.top_down(i, j);
        return (k >= bu && k <= td) ? SemanticClass::Vehicle : SemanticClass::Null;
    }
};

/// 1 when nothing blocks the way from `p` towards the light, else 0.
template <typename Lookup>
int shadow_visibility(const VolumeDims &dims, Lookup &&lookup, const Vec3 &p, const Vec3 &light_dir) {
    bool blocked = false;
    dda_traverse(dims, p, light_dir, far_plane(dims, p), [&](const DdaSegment &s) {
        if (lookup(s.cell[0], s.cell[1], s.cell[2]) != SemanticClass::Null) {
            blocked = true;
            return false;
        }
        return true;
    });
    return blocked ? 0 : 1;
}

/// Lambert term with ambient floor.
inline Vec3 lambert(const Vec3 &albedo, const Vec3 &n, const Vec3 &l, double ambient, int visibility) {
    const double k = ambient + (1.0 - ambient) * std::max(0.0, dot(n, l)) * visibility;
    return albedo * k;
}

/// Relit colour image; pixels without a surface keep their colour.
template <typename Lookup>
Grid2D<Vec3> relight(const RenderBuffers &b, const Camera &camera, const VolumeDims &dims, Lookup &&lookup,
                     const ShadingConfig &shading, int threads = 1) {
    shading.validate();
    Grid2D<Vec3> out(b.width, b.height, Vec3{});
    for_each_pixel(b.width, b.height, threads, [&](int x, int y) {
        if (!b.mask(x, y) || b.hit(x, y) == kInf) {
            out(x, y) = b.color(x, y);
            return;
        }
        const Ray r = camera.pixel_ray(x, y);
        const Vec3 n = b.normal(x, y);
        const Vec3 p = r.origin + r.dir * b.hit(x, y) + n * shading.shadow_bias;
        const int vis = dot(n, shading.light_dir) > 0.0 ? shadow_visibility(dims, lookup, p, shading.light_dir) : 0;
        out(x, y) = lambert(b.color(x, y), n, shading.light_dir, shading.ambient, vis);
    });
    return out;
}

} // namespace cityforge
