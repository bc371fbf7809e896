// Copyright Contributors to the cityforge project
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end orchestration: run configuration, stage runners with atomic
// outputs, SHA-256 manifests, render output files and scene edits.

#pragma once

#include "cityforge/compositor.hpp"
#include "cityforge/encoders.hpp"
#include "cityforge/hdmap.hpp"
#include "cityforge/layout.hpp"
#include "cityforge/osm.hpp"
#include "cityforge/png_io.hpp"
#include "cityforge/procedural.hpp"
#include "cityforge/render.hpp"
#include "cityforge/traffic.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace cityforge {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Files.

inline std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX *ctx = EVP_MD_CTX_new();
    if (!ctx) throw Error("cannot allocate a digest context");
    const bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 && EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                    EVP_DigestFinal_ex(ctx, digest, &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) throw Error("SHA-256 computation failed");
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    return out.str();
}

inline std::string read_file(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::string sha256_file(const fs::path &path) { return sha256_hex(read_file(path)); }

/// Writes through a temporary sibling and renames it into place.
inline void write_file_atomic(const fs::path &path, std::string_view data) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write '" + tmp.string() + "'");
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        if (!out) throw DataError("short write to '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

inline void write_json_atomic(const fs::path &path, const nlohmann::json &j) { write_file_atomic(path, j.dump(1) + "\n"); }

inline nlohmann::json read_json_file(const fs::path &path, const std::string &producer) {
    if (!fs::exists(path)) throw DependencyError("missing '" + path.string() + "' (run `" + producer + "` first)");
    try {
        return nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error &e) {
        throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Render output files.

inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

inline ImageRgb to_rgb8(const Grid2D<Vec3> &c) {
    ImageRgb img(c.width(), c.height());
    for (int y = 0; y < c.height(); ++y)
        for (int x = 0; x < c.width(); ++x) img(x, y) = {to_byte(c(x, y).x), to_byte(c(x, y).y), to_byte(c(x, y).z)};
    return img;
}

/// Depth in whole cells; 0 marks a miss.
inline std::uint16_t encode_depth(double d) {
    if (!std::isfinite(d)) return 0;
    return static_cast<std::uint16_t>(std::clamp<long>(std::lround(d), 1, 65535));
}

inline void write_render_outputs(const fs::path &dir, const RenderBuffers &b) {
    fs::create_directories(dir);
    write_png_rgb(dir / "color.png", to_rgb8(b.color));
    Image8 sem(b.width, b.height), alpha(b.width, b.height);
    Image16 inst(b.width, b.height), depth(b.width, b.height);
    for (int y = 0; y < b.height; ++y)
        for (int x = 0; x < b.width; ++x) {
            sem(x, y) = code(b.semantic(x, y));
            alpha(x, y) = to_byte(b.alpha(x, y));
            inst(x, y) = static_cast<std::uint16_t>(std::min<std::uint32_t>(b.instance(x, y), 65535));
            depth(x, y) = encode_depth(b.depth(x, y));
        }
    write_png_indexed(dir / "semantic.png", sem, semantic_palette());
    write_png_gray16(dir / "instance.png", inst);
    write_png_gray16(dir / "depth.png", depth);
    write_png_gray8(dir / "alpha.png", alpha);
}

inline RenderBuffers read_render_outputs(const fs::path &dir, LayerKind kind) {
    for (const char *f : {"color.png", "semantic.png", "instance.png", "depth.png", "alpha.png"})
        if (!fs::exists(dir / f)) throw DependencyError("missing '" + (dir / f).string() + "' (run `render` first)");
    const auto color = read_png_rgb(dir / "color.png");
    const auto sem = read_png_indexed(dir / "semantic.png");
    const auto inst = read_png_gray16(dir / "instance.png");
    const auto depth = read_png_gray16(dir / "depth.png");
    const auto alpha = read_png_gray8(dir / "alpha.png");
    RenderBuffers b(color.width(), color.height(), kind);
    if (sem.width() != b.width || inst.width() != b.width || depth.width() != b.width || alpha.width() != b.width ||
        sem.height() != b.height || inst.height() != b.height || depth.height() != b.height || alpha.height() != b.height)
        throw DataError("render outputs in '" + dir.string() + "' differ in size");
    for (int y = 0; y < b.height; ++y)
        for (int x = 0; x < b.width; ++x) {
            const auto c = color(x, y);
            b.color(x, y) = {c.r / 255.0, c.g / 255.0, c.b / 255.0};
            b.semantic(x, y) = class_from_code(sem(x, y));
            b.instance(x, y) = inst(x, y);
            b.depth(x, y) = depth(x, y) == 0 ? kInf : static_cast<double>(depth(x, y));
            b.alpha(x, y) = alpha(x, y) / 255.0;
        }
    return b;
}

/// Layer sub-directories written next to a composited render.
inline std::string layer_dir_name(LayerKind kind, std::uint32_t id) {
    char buf[32];
    switch (kind) {
    case LayerKind::Background: return "background";
    case LayerKind::Building: std::snprintf(buf, sizeof(buf), "building_%05u", id); return buf;
    case LayerKind::Vehicle: std::snprintf(buf, sizeof(buf), "vehicle_%05u", id); return buf;
    }
    return "background";
}

inline void write_layer_stack(const fs::path &dir, const LayerStack &stack) {
    write_render_outputs(dir / "layers" / layer_dir_name(LayerKind::Background, 0), stack.background);
    for (std::size_t i = 0; i < stack.buildings.size(); ++i)
        write_render_outputs(dir / "layers" / layer_dir_name(LayerKind::Building, static_cast<std::uint32_t>(i + 1)), stack.buildings[i]);
    for (std::size_t i = 0; i < stack.vehicles.size(); ++i)
        write_render_outputs(dir / "layers" / layer_dir_name(LayerKind::Vehicle, static_cast<std::uint32_t>(i)), stack.vehicles[i]);
}

inline LayerStack read_layer_stack(const fs::path &dir) {
    const fs::path layers = dir / "layers";
    if (!fs::is_directory(layers)) throw DependencyError("no layers under '" + dir.string() + "' (run `render` first)");
    std::vector<fs::path> entries;
    for (const auto &e : fs::directory_iterator(layers))
        if (e.is_directory()) entries.push_back(e.path());
    std::sort(entries.begin(), entries.end());
    LayerStack stack;
    bool have_background = false;
    for (const auto &p : entries) {
        const auto name = p.filename().string();
        if (name == "background") {
            stack.background = read_render_outputs(p, LayerKind::Background);
            have_background = true;
        } else if (name.starts_with("building_")) {
            stack.buildings.push_back(read_render_outputs(p, LayerKind::Building));
        } else if (name.starts_with("vehicle_")) {
            stack.vehicles.push_back(read_render_outputs(p, LayerKind::Vehicle));
        }
    }
    if (!have_background) throw DependencyError("no background layer under '" + layers.string() + "'");
    return stack;
}

// ---------------------------------------------------------------------------
// Configuration.

/// Window sizes for the background and building windows. A zero building
/// extent sizes each building window to its footprint.
struct RenderProfile {
    std::string name = "desk";
    int background_rows = 0;  ///< 0: whole layout
    int background_cols = 0;
    int depth = 64;
    int building_rows = 0;
    int building_cols = 0;
};

inline RenderProfile render_profile(std::string_view name) {
    if (name == "desk") return {"desk", 0, 0, 64, 0, 0};
    if (name == "googleearth") return {"googleearth", 1536, 1536, 640, 672, 672};
    if (name == "citytopia") return {"citytopia", 3072, 3072, 2560, 768, 768};
    throw ConfigError("unknown render profile '" + std::string(name) + "' (desk, googleearth, citytopia)");
}

/// Style overrides file: {"styles": [{"instance": id, "style": seed}, ...]}.
inline std::vector<std::pair<std::uint32_t, std::uint64_t>> styles_from_json(const nlohmann::json &j) {
    std::vector<std::pair<std::uint32_t, std::uint64_t>> out;
    try {
        for (const auto &e : j.at("styles")) out.emplace_back(e.at("instance").get<std::uint32_t>(), e.at("style").get<std::uint64_t>());
    } catch (const nlohmann::json::exception &e) {
        throw DataError(std::string("malformed styles JSON: ") + e.what());
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline nlohmann::json styles_to_json(const std::vector<std::pair<std::uint32_t, std::uint64_t>> &styles) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto &[id, seed] : styles) arr.push_back({{"instance", id}, {"style", seed}});
    return {{"styles", arr}};
}

/// Replaces or inserts the style of one instance.
inline std::vector<std::pair<std::uint32_t, std::uint64_t>> set_style(std::vector<std::pair<std::uint32_t, std::uint64_t>> styles,
                                                                      std::uint32_t instance, std::uint64_t style) {
    std::erase_if(styles, [&](const auto &e) { return e.first == instance; });
    styles.emplace_back(instance, style);
    std::sort(styles.begin(), styles.end());
    return styles;
}

struct RunConfig {
    fs::path output_dir = "out";
    std::vector<std::string> stages{"ingest", "hdmap", "simulate", "render"};
    int threads = 1;
    bool force = false;

    // ingest
    std::string features;                    ///< empty: built-in sample city
    std::array<double, 4> bbox{0, 0, 0, 0};  ///< lon0, lat0, lon1, lat1
    int zoom = 18;
    std::uint64_t layout_seed = 0;
    int sample_size = 256;
    int sample_buildings = 10;

    // hdmap / simulate
    int vehicles = 5;
    int frames = 10;
    double dt = 0.1;
    std::uint64_t traffic_seed = 0;

    // render / orbit
    std::optional<nlohmann::json> camera;
    int frame = 0;
    std::uint64_t style_seed = 0;
    std::string profile = "desk";
    int width = 960;
    int height = 540;
    std::optional<Vec3> light;
    double ambient = 0.2;
    double orbit_radius = 0.0;  ///< 0: derived from the layout size
    double orbit_height = 0.0;
    int orbit_frames = 60;
    std::vector<std::pair<std::uint32_t, std::uint64_t>> style_overrides;

    fs::path layout_base() const { return output_dir / "city"; }
    fs::path map_path() const { return output_dir / "map.json"; }
    fs::path scenario_path() const { return output_dir / "scenario.json"; }
    fs::path render_dir() const { return output_dir / "render"; }
    fs::path orbit_dir() const { return output_dir / "orbit"; }
    fs::path manifest_path() const { return output_dir / "manifest.json"; }
};

inline nlohmann::json seeds_json(const RunConfig &c) {
    return {{"layout", c.layout_seed}, {"traffic", c.traffic_seed}, {"style", c.style_seed}};
}

/// Canonical description of everything that affects outputs (paths and
/// worker counts excluded).
inline nlohmann::json config_json(const RunConfig &c) {
    nlohmann::json j;
    j["stages"] = c.stages;
    j["ingest"] = {{"features", c.features.empty() ? std::string() : fs::path(c.features).filename().string()},
                   {"bbox", c.bbox},
                   {"zoom", c.zoom},
                   {"seed", c.layout_seed},
                   {"sample_size", c.sample_size},
                   {"sample_buildings", c.sample_buildings}};
    j["simulate"] = {{"vehicles", c.vehicles}, {"frames", c.frames}, {"dt", c.dt}, {"seed", c.traffic_seed}};
    j["render"] = {{"camera", c.camera ? *c.camera : nlohmann::json()},
                   {"frame", c.frame},
                   {"seed", c.style_seed},
                   {"profile", c.profile},
                   {"w", c.width},
                   {"h", c.height},
                   {"light", c.light ? nlohmann::json{c.light->x, c.light->y, c.light->z} : nlohmann::json()},
                   {"ambient", c.ambient}};
    j["render"]["styles"] = c.style_overrides;
    j["orbit"] = {{"radius", c.orbit_radius}, {"height", c.orbit_height}, {"frames", c.orbit_frames}};
    return j;
}

namespace detail {

template <typename T>
void take(const nlohmann::json &obj, const char *key, T &dst) {
    if (obj.contains(key) && !obj.at(key).is_null()) dst = obj.at(key).get<T>();
}

} // namespace detail

/// Reads a structured config: top-level `output_dir`, `seed`, `threads`,
/// `stages`, plus one object per stage with flat keys. Relative paths are
/// resolved against `base_dir`.
inline RunConfig config_from_json(const nlohmann::json &j, const fs::path &base_dir = {}) {
    RunConfig c;
    try {
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        auto resolve = [&](const std::string &p) { return (fs::path(p).is_absolute() || base_dir.empty()) ? fs::path(p) : base_dir / p; };
        if (j.contains("output_dir")) c.output_dir = resolve(j.at("output_dir").get<std::string>());
        std::uint64_t seed = 0;
        detail::take(j, "seed", seed);
        c.layout_seed = c.traffic_seed = c.style_seed = seed;
        detail::take(j, "threads", c.threads);
        detail::take(j, "stages", c.stages);
        const auto empty = nlohmann::json::object();
        const auto &in = j.contains("ingest") ? j.at("ingest") : empty;
        if (in.contains("features")) c.features = resolve(in.at("features").get<std::string>()).string();
        if (in.contains("bbox")) {
            const auto v = in.at("bbox").get<std::vector<double>>();
            if (v.size() != 4) throw ConfigError("ingest.bbox needs 4 numbers");
            std::copy(v.begin(), v.end(), c.bbox.begin());
        }
        detail::take(in, "zoom", c.zoom);
        detail::take(in, "seed", c.layout_seed);
        detail::take(in, "sample_size", c.sample_size);
        detail::take(in, "sample_buildings", c.sample_buildings);
        const auto &sim = j.contains("simulate") ? j.at("simulate") : empty;
        detail::take(sim, "vehicles", c.vehicles);
        detail::take(sim, "frames", c.frames);
        detail::take(sim, "dt", c.dt);
        detail::take(sim, "seed", c.traffic_seed);
        const auto &ren = j.contains("render") ? j.at("render") : empty;
        if (ren.contains("camera")) {
            const auto &cam = ren.at("camera");
            c.camera = cam.is_string() ? read_json_file(resolve(cam.get<std::string>()), "camera") : cam;
        }
        detail::take(ren, "frame", c.frame);
        detail::take(ren, "seed", c.style_seed);
        detail::take(ren, "profile", c.profile);
        detail::take(ren, "w", c.width);
        detail::take(ren, "h", c.height);
        if (ren.contains("light")) {
            const auto v = ren.at("light").get<std::vector<double>>();
            if (v.size() != 3) throw ConfigError("render.light needs 3 numbers");
            c.light = normalized(Vec3{v[0], v[1], v[2]});
        }
        detail::take(ren, "ambient", c.ambient);
        if (ren.contains("styles")) {
            const auto &st = ren.at("styles");
            c.style_overrides = st.is_string() ? styles_from_json(read_json_file(resolve(st.get<std::string>()), "edit set-style"))
                                               : styles_from_json(st);
        }
        const auto &orb = j.contains("orbit") ? j.at("orbit") : empty;
        detail::take(orb, "radius", c.orbit_radius);
        detail::take(orb, "height", c.orbit_height);
        detail::take(orb, "frames", c.orbit_frames);
    } catch (const nlohmann::json::exception &e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    for (const auto &s : c.stages)
        if (s != "ingest" && s != "hdmap" && s != "simulate" && s != "render" && s != "orbit")
            throw ConfigError("unknown stage '" + s + "'");
    if (c.threads < 1) throw ConfigError("threads must be >= 1");
    render_profile(c.profile);
    return c;
}

inline RunConfig load_config(const fs::path &path) {
    if (!fs::exists(path)) throw ConfigError("config file '" + path.string() + "' not found");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error &e) {
        throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return config_from_json(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Manifest.

/// Stage records keyed by stage name; each holds the stage's input key and
/// the checksums of its outputs (paths relative to the manifest).
class Manifest {
  public:
    explicit Manifest(fs::path path) : path_(std::move(path)) {
        if (fs::exists(path_)) {
            try {
                data_ = nlohmann::json::parse(read_file(path_));
            } catch (const nlohmann::json::parse_error &) {
                data_ = nlohmann::json::object();
            }
        }
        if (!data_.is_object()) data_ = nlohmann::json::object();
        if (!data_.contains("stages")) data_["stages"] = nlohmann::json::object();
    }

    const fs::path &path() const { return path_; }
    nlohmann::json &data() { return data_; }

    std::string relative(const fs::path &p) const {
        const auto base = path_.has_parent_path() ? path_.parent_path() : fs::current_path();
        return fs::relative(fs::absolute(p), fs::absolute(base)).generic_string();
    }

    /// True when the stage ran with `key` and every output is unchanged.
    bool up_to_date(const std::string &stage, const std::string &key) const {
        if (!data_["stages"].contains(stage)) return false;
        const auto &rec = data_["stages"][stage];
        if (rec.value("key", "") != key) return false;
        const auto base = path_.has_parent_path() ? path_.parent_path() : fs::path(".");
        for (const auto &[rel, sum] : rec.at("outputs").items()) {
            const auto p = base / rel;
            if (!fs::exists(p) || sha256_file(p) != sum.get<std::string>()) return false;
        }
        return true;
    }

    void record(const std::string &stage, const std::string &key, const std::vector<fs::path> &outputs) {
        nlohmann::json outs = nlohmann::json::object();
        for (const auto &p : outputs) outs[relative(p)] = sha256_file(p);
        data_["stages"][stage] = {{"key", key}, {"outputs", outs}};
        nlohmann::json all = nlohmann::json::object();
        for (const auto &[name, rec] : data_["stages"].items())
            for (const auto &[rel, sum] : rec.at("outputs").items()) all[rel] = sum;
        data_["outputs"] = all;
    }

    void save() const { write_json_atomic(path_, data_); }

  private:
    fs::path path_;
    nlohmann::json data_ = nlohmann::json::object();
};

inline std::vector<fs::path> files_under(const fs::path &dir) {
    std::vector<fs::path> out;
    if (!fs::exists(dir)) return out;
    for (const auto &e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() != ".tmp") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Stages.

inline std::vector<fs::path> layout_outputs(const fs::path &base) {
    const auto p = layout_paths(base);
    return {p.semantic, p.bottom_up, p.top_down, fs::path(base.string() + ".inst.png")};
}

inline CityLayout make_layout(const RunConfig &c) {
    if (c.features.empty()) return make_sample_city({c.sample_size, 64, c.sample_buildings, c.layout_seed});
    const auto features = load_features(c.features);
    const auto grid = grid_from_bbox(c.bbox[0], c.bbox[1], c.bbox[2], c.bbox[3], c.zoom);
    return rasterize(features, grid, PerlinField{c.layout_seed});
}

inline std::vector<fs::path> stage_ingest(const RunConfig &c, const fs::path &base) {
    const auto layout = make_layout(c);
    save_layout(base, layout);
    save_instances(base.string() + ".inst.png", instantiate_buildings(layout.semantic));
    return layout_outputs(base);
}

inline std::vector<fs::path> stage_hdmap(const fs::path &layout_base, const fs::path &out) {
    const auto layout = load_layout(layout_base);
    write_json_atomic(out, to_json(build_hdmap(layout)));
    return {out};
}

inline std::vector<fs::path> stage_simulate(const fs::path &map, int vehicles, int frames, double dt, std::uint64_t seed,
                                            const fs::path &out) {
    const auto hd = hdmap_from_json(read_json_file(map, "hdmap"));
    write_json_atomic(out, to_json(simulate(hd.lanes, vehicles, frames, dt, seed)));
    return {out};
}

/// Camera used when none is configured: an oblique view of the whole
/// layout from its south-west corner.
inline Camera default_camera(const CityLayout &layout, int width, int height) {
    const double w = layout.width(), h = layout.height();
    const Vec3 target{0.5 * w, 0.5 * h, 0.0};
    const Vec3 pos{-0.15 * w, -0.15 * h, 0.45 * std::max(w, h)};
    return look_at_camera(pos, target, {0, 0, 1}, width, height);
}

inline Camera resolve_camera(const RunConfig &c, const CityLayout &layout) {
    if (!c.camera) return default_camera(layout, c.width, c.height);
    auto j = *c.camera;
    if (!j.contains("w")) j["w"] = c.width;
    if (!j.contains("h")) j["h"] = c.height;
    return camera_from_json(j);
}

inline TrafficScenario load_scenario(const fs::path &path) { return scenario_from_json(read_json_file(path, "simulate")); }

inline std::vector<VehicleState> scenario_frame(const TrafficScenario &s, int frame) {
    if (frame < 0 || frame >= s.n_frames())
        throw DataError("frame " + std::to_string(frame) + " outside the scenario's " + std::to_string(s.n_frames()) + " frames");
    return s.frames[static_cast<std::size_t>(frame)];
}

inline SceneRenderOptions scene_options(const RunConfig &c, const RenderProfile &profile) {
    SceneRenderOptions o;
    o.depth = profile.depth;
    o.style_seed = c.style_seed;
    o.feature_seed = c.style_seed;
    o.render.threads = c.threads;
    o.render.texture_seed = c.style_seed;
    o.style_overrides = c.style_overrides;
    return o;
}

/// Background window for a profile: whole layout, or a centred crop.
inline LocalWindow profile_window(const CityLayout &layout, const RenderProfile &p) {
    const int rows = p.background_rows > 0 ? p.background_rows : layout.height();
    const int cols = p.background_cols > 0 ? p.background_cols : layout.width();
    return extract_local_window(layout, {layout.width() / 2, layout.height() / 2}, {rows, cols, p.depth});
}

inline LayerStack render_scene_layers(const CityLayout &layout, const InstanceMap &instances, std::span<const VehicleState> vehicles,
                                      const Camera &camera, const SceneRenderOptions &opt, const RenderProfile &profile) {
    if (profile.background_rows == 0 && profile.building_rows == 0) return render_layers(layout, instances, vehicles, camera, opt);
    LayerStack stack;
    stack.background = render_background(profile_window(layout, profile), camera, opt.render);
    for (std::uint32_t id = 1; id <= instances.count; ++id) {
        LocalWindow win;
        if (profile.building_rows > 0) {
            long sx = 0, sy = 0, n = 0;
            for (int y = 0; y < layout.height(); ++y)
                for (int x = 0; x < layout.width(); ++x)
                    if (instances(x, y) == id) { sx += x; sy += y; ++n; }
            const PixelCoord c{n ? static_cast<int>(sx / n) : 0, n ? static_cast<int>(sy / n) : 0};
            win = relabel_facade_roof(
                isolate_instance(extract_local_window(layout, c, {profile.building_rows, profile.building_cols, profile.depth}), instances, id), id);
        } else {
            win = building_window(layout, instances, id, profile.depth, opt.building_margin);
        }
        stack.buildings.push_back(render_building(win, camera, opt.style_for(id), opt.render, opt.feature_seed));
    }
    for (const auto &v : vehicles) {
        const PixelCoord c{static_cast<int>(std::floor(v.center.x)), static_cast<int>(std::floor(v.center.y))};
        const auto local = extract_local_window(layout, c, {kVehicleWindow, kVehicleWindow, profile.depth});
        stack.vehicles.push_back(render_vehicle(v, camera, opt.style_for(kVehicleInstanceBase + static_cast<std::uint32_t>(v.id)),
                                                opt.render, scene_feature_global(local, kGlobalFeatureDims, opt.feature_seed)));
    }
    return stack;
}

/// Renders one frame into `dir`: layer sub-directories, the composited
/// buffers and, with a light, relit.png.
inline std::vector<fs::path> render_to_dir(const CityLayout &layout, const InstanceMap &instances,
                                           std::span<const VehicleState> vehicles, const Camera &camera, const RunConfig &c,
                                           const SceneRenderOptions &opt, const fs::path &dir) {
    const auto profile = render_profile(c.profile);
    const auto stack = render_scene_layers(layout, instances, vehicles, camera, opt, profile);
    const auto frame = compose(stack, opt.render.sky);
    write_layer_stack(dir, stack);
    write_render_outputs(dir, frame);
    if (c.light) {
        ShadingConfig shading;
        shading.light_dir = *c.light;
        shading.ambient = c.ambient;
        const auto rasters = boxes_to_maps(vehicles, layout.width(), layout.height(), layout.semantic.pixel_scale);
        const SceneVolume volume{&layout, &rasters, profile.depth};
        write_png_rgb(dir / "relit.png", to_rgb8(relight(frame, camera, volume.dims(), volume, shading, c.threads)));
    }
    return files_under(dir);
}

inline std::vector<fs::path> stage_render(const RunConfig &c, const fs::path &layout_base, const fs::path &scenario,
                                          const fs::path &dir) {
    const auto layout = load_layout(layout_base);
    const auto instances = instantiate_buildings(layout.semantic);
    const auto vehicles = scenario_frame(load_scenario(scenario), c.frame);
    const auto camera = resolve_camera(c, layout);
    if (fs::exists(dir)) fs::remove_all(dir);
    return render_to_dir(layout, instances, vehicles, camera, c, scene_options(c, render_profile(c.profile)), dir);
}

inline std::vector<fs::path> stage_orbit(const RunConfig &c, const fs::path &layout_base, const fs::path &scenario,
                                         const fs::path &dir) {
    const auto layout = load_layout(layout_base);
    const auto instances = instantiate_buildings(layout.semantic);
    const auto sc = load_scenario(scenario);
    if (sc.frames.empty()) throw DataError("scenario has no frames");
    const double extent = std::max(layout.width(), layout.height());
    const double radius = c.orbit_radius > 0.0 ? c.orbit_radius : 0.75 * extent;
    const double height = c.orbit_height > 0.0 ? c.orbit_height : 0.45 * extent;
    const Vec3 center{0.5 * layout.width(), 0.5 * layout.height(), 0.0};
    const auto cams = orbit_cameras(center, radius, height, c.orbit_frames, c.width, c.height);
    const auto profile = render_profile(c.profile);
    if (fs::exists(dir)) fs::remove_all(dir);
    fs::create_directories(dir);
    // Frames are independent; workers take whole frames.
    auto opt = scene_options(c, profile);
    opt.render.threads = 1;
    const int n = static_cast<int>(cams.size());
    const int workers = std::clamp(c.threads, 1, n);
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (int i = w; i < n; i += workers) {
                    const auto &vehicles = sc.frames[static_cast<std::size_t>(i % sc.n_frames())];
                    const auto frame = compose(render_scene_layers(layout, instances, vehicles, cams[static_cast<std::size_t>(i)], opt, profile),
                                               opt.render.sky);
                    char name[32];
                    std::snprintf(name, sizeof(name), "frame_%04d.png", i);
                    write_png_rgb(dir / name, to_rgb8(frame.color));
                }
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    for (auto &t : pool) t.join();
    for (auto &e : errors)
        if (e) std::rethrow_exception(e);
    nlohmann::json cams_json = nlohmann::json::array();
    for (const auto &cam : cams) cams_json.push_back(to_json(cam, center));
    write_json_atomic(dir / "cameras.json", cams_json);
    return files_under(dir);
}

/// Key of a stage: its name, its parameters and its input checksums.
inline std::string stage_key(const std::string &stage, const nlohmann::json &params, const std::vector<fs::path> &inputs) {
    nlohmann::json j{{"stage", stage}, {"params", params}};
    nlohmann::json ins = nlohmann::json::array();
    for (const auto &p : inputs) ins.push_back(fs::exists(p) ? sha256_file(p) : std::string("missing"));
    j["inputs"] = ins;
    return sha256_hex(j.dump());
}

struct StageReport {
    std::string stage;
    bool skipped = false;
    std::vector<fs::path> outputs;
};

/// Runs `body` unless the manifest already records identical inputs and
/// untouched outputs.
template <typename Body>
StageReport run_stage(Manifest &m, const std::string &stage, const nlohmann::json &params, const std::vector<fs::path> &inputs,
                      bool force, Body &&body) {
    const auto key = stage_key(stage, params, inputs);
    StageReport r{stage, false, {}};
    if (!force && m.up_to_date(stage, key)) {
        r.skipped = true;
        return r;
    }
    r.outputs = body();
    m.record(stage, key, r.outputs);
    m.save();
    return r;
}

/// Executes the configured stages in dependency order and writes the
/// manifest.
inline std::vector<StageReport> run_pipeline(const RunConfig &c, const fs::path &manifest_path = {}) {
    static const std::array<const char *, 5> order{"ingest", "hdmap", "simulate", "render", "orbit"};
    Manifest m(manifest_path.empty() ? c.manifest_path() : manifest_path);
    m.data()["config_hash"] = sha256_hex(config_json(c).dump());
    m.data()["seeds"] = seeds_json(c);
    std::vector<StageReport> reports;
    const auto cfg = config_json(c);
    auto wanted = [&](const char *s) { return std::find(c.stages.begin(), c.stages.end(), s) != c.stages.end(); };
    const auto layout_files = layout_outputs(c.layout_base());
    std::vector<fs::path> layout_inputs(layout_files.begin(), layout_files.begin() + 3);
    for (const char *stage : order) {
        if (!wanted(stage)) continue;
        const std::string s = stage;
        if (s == "ingest") {
            std::vector<fs::path> inputs;
            if (!c.features.empty()) inputs.push_back(c.features);
            reports.push_back(run_stage(m, s, cfg["ingest"], inputs, c.force, [&] { return stage_ingest(c, c.layout_base()); }));
        } else if (s == "hdmap") {
            reports.push_back(run_stage(m, s, nlohmann::json::object(), layout_inputs, c.force,
                                        [&] { return stage_hdmap(c.layout_base(), c.map_path()); }));
        } else if (s == "simulate") {
            reports.push_back(run_stage(m, s, cfg["simulate"], {c.map_path()}, c.force, [&] {
                return stage_simulate(c.map_path(), c.vehicles, c.frames, c.dt, c.traffic_seed, c.scenario_path());
            }));
        } else if (s == "render") {
            auto inputs = layout_inputs;
            inputs.push_back(c.scenario_path());
            reports.push_back(run_stage(m, s, cfg["render"], inputs, c.force,
                                        [&] { return stage_render(c, c.layout_base(), c.scenario_path(), c.render_dir()); }));
        } else if (s == "orbit") {
            auto inputs = layout_inputs;
            inputs.push_back(c.scenario_path());
            nlohmann::json params = cfg["orbit"];
            params["render"] = cfg["render"];
            reports.push_back(run_stage(m, s, params, inputs, c.force,
                                        [&] { return stage_orbit(c, c.layout_base(), c.scenario_path(), c.orbit_dir()); }));
        }
    }
    m.save();
    return reports;
}

// ---------------------------------------------------------------------------
// Encoder probe.

/// Every encoder output at one point, for cross-implementation checks.
/// `p` is read in normalized [0, 1]^3 coordinates for the hash grid and in
/// [-1, 1] for the periodic encoding.
inline nlohmann::json encode_probe(const Vec3 &p, std::uint64_t seed, std::span<const double> f = {}, const HashGridConfig &cfg = {}) {
    cfg.validate();
    nlohmann::json levels = nlohmann::json::array();
    std::vector<std::int64_t> fq(f.size());
    for (int l = 0; l < cfg.levels; ++l) {
        const double res = cfg.resolution(l);
        for (std::size_t i = 0; i < f.size(); ++i) fq[i] = static_cast<std::int64_t>(std::floor(f[i] * res));
        const std::array<std::int64_t, 3> q{static_cast<std::int64_t>(std::floor(p.x * res)), static_cast<std::int64_t>(std::floor(p.y * res)),
                                            static_cast<std::int64_t>(std::floor(p.z * res))};
        levels.push_back({{"level", l}, {"resolution", res}, {"cell", q}, {"index", hash_index(q, fq, cfg)}});
    }
    const std::array<double, 3> xyz{p.x, p.y, p.z};
    return {{"probe", xyz},
            {"seed", seed},
            {"scene_feature", std::vector<double>(f.begin(), f.end())},
            {"hash_grid",
             {{"levels", cfg.levels}, {"entries", cfg.entries}, {"channels", cfg.channels}, {"primes", cfg.primes},
              {"base_resolution", cfg.base_resolution}, {"per_level_scale", cfg.per_level_scale}}},
            {"corner_cells", levels},
            {"hash_feature", hash_feature(p, f, FeatureTable{seed}, cfg)},
            {"sincos", sincos_encode(xyz, kSinCosLevels)},
            {"vehicle_feature", vehicle_point_feature(p, f)}};
}

// ---------------------------------------------------------------------------
// Edits.

/// Shifts one vehicle in one frame by (dx, dy) cells and rotates it by
/// dyaw degrees.
inline TrafficScenario move_vehicle(TrafficScenario s, int frame, int vehicle, double dx, double dy, double dyaw) {
    auto &f = s.frames.at(static_cast<std::size_t>(std::clamp(frame, 0, std::max(0, s.n_frames() - 1))));
    if (frame < 0 || frame >= s.n_frames()) throw DataError("frame " + std::to_string(frame) + " is not in the scenario");
    for (auto &v : f)
        if (v.id == vehicle) {
            v.center.x += dx;
            v.center.y += dy;
            double yaw = std::fmod(v.yaw + dyaw, 360.0);
            if (yaw <= -180.0) yaw += 360.0;
            if (yaw > 180.0) yaw -= 360.0;
            v.yaw = yaw;
            return s;
        }
    throw DataError("vehicle " + std::to_string(vehicle) + " is not in frame " + std::to_string(frame));
}

/// Sets every column of building `id` to a new height (meters).
inline CityLayout set_building_height(CityLayout layout, std::uint32_t id, double height_m) {
    if (!(height_m > 0.0)) throw ConfigError("building height must be positive");
    const auto inst = instantiate_buildings(layout.semantic);
    if (id == 0 || id > inst.count) throw DataError("building " + std::to_string(id) + " does not exist");
    const int td = meters_to_cells(height_m, layout.semantic.pixel_scale);
    for (int y = 0; y < layout.height(); ++y)
        for (int x = 0; x < layout.width(); ++x)
            if (inst(x, y) == id) layout.set(x, y, layout.semantic(x, y), layout.heights.bottom_up(x, y), std::max<int>(td, layout.heights.bottom_up(x, y)));
    return layout;
}

} // namespace cityforge
