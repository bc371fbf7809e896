// Copyright Contributors to the cityforge project
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Exit codes: 0 ok, 1 unexpected failure,
// 2 configuration error, 3 missing upstream artifact, 4 bad data.

#include "cityforge/cityforge.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace cf = cityforge;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
    std::string manifest;
    int threads = 1;
    bool force = false;
};

std::optional<cf::Vec3> vec3_or_none(const std::vector<double> &v, const char *what) {
    if (v.empty()) return std::nullopt;
    if (v.size() != 3) throw cf::ConfigError(std::string(what) + " needs three comma-separated numbers");
    return cf::Vec3{v[0], v[1], v[2]};
}

/// Runs a stage, recording it in the manifest when one is given.
template <typename Body>
void run_recorded(const Globals &g, const std::string &stage, const json &params, const std::vector<fs::path> &inputs, Body &&body) {
    if (g.manifest.empty()) {
        body();
        return;
    }
    cf::Manifest m(g.manifest);
    const auto r = cf::run_stage(m, stage, params, inputs, g.force, body);
    if (r.skipped) std::cerr << stage << ": up to date, skipped\n";
}

struct RenderArgs {
    std::string layout, scenario, camera, styles, out;
    int frame = 0;
    std::uint64_t seed = 0;
    std::string profile = "desk";
    int width = 960, height = 540;
    std::vector<double> light;
    double ambient = 0.2;

    cf::RunConfig config(const Globals &g) const {
        cf::RunConfig c;
        c.threads = g.threads;
        c.frame = frame;
        c.style_seed = seed;
        c.profile = profile;
        cf::render_profile(profile);
        c.width = width;
        c.height = height;
        if (!camera.empty()) c.camera = cf::read_json_file(camera, "camera");
        if (!styles.empty()) c.style_overrides = cf::styles_from_json(cf::read_json_file(styles, "edit set-style"));
        if (auto l = vec3_or_none(light, "--light")) c.light = cf::normalized(*l);
        c.ambient = ambient;
        return c;
    }

    std::vector<fs::path> inputs() const {
        auto in = cf::layout_outputs(layout);
        in.pop_back();
        in.push_back(scenario);
        if (!camera.empty()) in.push_back(camera);
        if (!styles.empty()) in.push_back(styles);
        return in;
    }
};

void add_render_options(CLI::App *cmd, RenderArgs &r, bool need_out) {
    cmd->add_option("--layout", r.layout, "layout basename")->required();
    cmd->add_option("--scenario", r.scenario, "scenario JSON")->required();
    cmd->add_option("--camera", r.camera, "camera JSON (default: oblique overview)");
    cmd->add_option("--frame", r.frame, "scenario frame");
    cmd->add_option("--seed", r.seed, "style seed");
    cmd->add_option("--profile", r.profile, "window profile: desk, googleearth, citytopia");
    cmd->add_option("--width", r.width, "image width");
    cmd->add_option("--height", r.height, "image height");
    cmd->add_option("--light", r.light, "light direction x,y,z (enables relit.png)")->delimiter(',');
    cmd->add_option("--ambient", r.ambient, "ambient term for relighting");
    cmd->add_option("--styles", r.styles, "style overrides JSON");
    auto *o = cmd->add_option("--out", r.out, "output directory");
    if (need_out) o->required();
}

void do_render(const Globals &g, const RenderArgs &r) {
    const auto c = r.config(g);
    run_recorded(g, "render", cf::config_json(c)["render"], r.inputs(), [&] { return cf::stage_render(c, r.layout, r.scenario, r.out); });
}

/// Optional re-render attached to edit commands.
struct Rerender {
    std::string layout, scenario, camera, styles, out;
    int frame = 0;
    std::uint64_t seed = 0;
};

void add_rerender_options(CLI::App *cmd, Rerender &r, bool layout, bool scenario, bool styles) {
    if (layout) cmd->add_option("--layout", r.layout, "layout basename for the re-render");
    if (scenario) cmd->add_option("--scenario", r.scenario, "scenario JSON for the re-render");
    if (styles) cmd->add_option("--styles", r.styles, "style overrides for the re-render");
    cmd->add_option("--camera", r.camera, "camera JSON for the re-render");
    cmd->add_option("--render-frame", r.frame, "scenario frame for the re-render");
    cmd->add_option("--render-seed", r.seed, "style seed for the re-render");
    cmd->add_option("--render-out", r.out, "re-render into this directory");
}

void maybe_rerender(const Globals &g, const Rerender &r) {
    if (r.out.empty()) return;
    if (r.layout.empty()) throw cf::ConfigError("re-render needs --layout");
    if (r.scenario.empty()) throw cf::ConfigError("re-render needs --scenario");
    RenderArgs a;
    a.layout = r.layout;
    a.scenario = r.scenario;
    a.camera = r.camera;
    a.styles = r.styles;
    a.frame = r.frame;
    a.seed = r.seed;
    a.out = r.out;
    do_render(g, a);
}

int exit_code_for(const std::exception &e) {
    if (dynamic_cast<const cf::ConfigError *>(&e)) return 2;
    if (dynamic_cast<const cf::DependencyError *>(&e)) return 3;
    if (dynamic_cast<const cf::DataError *>(&e)) return 4;
    return 1;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"cityforge: BEV city layouts to HD maps, traffic and rendered frames"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--manifest", g.manifest, "record outputs in this manifest and skip unchanged stages");
    app.add_option("--threads", g.threads, "worker cap")->check(CLI::PositiveNumber);
    app.add_flag("--force", g.force, "rerun stages even when the manifest says they are current");

    // ingest
    auto *ingest = app.add_subcommand("ingest", "rasterize map features (or the built-in sample city) into a layout");
    std::string features, ingest_out;
    std::vector<double> bbox;
    int zoom = 18, sample_size = 256, sample_buildings = 10;
    std::uint64_t layout_seed = 0;
    ingest->add_option("--features", features, "NDJSON features or OSM XML; omit for the sample city");
    ingest->add_option("--bbox", bbox, "lon0,lat0,lon1,lat1")->delimiter(',');
    ingest->add_option("--zoom", zoom, "Web Mercator zoom");
    ingest->add_option("--seed", layout_seed, "layout seed");
    ingest->add_option("--sample-size", sample_size, "sample city edge length in cells");
    ingest->add_option("--sample-buildings", sample_buildings, "sample city building count");
    ingest->add_option("--out", ingest_out, "output basename")->required();

    // hdmap
    auto *hdmap = app.add_subcommand("hdmap", "derive the HD map from a layout");
    std::string hd_layout, hd_out;
    hdmap->add_option("--layout", hd_layout, "layout basename")->required();
    hdmap->add_option("--out", hd_out, "map JSON")->required();

    // simulate
    auto *simulate = app.add_subcommand("simulate", "simulate traffic on an HD map");
    std::string sim_map, sim_out;
    int vehicles = 5, frames = 10;
    double dt = 0.1;
    std::uint64_t traffic_seed = 0;
    simulate->add_option("--map", sim_map, "map JSON")->required();
    simulate->add_option("--vehicles", vehicles, "vehicle count");
    simulate->add_option("--frames", frames, "frame count");
    simulate->add_option("--dt", dt, "time step in seconds");
    simulate->add_option("--seed", traffic_seed, "traffic seed");
    simulate->add_option("--out", sim_out, "scenario JSON")->required();

    // render
    auto *render = app.add_subcommand("render", "render one composited frame with its layers");
    RenderArgs rargs;
    add_render_options(render, rargs, true);

    // compose
    auto *compose = app.add_subcommand("compose", "re-composite the layers of a render directory");
    std::string comp_in, comp_out;
    compose->add_option("--in", comp_in, "render directory")->required();
    compose->add_option("--out", comp_out, "composited colour PNG")->required();

    // orbit
    auto *orbit = app.add_subcommand("orbit", "render an orbit sequence");
    std::string orb_layout, orb_scenario, orb_out, orb_profile = "desk";
    double radius = 0.0, orb_height = 0.0;
    int orb_frames = 60, orb_w = 480, orb_h = 270;
    std::uint64_t orb_seed = 0;
    orbit->add_option("--layout", orb_layout, "layout basename")->required();
    orbit->add_option("--scenario", orb_scenario, "scenario JSON")->required();
    orbit->add_option("--radius", radius, "orbit radius in cells (default from layout size)");
    orbit->add_option("--height", orb_height, "orbit height in cells (default from layout size)");
    orbit->add_option("--frames", orb_frames, "frame count");
    orbit->add_option("--image-width", orb_w, "image width");
    orbit->add_option("--image-height", orb_h, "image height");
    orbit->add_option("--seed", orb_seed, "style seed");
    orbit->add_option("--profile", orb_profile, "window profile");
    orbit->add_option("--out", orb_out, "output directory")->required();

    // encode
    auto *encode = app.add_subcommand("encode", "print encoder outputs at a probe point as JSON");
    std::vector<double> probe, feature;
    std::uint64_t enc_seed = 0;
    std::string enc_out;
    encode->add_option("--probe", probe, "x,y,z")->delimiter(',')->required();
    encode->add_option("--feature", feature, "scene feature values")->delimiter(',');
    encode->add_option("--seed", enc_seed, "feature table seed");
    encode->add_option("--out", enc_out, "write JSON here instead of stdout");

    // edit
    auto *edit = app.add_subcommand("edit", "localized scene edits, optionally re-rendered");
    edit->require_subcommand(1);
    auto *mv = edit->add_subcommand("move-vehicle", "move and rotate one vehicle in one frame");
    std::string mv_scenario, mv_out;
    int mv_frame = 0, mv_vehicle = 0;
    double mv_dx = 0, mv_dy = 0, mv_dyaw = 0;
    Rerender mv_rr;
    mv->add_option("--scenario", mv_scenario, "input scenario JSON")->required();
    mv->add_option("--frame", mv_frame, "frame index");
    mv->add_option("--vehicle", mv_vehicle, "vehicle id")->required();
    mv->add_option("--dx", mv_dx, "shift along x in cells");
    mv->add_option("--dy", mv_dy, "shift along y in cells");
    mv->add_option("--dyaw", mv_dyaw, "yaw change in degrees");
    mv->add_option("--out", mv_out, "edited scenario JSON")->required();
    add_rerender_options(mv, mv_rr, true, false, true);

    auto *ss = edit->add_subcommand("set-style", "pin the style seed of one building or vehicle instance");
    std::string ss_in, ss_out;
    std::uint32_t ss_instance = 0;
    std::uint64_t ss_style = 0;
    Rerender ss_rr;
    ss->add_option("--styles", ss_in, "existing style overrides to extend");
    ss->add_option("--instance", ss_instance, "building id, or 32768 + vehicle id")->required();
    ss->add_option("--style", ss_style, "style seed")->required();
    ss->add_option("--out", ss_out, "style overrides JSON")->required();
    add_rerender_options(ss, ss_rr, true, true, false);

    auto *sh = edit->add_subcommand("set-height", "set the height of one building");
    std::string sh_layout, sh_out;
    std::uint32_t sh_building = 0;
    double sh_height = 0.0;
    Rerender sh_rr;
    sh->add_option("--layout", sh_layout, "input layout basename")->required();
    sh->add_option("--building", sh_building, "building id")->required();
    sh->add_option("--height-m", sh_height, "new height in meters")->required();
    sh->add_option("--out", sh_out, "edited layout basename")->required();
    add_rerender_options(sh, sh_rr, false, true, true);

    // run
    auto *run = app.add_subcommand("run", "run the configured stages end to end");
    std::string run_config, run_out;
    std::vector<std::string> run_stages;
    std::optional<std::uint64_t> run_seed;
    run->add_option("--config", run_config, "JSON config")->required();
    run->add_option("--output-dir", run_out, "override output_dir");
    run->add_option("--stages", run_stages, "override stage list")->delimiter(',');
    run->add_option("--seed", run_seed, "override every seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*ingest) {
            cf::RunConfig c;
            c.features = features;
            if (!features.empty()) {
                if (bbox.size() != 4) throw cf::ConfigError("--bbox needs lon0,lat0,lon1,lat1 when --features is given");
                std::copy(bbox.begin(), bbox.end(), c.bbox.begin());
            }
            c.zoom = zoom;
            c.layout_seed = layout_seed;
            c.sample_size = sample_size;
            c.sample_buildings = sample_buildings;
            std::vector<fs::path> inputs;
            if (!features.empty()) inputs.push_back(features);
            run_recorded(g, "ingest", cf::config_json(c)["ingest"], inputs, [&] { return cf::stage_ingest(c, ingest_out); });
        } else if (*hdmap) {
            auto in = cf::layout_outputs(hd_layout);
            in.pop_back();
            run_recorded(g, "hdmap", json::object(), in, [&] { return cf::stage_hdmap(hd_layout, hd_out); });
        } else if (*simulate) {
            const json params{{"vehicles", vehicles}, {"frames", frames}, {"dt", dt}, {"seed", traffic_seed}};
            run_recorded(g, "simulate", params, {sim_map},
                         [&] { return cf::stage_simulate(sim_map, vehicles, frames, dt, traffic_seed, sim_out); });
        } else if (*render) {
            do_render(g, rargs);
        } else if (*compose) {
            run_recorded(g, "compose", json::object(), cf::files_under(fs::path(comp_in) / "layers"), [&] {
                const auto frame = cf::compose(cf::read_layer_stack(comp_in));
                cf::write_png_rgb(comp_out, cf::to_rgb8(frame.color));
                return std::vector<fs::path>{comp_out};
            });
        } else if (*orbit) {
            cf::RunConfig c;
            c.threads = g.threads;
            c.orbit_radius = radius;
            c.orbit_height = orb_height;
            c.orbit_frames = orb_frames;
            c.width = orb_w;
            c.height = orb_h;
            c.style_seed = orb_seed;
            c.profile = orb_profile;
            cf::render_profile(orb_profile);
            auto in = cf::layout_outputs(orb_layout);
            in.back() = orb_scenario;
            json params = cf::config_json(c)["orbit"];
            params["render"] = cf::config_json(c)["render"];
            run_recorded(g, "orbit", params, in, [&] { return cf::stage_orbit(c, orb_layout, orb_scenario, orb_out); });
        } else if (*encode) {
            const auto p = vec3_or_none(probe, "--probe");
            const auto j = cf::encode_probe(*p, enc_seed, feature);
            if (enc_out.empty()) {
                std::cout << j.dump(1) << "\n";
            } else {
                run_recorded(g, "encode", {{"probe", probe}, {"feature", feature}, {"seed", enc_seed}}, {}, [&] {
                    cf::write_json_atomic(enc_out, j);
                    return std::vector<fs::path>{enc_out};
                });
            }
        } else if (*edit) {
            if (*mv) {
                run_recorded(g, "edit-move-vehicle",
                             {{"frame", mv_frame}, {"vehicle", mv_vehicle}, {"dx", mv_dx}, {"dy", mv_dy}, {"dyaw", mv_dyaw}}, {mv_scenario}, [&] {
                                 const auto s = cf::move_vehicle(cf::load_scenario(mv_scenario), mv_frame, mv_vehicle, mv_dx, mv_dy, mv_dyaw);
                                 cf::write_json_atomic(mv_out, cf::to_json(s));
                                 return std::vector<fs::path>{mv_out};
                             });
                mv_rr.scenario = mv_out;
                maybe_rerender(g, mv_rr);
            } else if (*ss) {
                std::vector<fs::path> in;
                if (!ss_in.empty()) in.push_back(ss_in);
                run_recorded(g, "edit-set-style", {{"instance", ss_instance}, {"style", ss_style}}, in, [&] {
                    std::vector<std::pair<std::uint32_t, std::uint64_t>> styles;
                    if (!ss_in.empty()) styles = cf::styles_from_json(cf::read_json_file(ss_in, "edit set-style"));
                    cf::write_json_atomic(ss_out, cf::styles_to_json(cf::set_style(styles, ss_instance, ss_style)));
                    return std::vector<fs::path>{ss_out};
                });
                ss_rr.styles = ss_out;
                maybe_rerender(g, ss_rr);
            } else if (*sh) {
                auto in = cf::layout_outputs(sh_layout);
                in.pop_back();
                run_recorded(g, "edit-set-height", {{"building", sh_building}, {"height_m", sh_height}}, in, [&] {
                    const auto edited = cf::set_building_height(cf::load_layout(sh_layout), sh_building, sh_height);
                    cf::save_layout(sh_out, edited);
                    cf::save_instances(sh_out + ".inst.png", cf::instantiate_buildings(edited.semantic));
                    return cf::layout_outputs(sh_out);
                });
                sh_rr.layout = sh_out;
                maybe_rerender(g, sh_rr);
            }
        } else if (*run) {
            auto c = cf::load_config(run_config);
            if (!run_out.empty()) c.output_dir = run_out;
            if (!run_stages.empty()) c.stages = run_stages;
            if (run_seed) c.layout_seed = c.traffic_seed = c.style_seed = *run_seed;
            if (app.count("--threads")) c.threads = g.threads;
            c.force = c.force || g.force;
            const auto reports = cf::run_pipeline(c, g.manifest);
            for (const auto &r : reports)
                std::cerr << r.stage << ": " << (r.skipped ? "up to date, skipped" : std::to_string(r.outputs.size()) + " outputs") << "\n";
        }
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return 0;
}
