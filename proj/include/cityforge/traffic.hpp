// Copyright Contributors to the cityforge project
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic traffic on an HD map: capped follow-the-leader stepping over
// lanes and junction connectors, vehicle pose conventions (yaw measured from
// the -y axis), canonicalization into the vehicle frame, and rasterization of
// oriented boxes into per-frame semantic/height maps.

#pragma once

#include "cityforge/core.hpp"
#include "cityforge/hdmap.hpp"
#include "cityforge/layout.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace cityforge {

// ---------------------------------------------------------------------------
// Vehicle frame.

/// Rotation from world into the vehicle frame for yaw `theta_deg` and pitch
/// `gamma_deg`.
inline Mat3 rotation_matrix(double theta_deg, double gamma_deg) {
    const double t = deg2rad(theta_deg), g = deg2rad(gamma_deg);
    const double ct = std::cos(t), st = std::sin(t), cg = std::cos(g), sg = std::sin(g);
    Mat3 r;
    r.m = {ct, st, 0.0,
           -st * cg, ct * cg, sg,
           st * sg, -ct * sg, cg};
    return r;
}

/// Yaw in degrees, (-180, 180], of a planar heading measured from -y.
inline double yaw_from_heading(Vec2 h) {
    double deg = rad2deg(std::atan2(h.x, -h.y));
    if (deg <= -180.0) deg += 360.0;
    return deg;
}

/// Unit planar heading for a yaw in degrees.
inline Vec2 heading_from_yaw(double yaw_deg) {
    const double t = deg2rad(yaw_deg);
    return {std::sin(t), -std::cos(t)};
}

struct VehicleState {
    int id = 0;
    Vec3 center;       ///< layout cells
    double yaw = 0.0;  ///< degrees, (-180, 180]
    double pitch = 0.0;
    Vec3 dims{1, 1, 1};  ///< length, width, height in cells
    int lane_id = -1;    ///< lane id, or connector id when on_connector
    bool on_connector = false;
    double arc_pos = 0.0;  ///< meters along the lane or connector
    double speed = 0.0;    ///< m/s

    void validate() const {
        if (!(yaw > -180.0 && yaw <= 180.0)) throw DataError("vehicle yaw must lie in (-180, 180]");
        if (!(pitch > -90.0 && pitch < 90.0)) throw DataError("vehicle pitch must lie in (-90, 90)");
        if (!(dims.x > 0 && dims.y > 0 && dims.z > 0)) throw DataError("vehicle dimensions must be positive");
    }
};

inline Vec3 canonicalize(const Vec3 &p, const VehicleState &v) {
    return rotation_matrix(v.yaw, v.pitch) * (p - v.center);
}

inline Vec3 decanonicalize(const Vec3 &pc, const VehicleState &v) {
    return rotation_matrix(v.yaw, v.pitch).transposed() * pc + v.center;
}

// ---------------------------------------------------------------------------
// Rasterization.

struct TrafficFrameRasters {
    SemanticMap semantic;
    HeightFieldPair heights;
};

/// Oriented footprints as VEHICLE columns; overlaps keep the taller box.
inline TrafficFrameRasters boxes_to_maps(std::span<const VehicleState> frame, int width, int height,
                                         double pixel_scale = kZoom18PixelScale) {
    TrafficFrameRasters out;
    out.semantic.cells = Grid2D<SemanticClass>(width, height, SemanticClass::Null);
    out.semantic.pixel_scale = pixel_scale;
    out.heights.bottom_up = Grid2D<std::uint16_t>(width, height, 0);
    out.heights.top_down = Grid2D<std::uint16_t>(width, height, 0);
    for (const auto &v : frame) {
        const double t = deg2rad(v.yaw);
        const double ct = std::cos(t), st = std::sin(t);
        const double hl = 0.5 * v.dims.x, hw = 0.5 * v.dims.y;
        const double reach = std::hypot(hl, hw) + 1.0;
        const long bu = std::max(0L, std::lround(v.center.z - 0.5 * v.dims.z));
        const long td = std::max(0L, std::lround(v.center.z + 0.5 * v.dims.z));
        const int x0 = std::max(0, static_cast<int>(std::floor(v.center.x - reach)));
        const int x1 = std::min(width - 1, static_cast<int>(std::ceil(v.center.x + reach)));
        const int y0 = std::max(0, static_cast<int>(std::floor(v.center.y - reach)));
        const int y1 = std::min(height - 1, static_cast<int>(std::ceil(v.center.y + reach)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double dx = x + 0.5 - v.center.x, dy = y + 0.5 - v.center.y;
                const double xc = ct * dx + st * dy;   // across the vehicle
                const double yc = -st * dx + ct * dy;  // along the vehicle
                if (std::abs(xc) > hw || std::abs(yc) > hl) continue;
                const bool occupied = out.semantic.cells(x, y) == SemanticClass::Vehicle;
                if (occupied && out.heights.top_down(x, y) >= td) continue;
                out.semantic.cells(x, y) = SemanticClass::Vehicle;
                out.heights.bottom_up(x, y) = static_cast<std::uint16_t>(std::min(bu, 65535L));
                out.heights.top_down(x, y) = static_cast<std::uint16_t>(std::min(td, 65535L));
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Simulation.

struct TrafficOptions {
    double speed_limit = 13.9;  ///< m/s
    double initial_speed = -1.0;  ///< m/s; negative means the speed limit
    double max_accel = 3.0;     ///< m/s^2
    double car_length_m = 4.5;
    double car_width_m = 1.8;
    double car_height_m = 1.5;
    int connector_samples = 48;
};

struct TrafficScenario {
    double dt = 0.1;
    double pixel_scale = kZoom18PixelScale;
    std::vector<std::vector<VehicleState>> frames;

    int n_frames() const { return static_cast<int>(frames.size()); }
};

/// Drivable pieces: every lane followed by every connector.
struct RoadSegment {
    bool connector = false;
    int source_id = 0;           ///< lane or connector id
    std::vector<Vec2> points;    ///< pixels
    std::vector<double> cum_m;   ///< cumulative arc length, meters
    double z0 = 0.0, z1 = 0.0;   ///< road surface at start/end, cells
    std::vector<int> next;       ///< successor segment indices

    double length() const { return cum_m.empty() ? 0.0 : cum_m.back(); }
};

struct SegmentPose {
    Vec2 position;
    Vec2 tangent;
    double surface_z = 0.0;
    double grade = 0.0;  ///< rise over run
};

inline SegmentPose pose_at(const RoadSegment &s, double arc_m, double pixel_scale) {
    SegmentPose p;
    const double len = s.length();
    const double a = std::clamp(arc_m, 0.0, len);
    std::size_t i = static_cast<std::size_t>(std::upper_bound(s.cum_m.begin(), s.cum_m.end(), a) - s.cum_m.begin());
    i = std::clamp<std::size_t>(i, 1, s.points.size() - 1);
    const double seg = s.cum_m[i] - s.cum_m[i - 1];
    const double t = seg > 0.0 ? (a - s.cum_m[i - 1]) / seg : 0.0;
    p.position = s.points[i - 1] + (s.points[i] - s.points[i - 1]) * t;
    p.tangent = normalized(s.points[i] - s.points[i - 1]);
    p.surface_z = len > 0.0 ? s.z0 + (s.z1 - s.z0) * (a / len) : s.z0;
    p.grade = len > 0.0 ? (s.z1 - s.z0) * pixel_scale / len : 0.0;
    return p;
}

inline std::vector<RoadSegment> build_segments(const LaneGraph &g, int connector_samples = 48) {
    std::vector<RoadSegment> segs;
    auto finish = [&](RoadSegment &s) {
        s.cum_m.assign(s.points.size(), 0.0);
        for (std::size_t i = 1; i < s.points.size(); ++i) s.cum_m[i] = s.cum_m[i - 1] + norm(s.points[i] - s.points[i - 1]) * g.pixel_scale;
    };
    for (const auto &l : g.lanes) {
        RoadSegment s;
        s.source_id = l.id;
        s.points = l.points;
        s.z0 = s.z1 = l.surface_z;
        finish(s);
        segs.push_back(std::move(s));
    }
    const int n_lanes = static_cast<int>(g.lanes.size());
    for (const auto &c : g.connectors) {
        RoadSegment s;
        s.connector = true;
        s.source_id = c.id;
        for (int k = 0; k <= connector_samples; ++k) s.points.push_back(bezier_point(c.control, static_cast<double>(k) / connector_samples));
        s.z0 = g.lanes[static_cast<std::size_t>(c.from_lane)].surface_z;
        s.z1 = g.lanes[static_cast<std::size_t>(c.to_lane)].surface_z;
        finish(s);
        segs[static_cast<std::size_t>(c.from_lane)].next.push_back(n_lanes + c.id);
        s.next.push_back(c.to_lane);
        segs.push_back(std::move(s));
    }
    // Loop roads continue onto their own lane; dead ends have no successor.
    for (const auto &l : g.lanes) {
        auto &s = segs[static_cast<std::size_t>(l.id)];
        if (!s.next.empty() || l.to_node < 0) continue;
        if (g.nodes[static_cast<std::size_t>(l.to_node)].kind == NodeKind::Loop && l.from_node == l.to_node) s.next.push_back(l.id);
    }
    return segs;
}

namespace detail {

struct SimVehicle {
    int id = 0;
    int segment = 0;
    double arc = 0.0;
    double speed = 0.0;
    std::vector<int> route;  ///< upcoming segments after `segment`
    std::uint64_t draws = 0;
};

class TrafficSim {
  public:
    TrafficSim(const LaneGraph &g, const TrafficOptions &opt, std::uint64_t seed)
        : graph_(g), opt_(opt), seed_(seed), segs_(build_segments(g, opt.connector_samples)) {}

    const std::vector<RoadSegment> &segments() const { return segs_; }

    /// Spawn slots: per lane, positions 2L apart after a seeded phase.
    std::vector<std::pair<int, double>> slots() const {
        std::vector<std::pair<int, double>> out;
        const double spacing = 2.0 * opt_.car_length_m;
        for (const auto &l : graph_.lanes) {
            const double len = segs_[static_cast<std::size_t>(l.id)].length();
            const int n = static_cast<int>(std::floor(len / spacing));
            if (n <= 0) continue;
            const double slack = len - n * spacing;
            const double phase = slack * unit_double(hash_values(seed_, 0x5107u, static_cast<std::uint64_t>(l.id)));
            for (int k = 0; k < n; ++k) out.push_back({l.id, phase + (k + 0.5) * spacing});
        }
        return out;
    }

    std::vector<SimVehicle> spawn(int n_vehicles) {
        if (n_vehicles < 0) throw ConfigError("vehicle count must be non-negative");
        auto all = slots();
        if (n_vehicles > static_cast<int>(all.size()))
            throw ConfigError("requested " + std::to_string(n_vehicles) + " vehicles but the lane network holds at most " +
                              std::to_string(all.size()) + " (capacity at 2-car-length spacing)");
        Rng rng(hash_values(seed_, 0x5a3au));
        for (std::size_t i = all.size(); i > 1; --i) std::swap(all[i - 1], all[rng.below(i)]);
        std::vector<SimVehicle> vs;
        const double v0 = opt_.initial_speed >= 0.0 ? std::min(opt_.initial_speed, opt_.speed_limit) : opt_.speed_limit;
        for (int i = 0; i < n_vehicles; ++i) {
            SimVehicle v;
            v.id = i;
            v.segment = all[static_cast<std::size_t>(i)].first;
            v.arc = all[static_cast<std::size_t>(i)].second;
            v.speed = v0;
            extend_route(v, 1);
            vs.push_back(std::move(v));
        }
        return vs;
    }

    /// Advances every vehicle by one frame against the previous snapshot.
    std::vector<SimVehicle> step(const std::vector<SimVehicle> &prev, double dt) {
        std::vector<SimVehicle> next = prev;
        const double L = opt_.car_length_m;
        for (std::size_t i = 0; i < prev.size(); ++i) {
            SimVehicle v = prev[i];
            const double desired = std::min(opt_.speed_limit, v.speed + opt_.max_accel * dt);
            const double horizon = desired * dt + 2.0 * L + 1.0;
            extend_route_to(v, horizon);

            // Offsets of each path segment relative to the current one.
            std::vector<int> path{v.segment};
            path.insert(path.end(), v.route.begin(), v.route.end());
            std::vector<double> offset(path.size(), 0.0);
            for (std::size_t k = 1; k < path.size(); ++k)
                offset[k] = offset[k - 1] + segs_[static_cast<std::size_t>(path[k - 1])].length();
            const bool dead_end = v.route.empty() || segs_[static_cast<std::size_t>(path.back())].next.empty();
            double limit = kInf;
            if (dead_end) limit = offset.back() + segs_[static_cast<std::size_t>(path.back())].length();

            // Nearest leader along the path (merging vehicles enter at a
            // virtual position before the start of their next segment).
            for (std::size_t j = 0; j < prev.size(); ++j) {
                if (j == i) continue;
                const auto &o = prev[j];
                for (std::size_t k = 0; k < path.size(); ++k) {
                    double pos = kInf;
                    if (o.segment == path[k]) pos = offset[k] + o.arc;
                    else if (k > 0 && !o.route.empty() && o.route.front() == path[k])
                        pos = offset[k] - (segs_[static_cast<std::size_t>(o.segment)].length() - o.arc);
                    if (pos == kInf) continue;
                    if (pos > v.arc || (pos == v.arc && o.id < v.id)) {
                        limit = std::min(limit, pos - L);
                        break;
                    }
                }
            }
            const double advance = std::clamp(std::min(desired * dt, limit - v.arc), 0.0, kInf);
            v.speed = dt > 0.0 ? advance / dt : 0.0;
            double arc = v.arc + advance;
            while (!v.route.empty() && arc >= segs_[static_cast<std::size_t>(v.segment)].length()) {
                const double len = segs_[static_cast<std::size_t>(v.segment)].length();
                if (arc == len && segs_[static_cast<std::size_t>(v.route.front())].length() > 0.0) break;
                arc -= len;
                v.segment = v.route.front();
                v.route.erase(v.route.begin());
            }
            v.arc = std::min(arc, segs_[static_cast<std::size_t>(v.segment)].length());
            extend_route(v, 1);
            next[i] = std::move(v);
        }
        return next;
    }

    VehicleState state(const SimVehicle &v) const {
        const auto &s = segs_[static_cast<std::size_t>(v.segment)];
        const double ps = graph_.pixel_scale;
        const auto pose = pose_at(s, v.arc, ps);
        VehicleState out;
        out.id = v.id;
        out.dims = {opt_.car_length_m / ps, opt_.car_width_m / ps, opt_.car_height_m / ps};
        out.center = {pose.position.x, pose.position.y, pose.surface_z + 0.5 * out.dims.z};
        out.yaw = yaw_from_heading(pose.tangent);
        out.pitch = rad2deg(std::atan(pose.grade));
        out.on_connector = s.connector;
        out.lane_id = s.source_id;
        out.arc_pos = v.arc;
        out.speed = v.speed;
        return out;
    }

  private:
    void extend_route(SimVehicle &v, std::size_t count) {
        while (v.route.size() < count) {
            const int last = v.route.empty() ? v.segment : v.route.back();
            const auto &nx = segs_[static_cast<std::size_t>(last)].next;
            if (nx.empty()) return;
            const auto pick = Rng(hash_values(seed_, 0x70a7u, static_cast<std::uint64_t>(v.id), v.draws++)).below(nx.size());
            v.route.push_back(nx[pick]);
        }
    }

    void extend_route_to(SimVehicle &v, double distance) {
        double reach = segs_[static_cast<std::size_t>(v.segment)].length() - v.arc;
        for (const int s : v.route) reach += segs_[static_cast<std::size_t>(s)].length();
        while (reach < distance) {
            const std::size_t before = v.route.size();
            extend_route(v, before + 1);
            if (v.route.size() == before) return;
            reach += segs_[static_cast<std::size_t>(v.route.back())].length();
            if (v.route.size() > 64) return;
        }
    }

    const LaneGraph &graph_;
    TrafficOptions opt_;
    std::uint64_t seed_;
    std::vector<RoadSegment> segs_;
};

} // namespace detail

/// Vehicle capacity of a lane graph at 2-car-length spacing.
inline int traffic_capacity(const LaneGraph &g, const TrafficOptions &opt = {}, std::uint64_t seed = 0) {
    return static_cast<int>(detail::TrafficSim(g, opt, seed).slots().size());
}

inline TrafficScenario simulate(const LaneGraph &g, int n_vehicles, int n_frames, double dt, std::uint64_t seed,
                                const TrafficOptions &opt = {}) {
    if (g.lanes.empty()) throw DataError("HD map has no lanes");
    if (n_frames < 1) throw ConfigError("frame count must be at least 1");
    if (!(dt > 0.0)) throw ConfigError("time step must be positive");
    detail::TrafficSim sim(g, opt, seed);
    TrafficScenario sc;
    sc.dt = dt;
    sc.pixel_scale = g.pixel_scale;
    auto vs = sim.spawn(n_vehicles);
    for (int t = 0; t < n_frames; ++t) {
        if (t > 0) vs = sim.step(vs, dt);
        std::vector<VehicleState> frame;
        for (const auto &v : vs) frame.push_back(sim.state(v));
        sc.frames.push_back(std::move(frame));
    }
    return sc;
}

// ---------------------------------------------------------------------------
// JSON.

inline nlohmann::json to_json(const VehicleState &v) {
    return {{"id", v.id},
            {"center", {v.center.x, v.center.y, v.center.z}},
            {"yaw", v.yaw},
            {"pitch", v.pitch},
            {"dims", {v.dims.x, v.dims.y, v.dims.z}},
            {"speed", v.speed},
            {"lane", v.lane_id},
            {"on_connector", v.on_connector},
            {"arc_pos", v.arc_pos}};
}

inline VehicleState vehicle_from_json(const nlohmann::json &j) {
    VehicleState v;
    v.id = j.at("id").get<int>();
    const auto &c = j.at("center");
    v.center = {c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()};
    v.yaw = j.at("yaw").get<double>();
    v.pitch = j.value("pitch", 0.0);
    const auto &d = j.at("dims");
    v.dims = {d.at(0).get<double>(), d.at(1).get<double>(), d.at(2).get<double>()};
    v.speed = j.value("speed", 0.0);
    v.lane_id = j.value("lane", -1);
    v.on_connector = j.value("on_connector", false);
    v.arc_pos = j.value("arc_pos", 0.0);
    v.validate();
    return v;
}

inline nlohmann::json to_json(const TrafficScenario &s) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto &f : s.frames) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto &v : f) arr.push_back(to_json(v));
        frames.push_back(std::move(arr));
    }
    return {{"dt", s.dt}, {"pixel_scale", s.pixel_scale}, {"frames", frames}};
}

inline TrafficScenario scenario_from_json(const nlohmann::json &j) {
    TrafficScenario s;
    try {
        s.dt = j.at("dt").get<double>();
        s.pixel_scale = j.value("pixel_scale", kZoom18PixelScale);
        for (const auto &f : j.at("frames")) {
            std::vector<VehicleState> frame;
            for (const auto &v : f) frame.push_back(vehicle_from_json(v));
            s.frames.push_back(std::move(frame));
        }
    } catch (const nlohmann::json::exception &e) {
        throw DataError(std::string("malformed scenario JSON: ") + e.what());
    }
    return s;
}

} // namespace cityforge
