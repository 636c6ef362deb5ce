#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "heat/binio.hpp"
#include "heat/config.hpp"
#include "heat/geometry.hpp"
#include "heat/matrix.hpp"
#include "heat/rng.hpp"

namespace heat {

constexpr double kDt = 0.5;        // 2 Hz everywhere
constexpr double kWheelbase = 2.7;  // meters
constexpr double kEgoLength = 4.5;
constexpr double kEgoWidth = 2.0;

// The six scripted maneuvers. The generator stratifies episodes across them;
// the label is hidden from models and used only for evaluation.
enum class Behavior : int {
  kStraight = 0,
  kLeftTurn = 1,
  kRightTurn = 2,
  kDecelStop = 3,
  kLaneChangeLeft = 4,
  kLaneChangeRight = 5,
};
constexpr int kNumBehaviors = 6;

inline const char* behavior_name(Behavior b) {
  switch (b) {
    case Behavior::kStraight: return "straight";
    case Behavior::kLeftTurn: return "left_turn";
    case Behavior::kRightTurn: return "right_turn";
    case Behavior::kDecelStop: return "decel_stop";
    case Behavior::kLaneChangeLeft: return "lane_change_left";
    case Behavior::kLaneChangeRight: return "lane_change_right";
  }
  return "?";
}

struct DomainSpec {
  int domain_id = 0;
  int num_views = 8;
  std::array<double, 3> gain = {1.0, 1.0, 1.0};
  double noise_sigma = 0.0;
  int palette_id = 0;
  double native_rate_hz = 2.0;
};

struct EgoState {
  double x = 0, y = 0;
  double heading = 0;  // wrapped to (-pi, pi]
  double speed = 0;    // >= 0
};

struct AgentState {
  int agent_id = 0;
  double x = 0, y = 0;
  double heading = 0;
  double speed = 0;
  double length = 4.5, width = 2.0;  // footprint, strictly positive
};

// Scripted per-step agent track at 2 Hz.
struct AgentTrack {
  int agent_id = 0;
  double length = 4.5, width = 2.0;
  std::vector<AgentState> states;  // one per frame index
};

struct Scene {
  Polygon drivable_area;
  std::vector<Polyline> lane_centerlines;
  Polyline route;  // reference centerline of the ego maneuver
  std::vector<AgentTrack> agents;
};

struct Waypoint {
  double x = 0, y = 0, heading = 0;
};

struct Frame {
  int t = 0;
  EgoState ego;
  std::vector<AgentState> agents;
  // k_max x (C*H*W), row per view, values in [0, 1]; rows >= num_views zero
  Matf observation;
};

struct Sample {
  std::int64_t sample_id = 0;
  int domain_id = 0;
  const Frame* frame_t = nullptr;
  const Frame* frame_t1 = nullptr;
  std::vector<Waypoint> gt_waypoints;  // length exactly T, ego frame at t
  int behavior_label = 0;
  std::int64_t episode_id = 0;
  int frame_index = 0;
};

struct Episode {
  std::int64_t episode_id = 0;
  int domain_id = 0;
  int behavior = 0;
  std::uint64_t seed = 0;
  Scene scene;
  std::vector<Frame> frames;
};

struct OutOfSceneError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Domain specs
// ---------------------------------------------------------------------------

// Domain 0 mirrors a 6-view sensor rig padded with blanks; the rest use the
// full view budget. Styles are pairwise distinct by construction.
inline std::vector<DomainSpec> make_domain_specs(int n_domains, std::uint64_t seed,
                                                 int k_max = 8, double noise_scale = 1.0) {
  if (n_domains < 1) throw InvalidArgument("make_domain_specs: n_domains must be >= 1");
  std::vector<DomainSpec> specs;
  for (int d = 0; d < n_domains; ++d) {
    Rng rng(seed, "domain_style", static_cast<std::uint64_t>(d));
    DomainSpec s;
    s.domain_id = d;
    s.num_views = std::min(d == 0 ? 6 : 8, k_max);
    for (int c = 0; c < 3; ++c) {
      s.gain[static_cast<std::size_t>(c)] = 0.4 + 0.3 * d + 0.25 * rng.uniform();
    }
    s.noise_sigma = noise_scale * (0.04 + 0.01 * rng.uniform());
    s.palette_id = d % 3;
    s.native_rate_hz = 2.0;
    specs.push_back(s);
  }
  return specs;
}

// ---------------------------------------------------------------------------
// Kinematics
// ---------------------------------------------------------------------------

// One kinematic bicycle step: accel and steering held for dt.
inline EgoState bicycle_step(const EgoState& s, double accel, double steer, double dt = kDt) {
  EgoState n;
  n.x = s.x + s.speed * std::cos(s.heading) * dt;
  n.y = s.y + s.speed * std::sin(s.heading) * dt;
  n.heading = wrap_angle(s.heading + s.speed / kWheelbase * std::tan(steer) * dt);
  n.speed = std::max(0.0, s.speed + accel * dt);
  return n;
}

struct ControlSchedule {
  std::vector<double> accel;
  std::vector<double> steer;
};

// Scripted controls per behavior. Steer angles are chosen for a target yaw
// rate at the given speed.
inline ControlSchedule behavior_controls(Behavior b, int n_steps, double v0) {
  ControlSchedule cs;
  cs.accel.assign(static_cast<std::size_t>(n_steps), 0.0);
  cs.steer.assign(static_cast<std::size_t>(n_steps), 0.0);
  auto steer_for_yaw_rate = [v0](double omega) {
    return std::atan(omega * kWheelbase / std::max(v0, 0.5));
  };
  switch (b) {
    case Behavior::kStraight:
      break;
    case Behavior::kLeftTurn:
      std::fill(cs.steer.begin(), cs.steer.end(), steer_for_yaw_rate(0.15));
      break;
    case Behavior::kRightTurn:
      std::fill(cs.steer.begin(), cs.steer.end(), steer_for_yaw_rate(-0.15));
      break;
    case Behavior::kDecelStop: {
      double total_time = n_steps * kDt;
      double a = -v0 / (0.6 * total_time);
      std::fill(cs.accel.begin(), cs.accel.end(), a);
      break;
    }
    case Behavior::kLaneChangeLeft:
    case Behavior::kLaneChangeRight: {
      double sign = (b == Behavior::kLaneChangeLeft) ? 1.0 : -1.0;
      int q = std::max(1, n_steps / 4);
      double d0 = steer_for_yaw_rate(sign * 0.22);
      for (int k = 0; k < n_steps; ++k) {
        if (k < q) cs.steer[static_cast<std::size_t>(k)] = d0;
        else if (k < 2 * q) cs.steer[static_cast<std::size_t>(k)] = -d0;
      }
      break;
    }
  }
  return cs;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

constexpr double kViewRange = 20.0;   // side of the square window per view (m)
constexpr double kViewForward = 9.0;  // window center distance along the view azimuth

// Per-palette channel permutation and offset applied before gain/noise.
inline void apply_palette(int palette_id, double base[3]) {
  double r = base[0], g = base[1], bl = base[2];
  switch (palette_id % 3) {
    case 0:
      break;
    case 1:
      base[0] = g;
      base[1] = bl;
      base[2] = r;
      base[0] += 0.05;
      break;
    case 2:
      base[0] = bl;
      base[1] = r;
      base[2] = g;
      base[2] += 0.08;
      break;
  }
}

// Rasterizes the k_max top-down views around the ego. View v looks along
// azimuth 2*pi*v/num_views in the ego frame. Channels before styling:
//   0: drivable-area mask, 1: lane proximity, 2: agent footprints.
inline Matf render_observation(const Scene& scene, const EgoState& ego, const DomainSpec& spec,
                               const ModelConfig& mc, const std::vector<AgentState>& agents,
                               Rng& noise_rng) {
  // scene bounds: drivable bounding box inflated by 5 m
  double minx = 1e300, maxx = -1e300, miny = 1e300, maxy = -1e300;
  for (const Vec2& p : scene.drivable_area) {
    minx = std::min(minx, p.x);
    maxx = std::max(maxx, p.x);
    miny = std::min(miny, p.y);
    maxy = std::max(maxy, p.y);
  }
  if (ego.x < minx - 5 || ego.x > maxx + 5 || ego.y < miny - 5 || ego.y > maxy + 5) {
    throw OutOfSceneError("ego outside scene bounds");
  }

  const int C = mc.img_c, H = mc.img_h, W = mc.img_w;
  Matf obs = Matf::Zero(mc.k_max, C * H * W);
  int num_views = std::min(spec.num_views, mc.k_max);

  std::vector<OrientedBox> agent_boxes;
  for (const AgentState& a : agents) {
    agent_boxes.push_back({{a.x, a.y}, a.heading, a.length, a.width});
  }

  for (int v = 0; v < num_views; ++v) {
    double azimuth = 2.0 * kPi * v / num_views;
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        // pixel -> view window local coords (forward along azimuth, left)
        double fx = kViewForward - kViewRange / 2.0 + (i + 0.5) / H * kViewRange;
        double fy = kViewRange / 2.0 - (j + 0.5) / W * kViewRange;
        Vec2 ego_local = rotate({fx, fy}, azimuth);
        Vec2 world = local_to_world(ego_local, {ego.x, ego.y}, ego.heading);

        double base[3] = {0.0, 0.0, 0.0};
        base[0] = point_in_polygon(world, scene.drivable_area) ? 0.8 : 0.1;
        double lane_d = 1e300;
        for (const Polyline& lane : scene.lane_centerlines) {
          lane_d = std::min(lane_d, distance_to_polyline(world, lane));
        }
        base[1] = std::exp(-0.5 * lane_d * lane_d / (1.2 * 1.2));
        for (const OrientedBox& box : agent_boxes) {
          Vec2 local = world_to_local(world, box.center, box.heading);
          if (std::abs(local.x) <= box.length / 2 && std::abs(local.y) <= box.width / 2) {
            base[2] = 1.0;
            break;
          }
        }
        apply_palette(spec.palette_id, base);
        for (int c = 0; c < std::min(C, 3); ++c) {
          double val = spec.gain[static_cast<std::size_t>(c)] * base[c];
          if (spec.noise_sigma > 0) val += spec.noise_sigma * noise_rng.normal();
          obs(v, (c * H + i) * W + j) = static_cast<float>(std::clamp(val, 0.0, 1.0));
        }
      }
    }
  }
  return obs;
}

// ---------------------------------------------------------------------------
// Episode simulation
// ---------------------------------------------------------------------------

inline Episode simulate_episode(const DomainSpec& spec, Behavior behavior, std::uint64_t seed,
                                const RunConfig& cfg, std::int64_t episode_id = 0) {
  int bi = static_cast<int>(behavior);
  if (bi < 0 || bi >= kNumBehaviors) throw InvalidArgument("simulate_episode: unknown behavior");
  cfg.validate();

  Rng rng(seed, "episode");
  int n = cfg.episode_len;
  double v0 = cfg.base_speed + cfg.speed_jitter * rng.uniform(-1.0, 1.0);

  EgoState ego;
  ego.x = rng.uniform(-2.0, 2.0);
  ego.y = rng.uniform(-2.0, 2.0);
  ego.heading = wrap_angle(rng.uniform(-kPi, kPi));
  ego.speed = v0;

  ControlSchedule cs = behavior_controls(behavior, n, v0);
  std::vector<EgoState> ego_states;
  ego_states.push_back(ego);
  for (int k = 0; k + 1 < n; ++k) {
    ego_states.push_back(bicycle_step(ego_states.back(), cs.accel[static_cast<std::size_t>(k)],
                                      cs.steer[static_cast<std::size_t>(k)]));
  }

  Episode ep;
  ep.episode_id = episode_id;
  ep.domain_id = spec.domain_id;
  ep.behavior = bi;
  ep.seed = seed;

  // Route = traced ego centerline extended one segment forward; the corridor
  // around it is the drivable area, so the maneuver is visible in channel 0.
  Polyline route;
  for (const EgoState& s : ego_states) route.push_back({s.x, s.y});
  {
    // Extend past the ego nose so a vehicle stopped at the route end still
    // sits fully inside the corridor.
    const EgoState& last = ego_states.back();
    double ext = std::max(last.speed, 1.0) * kDt * 2.0 + kEgoLength;
    route.push_back({last.x + ext * std::cos(last.heading), last.y + ext * std::sin(last.heading)});
  }
  // Back-extend so the rear views see corridor too.
  {
    const EgoState& first = ego_states.front();
    double ext = std::max(first.speed, 1.0) * kDt * 4.0 + kEgoLength;
    route.insert(route.begin(), {first.x - ext * std::cos(first.heading),
                                 first.y - ext * std::sin(first.heading)});
  }
  ep.scene.route = Polyline(route.begin() + 1, route.end());
  ep.scene.drivable_area = corridor_polygon(route, cfg.corridor_half_width);
  ep.scene.lane_centerlines.push_back(ep.scene.route);

  // Agents follow lateral offsets of the route at constant speed.
  double route_len = polyline_length(ep.scene.route);
  auto route_point = [&](double s, Vec2* tangent) {
    const Polyline& r = ep.scene.route;
    double acc = 0;
    for (std::size_t i = 1; i < r.size(); ++i) {
      double seg = (r[i] - r[i - 1]).norm();
      if (acc + seg >= s || i + 1 == r.size()) {
        double t = seg > 0 ? std::clamp((s - acc) / seg, 0.0, 1.0) : 0.0;
        Vec2 dir = r[i] - r[i - 1];
        double dl = dir.norm();
        if (dl > 1e-9) dir = dir * (1.0 / dl);
        if (tangent) *tangent = dir;
        return r[i - 1] + (r[i] - r[i - 1]) * t;
      }
      acc += seg;
    }
    if (tangent) *tangent = {1, 0};
    return r.back();
  };
  for (int a = 0; a < cfg.agents_per_scene; ++a) {
    AgentTrack track;
    track.agent_id = a;
    track.length = 4.2;
    track.width = 1.8;
    double lateral = (a % 2 == 0 ? 1.0 : -1.0) * 4.0;
    double s0 = rng.uniform(0.15, 0.5) * route_len;
    double va = rng.uniform(0.8, 1.8);
    for (int t = 0; t < n; ++t) {
      Vec2 tangent;
      Vec2 p = route_point(s0 + va * t * kDt, &tangent);
      Vec2 normal{-tangent.y, tangent.x};
      AgentState st;
      st.agent_id = a;
      Vec2 pos = p + normal * lateral;
      st.x = pos.x;
      st.y = pos.y;
      st.heading = wrap_angle(std::atan2(tangent.y, tangent.x));
      st.speed = va;
      st.length = track.length;
      st.width = track.width;
      track.states.push_back(st);
    }
    ep.scene.agents.push_back(std::move(track));
  }

  for (int t = 0; t < n; ++t) {
    Frame f;
    f.t = t;
    f.ego = ego_states[static_cast<std::size_t>(t)];
    for (const AgentTrack& tr : ep.scene.agents) {
      f.agents.push_back(tr.states[static_cast<std::size_t>(t)]);
    }
    Rng noise_rng(seed, "render", static_cast<std::uint64_t>(t));
    f.observation = render_observation(ep.scene, f.ego, spec, cfg.model, f.agents, noise_rng);
    ep.frames.push_back(std::move(f));
  }
  return ep;
}

// ---------------------------------------------------------------------------
// Sample extraction
// ---------------------------------------------------------------------------

// Future ego poses at t+1..t+T expressed in the ego frame at t.
inline std::vector<Waypoint> future_waypoints(const std::vector<EgoState>& states, int t, int T) {
  const EgoState& ref = states[static_cast<std::size_t>(t)];
  std::vector<Waypoint> out;
  for (int i = 1; i <= T; ++i) {
    const EgoState& fut = states[static_cast<std::size_t>(t + i)];
    Vec2 local = world_to_local({fut.x, fut.y}, {ref.x, ref.y}, ref.heading);
    out.push_back({local.x, local.y, wrap_angle(fut.heading - ref.heading)});
  }
  return out;
}

inline std::vector<Sample> extract_samples(const Episode& ep, int T) {
  std::vector<Sample> out;
  int n = static_cast<int>(ep.frames.size());
  if (n < T + 2) return out;
  std::vector<EgoState> states;
  for (const Frame& f : ep.frames) states.push_back(f.ego);
  for (int t = 0; t + T < n; ++t) {
    Sample s;
    s.sample_id = ep.episode_id * 10000 + t;
    s.domain_id = ep.domain_id;
    s.frame_t = &ep.frames[static_cast<std::size_t>(t)];
    s.frame_t1 = &ep.frames[static_cast<std::size_t>(t + 1)];
    s.gt_waypoints = future_waypoints(states, t, T);
    s.behavior_label = ep.behavior;
    s.episode_id = ep.episode_id;
    s.frame_index = t;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset directory I/O
// ---------------------------------------------------------------------------

inline json scene_to_json(const Scene& sc) {
  auto poly_to_json = [](const Polyline& pl) {
    json arr = json::array();
    for (const Vec2& p : pl) arr.push_back({p.x, p.y});
    return arr;
  };
  json agents = json::array();
  for (const AgentTrack& tr : sc.agents) {
    agents.push_back(
        {{"agent_id", tr.agent_id}, {"length", tr.length}, {"width", tr.width}});
  }
  json lanes = json::array();
  for (const Polyline& l : sc.lane_centerlines) lanes.push_back(poly_to_json(l));
  return {{"drivable_area", poly_to_json(sc.drivable_area)},
          {"lane_centerlines", lanes},
          {"route", poly_to_json(sc.route)},
          {"agents", agents}};
}

inline void scene_from_json(const json& j, Scene* sc) {
  auto poly_from_json = [](const json& arr) {
    Polyline pl;
    for (const auto& p : arr) pl.push_back({p[0].get<double>(), p[1].get<double>()});
    return pl;
  };
  sc->drivable_area = poly_from_json(j.at("drivable_area"));
  sc->route = poly_from_json(j.at("route"));
  for (const auto& l : j.at("lane_centerlines")) sc->lane_centerlines.push_back(poly_from_json(l));
  for (const auto& a : j.at("agents")) {
    AgentTrack tr;
    tr.agent_id = a.at("agent_id").get<int>();
    tr.length = a.at("length").get<double>();
    tr.width = a.at("width").get<double>();
    sc->agents.push_back(tr);
  }
}

// Record file: one JSON header line (shapes, dtypes, field order, scene
// metadata) + row-major little-endian f32 arrays in header-declared order:
// observations [frames, k_max, C*H*W], ego_states [frames, 4],
// agent_states [frames, n_agents, 4].
inline std::string episode_record_bytes(const Episode& ep, const ModelConfig& mc) {
  int n = static_cast<int>(ep.frames.size());
  int n_agents = static_cast<int>(ep.scene.agents.size());
  json header = {
      {"schema_version", 1},
      {"episode_id", ep.episode_id},
      {"domain_id", ep.domain_id},
      {"behavior", ep.behavior},
      {"seed", ep.seed},
      {"dtype", "f32le"},
      {"field_order", json::array({"observations", "ego_states", "agent_states"})},
      {"shapes",
       {{"observations", {n, mc.k_max, mc.img_c * mc.img_h * mc.img_w}},
        {"ego_states", {n, 4}},
        {"agent_states", {n, n_agents, 4}}}},
      {"scene", scene_to_json(ep.scene)}};
  std::vector<char> payload;
  for (const Frame& f : ep.frames) append_mat_f32(payload, f.observation);
  for (const Frame& f : ep.frames) {
    float e[4] = {static_cast<float>(f.ego.x), static_cast<float>(f.ego.y),
                  static_cast<float>(f.ego.heading), static_cast<float>(f.ego.speed)};
    append_f32(payload, e, 4);
  }
  for (const Frame& f : ep.frames) {
    for (const AgentState& a : f.agents) {
      float e[4] = {static_cast<float>(a.x), static_cast<float>(a.y),
                    static_cast<float>(a.heading), static_cast<float>(a.speed)};
      append_f32(payload, e, 4);
    }
  }
  std::string out = header.dump();
  out.push_back('\n');
  out.append(payload.begin(), payload.end());
  return out;
}

inline Episode episode_from_record(const std::filesystem::path& path) {
  HeaderAndPayload hp = read_header_file(path);
  const json& h = hp.header;
  Episode ep;
  ep.episode_id = h.at("episode_id").get<std::int64_t>();
  ep.domain_id = h.at("domain_id").get<int>();
  ep.behavior = h.at("behavior").get<int>();
  ep.seed = h.at("seed").get<std::uint64_t>();
  scene_from_json(h.at("scene"), &ep.scene);
  auto shp = h.at("shapes");
  int n = shp.at("observations")[0].get<int>();
  int k_max = shp.at("observations")[1].get<int>();
  int pix = shp.at("observations")[2].get<int>();
  int n_agents = shp.at("agent_states")[1].get<int>();
  std::size_t off = 0;
  std::vector<Matf> obs;
  for (int t = 0; t < n; ++t) obs.push_back(read_mat_f32<float>(hp.payload, off, k_max, pix));
  std::vector<std::array<float, 4>> egos(static_cast<std::size_t>(n));
  for (auto& e : egos) read_f32(hp.payload, off, e.data(), 4);
  std::vector<std::vector<std::array<float, 4>>> ags(static_cast<std::size_t>(n));
  for (auto& row : ags) {
    row.resize(static_cast<std::size_t>(n_agents));
    for (auto& a : row) read_f32(hp.payload, off, a.data(), 4);
  }
  for (auto& tr : ep.scene.agents) tr.states.clear();
  for (int t = 0; t < n; ++t) {
    Frame f;
    f.t = t;
    const auto& e = egos[static_cast<std::size_t>(t)];
    f.ego = {e[0], e[1], e[2], e[3]};
    for (int a = 0; a < n_agents; ++a) {
      const auto& av = ags[static_cast<std::size_t>(t)][static_cast<std::size_t>(a)];
      AgentTrack& tr = ep.scene.agents[static_cast<std::size_t>(a)];
      AgentState st;
      st.agent_id = tr.agent_id;
      st.x = av[0];
      st.y = av[1];
      st.heading = av[2];
      st.speed = av[3];
      st.length = tr.length;
      st.width = tr.width;
      f.agents.push_back(st);
      tr.states.push_back(st);
    }
    f.observation = std::move(obs[static_cast<std::size_t>(t)]);
    ep.frames.push_back(std::move(f));
  }
  return ep;
}

struct DatasetManifestEntry {
  std::int64_t episode_id;
  int domain_id;
  int behavior;
  std::string file;
  std::string sha256;
};

struct Dataset {
  RunConfig config;
  std::uint64_t seed = 0;
  std::vector<Episode> episodes;
};

// Generates the full heterogeneous dataset and writes it to `dir`.
// Deterministic function of (config, seed): every episode derives all its
// randomness from its own derived seed.
inline Dataset generate_dataset(const RunConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Dataset ds;
  ds.config = cfg;
  ds.seed = seed;
  std::vector<DomainSpec> specs =
      make_domain_specs(cfg.n_domains, seed, cfg.model.k_max, cfg.obs_noise_scale);
  std::int64_t eid = 0;
  for (int d = 0; d < cfg.n_domains; ++d) {
    for (int e = 0; e < cfg.episodes_per_domain; ++e) {
      Behavior b = static_cast<Behavior>(e % kNumBehaviors);  // stratified
      Rng seed_rng(seed, "data", static_cast<std::uint64_t>(eid));
      std::uint64_t ep_seed = seed_rng.next_u64();
      ds.episodes.push_back(
          simulate_episode(specs[static_cast<std::size_t>(d)], b, ep_seed, cfg, eid));
      ++eid;
    }
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json episodes = json::array();
  for (const Episode& ep : ds.episodes) {
    std::string rec = episode_record_bytes(ep, ds.config.model);
    std::string fname = "episode_" + std::to_string(ep.episode_id) + ".bin";
    std::ofstream out(dir / fname, std::ios::binary);
    out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
    if (!out) throw std::runtime_error("dataset record write failed");
    episodes.push_back({{"episode_id", ep.episode_id},
                        {"domain_id", ep.domain_id},
                        {"behavior", ep.behavior},
                        {"file", fname},
                        {"sha256", sha256_hex(rec)}});
  }
  json manifest = {{"schema_version", 1},
                   {"config", ds.config},
                   {"config_hash", config_hash(ds.config)},
                   {"seed", ds.seed},
                   {"n_domains", ds.config.n_domains},
                   {"episodes", episodes}};
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error("manifest write failed");
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("missing manifest: " + (dir / "manifest.json").string());
  json manifest = json::parse(in);
  Dataset ds;
  ds.config = manifest.at("config").get<RunConfig>();
  ds.seed = manifest.at("seed").get<std::uint64_t>();
  for (const auto& e : manifest.at("episodes")) {
    std::filesystem::path rec = dir / e.at("file").get<std::string>();
    std::string want = e.value("sha256", "");
    if (!want.empty() && file_sha256(rec) != want) {
      throw FormatError("episode record checksum mismatch: " + rec.string());
    }
    ds.episodes.push_back(episode_from_record(rec));
  }
  return ds;
}

// Flattens a dataset into training samples, ordered by sample_id.
inline std::vector<Sample> dataset_samples(const Dataset& ds) {
  std::vector<Sample> all;
  for (const Episode& ep : ds.episodes) {
    auto s = extract_samples(ep, ds.config.model.T);
    all.insert(all.end(), s.begin(), s.end());
  }
  std::sort(all.begin(), all.end(),
            [](const Sample& a, const Sample& b) { return a.sample_id < b.sample_id; });
  return all;
}

}  // namespace heat
