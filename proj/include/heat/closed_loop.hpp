#pragma once

#include <functional>
#include <vector>

#include "heat/geometry.hpp"
#include "heat/matrix.hpp"
#include "heat/metrics.hpp"
#include "heat/policy.hpp"
#include "heat/scenario.hpp"

namespace heat {

// A closed-loop policy: current observation + ego state -> T x 3 ego-frame
// waypoints. Wrapping the trained planner, the gt-replay oracle, and the
// constant-velocity baseline behind one signature keeps the rollout generic.
using PlannerFn = std::function<Matd(const Matf& observation, const EgoState& ego, int tick)>;

struct ControllerConfig {
  double substep_dt = 0.1;     // 5 substeps per 0.5 s tick
  int substeps = 5;
  double max_steer = 0.6;      // rad
  double min_lookahead = 0.2;  // m; below this, hold the wheel straight
};

struct RolloutTick {
  EgoState ego;      // state at the start of the tick
  Matd plan;         // T x 3 ego-frame waypoints
  double accel = 0;  // commanded accel over the tick
  double steer = 0;
};

struct RolloutTrace {
  std::vector<RolloutTick> ticks;
  EgoState final_ego;
  bool diverged = false;  // ego left the scene bounds; trace truncated
};

// Pure-pursuit steering toward the first planned waypoint plus proportional
// speed control sized to reach it within one tick.
inline void tracking_controls(const Matd& plan, const EgoState& ego, const ControllerConfig& cc,
                              double* accel, double* steer) {
  // Steer toward the 1 s waypoint: the longer lookahead damps the weaving a
  // 0.5 s target induces at this wheelbase. Speed still tracks the first step.
  Eigen::Index steer_row = plan.rows() > 1 ? 1 : 0;
  double tx = plan(steer_row, 0), ty = plan(steer_row, 1);
  double lookahead = std::hypot(tx, ty);
  if (lookahead < cc.min_lookahead) {
    *steer = 0.0;
  } else {
    double alpha = std::atan2(ty, tx);
    *steer = std::clamp(std::atan2(2.0 * kWheelbase * std::sin(alpha), lookahead),
                        -cc.max_steer, cc.max_steer);
  }
  double v_des = std::max(0.0, plan(0, 0)) / kDt;  // forward component only
  *accel = (v_des - ego.speed) / kDt;
}

// Replans every 0.5 s tick; agents follow their scripts. Deterministic: the
// renderer draws noise from the same per-tick substream as data generation.
inline RolloutTrace rollout_closed_loop(const PlannerFn& planner, const Episode& ep,
                                        const DomainSpec& spec, const RunConfig& cfg,
                                        const ControllerConfig& cc = {}) {
  RolloutTrace trace;
  EgoState ego = ep.frames.front().ego;
  int n = static_cast<int>(ep.frames.size());
  for (int t = 0; t + 1 < n; ++t) {
    std::vector<AgentState> agents;
    for (const AgentTrack& tr : ep.scene.agents) {
      agents.push_back(tr.states[static_cast<std::size_t>(t)]);
    }
    Matf obs;
    try {
      Rng noise_rng(ep.seed, "render", static_cast<std::uint64_t>(t));
      obs = render_observation(ep.scene, ego, spec, cfg.model, agents, noise_rng);
    } catch (const OutOfSceneError&) {
      trace.diverged = true;
      break;
    }
    RolloutTick tick;
    tick.ego = ego;
    tick.plan = planner(obs, ego, t);
    tracking_controls(tick.plan, ego, cc, &tick.accel, &tick.steer);
    for (int s = 0; s < cc.substeps; ++s) {
      ego = bicycle_step(ego, tick.accel, tick.steer, cc.substep_dt);
    }
    trace.ticks.push_back(std::move(tick));
  }
  trace.final_ego = ego;
  return trace;
}

// ---------------------------------------------------------------------------
// Reference policies
// ---------------------------------------------------------------------------

// Replays the logged ego trajectory: future reference poses expressed in the
// rolling ego frame (clamped at the episode end).
inline PlannerFn gt_replay_planner(const Episode& ep, int T) {
  return [&ep, T](const Matf&, const EgoState& ego, int tick) {
    int n = static_cast<int>(ep.frames.size());
    Matd plan(T, 3);
    for (int i = 1; i <= T; ++i) {
      const EgoState& ref =
          ep.frames[static_cast<std::size_t>(std::min(tick + i, n - 1))].ego;
      Vec2 local = world_to_local({ref.x, ref.y}, {ego.x, ego.y}, ego.heading);
      plan(i - 1, 0) = local.x;
      plan(i - 1, 1) = local.y;
      plan(i - 1, 2) = wrap_angle(ref.heading - ego.heading);
    }
    return plan;
  };
}

// Straight-line extrapolation at the current speed (Table II's Constant
// Velocity baseline analog).
inline PlannerFn constant_velocity_planner(int T) {
  return [T](const Matf&, const EgoState& ego, int) {
    Matd plan = Matd::Zero(T, 3);
    for (int i = 1; i <= T; ++i) plan(i - 1, 0) = ego.speed * kDt * i;
    return plan;
  };
}

template <class S>
PlannerFn policy_planner(const PolicyState<S>& st, const PolicyPriors<S>& pp, bool emar = true) {
  return [&st, &pp, emar](const Matf& obs, const EgoState&, int) {
    return plan(st, pp, obs, emar).final;
  };
}

// ---------------------------------------------------------------------------
// Mini-PDMS
// ---------------------------------------------------------------------------

constexpr double kTtcThreshold = 1.0;    // s
constexpr double kComfortAccel = 4.0;    // m/s^2
constexpr double kComfortYawRate = 1.2;  // rad/s

struct ClosedLoopReport {
  double nc = 1, dac = 1, ep = 0, ttc = 1, comfort = 1;
  double mini_pdms = 0;
  bool diverged = false;
};

inline bool box_inside_polygon(const OrientedBox& box, const Polygon& poly) {
  for (const Vec2& c : box.corners()) {
    if (!point_in_polygon(c, poly)) return false;
  }
  return true;
}

// score = 100 * NC * DAC * (5*EP + 5*TTC + 2*Comfort) / 12, with NC/DAC/TTC/
// Comfort binary and EP the clamped progress ratio along the reference route.
inline ClosedLoopReport mini_pdms(const RolloutTrace& trace, const Episode& epi) {
  ClosedLoopReport r;
  r.diverged = trace.diverged;
  if (trace.ticks.empty()) return r;
  const Scene& scene = epi.scene;

  auto agent_box = [](const AgentState& a) {
    return OrientedBox{{a.x, a.y}, a.heading, a.length, a.width};
  };
  auto states_at = [&](int t) {
    std::vector<AgentState> out;
    for (const AgentTrack& tr : scene.agents) {
      out.push_back(tr.states[static_cast<std::size_t>(t)]);
    }
    return out;
  };

  int n_ticks = static_cast<int>(trace.ticks.size());
  for (int t = 0; t < n_ticks; ++t) {
    const RolloutTick& tick = trace.ticks[static_cast<std::size_t>(t)];
    OrientedBox ego{{tick.ego.x, tick.ego.y}, tick.ego.heading, kEgoLength, kEgoWidth};

    if (!box_inside_polygon(ego, scene.drivable_area)) r.dac = 0;

    std::vector<AgentState> agents = states_at(t);
    for (const AgentState& a : agents) {
      if (boxes_overlap(ego, agent_box(a))) r.nc = 0;
    }

    // constant-velocity TTC probe, 0.1 s resolution over the threshold window
    for (double dt = 0.1; dt <= kTtcThreshold + 1e-9; dt += 0.1) {
      OrientedBox ego_f = ego;
      ego_f.center.x += tick.ego.speed * std::cos(tick.ego.heading) * dt;
      ego_f.center.y += tick.ego.speed * std::sin(tick.ego.heading) * dt;
      bool hit = false;
      for (const AgentState& a : agents) {
        OrientedBox ab = agent_box(a);
        ab.center.x += a.speed * std::cos(a.heading) * dt;
        ab.center.y += a.speed * std::sin(a.heading) * dt;
        if (boxes_overlap(ego_f, ab)) {
          hit = true;
          break;
        }
      }
      if (hit) {
        r.ttc = 0;
        break;
      }
    }

    if (std::abs(tick.accel) > kComfortAccel) r.comfort = 0;
    double yaw_rate = tick.ego.speed / kWheelbase * std::tan(tick.steer);
    if (std::abs(yaw_rate) > kComfortYawRate) r.comfort = 0;
  }
  if (trace.diverged) r.dac = 0;

  // progress along the reference route vs the logged reference progress
  double s0 = project_onto_polyline({trace.ticks.front().ego.x, trace.ticks.front().ego.y},
                                    scene.route);
  double s1 = project_onto_polyline({trace.final_ego.x, trace.final_ego.y}, scene.route);
  const EgoState& ref_last = epi.frames[static_cast<std::size_t>(n_ticks)].ego;
  double sr = project_onto_polyline({ref_last.x, ref_last.y}, scene.route);
  double ref_progress = sr - s0;
  if (ref_progress < 0.5) {
    r.ep = 1.0;  // stop scenario: no meaningful progress demanded
  } else {
    r.ep = std::clamp((s1 - s0) / ref_progress, 0.0, 1.0);
  }

  r.mini_pdms = 100.0 * r.nc * r.dac * (5.0 * r.ep + 5.0 * r.ttc + 2.0 * r.comfort) / 12.0;
  return r;
}

}  // namespace heat
