#include <catch2/catch_amalgamated.hpp>

#include "heat/closed_loop.hpp"
#include "heat/metrics.hpp"
#include "test_util.hpp"

using namespace heat;

namespace {

RunConfig world_cfg() {
  RunConfig cfg;
  cfg.model.T = 8;
  cfg.model.img_h = 16;
  cfg.model.img_w = 16;
  cfg.model.patch = 8;
  cfg.model.D = 16;
  cfg.n_domains = 1;
  cfg.episodes_per_domain = 2;
  cfg.episode_len = 15;
  return cfg;
}

// A bare episode: straight logged ego track, optional single static agent.
Episode bare_episode(int n_frames, double speed, bool with_agent, double agent_x,
                     double agent_y) {
  Episode ep;
  ep.frames.resize(static_cast<std::size_t>(n_frames));
  for (int t = 0; t < n_frames; ++t) {
    ep.frames[static_cast<std::size_t>(t)].t = t;
    ep.frames[static_cast<std::size_t>(t)].ego.x = speed * kDt * t;
    ep.frames[static_cast<std::size_t>(t)].ego.speed = speed;
  }
  if (with_agent) {
    AgentTrack tr;
    tr.agent_id = 0;
    for (int t = 0; t < n_frames; ++t) {
      AgentState a;
      a.x = agent_x;
      a.y = agent_y;
      tr.states.push_back(a);
    }
    ep.scene.agents.push_back(tr);
  }
  return ep;
}

}  // namespace

TEST_CASE("l2 metric: trivial cases, oracle, translation covariance") {
  const int T = 8;
  Rng rng(3, "test-data");
  Matd gt = heat_test::random_mat(rng, T, 3, 5.0);

  auto zero = l2_metric(gt, gt);
  for (const auto& [h, v] : zero) CHECK(v == 0.0);

  Matd off = gt;
  off.col(0).array() += 1.0;
  auto one = l2_metric(off, gt);
  for (const auto& [h, v] : one) CHECK(v == Catch::Approx(1.0).margin(1e-12));

  // direct per-step distance oracle at step 2h (1-based future offsets)
  Matd pred = heat_test::random_mat(rng, T, 3, 5.0);
  auto got = l2_metric(pred, gt);
  for (int h : kHorizonsSec) {
    Eigen::Index i = 2 * h - 1;
    double want = std::sqrt(std::pow(pred(i, 0) - gt(i, 0), 2.0) +
                            std::pow(pred(i, 1) - gt(i, 1), 2.0));
    CHECK(got[h] == Catch::Approx(want).margin(1e-12));
  }

  // offsetting both trajectories identically leaves the metric unchanged
  Matd shift = Matd::Zero(T, 3);
  shift.col(0).setConstant(3.3);
  shift.col(1).setConstant(-1.7);
  auto shifted = l2_metric(Matd(pred + shift), Matd(gt + shift));
  for (int h : kHorizonsSec) CHECK(shifted[h] == Catch::Approx(got[h]).margin(1e-9));

  CHECK_THROWS_AS(l2_metric(pred, gt, {5}), InvalidArgument);  // step 10 > T
  CHECK_THROWS_AS(l2_metric(Matd(Matd::Zero(4, 3)), gt), InvalidArgument);
}

TEST_CASE("open-loop accumulation: averages are the mean over horizons") {
  OpenLoopAccum acc;
  acc.add({{1, 1.0}, {2, 2.0}, {3, 3.0}}, {{1, false}, {2, true}, {3, true}});
  acc.add({{1, 3.0}, {2, 4.0}, {3, 5.0}}, {{1, false}, {2, false}, {3, true}});
  OpenLoopReport r = acc.report();
  CHECK(r.n_samples == 2);
  CHECK(r.l2_at[1] == Catch::Approx(2.0));
  CHECK(r.l2_at[3] == Catch::Approx(4.0));
  CHECK(r.l2_avg == Catch::Approx((2.0 + 3.0 + 4.0) / 3.0).margin(1e-9));
  CHECK(r.collision_at[1] == Catch::Approx(0.0));
  CHECK(r.collision_at[2] == Catch::Approx(50.0));
  CHECK(r.collision_at[3] == Catch::Approx(100.0));
  CHECK(r.collision_avg == Catch::Approx(50.0).margin(1e-9));
  CHECK(OpenLoopAccum{}.report().n_samples == 0);
}

TEST_CASE("collision metric: empty scene, constructed hit, separation bound") {
  const int T = 8;
  // ego plan: straight ahead 2 m per step in the ego frame
  Matd plan = Matd::Zero(T, 3);
  for (int i = 0; i < T; ++i) plan(i, 0) = 2.0 * (i + 1);

  // no agents -> never a collision
  Episode empty_ep = bare_episode(T + 2, 4.0, false, 0, 0);
  auto none = collision_metric(plan, empty_ep, 0);
  for (const auto& [h, hit] : none) CHECK_FALSE(hit);

  // static agent parked directly on the planned path at ~step 4 (x = 8 m)
  Episode hit_ep = bare_episode(T + 2, 4.0, true, 8.0, 0.0);
  auto hit = collision_metric(plan, hit_ep, 0);
  CHECK(hit[2]);
  CHECK(hit[3]);

  // agent far beyond any half-diagonal sum -> no collision at any horizon
  Episode far_ep = bare_episode(T + 2, 4.0, true, 8.0, 50.0);
  auto far = collision_metric(plan, far_ep, 0);
  for (const auto& [h, f] : far) CHECK_FALSE(f);

  // overlap test is symmetric in the rectangle roles
  Rng rng(7, "test-data");
  for (int trial = 0; trial < 100; ++trial) {
    OrientedBox a{{rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)}, rng.uniform(-3.14, 3.14),
                  rng.uniform(0.5, 4.0), rng.uniform(0.5, 2.0)};
    OrientedBox b{{rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)}, rng.uniform(-3.14, 3.14),
                  rng.uniform(0.5, 4.0), rng.uniform(0.5, 2.0)};
    CHECK(boxes_overlap(a, b) == boxes_overlap(b, a));
    // monotonicity: shrinking both footprints never creates a new overlap
    OrientedBox as = a, bs = b;
    as.length *= 0.5;
    as.width *= 0.5;
    bs.length *= 0.5;
    bs.width *= 0.5;
    if (boxes_overlap(as, bs)) CHECK(boxes_overlap(a, b));
  }
}

TEST_CASE("mini-PDMS: formula point, gating, range") {
  // straight constant-speed episode without traffic: every subscore controlled
  RunConfig cfg = world_cfg();
  cfg.agents_per_scene = 0;
  cfg.speed_jitter = 0.0;
  auto specs = make_domain_specs(1, 3, cfg.model.k_max, cfg.obs_noise_scale);
  Episode ep = simulate_episode(specs[0], Behavior::kStraight, 5, cfg);
  const int n_ticks = 14;
  REQUIRE(static_cast<int>(ep.frames.size()) > n_ticks);

  RolloutTrace trace;
  for (int t = 0; t < n_ticks; ++t) {
    RolloutTick tick;
    tick.ego = ep.frames[static_cast<std::size_t>(t)].ego;
    tick.plan = Matd::Zero(cfg.model.T, 3);
    trace.ticks.push_back(tick);
  }

  // final ego at the halfway frame -> EP = 0.5 exactly on the straight route
  trace.final_ego = ep.frames[n_ticks / 2].ego;
  ClosedLoopReport half = mini_pdms(trace, ep);
  CHECK(half.nc == 1.0);
  CHECK(half.dac == 1.0);
  CHECK(half.ttc == 1.0);
  CHECK(half.comfort == 1.0);
  CHECK(half.ep == Catch::Approx(0.5).margin(1e-6));
  CHECK(half.mini_pdms == Catch::Approx(100.0 * (5.0 * 0.5 + 5.0 + 2.0) / 12.0).margin(0.01));

  // full progress -> 100
  trace.final_ego = ep.frames[n_ticks].ego;
  ClosedLoopReport full = mini_pdms(trace, ep);
  CHECK(full.ep == Catch::Approx(1.0).margin(1e-6));
  CHECK(full.mini_pdms == Catch::Approx(100.0).margin(0.01));

  // discomfort alone: score keeps the (5EP + 5TTC)/12 share
  RolloutTrace rough = trace;
  rough.ticks[2].accel = 9.0;
  ClosedLoopReport rc = mini_pdms(rough, ep);
  CHECK(rc.comfort == 0.0);
  CHECK(rc.mini_pdms == Catch::Approx(100.0 * 10.0 / 12.0).margin(0.01));

  // collision gating: park the ego on top of a constructed agent
  Episode with_agent = ep;
  AgentTrack tr;
  for (std::size_t i = 0; i < ep.frames.size(); ++i) {
    AgentState a;
    a.x = trace.ticks[3].ego.x;
    a.y = trace.ticks[3].ego.y;
    tr.states.push_back(a);
  }
  with_agent.scene.agents.push_back(tr);
  ClosedLoopReport crash = mini_pdms(trace, with_agent);
  CHECK(crash.nc == 0.0);
  CHECK(crash.mini_pdms == 0.0);

  // divergence gates DAC
  RolloutTrace div = trace;
  div.diverged = true;
  CHECK(mini_pdms(div, ep).mini_pdms == 0.0);

  CHECK(mini_pdms(RolloutTrace{}, ep).mini_pdms == 0.0);
}

TEST_CASE("closed loop: gt-replay tracking, determinism, range") {
  RunConfig cfg = world_cfg();
  auto specs = make_domain_specs(1, 9, cfg.model.k_max, cfg.obs_noise_scale);
  for (Behavior b : {Behavior::kStraight, Behavior::kLeftTurn, Behavior::kLaneChangeRight}) {
    Episode ep = simulate_episode(specs[0], b, 21 + static_cast<unsigned>(b), cfg);
    PlannerFn oracle = gt_replay_planner(ep, cfg.model.T);
    RolloutTrace trace = rollout_closed_loop(oracle, ep, specs[0], cfg);
    REQUIRE_FALSE(trace.diverged);

    // oracle rollout stays within controller tolerance of the logged track
    double worst = 0;
    for (std::size_t t = 0; t < trace.ticks.size(); ++t) {
      const EgoState& got = trace.ticks[t].ego;
      const EgoState& ref = ep.frames[t].ego;
      worst = std::max(worst, std::hypot(got.x - ref.x, got.y - ref.y));
    }
    CHECK(worst < 0.2);

    ClosedLoopReport r = mini_pdms(trace, ep);
    CHECK(r.mini_pdms >= 0.0);
    CHECK(r.mini_pdms <= 100.0);

    // identical rerun, identical trace
    RolloutTrace again = rollout_closed_loop(oracle, ep, specs[0], cfg);
    REQUIRE(again.ticks.size() == trace.ticks.size());
    for (std::size_t t = 0; t < trace.ticks.size(); ++t) {
      CHECK(again.ticks[t].ego.x == trace.ticks[t].ego.x);
      CHECK(again.ticks[t].steer == trace.ticks[t].steer);
    }
  }

  // zero-motion policy on the stop scenario: no NC/DAC violations
  Episode stop_ep = simulate_episode(specs[0], Behavior::kDecelStop, 31, cfg);
  PlannerFn still = [&](const Matf&, const EgoState&, int) {
    return Matd(Matd::Zero(cfg.model.T, 3));
  };
  RolloutTrace stop_trace = rollout_closed_loop(still, stop_ep, specs[0], cfg);
  ClosedLoopReport sr = mini_pdms(stop_trace, stop_ep);
  CHECK(sr.nc == 1.0);
  CHECK(sr.dac == 1.0);
}

TEST_CASE("adjusted mutual information: oracle values and properties") {
  // frozen 20-point instances; expected values from an independent
  // reference implementation of AMI with arithmetic-mean normalization
  std::vector<int> u = {0, 0, 1, 1, 2, 2, 0, 1, 2, 0, 1, 2, 0, 0, 1, 2, 2, 1, 0, 2};
  std::vector<int> v = {0, 1, 1, 1, 2, 0, 0, 1, 2, 2, 1, 2, 0, 1, 1, 2, 0, 1, 0, 2};
  CHECK(adjusted_mutual_info(u, v) == Catch::Approx(0.4358560647966962).margin(1e-9));

  std::vector<int> u2 = {0, 0, 0, 0, 0, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3, 0, 1};
  std::vector<int> v2 = {1, 1, 0, 0, 2, 2, 2, 1, 1, 0, 0, 2, 2, 2, 1, 1, 0, 0, 1, 2};
  CHECK(adjusted_mutual_info(u2, v2) == Catch::Approx(-0.04986351959816691).margin(1e-9));

  // permutation-invariance to label renaming on both sides
  std::vector<int> u_ren, v_ren;
  for (int l : u) u_ren.push_back(7 - 3 * l);
  for (int l : v) v_ren.push_back(l == 0 ? 2 : (l == 2 ? 0 : 1));
  CHECK(adjusted_mutual_info(u_ren, v_ren) ==
        Catch::Approx(adjusted_mutual_info(u, v)).margin(1e-12));

  // symmetry and perfect agreement
  CHECK(adjusted_mutual_info(v, u) == Catch::Approx(adjusted_mutual_info(u, v)).margin(1e-12));
  CHECK(adjusted_mutual_info(u, u) == Catch::Approx(1.0).margin(1e-9));

  // degenerate labelings
  std::vector<int> flat(20, 4);
  CHECK(adjusted_mutual_info(flat, flat) == 1.0);
  CHECK(std::abs(adjusted_mutual_info(flat, v)) < 1e-9);
  CHECK_THROWS_AS(adjusted_mutual_info(u, std::vector<int>{1, 2}), InvalidArgument);
}

TEST_CASE("silhouette: oracle value and degenerate case") {
  Matd x(6, 2);
  x << 0.0, 0.0, 0.1, 0.0, 0.0, 0.2, 5.0, 5.0, 5.2, 5.0, 5.0, 4.9;
  std::vector<int> lab = {0, 0, 0, 1, 1, 1};
  CHECK(silhouette_score(x, lab) == Catch::Approx(0.9751599921113554).margin(1e-9));
  CHECK(silhouette_score(x, std::vector<int>(6, 0)) == 0.0);
  CHECK_THROWS_AS(silhouette_score(x, lab = {0, 1}), InvalidArgument);
}

TEST_CASE("latent structure: perfect one-hot, constant latents, errors") {
  const int n = 30, M = 3;
  Matd onehot = Matd::Zero(n, 4);
  std::vector<int> behavior(n), domain(n);
  for (int i = 0; i < n; ++i) {
    behavior[static_cast<std::size_t>(i)] = i % 3;
    domain[static_cast<std::size_t>(i)] = i % 2;
    onehot(i, i % 3) = 1.0;
  }
  LatentStructureReport r = latent_structure(onehot, behavior, domain, M, 5);
  CHECK(r.ami_behavior == Catch::Approx(1.0).margin(1e-6));
  CHECK(r.ami_behavior > r.ami_domain);
  CHECK(r.n == n);

  // label-blind constant latents: no structure to find
  Matd flat = Matd::Ones(n, 4);
  LatentStructureReport rf = latent_structure(flat, behavior, domain, M, 5);
  CHECK(std::abs(rf.ami_behavior) < 1e-6);
  CHECK(std::abs(rf.ami_domain) < 1e-6);

  CHECK_THROWS_AS(latent_structure(Matd(Matd::Zero(2, 4)), {0, 1}, {0, 1}, 3, 1),
                  InvalidArgument);
  CHECK_THROWS_AS(latent_structure(onehot, {0, 1}, domain, M, 1), InvalidArgument);
}
