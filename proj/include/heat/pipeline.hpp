#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "heat/closed_loop.hpp"
#include "heat/config.hpp"
#include "heat/metrics.hpp"
#include "heat/policy.hpp"
#include "heat/priors.hpp"
#include "heat/scenario.hpp"
#include "heat/training.hpp"
#include "heat/world_model.hpp"

namespace heat {

// ---------------------------------------------------------------------------
// In-memory evaluation (shared by the CLI and the benchmark tests)
// ---------------------------------------------------------------------------

struct OpenLoopEval {
  OpenLoopReport overall;
  std::map<int, OpenLoopReport> per_domain;
  std::vector<double> sample_l2_final;  // per-sample avg-horizon L2, final plan
  std::vector<double> sample_l2_init;   // same for the initial plan
};

template <class S>
OpenLoopEval evaluate_open_loop(const PolicyState<S>& st, const PolicyPriors<S>& pp,
                                const Dataset& ds, bool emar = true) {
  check_priors_compatible(st.mc, pp);
  OpenLoopAccum overall;
  std::map<int, OpenLoopAccum> per_domain;
  OpenLoopEval ev;
  for (const Episode& ep : ds.episodes) {
    for (const Sample& s : extract_samples(ep, st.mc.T)) {
      PlanResult pr = plan(st, pp, s.frame_t->observation, emar);
      Matd gt(st.mc.T, 3);
      for (int i = 0; i < st.mc.T; ++i) {
        gt(i, 0) = s.gt_waypoints[static_cast<std::size_t>(i)].x;
        gt(i, 1) = s.gt_waypoints[static_cast<std::size_t>(i)].y;
        gt(i, 2) = s.gt_waypoints[static_cast<std::size_t>(i)].heading;
      }
      auto l2 = l2_metric(pr.final, gt);
      auto coll = collision_metric(pr.final, ep, s.frame_index);
      overall.add(l2, coll);
      per_domain[ep.domain_id].add(l2, coll);

      double avg_f = 0, avg_i = 0;
      auto l2i = l2_metric(pr.initial, gt);
      for (const auto& [h, v] : l2) avg_f += v;
      for (const auto& [h, v] : l2i) avg_i += v;
      ev.sample_l2_final.push_back(avg_f / static_cast<double>(l2.size()));
      ev.sample_l2_init.push_back(avg_i / static_cast<double>(l2i.size()));
    }
  }
  ev.overall = overall.report();
  for (const auto& [d, acc] : per_domain) ev.per_domain[d] = acc.report();
  return ev;
}

enum class LatentKind { kVisual, kFused };

struct PooledLatents {
  Matd latents;  // n x D, token-mean-pooled
  std::vector<int> behavior_labels;
  std::vector<int> domain_labels;
};

// Mean-pooled policy-encoder latents (V_t) or action-fused latents (a_t)
// over the dataset, for the latent-structure diagnostics.
template <class S>
PooledLatents pool_latents(const PolicyState<S>& st, const PolicyPriors<S>& pp,
                           const Dataset& ds, LatentKind kind) {
  PooledLatents out;
  std::vector<Matd> rows;
  const int per_view = (st.mc.img_h / st.mc.patch) * (st.mc.img_w / st.mc.patch);
  std::vector<DomainSpec> specs =
      make_domain_specs(ds.config.n_domains, ds.seed, st.mc.k_max, ds.config.obs_noise_scale);
  for (const Episode& ep : ds.episodes) {
    // Pool over active-view tokens only: blank padding rows are a constant
    // per-domain signature that would swamp the clustering diagnostic.
    Eigen::Index active =
        specs[static_cast<std::size_t>(ep.domain_id)].num_views * per_view;
    for (const Sample& s : extract_samples(ep, st.mc.T)) {
      Tape<S> t;
      ModelGraph<S> g(t, st.params, /*train=*/false);
      PolicyForward<S> f = policy_forward(g, st.mc, s.frame_t->observation, pp, /*emar=*/true);
      Matd tok = t.val(kind == LatentKind::kVisual ? f.tokens : f.fused)
                     .template cast<double>()
                     .topRows(active);
      // Mean of unit token directions: magnitude is dominated by per-domain
      // sensor gain, direction by content.
      Matd pooled = Matd::Zero(1, tok.cols());
      for (Eigen::Index r = 0; r < tok.rows(); ++r) {
        double n = tok.row(r).norm();
        if (n > 1e-12) pooled += tok.row(r) / n;
      }
      pooled /= static_cast<double>(tok.rows());
      rows.push_back(pooled);
      out.behavior_labels.push_back(s.behavior_label);
      out.domain_labels.push_back(s.domain_id);
    }
  }
  out.latents.resize(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : rows[0].cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double n = rows[i].norm();
    out.latents.row(static_cast<Eigen::Index>(i)) = n > 1e-12 ? (rows[i] / n).eval() : rows[i];
  }
  return out;
}

struct ClosedLoopEval {
  std::vector<ClosedLoopReport> episodes;
  double mean_mini_pdms = 0;
};

// Rolls out `make_planner(episode)` on every episode and aggregates.
inline ClosedLoopEval evaluate_closed_loop(
    const std::function<PlannerFn(const Episode&)>& make_planner, const Dataset& ds,
    std::uint64_t style_seed) {
  std::vector<DomainSpec> specs =
      make_domain_specs(ds.config.n_domains, style_seed, ds.config.model.k_max,
                        ds.config.obs_noise_scale);
  ClosedLoopEval ev;
  double sum = 0;
  for (const Episode& ep : ds.episodes) {
    PlannerFn planner = make_planner(ep);
    RolloutTrace trace =
        rollout_closed_loop(planner, ep, specs[static_cast<std::size_t>(ep.domain_id)], ds.config);
    ClosedLoopReport r = mini_pdms(trace, ep);
    sum += r.mini_pdms;
    ev.episodes.push_back(r);
  }
  if (!ev.episodes.empty()) sum /= static_cast<double>(ev.episodes.size());
  ev.mean_mini_pdms = sum;
  return ev;
}

// ---------------------------------------------------------------------------
// File-based stage commands (CLI backends). Every artifact embeds the config
// hash and the sha256 of its inputs; a hash mismatch is a hard error.
// ---------------------------------------------------------------------------

struct ProvenanceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require_fresh_path(const std::filesystem::path& p, bool force) {
  if (std::filesystem::exists(p) && !force) {
    throw ProvenanceError("refusing to overwrite existing path (use --force): " + p.string());
  }
}

inline std::string dataset_identity(const std::filesystem::path& dir) {
  return file_sha256(dir / "manifest.json");
}

inline void check_config_hash(const RunConfig& cfg, const json& artifact_header_config,
                              const std::string& what) {
  RunConfig other = artifact_header_config.get<RunConfig>();
  if (config_hash(other) != config_hash(cfg)) {
    throw ProvenanceError("config hash mismatch between current config and " + what);
  }
}

// Dataset compatibility ignores the ablation toggles: they change the policy
// objective and wiring, never the data.
inline void check_data_config_hash(const RunConfig& cfg, const json& artifact_header_config,
                                   const std::string& what) {
  RunConfig a = cfg, b = artifact_header_config.get<RunConfig>();
  a.cltp = b.cltp = true;
  a.emar = b.emar = true;
  if (config_hash(a) != config_hash(b)) {
    throw ProvenanceError("config hash mismatch between current config and " + what);
  }
}

inline void cmd_gen_data(const RunConfig& cfg, std::uint64_t seed,
                         const std::filesystem::path& out_dir, bool force) {
  require_fresh_path(out_dir / "manifest.json", force);
  Dataset ds = generate_dataset(cfg, seed);
  save_dataset(ds, out_dir);
}

// Extracts selected term columns (plus total) from a TrainLog as CSV.
inline std::string train_log_csv_terms(const TrainLog& log,
                                       const std::vector<std::string>& names) {
  std::vector<std::size_t> idx;
  for (const std::string& n : names) {
    for (std::size_t i = 0; i < log.term_names.size(); ++i) {
      if (log.term_names[i] == n) idx.push_back(i);
    }
  }
  std::string out;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (i) out += ",";
    out += log.term_names[idx[i]];
  }
  out += "\n";
  char buf[64];
  for (const auto& row : log.rows) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (i) out += ",";
      std::snprintf(buf, sizeof(buf), "%.8g", row[idx[i]]);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

template <class S>
void cmd_train_wm(const RunConfig& cfg, const std::filesystem::path& dataset_dir,
                  const std::filesystem::path& out_ckpt, bool force, int n_threads = 1) {
  require_fresh_path(out_ckpt, force);
  Dataset ds = load_dataset(dataset_dir);
  check_data_config_hash(cfg, json(ds.config), "dataset manifest");
  std::vector<Sample> samples = dataset_samples(ds);
  WorldModelState<S> st = init_world_model<S>(cfg.model, cfg.model.seed);
  OptState<S> opt;
  TrainLog log;
  if (cfg.model.stage1_epochs > 0) log = train_stage1(st, samples, &opt, n_threads);
  json extra = {{"dataset_sha256", dataset_identity(dataset_dir)},
                {"config_hash", config_hash(cfg)}};
  save_training_checkpoint(out_ckpt, "world_model", json(cfg), st.params,
                           cfg.model.stage1_epochs > 0 ? &opt : nullptr, extra);
  std::ofstream csv(out_ckpt.string() + ".loss.csv");
  csv << train_log_csv(log);
}

template <class S>
void cmd_build_priors(const RunConfig& cfg, const std::filesystem::path& dataset_dir,
                      const std::filesystem::path& wm_ckpt,
                      const std::filesystem::path& out_priors, bool force) {
  require_fresh_path(out_priors, force);
  Dataset ds = load_dataset(dataset_dir);
  check_data_config_hash(cfg, json(ds.config), "dataset manifest");
  Checkpoint<S> ck = load_checkpoint<S>(wm_ckpt);
  if (ck.kind != "world_model") throw ProvenanceError("expected a world_model checkpoint");
  check_config_hash(cfg, ck.config, "world-model checkpoint");

  WorldModelState<S> st;
  st.mc = cfg.model;
  OptState<S> opt;
  split_training_checkpoint(ck, &st.params, &opt);
  std::vector<Sample> samples = dataset_samples(ds);
  std::vector<BehaviorTriplet> triplets = export_behavior_set(st, samples);
  PriorsArtifact art =
      build_priors(triplets, cfg.model.M, cfg.model.seed, cfg.model.heading_weight,
                   dataset_identity(dataset_dir), file_sha256(wm_ckpt));
  save_priors(art, out_priors);
}

template <class S>
void cmd_train_policy(const RunConfig& cfg, const std::filesystem::path& dataset_dir,
                      const std::filesystem::path& priors_path,
                      const std::filesystem::path& out_ckpt, bool force, int n_threads = 1) {
  require_fresh_path(out_ckpt, force);
  Dataset ds = load_dataset(dataset_dir);
  check_data_config_hash(cfg, json(ds.config), "dataset manifest");
  PriorsArtifact art = load_priors(priors_path);
  PolicyPriors<S> pp = PolicyPriors<S>::from_artifact(art, file_sha256(priors_path));
  std::vector<Sample> samples = dataset_samples(ds);
  PolicyState<S> st = init_policy<S>(cfg.model, cfg.model.seed);
  OptState<S> opt;
  TrainLog log;
  if (cfg.model.stage3_epochs > 0) {
    log = train_stage3(st, samples, pp, cfg.cltp, cfg.emar, &opt, n_threads);
  }
  json extra = {{"dataset_sha256", dataset_identity(dataset_dir)},
                {"priors_sha256", pp.sha256},
                {"config_hash", config_hash(cfg)},
                {"cltp", cfg.cltp},
                {"emar", cfg.emar}};
  save_training_checkpoint(out_ckpt, "policy", json(cfg), st.params,
                           cfg.model.stage3_epochs > 0 ? &opt : nullptr, extra);
  std::ofstream csv(out_ckpt.string() + ".loss.csv");
  csv << train_log_csv_terms(log, {"traj_final", "traj_init", "con", "recon"});
}

inline json open_loop_report_json(const OpenLoopReport& r) {
  json j;
  for (const auto& [h, v] : r.l2_at) j["l2"][std::to_string(h) + "s"] = v;
  j["l2"]["avg"] = r.l2_avg;
  for (const auto& [h, v] : r.collision_at) j["collision_pct"][std::to_string(h) + "s"] = v;
  j["collision_pct"]["avg"] = r.collision_avg;
  j["n_samples"] = r.n_samples;
  return j;
}

inline json closed_loop_report_json(const ClosedLoopEval& ev) {
  json rows = json::array();
  for (const ClosedLoopReport& r : ev.episodes) {
    rows.push_back({{"nc", r.nc},
                    {"dac", r.dac},
                    {"ep", r.ep},
                    {"ttc", r.ttc},
                    {"comfort", r.comfort},
                    {"mini_pdms", r.mini_pdms},
                    {"diverged", r.diverged}});
  }
  return {{"episodes", rows}, {"mean_mini_pdms", ev.mean_mini_pdms}};
}

template <class S>
json cmd_eval(const RunConfig& cfg, const std::filesystem::path& ckpt_path,
              const std::filesystem::path& priors_path,
              const std::filesystem::path& dataset_dir, bool do_open, bool do_closed,
              bool do_latents) {
  Dataset ds = load_dataset(dataset_dir);
  check_data_config_hash(cfg, json(ds.config), "dataset manifest");
  Checkpoint<S> ck = load_checkpoint<S>(ckpt_path);
  if (ck.kind != "policy") throw ProvenanceError("expected a policy checkpoint");
  check_config_hash(cfg, ck.config, "policy checkpoint");
  PriorsArtifact art = load_priors(priors_path);
  std::string priors_sha = file_sha256(priors_path);
  if (ck.extra.value("priors_sha256", "") != priors_sha) {
    throw ProvenanceError("policy checkpoint was trained against a different priors artifact");
  }
  PolicyPriors<S> pp = PolicyPriors<S>::from_artifact(art, priors_sha);
  PolicyState<S> st;
  st.mc = cfg.model;
  split_training_checkpoint(ck, &st.params, static_cast<OptState<S>*>(nullptr));
  st.priors_sha256 = priors_sha;
  bool emar = ck.extra.value("emar", true);

  json report = {{"schema_version", 1},
                 {"config_hash", config_hash(cfg)},
                 {"checkpoint_sha256", file_sha256(ckpt_path)},
                 {"priors_sha256", priors_sha},
                 {"constants",
                  {{"ttc_threshold_s", kTtcThreshold},
                   {"comfort_accel", kComfortAccel},
                   {"comfort_yaw_rate", kComfortYawRate}}}};
  if (do_open) {
    OpenLoopEval ev = evaluate_open_loop(st, pp, ds, emar);
    report["open_loop"]["overall"] = open_loop_report_json(ev.overall);
    for (const auto& [d, r] : ev.per_domain) {
      report["open_loop"]["domain_" + std::to_string(d)] = open_loop_report_json(r);
    }
  }
  if (do_closed) {
    auto make_planner = [&](const Episode&) { return policy_planner(st, pp, emar); };
    ClosedLoopEval ev = evaluate_closed_loop(make_planner, ds, ds.seed);
    report["closed_loop"] = closed_loop_report_json(ev);
  }
  if (do_latents) {
    PooledLatents vis = pool_latents(st, pp, ds, LatentKind::kVisual);
    PooledLatents fus = pool_latents(st, pp, ds, LatentKind::kFused);
    LatentStructureReport rv = latent_structure(vis.latents, vis.behavior_labels,
                                                vis.domain_labels, cfg.model.M, cfg.model.seed);
    LatentStructureReport rf = latent_structure(fus.latents, fus.behavior_labels,
                                                fus.domain_labels, cfg.model.M, cfg.model.seed);
    report["latents"] = {{"visual",
                          {{"ami_behavior", rv.ami_behavior},
                           {"ami_domain", rv.ami_domain},
                           {"silhouette_behavior", rv.silhouette_behavior}}},
                         {"fused",
                          {{"ami_behavior", rf.ami_behavior},
                           {"ami_domain", rf.ami_domain},
                           {"silhouette_behavior", rf.silhouette_behavior}}}};
  }
  return report;
}

// Table III analog grid: (cltp, emar) in {(0,0),(1,0),(0,1),(1,1)}. Reuses
// one dataset + world model + priors; retrains the policy per row.
template <class S>
json cmd_ablate(const RunConfig& base_cfg, const std::filesystem::path& dataset_dir,
                const std::filesystem::path& priors_path, const std::filesystem::path& out_dir,
                bool force, int n_threads = 1) {
  std::filesystem::create_directories(out_dir);
  json rows = json::array();
  const bool grid[4][2] = {{false, false}, {true, false}, {false, true}, {true, true}};
  for (const auto& g : grid) {
    RunConfig cfg = base_cfg;
    cfg.cltp = g[0];
    cfg.emar = g[1];
    std::string tag = std::string(cfg.cltp ? "cltp" : "nocltp") + "_" +
                      (cfg.emar ? "emar" : "noemar");
    std::filesystem::path ckpt = out_dir / ("policy_" + tag + ".ckpt");
    cmd_train_policy<S>(cfg, dataset_dir, priors_path, ckpt, force, n_threads);
    json r = cmd_eval<S>(cfg, ckpt, priors_path, dataset_dir, /*open=*/true, /*closed=*/false,
                         /*latents=*/false);
    rows.push_back({{"cltp", cfg.cltp}, {"emar", cfg.emar}, {"report", r}});
  }
  return {{"schema_version", 1}, {"rows", rows}};
}

}  // namespace heat
