#pragma once

#include <string>
#include <vector>

#include "heat/autodiff.hpp"
#include "heat/config.hpp"
#include "heat/model.hpp"
#include "heat/scenario.hpp"
#include "heat/training.hpp"

namespace heat {

template <class S>
Mat<S> waypoints_to_mat(const std::vector<Waypoint>& wps) {
  Mat<S> m(static_cast<Eigen::Index>(wps.size()), 3);
  for (std::size_t i = 0; i < wps.size(); ++i) {
    m(static_cast<Eigen::Index>(i), 0) = static_cast<S>(wps[i].x);
    m(static_cast<Eigen::Index>(i), 1) = static_cast<S>(wps[i].y);
    m(static_cast<Eigen::Index>(i), 2) = static_cast<S>(wps[i].heading);
  }
  return m;
}

// Stage-1 state: encoder, trajectory fusion, dynamics transformer, and the
// anti-collapse trajectory head.
template <class S>
struct WorldModelState {
  ModelConfig mc;
  ParamSet<S> params;
};

template <class S>
WorldModelState<S> init_world_model(const ModelConfig& mc, std::uint64_t init_seed) {
  mc.validate();
  WorldModelState<S> st;
  st.mc = mc;
  Rng rng(init_seed, "init-wm");
  add_encoder_params(st.params, rng, "enc", mc);
  add_fuse_params(st.params, rng, "fuse", mc.D, 3 * mc.T, mc.ffn_mult * mc.D);
  add_blocks_params(st.params, rng, "dyn", mc);
  add_head_params(st.params, rng, "aux", mc.D, mc.T);
  return st;
}

// Psi_t: token-wise fusion of the flattened trajectory into the latents.
template <class S>
typename Tape<S>::Var wm_fuse_trajectory(ModelGraph<S>& g, typename Tape<S>::Var tokens,
                                         typename Tape<S>::Var traj_flat) {
  return ffn_fuse(g, "fuse", tokens, traj_flat);
}

template <class S>
typename Tape<S>::Var wm_predict_next(ModelGraph<S>& g, const ModelConfig& mc,
                                      typename Tape<S>::Var psi) {
  return transformer_blocks(g, "dyn", psi, mc.n_blocks);
}

// MSE against stop-gradient target latents plus the weighted L1 trajectory
// supervision that prevents latent collapse.
template <class S>
typename Tape<S>::Var world_loss(Tape<S>& t, typename Tape<S>::Var h_hat,
                                 typename Tape<S>::Var h_next_target,
                                 typename Tape<S>::Var aux_pred, typename Tape<S>::Var gt,
                                 double lambda_aux) {
  auto target = t.constant(t.val(h_next_target));  // gradient never reaches the target branch
  auto mse = t.mse_loss(h_hat, target);
  auto l1 = t.l1_loss(aux_pred, gt);
  return t.add_scaled(mse, S(1), l1, static_cast<S>(lambda_aux));
}

// Full per-sample stage-1 graph. Exposed pieces are returned so tests can
// probe intermediate values.
template <class S>
struct WorldForward {
  typename Tape<S>::Var h_t;
  typename Tape<S>::Var psi_t;
  typename Tape<S>::Var h_hat;
  typename Tape<S>::Var aux_pred;
  typename Tape<S>::Var loss;
};

template <class S>
WorldForward<S> wm_sample_graph(Tape<S>& t, ModelGraph<S>& g, const ModelConfig& mc,
                                const Sample& s, double lambda_aux) {
  WorldForward<S> f;
  f.h_t = encode_views(g, "enc", mc, s.frame_t->observation);
  Mat<S> gt = waypoints_to_mat<S>(s.gt_waypoints);
  auto traj_flat = t.constant(flatten_trajectory(gt));
  f.psi_t = wm_fuse_trajectory(g, f.h_t, traj_flat);
  f.h_hat = wm_predict_next(g, mc, f.psi_t);
  // target latents from the same online encoder with gradients blocked
  {
    auto x1 = t.constant(patchify<S>(mc, s.frame_t1->observation));
    ModelGraph<S> frozen(t, g.params_set(), /*train=*/false);
    auto h1 = encode_tokens(frozen, "enc", mc, x1);
    f.aux_pred = waypoint_head(g, "aux", t.mean_rows(f.h_t), mc.T);
    f.loss = world_loss(t, f.h_hat, h1, f.aux_pred, t.constant(gt), lambda_aux);
  }
  return f;
}

template <class S>
TrainLog train_stage1(WorldModelState<S>& st, const std::vector<Sample>& samples,
                      OptState<S>* opt_io = nullptr, int n_threads = 1) {
  if (samples.empty()) throw InvalidArgument("train_stage1: empty dataset");
  const ModelConfig mc = st.mc;
  SampleLossFn<S> loss_fn = [&mc](Tape<S>& t, ModelGraph<S>& g, const Sample& s,
                                  std::vector<std::pair<std::string, double>>* terms) {
    auto f = wm_sample_graph(t, g, mc, s, mc.lambda_aux);
    if (terms) terms->push_back({"world", static_cast<double>(t.val(f.loss)(0, 0))});
    return f.loss;
  };
  return train_loop<S>(st.params, samples, mc, mc.stage1_epochs, loss_fn, opt_io, n_threads);
}

// (H_t, Psi_t, gt) exported per sample for stage 2.
struct BehaviorTriplet {
  std::int64_t sample_id = 0;
  int domain_id = 0;
  int behavior_label = 0;  // evaluation only, never consumed by training
  Matf h_t;                // L x D
  Matf psi_t;              // L x D
  Matd gt_waypoints;       // T x 3
};

template <class S>
std::vector<BehaviorTriplet> export_behavior_set(const WorldModelState<S>& st,
                                                 const std::vector<Sample>& samples) {
  std::vector<BehaviorTriplet> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) {
    Tape<S> t;
    ModelGraph<S> g(t, st.params, /*train=*/false);
    auto h = encode_views(g, "enc", st.mc, s.frame_t->observation);
    Mat<S> gt = waypoints_to_mat<S>(s.gt_waypoints);
    auto psi = wm_fuse_trajectory(g, h, t.constant(flatten_trajectory(gt)));
    BehaviorTriplet bt;
    bt.sample_id = s.sample_id;
    bt.domain_id = s.domain_id;
    bt.behavior_label = s.behavior_label;
    bt.h_t = t.val(h).template cast<float>();
    bt.psi_t = t.val(psi).template cast<float>();
    bt.gt_waypoints = gt.template cast<double>();
    out.push_back(std::move(bt));
  }
  std::sort(out.begin(), out.end(),
            [](const BehaviorTriplet& a, const BehaviorTriplet& b) {
              return a.sample_id < b.sample_id;
            });
  return out;
}

}  // namespace heat
