#pragma once

#include <string>
#include <vector>

#include "heat/autodiff.hpp"
#include "heat/config.hpp"
#include "heat/model.hpp"
#include "heat/priors.hpp"
#include "heat/scenario.hpp"
#include "heat/training.hpp"
#include "heat/world_model.hpp"

namespace heat {

// Stage-3 planner parameters. The encoder is trained from scratch and shares
// nothing with the stage-1 world model.
template <class S>
struct PolicyState {
  ModelConfig mc;
  ParamSet<S> params;
  std::string priors_sha256;  // artifact this state was trained against
};

template <class S>
PolicyState<S> init_policy(const ModelConfig& mc, std::uint64_t init_seed) {
  mc.validate();
  PolicyState<S> st;
  st.mc = mc;
  Rng rng(init_seed, "init-policy");
  add_encoder_params(st.params, rng, "enc", mc);
  st.params.add("qinit.q", init_linear<S>(rng, mc.D, 1, mc.D));  // learned waypoint query
  add_cross_attn_params(st.params, rng, "xattn", mc.D);
  add_head_params(st.params, rng, "head_init", mc.D, mc.T);
  add_fuse_params(st.params, rng, "fuse", mc.D, 3 * mc.T, mc.ffn_mult * mc.D);
  add_projection_params(st.params, rng, "phi", mc.D, mc.H_proj);
  add_head_params(st.params, rng, "head_final", mc.D, mc.T);
  add_blocks_params(st.params, rng, "recon", mc);
  return st;
}

// Priors tensors prepared for graph consumption: memory slots cast to the
// working scalar, prototypes row-normalized once (they are frozen constants).
template <class S>
struct PolicyPriors {
  ClusterModel cluster_model;
  double heading_weight = 1.0;
  std::vector<Mat<S>> memory;             // M slices, L x D
  std::vector<Mat<S>> prototypes_normed;  // M slices, L x D, unit rows
  std::string sha256;

  static PolicyPriors from_artifact(const PriorsArtifact& art, const std::string& file_sha = "") {
    PolicyPriors pp;
    pp.cluster_model = art.cluster_model;
    pp.heading_weight = art.heading_weight;
    pp.sha256 = file_sha;
    for (const Matf& m : art.memory) pp.memory.push_back(m.template cast<S>());
    for (const Matf& p : art.prototypes) {
      Mat<S> n = p.template cast<S>();
      for (Eigen::Index r = 0; r < n.rows(); ++r) {
        S norm = n.row(r).norm();
        if (norm < S(1e-12)) {
          n.row(r).setZero();
          n(r, 0) = S(1);
        } else {
          n.row(r) /= norm;
        }
      }
      pp.prototypes_normed.push_back(std::move(n));
    }
    return pp;
  }
};

template <class S>
void check_priors_compatible(const ModelConfig& mc, const PolicyPriors<S>& pp) {
  if (static_cast<int>(pp.memory.size()) != mc.M ||
      static_cast<int>(pp.prototypes_normed.size()) != mc.M) {
    throw InvalidArgument("priors cluster count mismatch with config M");
  }
  for (const auto& m : pp.memory) {
    if (m.rows() != mc.L() || m.cols() != mc.D) {
      throw InvalidArgument("priors memory shape mismatch with config (L, D)");
    }
  }
  if (pp.cluster_model.centroids.cols() != 3 * mc.T) {
    throw InvalidArgument("priors centroid width mismatch with config T");
  }
}

// Initial plan: learned query attends over the visual tokens; a small MLP reads
// the initial waypoints off the attended feature.
template <class S>
struct InitialPlan {
  typename Tape<S>::Var q_star;     // 1 x D
  typename Tape<S>::Var waypoints;  // T x 3
};

template <class S>
InitialPlan<S> initial_plan(ModelGraph<S>& g, const ModelConfig& mc,
                            typename Tape<S>::Var tokens) {
  auto ca = cross_attend(g, "xattn", g.p("qinit.q"), tokens);
  auto wp = waypoint_head(g, "head_init", ca.out, mc.T);
  return {ca.out, wp};
}

// Action-visual fusion: token-wise fusion of the (predicted) trajectory into the tokens.
template <class S>
typename Tape<S>::Var fuse_action(ModelGraph<S>& g, typename Tape<S>::Var tokens,
                                  typename Tape<S>::Var waypoints) {
  auto& t = g.tape();
  auto flat = t.reshape(waypoints, 1, t.val(waypoints).size());
  return ffn_fuse(g, "fuse", tokens, flat);
}

// Memory retrieval: project and l2-normalize queries and memory keys, softmax over
// slots per token, context = convex mix of the raw memory slices.
template <class S>
struct Retrieval {
  typename Tape<S>::Var context;    // L x D
  typename Tape<S>::Var attention;  // L x M, rows sum to 1
};

template <class S>
Retrieval<S> memory_retrieve(ModelGraph<S>& g, typename Tape<S>::Var fused,
                             const PolicyPriors<S>& pp, double tau_mem) {
  if (tau_mem <= 0) throw InvalidArgument("memory_retrieve: tau_mem must be > 0");
  auto& t = g.tape();
  auto q = project_normalize(g, "phi", fused);
  std::vector<typename Tape<S>::Var> keys;
  keys.reserve(pp.memory.size());
  for (const Mat<S>& slot : pp.memory) {
    keys.push_back(project_normalize(g, "phi", t.constant(slot)));
  }
  auto logits = t.scale(t.dot_rows_stack(q, keys), S(1) / static_cast<S>(tau_mem));
  auto attn = t.row_softmax(logits);
  auto ctx = t.mix_rows(attn, pp.memory);
  return {ctx, attn};
}

// Refinement: residual update then the final head, reusing the learned query but
// a distinct parameter set for the head.
template <class S>
typename Tape<S>::Var refine(ModelGraph<S>& g, const ModelConfig& mc,
                             typename Tape<S>::Var fused, typename Tape<S>::Var context) {
  auto& t = g.tape();
  auto a_star = t.add(fused, context);
  auto ca = cross_attend(g, "xattn", g.p("qinit.q"), a_star);
  return waypoint_head(g, "head_final", ca.out, mc.T);
}

// Contrastive loss: per-token softmax cross-entropy over cosine similarities to the
// frozen prototypes, averaged over tokens.
template <class S>
typename Tape<S>::Var contrastive_loss(ModelGraph<S>& g, typename Tape<S>::Var tokens,
                                       const PolicyPriors<S>& pp, int positive_m,
                                       double tau_con) {
  if (tau_con <= 0) throw InvalidArgument("contrastive_loss: tau_con must be > 0");
  if (positive_m < 0 || positive_m >= static_cast<int>(pp.prototypes_normed.size())) {
    throw InvalidArgument("contrastive_loss: positive index out of range");
  }
  auto& t = g.tape();
  auto v = t.row_l2_normalize(tokens);
  std::vector<typename Tape<S>::Var> protos;
  protos.reserve(pp.prototypes_normed.size());
  for (const Mat<S>& p : pp.prototypes_normed) protos.push_back(t.constant(p));
  auto logits = t.scale(t.dot_rows_stack(v, protos), S(1) / static_cast<S>(tau_con));
  return t.ce_rows(logits, positive_m);
}

// Full per-sample stage-3 graph, losses included when a ground truth is
// supplied. With emar off, retrieval is bypassed and final = initial.
template <class S>
struct PolicyForward {
  typename Tape<S>::Var tokens = -1;     // L x D
  typename Tape<S>::Var initial = -1;    // T x 3
  typename Tape<S>::Var fused = -1;      // L x D
  typename Tape<S>::Var context = -1;    // L x D (invalid when emar off)
  typename Tape<S>::Var attention = -1;  // L x M (invalid when emar off)
  typename Tape<S>::Var final_wp = -1;   // T x 3
  bool has_retrieval = false;
};

template <class S>
PolicyForward<S> policy_forward(ModelGraph<S>& g, const ModelConfig& mc, const Matf& obs,
                                const PolicyPriors<S>& pp, bool emar) {
  PolicyForward<S> f;
  f.tokens = encode_views(g, "enc", mc, obs);
  auto ip = initial_plan(g, mc, f.tokens);
  f.initial = ip.waypoints;
  f.fused = fuse_action(g, f.tokens, f.initial);
  if (emar) {
    auto r = memory_retrieve(g, f.fused, pp, mc.tau_mem);
    f.context = r.context;
    f.attention = r.attention;
    f.final_wp = refine(g, mc, f.fused, f.context);
    f.has_retrieval = true;
  } else {
    f.final_wp = f.initial;
  }
  return f;
}

// L_recon: next-frame policy-encoder latents predicted from the
// tokens fused with the *predicted* final waypoints; target latents are
// stop-gradient.
template <class S>
typename Tape<S>::Var recon_loss(ModelGraph<S>& g, const ModelConfig& mc,
                                 typename Tape<S>::Var tokens,
                                 typename Tape<S>::Var final_wp, const Matf& obs_next) {
  auto& t = g.tape();
  auto fused = fuse_action(g, tokens, final_wp);
  auto pred = transformer_blocks(g, "recon", fused, mc.n_blocks);
  Mat<S> target;
  {
    ModelGraph<S> frozen(t, g.params_set(), /*train=*/false);
    auto h = encode_views(frozen, "enc", mc, obs_next);
    target = t.val(h);
  }
  return t.mse_loss(pred, t.constant(target));
}

struct PolicyLossBreakdown {
  double traj_final = 0, traj_init = 0, con = 0, recon = 0, total = 0;
};

// Total objective: L = L_traj^final + l1*L_traj^init + l2*L_con + l3*L_recon.
template <class S>
typename Tape<S>::Var total_loss(ModelGraph<S>& g, const ModelConfig& mc, const Sample& s,
                                 const PolicyPriors<S>& pp, bool cltp, bool emar,
                                 PolicyLossBreakdown* bd = nullptr,
                                 PolicyForward<S>* fwd_out = nullptr) {
  auto& t = g.tape();
  PolicyForward<S> f = policy_forward(g, mc, s.frame_t->observation, pp, emar);
  Mat<S> gt = waypoints_to_mat<S>(s.gt_waypoints);
  auto gt_c = t.constant(gt);

  auto l_final = t.l1_loss(f.final_wp, gt_c);
  auto l_init = t.l1_loss(f.initial, gt_c);
  auto loss = t.add_scaled(l_final, S(1), l_init, static_cast<S>(mc.lambda1));

  double con_v = 0, recon_v = 0;
  if (cltp && mc.lambda2 > 0) {
    int pos = assign_cluster(clustering_vector(gt.template cast<double>(), pp.heading_weight),
                             pp.cluster_model);
    auto l_con = contrastive_loss(g, f.tokens, pp, pos, mc.tau_con);
    con_v = static_cast<double>(t.val(l_con)(0, 0));
    loss = t.add_scaled(loss, S(1), l_con, static_cast<S>(mc.lambda2));
  }
  if (mc.lambda3 > 0) {
    auto l_recon = recon_loss(g, mc, f.tokens, f.final_wp, s.frame_t1->observation);
    recon_v = static_cast<double>(t.val(l_recon)(0, 0));
    loss = t.add_scaled(loss, S(1), l_recon, static_cast<S>(mc.lambda3));
  }
  if (bd) {
    bd->traj_final = static_cast<double>(t.val(l_final)(0, 0));
    bd->traj_init = static_cast<double>(t.val(l_init)(0, 0));
    bd->con = con_v;
    bd->recon = recon_v;
    bd->total = static_cast<double>(t.val(loss)(0, 0));
  }
  if (fwd_out) *fwd_out = f;
  return loss;
}

template <class S>
TrainLog train_stage3(PolicyState<S>& st, const std::vector<Sample>& samples,
                      const PolicyPriors<S>& pp, bool cltp = true, bool emar = true,
                      OptState<S>* opt_io = nullptr, int n_threads = 1) {
  if (samples.empty()) throw InvalidArgument("train_stage3: empty dataset");
  check_priors_compatible(st.mc, pp);
  st.priors_sha256 = pp.sha256;
  const ModelConfig mc = st.mc;
  SampleLossFn<S> loss_fn = [&mc, &pp, cltp, emar](
                                Tape<S>& t, ModelGraph<S>& g, const Sample& s,
                                std::vector<std::pair<std::string, double>>* terms) {
    (void)t;
    PolicyLossBreakdown bd;
    auto loss = total_loss(g, mc, s, pp, cltp, emar, &bd);
    if (terms) {
      terms->push_back({"traj_final", bd.traj_final});
      terms->push_back({"traj_init", bd.traj_init});
      terms->push_back({"con", bd.con});
      terms->push_back({"recon", bd.recon});
    }
    return loss;
  };
  return train_loop<S>(st.params, samples, mc, mc.stage3_epochs, loss_fn, opt_io, n_threads);
}

// Inference result; matrices are plain values, detached from any tape.
struct PlanResult {
  Matd initial;    // T x 3
  Matd final;      // T x 3
  Matd attention;  // L x M (empty when retrieval is bypassed)
  Matd context;    // L x D (empty when retrieval is bypassed)
};

template <class S>
PlanResult plan(const PolicyState<S>& st, const PolicyPriors<S>& pp, const Matf& obs,
                bool emar = true) {
  check_priors_compatible(st.mc, pp);
  Tape<S> t;
  ModelGraph<S> g(t, st.params, /*train=*/false);
  PolicyForward<S> f = policy_forward(g, st.mc, obs, pp, emar);
  PlanResult r;
  r.initial = t.val(f.initial).template cast<double>();
  r.final = t.val(f.final_wp).template cast<double>();
  if (f.has_retrieval) {
    r.attention = t.val(f.attention).template cast<double>();
    r.context = t.val(f.context).template cast<double>();
  }
  return r;
}

}  // namespace heat
