#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "heat/autodiff.hpp"
#include "heat/config.hpp"
#include "heat/matrix.hpp"
#include "heat/params.hpp"
#include "heat/rng.hpp"

namespace heat {

// ---------------------------------------------------------------------------
// Parameter registration. Weights use fan-in-scaled uniform init from the
// init substream; biases start at zero, layer-norm gains at one.
// ---------------------------------------------------------------------------

template <class S>
void add_linear_params(ParamSet<S>& ps, Rng& rng, const std::string& name, Eigen::Index in,
                       Eigen::Index out) {
  ps.add(name + ".W", init_linear<S>(rng, in, in, out));
  ps.add(name + ".b", Mat<S>::Zero(1, out));
}

template <class S>
void add_layer_norm_params(ParamSet<S>& ps, const std::string& name, Eigen::Index d) {
  ps.add(name + ".g", Mat<S>::Ones(1, d));
  ps.add(name + ".b", Mat<S>::Zero(1, d));
}

template <class S>
void add_block_params(ParamSet<S>& ps, Rng& rng, const std::string& prefix, Eigen::Index d,
                      Eigen::Index f) {
  add_layer_norm_params(ps, prefix + ".ln1", d);
  add_linear_params(ps, rng, prefix + ".q", d, d);
  add_linear_params(ps, rng, prefix + ".k", d, d);
  add_linear_params(ps, rng, prefix + ".v", d, d);
  add_linear_params(ps, rng, prefix + ".o", d, d);
  add_layer_norm_params(ps, prefix + ".ln2", d);
  add_linear_params(ps, rng, prefix + ".f1", d, f);
  add_linear_params(ps, rng, prefix + ".f2", f, d);
}

template <class S>
void add_encoder_params(ParamSet<S>& ps, Rng& rng, const std::string& prefix,
                        const ModelConfig& mc) {
  add_linear_params(ps, rng, prefix + ".patch", mc.patch_dim(), mc.D);
  ps.add(prefix + ".pos", init_linear<S>(rng, mc.D, mc.L(), mc.D));
  for (int i = 0; i < mc.n_blocks; ++i) {
    add_block_params(ps, rng, prefix + ".blk" + std::to_string(i), mc.D, mc.ffn_mult * mc.D);
  }
}

template <class S>
void add_blocks_params(ParamSet<S>& ps, Rng& rng, const std::string& prefix,
                       const ModelConfig& mc) {
  for (int i = 0; i < mc.n_blocks; ++i) {
    add_block_params(ps, rng, prefix + ".blk" + std::to_string(i), mc.D, mc.ffn_mult * mc.D);
  }
}

template <class S>
void add_cross_attn_params(ParamSet<S>& ps, Rng& rng, const std::string& prefix, Eigen::Index d) {
  add_linear_params(ps, rng, prefix + ".q", d, d);
  add_linear_params(ps, rng, prefix + ".k", d, d);
  add_linear_params(ps, rng, prefix + ".v", d, d);
}

template <class S>
void add_head_params(ParamSet<S>& ps, Rng& rng, const std::string& prefix, Eigen::Index d,
                     int T) {
  add_linear_params(ps, rng, prefix + ".l1", d, 2 * d);
  add_linear_params(ps, rng, prefix + ".l2", 2 * d, 3 * T);
}

template <class S>
void add_fuse_params(ParamSet<S>& ps, Rng& rng, const std::string& prefix, Eigen::Index d,
                     Eigen::Index v, Eigen::Index f) {
  ps.add(prefix + ".W1t", init_linear<S>(rng, d, d, f));
  ps.add(prefix + ".W1v", init_linear<S>(rng, v, v, f));
  ps.add(prefix + ".b1", Mat<S>::Zero(1, f));
  add_linear_params(ps, rng, prefix + ".l2", f, d);
}

// Linear projection without bias, so normalization is exactly
// scale-invariant in the input row.
template <class S>
void add_projection_params(ParamSet<S>& ps, Rng& rng, const std::string& prefix, Eigen::Index d,
                           Eigen::Index h) {
  ps.add(prefix + ".W", init_linear<S>(rng, d, d, h));
}

// ---------------------------------------------------------------------------
// Graph builder: binds a ParamSet to a tape, lazily creating one input node
// per touched parameter so gradients can be read back after backward().
// ---------------------------------------------------------------------------

template <class S>
class ModelGraph {
 public:
  using Var = typename Tape<S>::Var;

  ModelGraph(Tape<S>& tape, const ParamSet<S>& params, bool train = true)
      : tape_(tape), params_(params), train_(train) {}

  Tape<S>& tape() { return tape_; }
  const ParamSet<S>& params_set() const { return params_; }

  Var p(const std::string& name) {
    auto it = vars_.find(name);
    if (it != vars_.end()) return it->second;
    Var v = train_ ? tape_.input(params_.at(name)) : tape_.constant(params_.at(name));
    vars_[name] = v;
    return v;
  }

  // Gradients aligned with the ParamSet order; untouched parameters get an
  // empty matrix (skipped by the optimizer).
  std::vector<Mat<S>> collect_grads() const {
    std::vector<Mat<S>> out(params_.count());
    for (std::size_t i = 0; i < params_.count(); ++i) {
      auto it = vars_.find(params_.name(i));
      if (it != vars_.end()) out[i] = tape_.grad(it->second);
    }
    return out;
  }

  // Accumulates this graph's parameter gradients into `acc` (same layout).
  void accumulate_grads(std::vector<Mat<S>>& acc) const {
    for (std::size_t i = 0; i < params_.count(); ++i) {
      auto it = vars_.find(params_.name(i));
      if (it == vars_.end()) continue;
      Mat<S> g = tape_.grad(it->second);
      if (acc[i].size() == 0) acc[i] = std::move(g);
      else acc[i] += g;
    }
  }

 private:
  Tape<S>& tape_;
  const ParamSet<S>& params_;
  bool train_;
  std::map<std::string, Var> vars_;
};

// ---------------------------------------------------------------------------
// Forward composites
// ---------------------------------------------------------------------------

// Rearranges a (k_max x C*H*W) observation into the L x patch_dim token
// input: one row per (view, patch), channel-major within the patch.
template <class S>
Mat<S> patchify(const ModelConfig& mc, const Matf& obs) {
  if (obs.rows() != mc.k_max || obs.cols() != mc.img_c * mc.img_h * mc.img_w) {
    throw InvalidArgument("patchify: observation shape mismatch");
  }
  const int P = mc.patch, H = mc.img_h, W = mc.img_w, C = mc.img_c;
  const int ph = H / P, pw = W / P;
  Mat<S> x(mc.L(), mc.patch_dim());
  for (int v = 0; v < mc.k_max; ++v) {
    for (int pi = 0; pi < ph; ++pi) {
      for (int pj = 0; pj < pw; ++pj) {
        Eigen::Index row = v * ph * pw + pi * pw + pj;
        Eigen::Index col = 0;
        for (int c = 0; c < C; ++c) {
          for (int di = 0; di < P; ++di) {
            for (int dj = 0; dj < P; ++dj) {
              x(row, col++) =
                  static_cast<S>(obs(v, (c * H + pi * P + di) * W + pj * P + dj));
            }
          }
        }
      }
    }
  }
  return x;
}

template <class S>
typename Tape<S>::Var linear(ModelGraph<S>& g, const std::string& name,
                             typename Tape<S>::Var x) {
  auto& t = g.tape();
  return t.add_rowvec(t.matmul(x, g.p(name + ".W")), g.p(name + ".b"));
}

template <class S>
struct BlockOut {
  typename Tape<S>::Var out;
  typename Tape<S>::Var attn;  // L x L row-stochastic
};

// Pre-norm transformer block: x + Attn(LN(x)), then x + FFN(LN(x)).
// Permutation equivariant except for the positional terms added upstream.
template <class S>
BlockOut<S> transformer_block(ModelGraph<S>& g, const std::string& prefix,
                              typename Tape<S>::Var x) {
  auto& t = g.tape();
  Eigen::Index d = t.val(x).cols();
  auto h = t.layer_norm(x, g.p(prefix + ".ln1.g"), g.p(prefix + ".ln1.b"));
  auto q = linear(g, prefix + ".q", h);
  auto k = linear(g, prefix + ".k", h);
  auto v = linear(g, prefix + ".v", h);
  auto scores = t.scale(t.matmul_nt(q, k), S(1) / static_cast<S>(std::sqrt(double(d))));
  auto attn = t.row_softmax(scores);
  auto o = linear(g, prefix + ".o", t.matmul(attn, v));
  auto x1 = t.add(x, o);
  auto h2 = t.layer_norm(x1, g.p(prefix + ".ln2.g"), g.p(prefix + ".ln2.b"));
  auto f = t.relu(linear(g, prefix + ".f1", h2));
  auto out = t.add(x1, linear(g, prefix + ".f2", f));
  return {out, attn};
}

template <class S>
typename Tape<S>::Var transformer_blocks(ModelGraph<S>& g, const std::string& prefix,
                                         typename Tape<S>::Var x, int n_blocks,
                                         std::vector<typename Tape<S>::Var>* attns = nullptr) {
  for (int i = 0; i < n_blocks; ++i) {
    auto b = transformer_block(g, prefix + ".blk" + std::to_string(i), x);
    x = b.out;
    if (attns) attns->push_back(b.attn);
  }
  return x;
}

// Encoder over pre-patchified tokens (use this entry point when the input
// itself must be a differentiable tape node).
template <class S>
typename Tape<S>::Var encode_tokens(ModelGraph<S>& g, const std::string& prefix,
                                    const ModelConfig& mc, typename Tape<S>::Var x0) {
  auto& t = g.tape();
  if (t.val(x0).rows() != mc.L() || t.val(x0).cols() != mc.patch_dim()) {
    throw InvalidArgument("encode_tokens: input shape mismatch");
  }
  auto tok = linear(g, prefix + ".patch", x0);
  tok = t.add(tok, g.p(prefix + ".pos"));
  return transformer_blocks(g, prefix, tok, mc.n_blocks);
}

// Full encoder: multi-view observation -> L x D token grid. Blank views emit
// tokens like any other view, so L is identical across domains.
template <class S>
typename Tape<S>::Var encode_views(ModelGraph<S>& g, const std::string& prefix,
                                   const ModelConfig& mc, const Matf& obs) {
  auto x0 = g.tape().constant(patchify<S>(mc, obs));
  return encode_tokens(g, prefix, mc, x0);
}

// Token-wise fusion of a conditioning vector (1 x V) into every token:
// out_l = MLP([token_l, vec]), implemented with split weights.
template <class S>
typename Tape<S>::Var ffn_fuse(ModelGraph<S>& g, const std::string& prefix,
                               typename Tape<S>::Var tokens, typename Tape<S>::Var vec) {
  auto& t = g.tape();
  if (t.val(g.p(prefix + ".W1t")).rows() != t.val(tokens).cols() ||
      t.val(g.p(prefix + ".W1v")).rows() != t.val(vec).cols()) {
    throw InvalidArgument("ffn_fuse: dimension mismatch");
  }
  auto h = t.matmul(tokens, g.p(prefix + ".W1t"));
  h = t.add_rowvec(h, t.matmul(vec, g.p(prefix + ".W1v")));
  h = t.add_rowvec(h, g.p(prefix + ".b1"));
  h = t.relu(h);
  return linear(g, prefix + ".l2", h);
}

template <class S>
struct CrossAttnOut {
  typename Tape<S>::Var out;   // 1 x D
  typename Tape<S>::Var attn;  // 1 x L
};

// Single query attending over tokens. The output is a convex combination of
// the tokens' value projections.
template <class S>
CrossAttnOut<S> cross_attend(ModelGraph<S>& g, const std::string& prefix,
                             typename Tape<S>::Var query, typename Tape<S>::Var tokens) {
  auto& t = g.tape();
  Eigen::Index d = t.val(tokens).cols();
  if (t.val(query).cols() != d || t.val(query).rows() != 1) {
    throw InvalidArgument("cross_attend: query shape mismatch");
  }
  auto q = linear(g, prefix + ".q", query);
  auto k = linear(g, prefix + ".k", tokens);
  auto v = linear(g, prefix + ".v", tokens);
  auto logits = t.scale(t.matmul_nt(q, k), S(1) / static_cast<S>(std::sqrt(double(d))));
  auto attn = t.row_softmax(logits);
  return {t.matmul(attn, v), attn};
}

// Feature (1 x D) -> T x 3 waypoints; heading is emitted unconstrained and
// wrapped only at metric time.
template <class S>
typename Tape<S>::Var waypoint_head(ModelGraph<S>& g, const std::string& prefix,
                                    typename Tape<S>::Var feature, int T) {
  auto& t = g.tape();
  auto h = t.relu(linear(g, prefix + ".l1", feature));
  auto out = linear(g, prefix + ".l2", h);
  return t.reshape(out, T, 3);
}

// Bias-free linear projection followed by row l2-normalization (rows with
// vanishing norm map to e1).
template <class S>
typename Tape<S>::Var project_normalize(ModelGraph<S>& g, const std::string& prefix,
                                        typename Tape<S>::Var tokens) {
  auto& t = g.tape();
  return t.row_l2_normalize(t.matmul(tokens, g.p(prefix + ".W")));
}

// Row-major flattening of a T x 3 waypoint matrix into 1 x 3T:
// (x1, y1, phi1, ..., xT, yT, phiT).
template <class S>
Mat<S> flatten_trajectory(const Mat<S>& w) {
  if (w.cols() != 3) throw InvalidArgument("flatten_trajectory: expected T x 3");
  Mat<S> out(1, 3 * w.rows());
  std::copy(w.data(), w.data() + w.size(), out.data());
  return out;
}

template <class S>
Mat<S> unflatten_trajectory(const Mat<S>& v) {
  if (v.rows() != 1 || v.cols() % 3 != 0) throw InvalidArgument("unflatten_trajectory: bad shape");
  Mat<S> out(v.cols() / 3, 3);
  std::copy(v.data(), v.data() + v.size(), out.data());
  return out;
}

}  // namespace heat
