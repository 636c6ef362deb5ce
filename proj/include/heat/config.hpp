#pragma once

#include <cstdint>
#include <string>

#include "heat/binio.hpp"
#include "heat/sha256.hpp"

namespace heat {

// Dimensions and hyperparameters of the shared model stack. The token count
// L is structural: L = k_max * tokens_per_view, and tokens_per_view follows
// from the per-view image size and patch size.
struct ModelConfig {
  // token geometry
  int D = 32;        // token width
  int k_max = 8;     // global view budget; domains with fewer views pad with blanks
  int img_c = 3;
  int img_h = 16;
  int img_w = 16;
  int patch = 8;
  int H_proj = 16;   // cosine-attention projection width
  int T = 8;         // waypoint horizon: 2 Hz x 4 s
  int n_blocks = 1;  // transformer depth (dynamics and reconstruction stacks)
  int ffn_mult = 2;  // transformer FFN hidden = ffn_mult * D

  // behavior priors
  int M = 6;  // cluster count; 18 reproduces the full-scale setting
  double heading_weight = 1.0;  // optional weighting of the heading column in clustering

  // losses
  double tau_con = 0.07;
  double tau_mem = 0.07;
  double lambda1 = 0.5;  // initial-trajectory L1
  double lambda2 = 4.0;  // contrastive
  double lambda3 = 0.5;  // future latent reconstruction
  double lambda_aux = 1.0;  // stage-1 anti-collapse trajectory head

  // optimization (full-scale runs used lr 5e-5; the desk-scale default is
  // larger because the model is tiny)
  double lr = 3e-3;
  double weight_decay = 0.01;
  int batch_size = 8;
  int stage1_epochs = 3;
  int stage3_epochs = 48;
  std::uint64_t seed = 0;

  int tokens_per_view() const { return (img_h / patch) * (img_w / patch); }
  int L() const { return k_max * tokens_per_view(); }
  int patch_dim() const { return img_c * patch * patch; }

  void validate() const {
    if (D < 1 || H_proj < 1 || T < 1 || M < 1 || k_max < 1 || n_blocks < 0) {
      throw InvalidArgument("config: dimensions must be >= 1");
    }
    if (img_h % patch != 0 || img_w % patch != 0 || patch < 1) {
      throw InvalidArgument("config: image size must be divisible by patch");
    }
    if (tau_con <= 0 || tau_mem <= 0) throw InvalidArgument("config: temperatures must be > 0");
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda_aux < 0) {
      throw InvalidArgument("config: loss weights must be >= 0");
    }
    if (batch_size < 1) throw InvalidArgument("config: batch_size must be >= 1");
  }
};

inline void to_json(json& j, const ModelConfig& c) {
  j = json{{"D", c.D},
           {"k_max", c.k_max},
           {"img_c", c.img_c},
           {"img_h", c.img_h},
           {"img_w", c.img_w},
           {"patch", c.patch},
           {"H_proj", c.H_proj},
           {"T", c.T},
           {"n_blocks", c.n_blocks},
           {"ffn_mult", c.ffn_mult},
           {"M", c.M},
           {"heading_weight", c.heading_weight},
           {"tau_con", c.tau_con},
           {"tau_mem", c.tau_mem},
           {"lambda1", c.lambda1},
           {"lambda2", c.lambda2},
           {"lambda3", c.lambda3},
           {"lambda_aux", c.lambda_aux},
           {"lr", c.lr},
           {"weight_decay", c.weight_decay},
           {"batch_size", c.batch_size},
           {"stage1_epochs", c.stage1_epochs},
           {"stage3_epochs", c.stage3_epochs},
           {"seed", c.seed}};
}

inline void from_json(const json& j, ModelConfig& c) {
  ModelConfig d;
  c.D = j.value("D", d.D);
  c.k_max = j.value("k_max", d.k_max);
  c.img_c = j.value("img_c", d.img_c);
  c.img_h = j.value("img_h", d.img_h);
  c.img_w = j.value("img_w", d.img_w);
  c.patch = j.value("patch", d.patch);
  c.H_proj = j.value("H_proj", d.H_proj);
  c.T = j.value("T", d.T);
  c.n_blocks = j.value("n_blocks", d.n_blocks);
  c.ffn_mult = j.value("ffn_mult", d.ffn_mult);
  c.M = j.value("M", d.M);
  c.heading_weight = j.value("heading_weight", d.heading_weight);
  c.tau_con = j.value("tau_con", d.tau_con);
  c.tau_mem = j.value("tau_mem", d.tau_mem);
  c.lambda1 = j.value("lambda1", d.lambda1);
  c.lambda2 = j.value("lambda2", d.lambda2);
  c.lambda3 = j.value("lambda3", d.lambda3);
  c.lambda_aux = j.value("lambda_aux", d.lambda_aux);
  c.lr = j.value("lr", d.lr);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.stage1_epochs = j.value("stage1_epochs", d.stage1_epochs);
  c.stage3_epochs = j.value("stage3_epochs", d.stage3_epochs);
  c.seed = j.value("seed", d.seed);
}

// Scenario + pipeline configuration. One root seed feeds all named
// randomness substreams.
struct RunConfig {
  ModelConfig model;

  int n_domains = 3;
  int episodes_per_domain = 45;
  int episode_len = 15;  // frames at 2 Hz; must be >= T + 2
  double base_speed = 4.0;
  double speed_jitter = 0.15;
  double obs_noise_scale = 4.0;
  int agents_per_scene = 3;
  double corridor_half_width = 5.0;

  // ablation toggles
  bool cltp = true;  // off => lambda2 forced to 0
  bool emar = true;  // off => memory retrieval bypassed, final plan = initial plan

  void validate() const {
    model.validate();
    if (n_domains < 1) throw InvalidArgument("config: n_domains must be >= 1");
    if (episodes_per_domain < 0) throw InvalidArgument("config: episodes_per_domain < 0");
    if (episode_len < model.T + 2) throw InvalidArgument("config: episode_len must be >= T + 2");
    if (base_speed <= 0) throw InvalidArgument("config: base_speed must be > 0");
    if (obs_noise_scale < 0) throw InvalidArgument("config: obs_noise_scale must be >= 0");
    if (corridor_half_width <= 0) throw InvalidArgument("config: corridor_half_width must be > 0");
  }
};

inline void to_json(json& j, const RunConfig& c) {
  j = json{{"model", c.model},
           {"n_domains", c.n_domains},
           {"episodes_per_domain", c.episodes_per_domain},
           {"episode_len", c.episode_len},
           {"base_speed", c.base_speed},
           {"speed_jitter", c.speed_jitter},
           {"obs_noise_scale", c.obs_noise_scale},
           {"agents_per_scene", c.agents_per_scene},
           {"corridor_half_width", c.corridor_half_width},
           {"cltp", c.cltp},
           {"emar", c.emar}};
}

inline void from_json(const json& j, RunConfig& c) {
  RunConfig d;
  c.model = j.value("model", d.model);
  c.n_domains = j.value("n_domains", d.n_domains);
  c.episodes_per_domain = j.value("episodes_per_domain", d.episodes_per_domain);
  c.episode_len = j.value("episode_len", d.episode_len);
  c.base_speed = j.value("base_speed", d.base_speed);
  c.speed_jitter = j.value("speed_jitter", d.speed_jitter);
  c.obs_noise_scale = j.value("obs_noise_scale", d.obs_noise_scale);
  c.agents_per_scene = j.value("agents_per_scene", d.agents_per_scene);
  c.corridor_half_width = j.value("corridor_half_width", d.corridor_half_width);
  c.cltp = j.value("cltp", d.cltp);
  c.emar = j.value("emar", d.emar);
}

// Canonical identity of a run: sha256 of the sorted-key JSON serialization.
inline std::string config_hash(const RunConfig& c) {
  json j = c;
  return sha256_hex(j.dump());
}

inline std::string config_hash(const ModelConfig& c) {
  json j = c;
  return sha256_hex(j.dump());
}

}  // namespace heat
