#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "heat/pipeline.hpp"
#include "test_util.hpp"

using namespace heat;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void flip_byte(const fs::path& p, std::ptrdiff_t offset_from_end) {
  std::ifstream in(p, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  bytes[bytes.size() - static_cast<std::size_t>(offset_from_end)] ^= 0x01;
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

RunConfig micro_cfg() {
  RunConfig cfg;
  cfg.model.D = 8;
  cfg.model.k_max = 2;
  cfg.model.img_h = 8;
  cfg.model.img_w = 8;
  cfg.model.patch = 8;
  cfg.model.H_proj = 4;
  cfg.model.T = 6;  // open-loop horizons run to 3 s = step 6
  cfg.model.n_blocks = 1;
  cfg.model.M = 2;
  cfg.model.stage1_epochs = 2;
  cfg.model.stage3_epochs = 2;
  cfg.model.batch_size = 4;
  cfg.n_domains = 2;
  cfg.episodes_per_domain = 2;
  cfg.episode_len = cfg.model.T + 3;
  return cfg;
}

}  // namespace

TEST_CASE("checkpoint: round trip and corruption detection") {
  Rng rng(3, "test-data");
  ParamSet<float> ps;
  ps.add("a.W", heat_test::random_mat(rng, 3, 4).cast<float>());
  ps.add("b.b", heat_test::random_mat(rng, 1, 4).cast<float>());
  json cfg_echo = {{"x", 1}};
  json extra = {{"note", "t"}};
  fs::path p = fs::temp_directory_path() / "heat_ckpt_test.bin";
  save_checkpoint(p, "world_model", cfg_echo, ps, extra);

  auto ck = load_checkpoint<float>(p);
  CHECK(ck.kind == "world_model");
  CHECK(ck.config == cfg_echo);
  CHECK(ck.extra == extra);
  REQUIRE(ck.params.count() == 2);
  CHECK(ck.params.name(0) == "a.W");  // insertion order preserved
  CHECK((ck.params.at("a.W").array() == ps.at("a.W").array()).all());  // f32 exact
  CHECK((ck.params.at("b.b").array() == ps.at("b.b").array()).all());

  // identical rewrite is byte-identical
  fs::path p2 = fs::temp_directory_path() / "heat_ckpt_test2.bin";
  save_checkpoint(p2, "world_model", cfg_echo, ps, extra);
  CHECK(file_sha256(p) == file_sha256(p2));

  // flipped payload byte -> checksum mismatch
  flip_byte(p2, 3);
  CHECK_THROWS_AS(load_checkpoint<float>(p2), FormatError);

  // garbage header / missing fields / truncation
  fs::path bad = fs::temp_directory_path() / "heat_ckpt_bad.bin";
  { std::ofstream(bad) << "not json\n"; }
  CHECK_THROWS_AS(load_checkpoint<float>(bad), FormatError);
  { std::ofstream(bad) << "{\"schema_version\":1}\n"; }
  CHECK_THROWS_AS(load_checkpoint<float>(bad), FormatError);
  {
    std::ifstream in(p, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    bytes.resize(bytes.size() - 8);
    std::ofstream out(bad, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(load_checkpoint<float>(bad), FormatError);
  fs::remove(p);
  fs::remove(p2);
  fs::remove(bad);
}

TEST_CASE("config hash: sensitivity and ablation-toggle normalization") {
  RunConfig a;
  RunConfig b;
  CHECK(config_hash(a) == config_hash(b));

  // round trip through json preserves the hash
  RunConfig rt = json(a).get<RunConfig>();
  CHECK(config_hash(rt) == config_hash(a));

  b.episodes_per_domain += 1;
  CHECK(config_hash(a) != config_hash(b));
  RunConfig c = a;
  c.model.lambda2 = 9.9;
  CHECK(config_hash(a) != config_hash(c));

  // ablation toggles change the full hash but not dataset compatibility
  RunConfig d = a;
  d.cltp = false;
  d.emar = false;
  CHECK(config_hash(a) != config_hash(d));
  CHECK_NOTHROW(check_data_config_hash(a, json(d), "toggled"));
  CHECK_THROWS_AS(check_config_hash(a, json(d), "toggled"), ProvenanceError);
  CHECK_THROWS_AS(check_data_config_hash(a, json(b), "different data"), ProvenanceError);
}

TEST_CASE("training resume: interrupted run continues byte-identically") {
  RunConfig cfg = micro_cfg();
  const ModelConfig& mc = cfg.model;
  Dataset ds = generate_dataset(cfg, 5);
  auto samples = dataset_samples(ds);
  REQUIRE(samples.size() >= 4);

  // simple convex objective on one named parameter, sample-dependent target
  auto make_params = [&] {
    ParamSet<float> ps;
    Rng rng(7, "test-init");
    ps.add("w", heat_test::random_mat(rng, mc.T, 3).cast<float>());
    return ps;
  };
  SampleLossFn<float> loss_fn = [](Tape<float>& t, ModelGraph<float>& g, const Sample& s,
                                   std::vector<std::pair<std::string, double>>*) {
    return t.mse_loss(g.p("w"), t.constant(waypoints_to_mat<float>(s.gt_waypoints)));
  };

  const int total_epochs = 4;
  ParamSet<float> full = make_params();
  train_loop<float>(full, samples, mc, total_epochs, loss_fn);

  // interrupt after two epochs by throwing at the start of epoch 2
  struct Interrupt {};
  ParamSet<float> part = make_params();
  OptState<float> opt;
  {
    int calls = 0;
    const int per_epoch = static_cast<int>(samples.size());
    SampleLossFn<float> interrupting =
        [&](Tape<float>& t, ModelGraph<float>& g, const Sample& s,
            std::vector<std::pair<std::string, double>>* terms) {
          if (calls++ >= 2 * per_epoch) throw Interrupt{};
          return loss_fn(t, g, s, terms);
        };
    try {
      train_loop<float>(part, samples, mc, total_epochs, interrupting, &opt);
      FAIL("expected interruption");
    } catch (const Interrupt&) {
    }
    REQUIRE(opt.epochs_done == 2);
  }

  // checkpoint the partial state, reload it, and resume to completion
  fs::path ckpt = fs::temp_directory_path() / "heat_resume_test.bin";
  save_training_checkpoint(ckpt, "toy", json::object(), part, &opt);
  ParamSet<float> resumed;
  OptState<float> opt2;
  auto ck = load_checkpoint<float>(ckpt);
  split_training_checkpoint(ck, &resumed, &opt2);
  CHECK(opt2.steps == opt.steps);
  train_loop<float>(resumed, samples, mc, total_epochs, loss_fn, &opt2);

  for (std::size_t i = 0; i < full.count(); ++i) {
    CHECK((full.value(i).array() == resumed.value(i).array()).all());
  }
  fs::remove(ckpt);
}

TEST_CASE("dataset: manifest checksums guard the episode records") {
  RunConfig cfg = micro_cfg();
  Dataset ds = generate_dataset(cfg, 9);
  fs::path dir = scratch_dir("heat_ds_fmt");
  save_dataset(ds, dir);
  CHECK_NOTHROW(load_dataset(dir));

  // corrupt one payload byte of one episode record
  flip_byte(dir / "episode_1.bin", 5);
  CHECK_THROWS_AS(load_dataset(dir), FormatError);

  CHECK_THROWS_AS(load_dataset(dir / "missing"), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("pipeline commands: provenance chain and hard failures") {
  RunConfig cfg = micro_cfg();
  cfg.model.seed = 11;
  fs::path root = scratch_dir("heat_pipe_fmt");
  fs::path data = root / "data";
  fs::path wm = root / "wm.ckpt";
  fs::path pri = root / "priors.bin";
  fs::path pol = root / "policy.ckpt";

  cmd_gen_data(cfg, 13, data, false);
  // refuses to overwrite without --force, allows with it
  CHECK_THROWS_AS(cmd_gen_data(cfg, 13, data, false), ProvenanceError);
  CHECK_NOTHROW(cmd_gen_data(cfg, 13, data, true));

  cmd_train_wm<float>(cfg, data, wm, false);
  cmd_build_priors<float>(cfg, data, wm, pri, false);
  cmd_train_policy<float>(cfg, data, pri, pol, false);

  // rebuilt artifacts are byte-identical (idempotence under a fixed seed)
  fs::path wm2 = root / "wm2.ckpt";
  cmd_train_wm<float>(cfg, data, wm2, false);
  CHECK(file_sha256(wm) == file_sha256(wm2));

  // checkpoint kinds are enforced
  CHECK_THROWS_AS(cmd_build_priors<float>(cfg, data, pol, root / "p2.bin", false),
                  ProvenanceError);

  // config drift against the dataset manifest is a hard error
  RunConfig drift = cfg;
  drift.episodes_per_domain += 1;
  CHECK_THROWS_AS(cmd_train_wm<float>(drift, data, root / "wm3.ckpt", false), ProvenanceError);
  // ablation toggles alone do not constitute drift for the dataset
  RunConfig toggled = cfg;
  toggled.emar = false;
  CHECK_NOTHROW(cmd_train_policy<float>(toggled, data, pri, root / "pol_ne.ckpt", false));

  // eval validates the priors lineage recorded in the policy checkpoint
  json rep = cmd_eval<float>(cfg, pol, pri, data, true, false, false);
  CHECK(rep["open_loop"]["overall"]["n_samples"].get<int>() > 0);
  CHECK(rep["priors_sha256"].get<std::string>() == file_sha256(pri));

  fs::path pri_other = root / "priors_other.bin";
  {
    // a priors file with identical config but different lineage: built from a
    // dataset generated under a different data seed
    fs::path data2 = root / "data2";
    fs::path wm_o = root / "wm_other.ckpt";
    cmd_gen_data(cfg, 14, data2, false);
    cmd_train_wm<float>(cfg, data2, wm_o, false);
    cmd_build_priors<float>(cfg, data2, wm_o, pri_other, false);
  }
  CHECK_THROWS_AS(cmd_eval<float>(cfg, pol, pri_other, data, true, false, false),
                  ProvenanceError);

  // loss-curve CSV for the policy has the four term columns
  std::ifstream csv(pol.string() + ".loss.csv");
  std::string header_line;
  std::getline(csv, header_line);
  CHECK(header_line == "traj_final,traj_init,con,recon");

  fs::remove_all(root);
}

TEST_CASE("ablation grid: four rows with the expected toggles") {
  RunConfig cfg = micro_cfg();
  cfg.model.stage3_epochs = 1;
  fs::path root = scratch_dir("heat_ablate_fmt");
  fs::path data = root / "data";
  fs::path wm = root / "wm.ckpt";
  fs::path pri = root / "priors.bin";
  cmd_gen_data(cfg, 17, data, false);
  cmd_train_wm<float>(cfg, data, wm, false);
  cmd_build_priors<float>(cfg, data, wm, pri, false);

  json grid = cmd_ablate<float>(cfg, data, pri, root / "ablate", false);
  REQUIRE(grid["rows"].size() == 4);
  CHECK(grid["rows"][0]["cltp"] == false);
  CHECK(grid["rows"][0]["emar"] == false);
  CHECK(grid["rows"][3]["cltp"] == true);
  CHECK(grid["rows"][3]["emar"] == true);
  for (const auto& row : grid["rows"]) {
    CHECK(row["report"]["open_loop"]["overall"]["l2"]["avg"].get<double>() >= 0.0);
  }
  fs::remove_all(root);
}
