#include <catch2/catch_amalgamated.hpp>

#include "heat/world_model.hpp"
#include "test_util.hpp"

using namespace heat;
using heat_test::fd_grad;
using heat_test::rel_err;

namespace {

RunConfig small_cfg() {
  RunConfig cfg;
  cfg.model.D = 8;
  cfg.model.k_max = 2;
  cfg.model.img_c = 3;
  cfg.model.img_h = 8;
  cfg.model.img_w = 8;
  cfg.model.patch = 8;  // L = 2
  cfg.model.H_proj = 4;
  cfg.model.T = 4;
  cfg.model.n_blocks = 1;
  cfg.model.M = 3;
  cfg.model.batch_size = 4;
  cfg.model.lr = 3e-3;
  cfg.n_domains = 1;
  cfg.episodes_per_domain = 2;
  cfg.episode_len = cfg.model.T + 3;
  return cfg;
}

Dataset small_dataset(const RunConfig& cfg, std::uint64_t seed) {
  return generate_dataset(cfg, seed);
}

}  // namespace

TEST_CASE("fuse_trajectory: shapes and trajectory sensitivity") {
  RunConfig cfg = small_cfg();
  const ModelConfig& mc = cfg.model;
  auto st = init_world_model<double>(mc, 1);
  Rng drng(2, "test-data");
  Matd h = heat_test::random_mat(drng, mc.L(), mc.D);
  Matd w1 = heat_test::random_mat(drng, mc.T, 3);
  Matd w2 = w1;
  w2(0, 1) += 0.2;

  Tape<double> t;
  ModelGraph<double> g(t, st.params);
  auto hv = t.constant(h);
  auto p1 = wm_fuse_trajectory(g, hv, t.constant(flatten_trajectory(w1)));
  auto p2 = wm_fuse_trajectory(g, hv, t.constant(flatten_trajectory(w2)));
  REQUIRE(t.val(p1).rows() == mc.L());
  REQUIRE(t.val(p1).cols() == mc.D);
  CHECK((t.val(p1) - t.val(p2)).norm() > 0.0);

  auto nxt = wm_predict_next(g, mc, p1);
  CHECK(t.val(nxt).rows() == mc.L());
  CHECK(t.val(nxt).cols() == mc.D);
}

TEST_CASE("world_loss: closed-form values") {
  Tape<double> t;
  Matd ones = Matd::Ones(3, 4);
  Matd zeros = Matd::Zero(3, 4);
  Matd gt = Matd::Ones(2, 3);

  // prediction equals target and aux equals gt -> 0
  auto l0 = world_loss(t, t.constant(ones), t.constant(ones), t.constant(gt), t.constant(gt), 1.0);
  CHECK(t.val(l0)(0, 0) == Catch::Approx(0.0).margin(1e-12));

  // zero prediction vs all-ones target, lambda_aux = 0 -> MSE = 1
  auto l1 = world_loss(t, t.constant(zeros), t.constant(ones), t.constant(gt), t.constant(gt), 0.0);
  CHECK(t.val(l1)(0, 0) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("stage-1 loss gradient matches finite differences") {
  RunConfig cfg = small_cfg();
  const ModelConfig& mc = cfg.model;
  Dataset ds = small_dataset(cfg, 3);
  auto samples = dataset_samples(ds);
  REQUIRE_FALSE(samples.empty());
  const Sample& s = samples[0];
  auto st = init_world_model<double>(mc, 4);

  // encoder params feed the stop-gradient target too, so the plain FD probe
  // only applies to branches past the target split; the encoder path is
  // checked in the target-isolation test below with the target held fixed.
  for (const std::string& pname : {"fuse.W1v", "dyn.blk0.q.W", "aux.l2.W"}) {
    Tape<double> t;
    ModelGraph<double> g(t, st.params);
    auto f = wm_sample_graph(t, g, mc, s, mc.lambda_aux);
    t.backward(f.loss);
    Matd analytic;
    for (std::size_t i = 0; i < st.params.count(); ++i) {
      if (st.params.name(i) == pname) analytic = g.collect_grads()[i];
    }
    REQUIRE(analytic.size() > 0);
    Matd fd = fd_grad(
        [&](const Matd& w) {
          ParamSet<double> p2;
          for (std::size_t i = 0; i < st.params.count(); ++i) {
            p2.add(st.params.name(i), st.params.name(i) == pname ? w : st.params.value(i));
          }
          Tape<double> t2;
          ModelGraph<double> g2(t2, p2);
          auto f2 = wm_sample_graph(t2, g2, mc, s, mc.lambda_aux);
          return static_cast<double>(t2.val(f2.loss)(0, 0));
        },
        st.params.at(pname), 1e-6);
    CHECK(rel_err(analytic, fd) < 1e-4);
  }
}

TEST_CASE("target isolation: the MSE target branch gets no gradient") {
  // with lambda_aux = 0 and the dynamics output forced to equal the target,
  // the loss is exactly 0 and all encoder gradients vanish; more directly,
  // perturbing only the frozen-target evaluation cannot change the gradient.
  RunConfig cfg = small_cfg();
  const ModelConfig& mc = cfg.model;
  Dataset ds = small_dataset(cfg, 5);
  auto samples = dataset_samples(ds);
  const Sample& s = samples[0];
  auto st = init_world_model<double>(mc, 6);

  // analytic gradient of the loss
  Tape<double> t;
  ModelGraph<double> g(t, st.params);
  auto f = wm_sample_graph(t, g, mc, s, 0.0);
  t.backward(f.loss);
  auto grads = g.collect_grads();

  // finite-difference gradient of the loss with the TARGET FROZEN at the
  // unperturbed parameters: if the target branch carried gradient, these
  // would differ from the analytic ones.
  Matd target;
  {
    Tape<double> tt;
    ModelGraph<double> gt_(tt, st.params, false);
    auto x1 = tt.constant(patchify<double>(mc, s.frame_t1->observation));
    target = tt.val(encode_tokens(gt_, "enc", mc, x1));
  }
  const std::string pname = "enc.patch.W";
  Matd analytic;
  for (std::size_t i = 0; i < st.params.count(); ++i) {
    if (st.params.name(i) == pname) analytic = grads[i];
  }
  Matd fd = fd_grad(
      [&](const Matd& w) {
        ParamSet<double> p2;
        for (std::size_t i = 0; i < st.params.count(); ++i) {
          p2.add(st.params.name(i), st.params.name(i) == pname ? w : st.params.value(i));
        }
        Tape<double> t2;
        ModelGraph<double> g2(t2, p2);
        auto h = encode_views(g2, "enc", mc, s.frame_t->observation);
        Matd gtm = waypoints_to_mat<double>(s.gt_waypoints);
        auto psi = wm_fuse_trajectory(g2, h, t2.constant(flatten_trajectory(gtm)));
        auto hhat = wm_predict_next(g2, mc, psi);
        auto mse = t2.mse_loss(hhat, t2.constant(target));  // target held fixed
        return static_cast<double>(t2.val(mse)(0, 0));
      },
      st.params.at(pname), 1e-6);
  CHECK(rel_err(analytic, fd) < 1e-4);
}

TEST_CASE("train_stage1: overfit, determinism, empty errors") {
  RunConfig cfg = small_cfg();
  cfg.episodes_per_domain = 3;  // 9 samples; trim to 8 below
  Dataset ds = small_dataset(cfg, 7);
  auto samples = dataset_samples(ds);
  REQUIRE(samples.size() >= 8);
  samples.resize(8);

  // overfit oracle: 200 optimizer steps shrink the loss below 25% of start
  cfg.model.stage1_epochs = 100;  // 2 steps/epoch -> 200 steps
  auto st = init_world_model<float>(cfg.model, 8);
  TrainLog log = train_stage1(st, samples);
  REQUIRE_FALSE(log.rows.empty());
  double first = log.rows.front()[0];
  double last = log.rows.back()[0];
  CHECK(last < 0.25 * first);

  // determinism: identical parameters after an identical rerun
  auto st2 = init_world_model<float>(cfg.model, 8);
  train_stage1(st2, samples);
  for (std::size_t i = 0; i < st.params.count(); ++i) {
    CHECK((st.params.value(i).array() == st2.params.value(i).array()).all());
  }

  // zero epochs leaves the initialization untouched
  auto cfg0 = cfg;
  cfg0.model.stage1_epochs = 0;
  auto st0 = init_world_model<float>(cfg0.model, 8);
  auto st0_ref = init_world_model<float>(cfg0.model, 8);
  train_stage1(st0, samples);
  for (std::size_t i = 0; i < st0.params.count(); ++i) {
    CHECK((st0.params.value(i).array() == st0_ref.params.value(i).array()).all());
  }

  std::vector<Sample> empty;
  CHECK_THROWS_AS(train_stage1(st, empty), InvalidArgument);
}

TEST_CASE("export_behavior_set: cardinality, shapes, anti-collapse, purity") {
  RunConfig cfg = small_cfg();
  cfg.episodes_per_domain = 4;
  cfg.model.stage1_epochs = 10;
  Dataset ds = small_dataset(cfg, 9);
  auto samples = dataset_samples(ds);
  auto st = init_world_model<float>(cfg.model, 10);
  train_stage1(st, samples);

  auto trip = export_behavior_set(st, samples);
  REQUIRE(trip.size() == samples.size());
  for (std::size_t i = 1; i < trip.size(); ++i) CHECK(trip[i - 1].sample_id < trip[i].sample_id);
  for (const auto& b : trip) {
    CHECK(b.h_t.rows() == cfg.model.L());
    CHECK(b.h_t.cols() == cfg.model.D);
    CHECK(b.psi_t.rows() == cfg.model.L());
    CHECK(b.psi_t.cols() == cfg.model.D);
    CHECK(b.gt_waypoints.rows() == cfg.model.T);
    CHECK(b.gt_waypoints.cols() == 3);
    CHECK(b.h_t.allFinite());
    CHECK(b.psi_t.allFinite());
  }

  // anti-collapse witness: median per-dimension std of pooled H_t > 1e-3
  Matd pooled(static_cast<Eigen::Index>(trip.size()), cfg.model.D);
  for (std::size_t i = 0; i < trip.size(); ++i) {
    pooled.row(static_cast<Eigen::Index>(i)) =
        trip[i].h_t.cast<double>().colwise().mean();
  }
  std::vector<double> stds;
  for (Eigen::Index c = 0; c < pooled.cols(); ++c) {
    double m = pooled.col(c).mean();
    stds.push_back(std::sqrt((pooled.col(c).array() - m).square().mean()));
  }
  std::sort(stds.begin(), stds.end());
  CHECK(stds[stds.size() / 2] > 1e-3);

  // re-export is bit-identical
  auto trip2 = export_behavior_set(st, samples);
  for (std::size_t i = 0; i < trip.size(); ++i) {
    CHECK((trip[i].h_t.array() == trip2[i].h_t.array()).all());
    CHECK((trip[i].psi_t.array() == trip2[i].psi_t.array()).all());
  }
}

TEST_CASE("trajectory sensitivity dominates over identical-waypoint pairs") {
  RunConfig cfg = small_cfg();
  cfg.episodes_per_domain = 6;
  cfg.model.stage1_epochs = 10;
  Dataset ds = small_dataset(cfg, 11);
  auto samples = dataset_samples(ds);
  auto st = init_world_model<float>(cfg.model, 12);
  train_stage1(st, samples);

  // Psi(H, W) with the same H but waypoints drawn from different behaviors
  // should move more than Psi recomputed with identical waypoints (exactly 0).
  const Sample* a = nullptr;
  const Sample* b = nullptr;
  for (const auto& s : samples) {
    if (!a && s.behavior_label == 0) a = &s;
    if (!b && s.behavior_label == 1) b = &s;
  }
  REQUIRE(a != nullptr);
  REQUIRE(b != nullptr);
  Tape<float> t;
  ModelGraph<float> g(t, st.params, false);
  auto h = encode_views(g, "enc", st.mc, a->frame_t->observation);
  Matf wa = waypoints_to_mat<float>(a->gt_waypoints);
  Matf wb = waypoints_to_mat<float>(b->gt_waypoints);
  auto pa = wm_fuse_trajectory(g, h, t.constant(flatten_trajectory(wa)));
  auto pb = wm_fuse_trajectory(g, h, t.constant(flatten_trajectory(wb)));
  auto pa2 = wm_fuse_trajectory(g, h, t.constant(flatten_trajectory(wa)));
  double cross = (t.val(pa) - t.val(pb)).norm();
  double same = (t.val(pa) - t.val(pa2)).norm();
  CHECK(cross > same);
  CHECK(same == 0.0);
}
