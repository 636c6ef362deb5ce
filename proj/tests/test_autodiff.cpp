#include <catch2/catch_amalgamated.hpp>

#include "heat/autodiff.hpp"
#include "heat/rng.hpp"
#include "test_util.hpp"

using heat::Matd;
using heat::Rng;
using heat::Tape;
using heat_test::fd_grad;
using heat_test::random_mat;
using heat_test::rel_err;

namespace {

// Builds a scalar-valued graph from one variable input and checks the tape
// gradient against central finite differences.
void check_grad(const std::function<Tape<double>::Var(Tape<double>&, Tape<double>::Var)>& build,
                const Matd& x0, double tol = 1e-7) {
  auto f = [&](const Matd& x) {
    Tape<double> t;
    auto in = t.input(x);
    auto out = build(t, in);
    return t.val(out)(0, 0);
  };
  Tape<double> t;
  auto in = t.input(x0);
  auto out = build(t, in);
  t.backward(out);
  Matd analytic = t.grad(in);
  Matd numeric = fd_grad(f, x0);
  INFO("rel err " << rel_err(analytic, numeric));
  REQUIRE(rel_err(analytic, numeric) < tol);
}

}  // namespace

TEST_CASE("matmul and bias gradient") {
  Rng rng(1, "t");
  Matd x = random_mat(rng, 4, 3);
  Matd w = random_mat(rng, 3, 5);
  Matd b = random_mat(rng, 1, 5);
  Matd target = random_mat(rng, 4, 5);
  check_grad(
      [&](Tape<double>& t, Tape<double>::Var in) {
        auto y = t.add_rowvec(t.matmul(in, t.constant(w)), t.constant(b));
        return t.mse_loss(y, t.constant(target));
      },
      x);
  // also w.r.t. the weight
  auto f = [&](const Matd& wv) {
    Tape<double> t;
    auto y = t.add_rowvec(t.matmul(t.constant(x), t.input(wv)), t.constant(b));
    return t.val(t.mse_loss(y, t.constant(target)))(0, 0);
  };
  Tape<double> t;
  auto wv = t.input(w);
  auto loss = t.mse_loss(t.add_rowvec(t.matmul(t.constant(x), wv), t.constant(b)), t.constant(target));
  t.backward(loss);
  REQUIRE(rel_err(t.grad(wv), fd_grad(f, w)) < 1e-7);
}

TEST_CASE("matmul_nt gradient") {
  Rng rng(2, "t");
  Matd a = random_mat(rng, 3, 4);
  Matd b = random_mat(rng, 5, 4);
  check_grad(
      [&](Tape<double>& t, Tape<double>::Var in) {
        return t.mean_all(t.relu(t.matmul_nt(in, t.constant(b))));
      },
      a);
  check_grad(
      [&](Tape<double>& t, Tape<double>::Var in) {
        return t.mean_all(t.relu(t.matmul_nt(t.constant(a), in)));
      },
      b);
}

TEST_CASE("row_softmax rows sum to one and gradient") {
  Rng rng(3, "t");
  Matd x = random_mat(rng, 6, 5, 2.0);
  Tape<double> t;
  auto y = t.row_softmax(t.constant(x));
  for (Eigen::Index r = 0; r < 6; ++r) {
    REQUIRE(t.val(y).row(r).sum() == Catch::Approx(1.0).margin(1e-12));
  }
  Matd probe = random_mat(rng, 6, 5);
  check_grad(
      [&](Tape<double>& t2, Tape<double>::Var in) {
        return t2.mse_loss(t2.row_softmax(in), t2.constant(probe));
      },
      x);
}

TEST_CASE("layer_norm gradient (input, gain, bias)") {
  Rng rng(4, "t");
  Matd x = random_mat(rng, 5, 7);
  Matd gain = random_mat(rng, 1, 7) + Matd::Ones(1, 7);
  Matd bias = random_mat(rng, 1, 7);
  Matd target = random_mat(rng, 5, 7);
  check_grad(
      [&](Tape<double>& t, Tape<double>::Var in) {
        return t.mse_loss(t.layer_norm(in, t.constant(gain), t.constant(bias)), t.constant(target));
      },
      x, 1e-6);
  auto fg = [&](const Matd& gv) {
    Tape<double> t;
    return t.val(t.mse_loss(t.layer_norm(t.constant(x), t.input(gv), t.constant(bias)),
                            t.constant(target)))(0, 0);
  };
  Tape<double> t;
  auto gv = t.input(gain);
  auto loss = t.mse_loss(t.layer_norm(t.constant(x), gv, t.constant(bias)), t.constant(target));
  t.backward(loss);
  REQUIRE(rel_err(t.grad(gv), fd_grad(fg, gain)) < 1e-6);
}

TEST_CASE("row_l2_normalize gradient and degenerate row") {
  Rng rng(5, "t");
  Matd x = random_mat(rng, 4, 6);
  Matd probe = random_mat(rng, 4, 6);
  check_grad(
      [&](Tape<double>& t, Tape<double>::Var in) {
        return t.mse_loss(t.row_l2_normalize(in), t.constant(probe));
      },
      x, 1e-6);

  Matd z = Matd::Zero(2, 4);
  z.row(1) << 3, 0, 0, 0;
  Tape<double> t;
  auto y = t.row_l2_normalize(t.constant(z));
  REQUIRE(t.val(y)(0, 0) == 1.0);  // zero row -> fixed unit fallback
  REQUIRE(t.val(y).row(0).norm() == Catch::Approx(1.0));
  REQUIRE(t.val(y)(1, 0) == Catch::Approx(1.0));
}

TEST_CASE("ce_rows closed form and gradient") {
  // uniform logits over M classes -> loss = log(M)
  Tape<double> t;
  auto logits = t.constant(Matd::Zero(3, 4));
  REQUIRE(t.val(t.ce_rows(logits, 1))(0, 0) == Catch::Approx(std::log(4.0)));

  Rng rng(6, "t");
  Matd x = random_mat(rng, 5, 3, 2.0);
  check_grad([&](Tape<double>& t2, Tape<double>::Var in) { return t2.ce_rows(in, 2); }, x);
}

TEST_CASE("dot_rows_stack and mix_rows gradients") {
  Rng rng(7, "t");
  Matd q = random_mat(rng, 4, 3);
  std::vector<Matd> ks = {random_mat(rng, 4, 3), random_mat(rng, 4, 3)};
  Matd probe = random_mat(rng, 4, 2);
  check_grad(
      [&](Tape<double>& t, Tape<double>::Var in) {
        std::vector<Tape<double>::Var> kvars = {t.constant(ks[0]), t.constant(ks[1])};
        return t.mse_loss(t.dot_rows_stack(in, kvars), t.constant(probe));
      },
      q);
  // through the k side
  check_grad(
      [&](Tape<double>& t, Tape<double>::Var in) {
        std::vector<Tape<double>::Var> kvars = {t.constant(ks[0]), in};
        return t.mse_loss(t.dot_rows_stack(t.constant(q), kvars), t.constant(probe));
      },
      ks[1]);

  Matd w = random_mat(rng, 4, 2);
  Matd probe2 = random_mat(rng, 4, 3);
  check_grad(
      [&](Tape<double>& t, Tape<double>::Var in) {
        return t.mse_loss(t.mix_rows(in, ks), t.constant(probe2));
      },
      w);
}

TEST_CASE("l1 and mse loss values") {
  Tape<double> t;
  Matd a = Matd::Zero(2, 2);
  Matd b = Matd::Ones(2, 2);
  REQUIRE(t.val(t.mse_loss(t.constant(a), t.constant(b)))(0, 0) == 1.0);
  REQUIRE(t.val(t.l1_loss(t.constant(a), t.constant(b)))(0, 0) == 1.0);
  REQUIRE(t.val(t.l1_loss(t.constant(b), t.constant(b)))(0, 0) == 0.0);
}

TEST_CASE("constants block gradient flow") {
  Rng rng(8, "t");
  Matd x = random_mat(rng, 3, 3);
  Tape<double> t;
  auto in = t.input(x);
  auto c = t.constant(x);
  auto y = t.mse_loss(t.matmul(in, c), t.constant(Matd::Ones(3, 3)));
  t.backward(y);
  REQUIRE(t.grad(c).norm() == 0.0);
  REQUIRE(t.grad(in).norm() > 0.0);
}

TEST_CASE("composite graph chain gradient") {
  Rng rng(9, "t");
  Matd x = random_mat(rng, 5, 4);
  Matd w1 = random_mat(rng, 4, 6), w2 = random_mat(rng, 6, 2);
  Matd tgt = random_mat(rng, 1, 2);
  check_grad(
      [&](Tape<double>& t, Tape<double>::Var in) {
        auto h = t.relu(t.matmul(in, t.constant(w1)));
        auto p = t.row_softmax(h);
        auto m = t.mean_rows(t.matmul(p, t.constant(w2)));
        return t.l1_loss(m, t.constant(tgt));
      },
      x, 1e-6);
}
