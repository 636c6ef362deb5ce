#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "heat/binio.hpp"
#include "heat/matrix.hpp"

namespace heat {

// Reverse-mode tape over dense row-major matrices, templated on the scalar
// so the exact same graph runs in f32 for training and f64 for the
// finite-difference oracles.
//
// Nodes created from constant() never require gradients; whole subgraphs of
// constants (stop-gradient targets, frozen priors) are skipped during the
// backward sweep.
template <class S>
class Tape {
 public:
  using Var = std::int32_t;

  Var input(Mat<S> v) { return make(std::move(v), true, {}); }
  Var constant(Mat<S> v) { return make(std::move(v), false, {}); }

  const Mat<S>& val(Var v) const { return nodes_[check(v)].value; }

  // Gradient of the last backward() target w.r.t. this node. Zero matrix if
  // the node was unreachable.
  Mat<S> grad(Var v) const {
    const Node& n = nodes_[check(v)];
    if (n.has_grad) return n.grad;
    return Mat<S>::Zero(n.value.rows(), n.value.cols());
  }

  std::size_t size() const { return nodes_.size(); }

  void backward(Var out_var) {
    Node& out = nodes_[check(out_var)];
    if (out.value.rows() != 1 || out.value.cols() != 1) {
      throw InvalidArgument("backward target must be scalar (1x1)");
    }
    accumulate(out_var, Mat<S>::Constant(1, 1, S(1)));
    for (Var i = out_var; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.has_grad && n.back) {
        last_ = i;
        n.back(*this);
      }
    }
  }

  // ---- elementwise / structural ops ----

  Var add(Var a, Var b) {
    same_shape(a, b, "add");
    Var out = make(val(a) + val(b), needs(a) || needs(b), [a, b](Tape& t) {
      Var o = t.last_;
      t.accumulate(a, t.nodes_[o].grad);
      t.accumulate(b, t.nodes_[o].grad);
    });
    return out;
  }

  Var sub(Var a, Var b) {
    same_shape(a, b, "sub");
    return make(val(a) - val(b), needs(a) || needs(b), [a, b](Tape& t) {
      Var o = t.last_;
      t.accumulate(a, t.nodes_[o].grad);
      t.accumulate(b, -t.nodes_[o].grad);
    });
  }

  // c1*A + c2*B
  Var add_scaled(Var a, S c1, Var b, S c2) {
    same_shape(a, b, "add_scaled");
    return make(c1 * val(a) + c2 * val(b), needs(a) || needs(b), [a, b, c1, c2](Tape& t) {
      Var o = t.last_;
      t.accumulate(a, c1 * t.nodes_[o].grad);
      t.accumulate(b, c2 * t.nodes_[o].grad);
    });
  }

  Var scale(Var a, S c) {
    return make(c * val(a), needs(a), [a, c](Tape& t) {
      Var o = t.last_;
      t.accumulate(a, c * t.nodes_[o].grad);
    });
  }

  Var relu(Var a) {
    Mat<S> y = val(a).cwiseMax(S(0));
    return make(std::move(y), needs(a), [a](Tape& t) {
      Var o = t.last_;
      Mat<S> mask = (t.val(a).array() > S(0)).template cast<S>();
      t.accumulate(a, t.nodes_[o].grad.cwiseProduct(mask));
    });
  }

  Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
    const Mat<S>& v = val(a);
    if (v.size() != rows * cols) throw InvalidArgument("reshape: size mismatch");
    Mat<S> y(rows, cols);
    std::copy(v.data(), v.data() + v.size(), y.data());
    return make(std::move(y), needs(a), [a, rows, cols](Tape& t) {
      Var o = t.last_;
      const Mat<S>& src = t.val(a);
      Mat<S> g(src.rows(), src.cols());
      std::copy(t.nodes_[o].grad.data(), t.nodes_[o].grad.data() + rows * cols, g.data());
      t.accumulate(a, std::move(g));
    });
  }

  // ---- linear algebra ----

  Var matmul(Var a, Var b) {
    if (val(a).cols() != val(b).rows()) throw InvalidArgument("matmul: inner dim mismatch");
    return make(val(a) * val(b), needs(a) || needs(b), [a, b](Tape& t) {
      Var o = t.last_;
      const Mat<S>& g = t.nodes_[o].grad;
      if (t.needs(a)) t.accumulate(a, g * t.val(b).transpose());
      if (t.needs(b)) t.accumulate(b, t.val(a).transpose() * g);
    });
  }

  // A * B^T
  Var matmul_nt(Var a, Var b) {
    if (val(a).cols() != val(b).cols()) throw InvalidArgument("matmul_nt: dim mismatch");
    return make(val(a) * val(b).transpose(), needs(a) || needs(b), [a, b](Tape& t) {
      Var o = t.last_;
      const Mat<S>& g = t.nodes_[o].grad;
      if (t.needs(a)) t.accumulate(a, g * t.val(b));
      if (t.needs(b)) t.accumulate(b, g.transpose() * t.val(a));
    });
  }

  // A (R x C) + row vector b (1 x C) broadcast over rows.
  Var add_rowvec(Var a, Var b) {
    if (val(b).rows() != 1 || val(b).cols() != val(a).cols()) {
      throw InvalidArgument("add_rowvec: bias shape mismatch");
    }
    Mat<S> y = val(a).rowwise() + val(b).row(0);
    return make(std::move(y), needs(a) || needs(b), [a, b](Tape& t) {
      Var o = t.last_;
      const Mat<S>& g = t.nodes_[o].grad;
      t.accumulate(a, g);
      if (t.needs(b)) t.accumulate(b, g.colwise().sum());
    });
  }

  Var mean_rows(Var a) {
    const Mat<S>& v = val(a);
    Mat<S> y = v.colwise().mean();
    return make(std::move(y), needs(a), [a](Tape& t) {
      Var o = t.last_;
      const Mat<S>& v2 = t.val(a);
      S inv = S(1) / static_cast<S>(v2.rows());
      Mat<S> g = (t.nodes_[o].grad * inv).colwise().replicate(v2.rows());
      t.accumulate(a, std::move(g));
    });
  }

  // ---- row-wise nonlinear ops ----

  Var row_softmax(Var a) {
    const Mat<S>& x = val(a);
    Mat<S> y(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      S mx = x.row(r).maxCoeff();
      Eigen::Array<S, 1, Eigen::Dynamic> e = (x.row(r).array() - mx).exp();
      y.row(r) = e / e.sum();
    }
    return make(std::move(y), needs(a), [a](Tape& t) {
      Var o = t.last_;
      const Mat<S>& yv = t.nodes_[o].value;
      const Mat<S>& g = t.nodes_[o].grad;
      Mat<S> dx(yv.rows(), yv.cols());
      for (Eigen::Index r = 0; r < yv.rows(); ++r) {
        S dot = g.row(r).dot(yv.row(r));
        dx.row(r) = yv.row(r).cwiseProduct(g.row(r) - Mat<S>::Constant(1, yv.cols(), dot));
      }
      t.accumulate(a, std::move(dx));
    });
  }

  // Per-row layer normalization with learned gain/bias (1 x C each).
  Var layer_norm(Var a, Var gain, Var bias, S eps = S(1e-5)) {
    const Mat<S>& x = val(a);
    Eigen::Index R = x.rows(), C = x.cols();
    if (val(gain).cols() != C || val(bias).cols() != C) {
      throw InvalidArgument("layer_norm: gain/bias width mismatch");
    }
    Mat<S> xhat(R, C), y(R, C);
    std::vector<S> inv_sigma(static_cast<std::size_t>(R));
    for (Eigen::Index r = 0; r < R; ++r) {
      S mu = x.row(r).mean();
      S var = (x.row(r).array() - mu).square().mean();
      S is = S(1) / std::sqrt(var + eps);
      inv_sigma[static_cast<std::size_t>(r)] = is;
      xhat.row(r) = (x.row(r).array() - mu) * is;
      y.row(r) = xhat.row(r).cwiseProduct(val(gain).row(0)) + val(bias).row(0);
    }
    Var xhat_node = constant(xhat);  // cached for backward
    return make(std::move(y), needs(a) || needs(gain) || needs(bias),
                [a, gain, bias, xhat_node, inv_sigma](Tape& t) {
                  Var o = t.last_;
                  const Mat<S>& g = t.nodes_[o].grad;
                  const Mat<S>& xh = t.val(xhat_node);
                  Eigen::Index R2 = g.rows(), C2 = g.cols();
                  if (t.needs(gain)) t.accumulate(gain, g.cwiseProduct(xh).colwise().sum());
                  if (t.needs(bias)) t.accumulate(bias, g.colwise().sum());
                  if (t.needs(a)) {
                    Mat<S> dx(R2, C2);
                    S invC = S(1) / static_cast<S>(C2);
                    for (Eigen::Index r = 0; r < R2; ++r) {
                      Eigen::Matrix<S, 1, Eigen::Dynamic> gh =
                          g.row(r).cwiseProduct(t.val(gain).row(0));
                      S m1 = gh.mean();
                      S m2 = gh.cwiseProduct(xh.row(r)).mean();
                      dx.row(r) = inv_sigma[static_cast<std::size_t>(r)] *
                                  (gh.array() - m1 - xh.row(r).array() * m2);
                      (void)invC;
                    }
                    t.accumulate(a, std::move(dx));
                  }
                });
  }

  // L2-normalizes every row. Rows with norm below `tiny` map to the fixed
  // unit vector e1 and receive zero gradient.
  Var row_l2_normalize(Var a, S tiny = S(1e-12)) {
    const Mat<S>& x = val(a);
    Eigen::Index R = x.rows(), C = x.cols();
    Mat<S> y(R, C);
    std::vector<S> inv_norm(static_cast<std::size_t>(R), S(0));
    for (Eigen::Index r = 0; r < R; ++r) {
      S n = x.row(r).norm();
      if (n < tiny) {
        y.row(r).setZero();
        y(r, 0) = S(1);
      } else {
        inv_norm[static_cast<std::size_t>(r)] = S(1) / n;
        y.row(r) = x.row(r) / n;
      }
    }
    return make(std::move(y), needs(a), [a, inv_norm](Tape& t) {
      Var o = t.last_;
      const Mat<S>& yv = t.nodes_[o].value;
      const Mat<S>& g = t.nodes_[o].grad;
      Mat<S> dx = Mat<S>::Zero(yv.rows(), yv.cols());
      for (Eigen::Index r = 0; r < yv.rows(); ++r) {
        S in = inv_norm[static_cast<std::size_t>(r)];
        if (in == S(0)) continue;
        S dot = g.row(r).dot(yv.row(r));
        dx.row(r) = in * (g.row(r) - dot * yv.row(r));
      }
      t.accumulate(a, std::move(dx));
    });
  }

  // ---- reductions / losses ----

  Var mean_all(Var a) {
    return make(Mat<S>::Constant(1, 1, val(a).mean()), needs(a), [a](Tape& t) {
      Var o = t.last_;
      const Mat<S>& v = t.val(a);
      S g = t.nodes_[o].grad(0, 0) / static_cast<S>(v.size());
      t.accumulate(a, Mat<S>::Constant(v.rows(), v.cols(), g));
    });
  }

  Var mse_loss(Var a, Var b) {
    same_shape(a, b, "mse_loss");
    Mat<S> d = val(a) - val(b);
    S loss = d.squaredNorm() / static_cast<S>(d.size());
    Var diff = constant(d);
    return make(Mat<S>::Constant(1, 1, loss), needs(a) || needs(b), [a, b, diff](Tape& t) {
      Var o = t.last_;
      const Mat<S>& d2 = t.val(diff);
      S c = S(2) * t.nodes_[o].grad(0, 0) / static_cast<S>(d2.size());
      if (t.needs(a)) t.accumulate(a, c * d2);
      if (t.needs(b)) t.accumulate(b, -c * d2);
    });
  }

  Var l1_loss(Var a, Var b) {
    same_shape(a, b, "l1_loss");
    Mat<S> d = val(a) - val(b);
    S loss = d.cwiseAbs().sum() / static_cast<S>(d.size());
    Var diff = constant(d);
    return make(Mat<S>::Constant(1, 1, loss), needs(a) || needs(b), [a, b, diff](Tape& t) {
      Var o = t.last_;
      const Mat<S>& d2 = t.val(diff);
      S c = t.nodes_[o].grad(0, 0) / static_cast<S>(d2.size());
      Mat<S> sg(d2.rows(), d2.cols());
      for (Eigen::Index i = 0; i < d2.size(); ++i) {
        S v = d2.data()[i];
        sg.data()[i] = v > S(0) ? c : (v < S(0) ? -c : S(0));
      }
      if (t.needs(a)) t.accumulate(a, sg);
      if (t.needs(b)) t.accumulate(b, -sg);
    });
  }

  // out(r, m) = Q.row(r) . Ks[m].row(r); every Ks[m] has Q's shape.
  Var dot_rows_stack(Var q, const std::vector<Var>& ks) {
    const Mat<S>& Q = val(q);
    Eigen::Index R = Q.rows(), M = static_cast<Eigen::Index>(ks.size());
    bool any = needs(q);
    Mat<S> y(R, M);
    for (Eigen::Index m = 0; m < M; ++m) {
      const Mat<S>& K = val(ks[static_cast<std::size_t>(m)]);
      if (K.rows() != R || K.cols() != Q.cols()) {
        throw InvalidArgument("dot_rows_stack: slot shape mismatch");
      }
      any = any || needs(ks[static_cast<std::size_t>(m)]);
      for (Eigen::Index r = 0; r < R; ++r) y(r, m) = Q.row(r).dot(K.row(r));
    }
    return make(std::move(y), any, [q, ks](Tape& t) {
      Var o = t.last_;
      const Mat<S>& g = t.nodes_[o].grad;
      const Mat<S>& Q2 = t.val(q);
      if (t.needs(q)) {
        Mat<S> dq = Mat<S>::Zero(Q2.rows(), Q2.cols());
        for (std::size_t m = 0; m < ks.size(); ++m) {
          const Mat<S>& K = t.val(ks[m]);
          for (Eigen::Index r = 0; r < Q2.rows(); ++r) {
            dq.row(r) += g(r, static_cast<Eigen::Index>(m)) * K.row(r);
          }
        }
        t.accumulate(q, std::move(dq));
      }
      for (std::size_t m = 0; m < ks.size(); ++m) {
        if (!t.needs(ks[m])) continue;
        Mat<S> dk = Mat<S>::Zero(Q2.rows(), Q2.cols());
        for (Eigen::Index r = 0; r < Q2.rows(); ++r) {
          dk.row(r) = g(r, static_cast<Eigen::Index>(m)) * Q2.row(r);
        }
        t.accumulate(ks[m], std::move(dk));
      }
    });
  }

  // out.row(r) = sum_m W(r, m) * slots[m].row(r). Slots are plain constants
  // (the frozen memory tensor), so gradient flows into the weights only.
  Var mix_rows(Var w, const std::vector<Mat<S>>& slots) {
    const Mat<S>& W = val(w);
    if (slots.empty()) throw InvalidArgument("mix_rows: no slots");
    Eigen::Index R = W.rows(), C = slots[0].cols();
    if (W.cols() != static_cast<Eigen::Index>(slots.size())) {
      throw InvalidArgument("mix_rows: weight width != slot count");
    }
    Mat<S> y = Mat<S>::Zero(R, C);
    for (std::size_t m = 0; m < slots.size(); ++m) {
      if (slots[m].rows() != R || slots[m].cols() != C) {
        throw InvalidArgument("mix_rows: slot shape mismatch");
      }
      for (Eigen::Index r = 0; r < R; ++r) {
        y.row(r) += W(r, static_cast<Eigen::Index>(m)) * slots[m].row(r);
      }
    }
    auto slots_copy = slots;
    return make(std::move(y), needs(w), [w, slots_copy](Tape& t) {
      Var o = t.last_;
      const Mat<S>& g = t.nodes_[o].grad;
      Mat<S> dw(g.rows(), static_cast<Eigen::Index>(slots_copy.size()));
      for (std::size_t m = 0; m < slots_copy.size(); ++m) {
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          dw(r, static_cast<Eigen::Index>(m)) = g.row(r).dot(slots_copy[m].row(r));
        }
      }
      t.accumulate(w, std::move(dw));
    });
  }

  // Mean over rows of softmax cross-entropy against one fixed class.
  Var ce_rows(Var logits, Eigen::Index target) {
    const Mat<S>& x = val(logits);
    if (target < 0 || target >= x.cols()) throw InvalidArgument("ce_rows: bad target");
    Eigen::Index R = x.rows();
    Mat<S> p(R, x.cols());
    S total = S(0);
    for (Eigen::Index r = 0; r < R; ++r) {
      S mx = x.row(r).maxCoeff();
      Eigen::Array<S, 1, Eigen::Dynamic> e = (x.row(r).array() - mx).exp();
      S z = e.sum();
      p.row(r) = e / z;
      total += std::log(z) + mx - x(r, target);
    }
    Var probs = constant(p);
    return make(Mat<S>::Constant(1, 1, total / static_cast<S>(R)), needs(logits),
                [logits, probs, target](Tape& t) {
                  Var o = t.last_;
                  Mat<S> d = t.val(probs);
                  S c = t.nodes_[o].grad(0, 0) / static_cast<S>(d.rows());
                  for (Eigen::Index r = 0; r < d.rows(); ++r) d(r, target) -= S(1);
                  t.accumulate(logits, c * d);
                });
  }

  bool needs(Var v) const { return nodes_[check(v)].requires_grad; }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::function<void(Tape&)> back;
  };

  Var check(Var v) const {
    if (v < 0 || static_cast<std::size_t>(v) >= nodes_.size()) {
      throw InvalidArgument("bad tape var");
    }
    return v;
  }

  void same_shape(Var a, Var b, const char* op) const {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols()) {
      throw InvalidArgument(std::string(op) + ": shape mismatch");
    }
  }

  Var make(Mat<S> v, bool requires_grad, std::function<void(Tape&)> back) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    n.back = requires_grad ? std::move(back) : std::function<void(Tape&)>{};
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
  }

  void accumulate(Var v, Mat<S> g) {
    Node& n = nodes_[check(v)];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = std::move(g);
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  // Backward lambdas address "their own" node via last_: set before each
  // lambda runs. Simpler than capturing the output id at construction time.
  friend struct BackwardScope;
  Var last_ = -1;
  std::vector<Node> nodes_;
};

}  // namespace heat
