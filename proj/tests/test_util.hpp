#pragma once

#include <cmath>
#include <functional>

#include "heat/matrix.hpp"
#include "heat/rng.hpp"

namespace heat_test {

using heat::Mat;
using heat::Matd;

inline Matd random_mat(heat::Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Matd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.uniform(-1.0, 1.0);
  return m;
}

// Central finite differences of a scalar function w.r.t. every entry of x.
inline Matd fd_grad(const std::function<double(const Matd&)>& f, Matd x, double eps = 1e-5) {
  Matd g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double orig = x.data()[i];
    x.data()[i] = orig + eps;
    double fp = f(x);
    x.data()[i] = orig - eps;
    double fm = f(x);
    x.data()[i] = orig;
    g.data()[i] = (fp - fm) / (2 * eps);
  }
  return g;
}

inline double rel_err(const Matd& a, const Matd& b) {
  double denom = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / denom;
}

}  // namespace heat_test
