#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <vector>

namespace heat {

// All dense math runs on row-major dynamic matrices so that serialized
// payloads (row-major little-endian f32) map 1:1 onto in-memory storage.
template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matf = Mat<float>;
using Matd = Mat<double>;

constexpr double kPi = 3.14159265358979323846;

// Wraps an angle into the principal range (-pi, pi].
inline double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

template <class S>
bool all_finite(const Mat<S>& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (!std::isfinite(static_cast<double>(m.data()[i]))) return false;
  }
  return true;
}

template <class S, class S2>
Mat<S> cast_mat(const Mat<S2>& m) {
  return m.template cast<S>();
}

}  // namespace heat
