#pragma once

// Central finite differences: the independent oracle for every analytic
// gradient in the test suites. Nothing here calls backward().

#include <algorithm>
#include <functional>

#include "splitvfu/matrix.hpp"

namespace splitvfu::testing {

inline Vector central_difference(const std::function<double(const Vector&)>& f, const Vector& x,
                                 double step = kNumerics.finite_difference_step) {
  Vector grad(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = f(probe);
    probe[i] = orig - step;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

// ||a - b|| / max(||a||, ||b||), with an absolute floor for all-zero gradients.
inline double relative_error(const Vector& a, const Vector& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

inline Vector as_vector(const Matrix& m) {
  return Eigen::Map<const Vector>(m.data(), m.size());
}

inline Matrix as_matrix(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

}  // namespace splitvfu::testing
