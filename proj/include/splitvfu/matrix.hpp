#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <span>

namespace splitvfu {

// Row-major so a batch row is one contiguous sample; this is also the wire
// layout of representations on the message bus.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Tolerances shared by the numerics, projection and anchor code.
struct NumericsConfig {
  double unit_norm_tolerance = 1e-12;
  double orthogonality_tolerance = 1e-10;  // scaled by ||g_r|| * ||g_f||
  double simplex_tolerance = 1e-9;
  double kl_clamp = 1e-12;
  double finite_difference_step = 1e-5;
  double finite_difference_rel_tolerance = 1e-4;
};

inline constexpr NumericsConfig kNumerics{};

bool all_finite(const Matrix& m);

// Flattened gradient over every parameter of a model in a fixed layer order.
class GradientVector {
 public:
  GradientVector() = default;
  explicit GradientVector(Eigen::Index length) : values_(Vector::Zero(length)) {}
  explicit GradientVector(Vector values) : values_(std::move(values)) {}

  Eigen::Index size() const { return values_.size(); }
  const Vector& values() const { return values_; }
  Vector& values() { return values_; }
  double operator[](Eigen::Index i) const { return values_[i]; }
  double& operator[](Eigen::Index i) { return values_[i]; }

  double dot(const GradientVector& other) const;
  double norm() const { return values_.norm(); }
  double squared_norm() const { return values_.squaredNorm(); }
  bool is_finite() const { return values_.allFinite(); }

  GradientVector& operator+=(const GradientVector& other);
  GradientVector& operator-=(const GradientVector& other);
  GradientVector& operator*=(double s);

  friend GradientVector operator+(GradientVector a, const GradientVector& b) { return a += b; }
  friend GradientVector operator-(GradientVector a, const GradientVector& b) { return a -= b; }
  friend GradientVector operator*(double s, GradientVector a) { return a *= s; }
  friend GradientVector operator*(GradientVector a, double s) { return a *= s; }

  // Concatenates blocks in order; used to build the full-model vector from
  // per-party pieces.
  static GradientVector concat(std::span<const GradientVector> blocks);

 private:
  Vector values_;
};

}  // namespace splitvfu
