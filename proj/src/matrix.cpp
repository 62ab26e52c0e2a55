#include "splitvfu/matrix.hpp"

#include "splitvfu/errors.hpp"

namespace splitvfu {

namespace {

void require_same_length(const GradientVector& a, const GradientVector& b) {
  if (a.size() != b.size()) {
    throw DimensionError("gradient length mismatch: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
}

}  // namespace

bool all_finite(const Matrix& m) { return m.allFinite(); }

double GradientVector::dot(const GradientVector& other) const {
  require_same_length(*this, other);
  return values_.dot(other.values_);
}

GradientVector& GradientVector::operator+=(const GradientVector& other) {
  require_same_length(*this, other);
  values_ += other.values_;
  return *this;
}

GradientVector& GradientVector::operator-=(const GradientVector& other) {
  require_same_length(*this, other);
  values_ -= other.values_;
  return *this;
}

GradientVector& GradientVector::operator*=(double s) {
  values_ *= s;
  return *this;
}

GradientVector GradientVector::concat(std::span<const GradientVector> blocks) {
  Eigen::Index total = 0;
  for (const auto& b : blocks) total += b.size();
  Vector out(total);
  Eigen::Index offset = 0;
  for (const auto& b : blocks) {
    out.segment(offset, b.size()) = b.values();
    offset += b.size();
  }
  return GradientVector(std::move(out));
}

}  // namespace splitvfu
