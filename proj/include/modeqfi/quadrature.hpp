#pragma once

#include <string>

#include "modeqfi/symplectic.hpp"

namespace modeqfi {

enum class QuadratureRule { Trapezoid, Simpson };

inline const char* to_string(QuadratureRule rule) { return rule == QuadratureRule::Simpson ? "simpson" : "trapezoid"; }

/// Weights of a composite rule on `points` equally spaced nodes.
/// Simpson needs an odd node count; with an even count the last interval falls back to the trapezoid rule.
inline Vector quadrature_weights(Eigen::Index points, double spacing, QuadratureRule rule) {
  if (points < 2) fail(ErrorKind::InvalidDimension, "quadrature needs at least two nodes");
  if (!(spacing > 0.0)) fail(ErrorKind::DomainError, "quadrature spacing must be positive");
  Vector w = Vector::Constant(points, spacing);
  if (rule == QuadratureRule::Trapezoid || points < 3) {
    w(0) = w(points - 1) = 0.5 * spacing;
    return w;
  }
  const Eigen::Index simpson_points = (points % 2 == 1) ? points : points - 1;
  w.setZero();
  for (Eigen::Index i = 0; i < simpson_points; ++i) {
    const double c = (i == 0 || i == simpson_points - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    w(i) = c * spacing / 3.0;
  }
  if (simpson_points < points) {
    w(points - 2) += 0.5 * spacing;
    w(points - 1) += 0.5 * spacing;
  }
  return w;
}

/// Σ_i w_i conj(f_i) g_i for every pair of columns: result(k, l) = (f_l|g_k).
inline CMatrix weighted_overlaps(const CMatrix& f, const CMatrix& g, const Vector& weights) {
  return (weights.cast<Complex>().asDiagonal() * g).transpose() * f.conjugate();
}

}  // namespace modeqfi
