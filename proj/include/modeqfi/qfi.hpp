#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "modeqfi/states.hpp"

namespace modeqfi {

/// A^(l) for l = 0..3: omega, sigma_z, 1, sigma_x, each divided by sqrt(2).
inline const std::array<Eigen::Matrix2d, 4>& basis_matrices() {
  static const std::array<Eigen::Matrix2d, 4> blocks = [] {
    const double s = 1.0 / std::sqrt(2.0);
    std::array<Eigen::Matrix2d, 4> a;
    a[0] << 0, s, -s, 0;
    a[1] << s, 0, 0, -s;
    a[2] << s, 0, 0, s;
    a[3] << 0, s, s, 0;
    return a;
  }();
  return blocks;
}

/// A_jk^(l): the 2N x 2N matrix holding A^(l) at mode block (j, k).
inline Matrix basis_matrix(int modes, int j, int k, int l) {
  if (j < 0 || k < 0 || j >= modes || k >= modes || l < 0 || l > 3)
    fail(ErrorKind::InvalidDimension, "basis_matrix: index out of range");
  Matrix a = Matrix::Zero(2 * modes, 2 * modes);
  a.block<2, 2>(2 * j, 2 * k) = basis_matrices()[l];
  return a;
}

/// One (j, k, l) term of the covariance part of the QFI.
struct SldTerm {
  int j = 0, k = 0, l = 0;
  double a = 0.0;            ///< Tr[A_jk^(l) S^{-1} dσ S^{-T}]
  double denominator = 0.0;  ///< ν_j ν_k - (-1)^l
  double contribution = 0.0; ///< a² / (2 denominator), zero when dropped
  bool dropped = false;      ///< 0/0 term removed by the singular-denominator policy
};

struct SldCoefficients {
  std::optional<double> L0;
  Vector L1;
  Matrix L2;
  std::vector<SldTerm> terms;
};

struct QfiBreakdown {
  double total = 0.0;
  double f_sigma = 0.0;
  double f_xbar = 0.0;
  double f_sigma_trace = std::numeric_limits<double>::quiet_NaN();  ///< Tr[L2 dσ], when the trace route ran
  std::vector<SldTerm> terms;
  std::map<std::string, double> groups;
  int clamped = 0;
};

namespace detail {

inline void require_derivatives(const GaussianState& s, const Matrix& dsigma, const Vector& dxbar, const Tolerances& tol) {
  const auto dim = s.xbar.size();
  if (dsigma.rows() != dim || dsigma.cols() != dim || dxbar.size() != dim)
    fail(ErrorKind::ShapeError, "derivatives do not match the state dimension " + std::to_string(dim));
  if (!dsigma.allFinite() || !dxbar.allFinite()) fail(ErrorKind::ShapeError, "derivatives have non-finite entries");
  if ((dsigma - dsigma.transpose()).norm() > tol.symm * frobenius_scale(dsigma))
    fail(ErrorKind::ShapeError, "covariance derivative is not symmetric");
}

inline double sign_of_l(int l) { return (l % 2 == 0) ? 1.0 : -1.0; }

/// Coefficients a_jk^(l) of X = S^{-1} dσ S^{-T} against symplectic eigenvalues ν.
inline std::vector<SldTerm> sld_terms(const Matrix& x, const Vector& nu, const Tolerances& tol) {
  const int n = static_cast<int>(nu.size());
  const auto& a = basis_matrices();
  std::vector<SldTerm> terms;
  terms.reserve(4 * n * n);
  for (int l = 0; l < 4; ++l)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        SldTerm t{j, k, l};
        t.a = (a[l] * x.block<2, 2>(2 * k, 2 * j)).trace();
        t.denominator = nu(j) * nu(k) - sign_of_l(l);
        if (t.denominator < tol.sing) {
          if (std::abs(t.a) >= tol.zero) throw SingularSldError(j, k, l, t.a, t.denominator);
          t.dropped = true;
        } else {
          t.contribution = 0.5 * t.a * t.a / t.denominator;
        }
        terms.push_back(t);
      }
  return terms;
}

inline double sum_contributions(const std::vector<SldTerm>& terms) {
  double f = 0.0;
  for (const auto& t : terms) f += t.contribution;
  return f;
}

/// L2 = ½ Σ a/(ν_jν_k - (-1)^l) S^{-T} A_jk^(l) S^{-1}.
inline Matrix assemble_l2(const std::vector<SldTerm>& terms, const Matrix& s_inv) {
  Matrix l2 = Matrix::Zero(s_inv.rows(), s_inv.cols());
  const auto& a = basis_matrices();
  for (const auto& t : terms) {
    if (t.dropped || t.a == 0.0) continue;
    l2 += (0.5 * t.a / t.denominator) * s_inv.middleRows<2>(2 * t.j).transpose() * a[t.l] * s_inv.middleRows<2>(2 * t.k);
  }
  return symmetrized(l2);
}

inline double inverse_quadratic_form(const Matrix& sigma, const Vector& v) {
  if (v.isZero(0.0)) return 0.0;
  Eigen::LDLT<Matrix> ldlt(sigma);
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0)
    throw DecompositionError("covariance is singular", 0.0);
  return v.dot(ldlt.solve(v));
}

}  // namespace detail

inline SldCoefficients sld(const GaussianState& s, const Matrix& dsigma, const Vector& dxbar,
                           const Tolerances& tol = kDefaultTolerances, bool with_l0 = true) {
  detail::require_derivatives(s, dsigma, dxbar, tol);
  const auto w = williamson(s.sigma, tol);
  const Matrix s_inv = symplectic_inverse(w.S);
  const Matrix ds = detail::symmetrized(dsigma);
  SldCoefficients c;
  c.terms = detail::sld_terms(s_inv * ds * s_inv.transpose(), w.nu, tol);
  c.L2 = detail::assemble_l2(c.terms, s_inv);
  c.L1 = s.sigma.ldlt().solve(dxbar) - c.L2 * s.xbar;
  if (with_l0) c.L0 = -0.5 * (s.sigma * c.L2).trace() - c.L1.dot(s.xbar) - 0.5 * s.xbar.dot(c.L2 * s.xbar);
  return c;
}

/// F = F_σ + F_x̄. F_σ is evaluated both as the double sum over terms and as Tr[L2 dσ].
inline QfiBreakdown qfi(const GaussianState& s, const Matrix& dsigma, const Vector& dxbar,
                        const Tolerances& tol = kDefaultTolerances) {
  detail::require_derivatives(s, dsigma, dxbar, tol);
  const auto w = williamson(s.sigma, tol);
  const Matrix s_inv = symplectic_inverse(w.S);
  const Matrix ds = detail::symmetrized(dsigma);
  QfiBreakdown out;
  out.terms = detail::sld_terms(s_inv * ds * s_inv.transpose(), w.nu, tol);
  out.f_sigma = detail::sum_contributions(out.terms);
  out.f_sigma_trace = (detail::assemble_l2(out.terms, s_inv) * ds).trace();
  const double gap = std::abs(out.f_sigma_trace - out.f_sigma);
  if (gap > tol.xcheck * std::max(1.0, std::abs(out.f_sigma)))
    fail(ErrorKind::InternalInconsistency, "trace and double-sum forms of F_sigma differ by " + std::to_string(gap));
  out.f_xbar = detail::inverse_quadratic_form(s.sigma, dxbar);
  out.total = out.f_sigma + out.f_xbar;
  out.clamped = w.clamped;
  out.groups["covariance"] = out.f_sigma;
  out.groups["displacement"] = out.f_xbar;
  return out;
}

/// θ ↦ state, with optional analytic derivatives; otherwise central differences.
struct StateCurve {
  std::function<GaussianState(double)> state;
  std::function<std::pair<Vector, Matrix>(double)> derivative;  ///< (∂x̄, ∂σ); may be empty
  double step = 0.0;                                             ///< 0 selects 1e-5 max(1, |θ|)
};

struct CurvePoint {
  GaussianState state;
  Vector dxbar;
  Matrix dsigma;
  double step = 0.0;  ///< finite-difference step used, 0 for analytic derivatives
};

inline CurvePoint differentiate(const StateCurve& curve, double theta) {
  if (!curve.state) fail(ErrorKind::InputError, "state curve has no evaluator");
  try {
    CurvePoint p{curve.state(theta), {}, {}, 0.0};
    if (curve.derivative) {
      std::tie(p.dxbar, p.dsigma) = curve.derivative(theta);
      return p;
    }
    const double h = curve.step > 0.0 ? curve.step : 1e-5 * std::max(1.0, std::abs(theta));
    const GaussianState plus = curve.state(theta + h), minus = curve.state(theta - h);
    p.dxbar = (plus.xbar - minus.xbar) / (2.0 * h);
    p.dsigma = detail::symmetrized((plus.sigma - minus.sigma) / (2.0 * h));
    p.step = h;
    return p;
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("at theta=") + std::to_string(theta) + ": " + e.what());
  }
}

inline QfiBreakdown qfi_curve(const StateCurve& curve, double theta, const Tolerances& tol = kDefaultTolerances) {
  const CurvePoint p = differentiate(curve, theta);
  try {
    return qfi(p.state, p.dsigma, p.dxbar, tol);
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("at theta=") + std::to_string(theta) + ": " + e.what());
  }
}

}  // namespace modeqfi
