#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "modeqfi/qfi.hpp"
#include "modeqfi/quadrature.hpp"

namespace modeqfi {

/// Inner products of a mode family at one parameter value. Matrices are indexed (k, l):
/// overlap(k, l) = (u_l|u_k), C(k, l) = (u_l|∂u_k), G(k, l) = (∂u_l|∂u_k).
struct ModeOverlaps {
  CMatrix overlap;
  CMatrix C;
  CMatrix G;
};

class ModeFamily {
 public:
  virtual ~ModeFamily() = default;
  virtual int modes() const = 0;
  virtual ModeOverlaps evaluate(double theta) const = 0;
  virtual std::string backend() const = 0;
};

/// Overlaps supplied by a closure, e.g. from closed-form integrals.
class AnalyticModeFamily : public ModeFamily {
 public:
  AnalyticModeFamily(int modes, std::function<ModeOverlaps(double)> overlaps)
      : modes_(modes), overlaps_(std::move(overlaps)) {
    if (modes_ < 1) fail(ErrorKind::InvalidDimension, "a mode family needs at least one mode");
  }

  int modes() const override { return modes_; }
  ModeOverlaps evaluate(double theta) const override { return overlaps_(theta); }
  std::string backend() const override { return "analytic"; }

 private:
  int modes_;
  std::function<ModeOverlaps(double)> overlaps_;
};

/// Mode functions on a uniform grid. Columns are modes, rows are grid points.
/// `derivatives` holds ∂_θu_k; leave it empty to differentiate the sampler numerically in θ.
struct ModeSamples {
  double start = 0.0;
  double spacing = 0.0;
  CMatrix values;
  CMatrix derivatives;
};

class SampledModeFamily : public ModeFamily {
 public:
  SampledModeFamily(int modes, std::function<ModeSamples(double)> sampler, QuadratureRule rule = QuadratureRule::Trapezoid,
                    double theta_step = 0.0)
      : modes_(modes), sampler_(std::move(sampler)), rule_(rule), theta_step_(theta_step) {
    if (modes_ < 1) fail(ErrorKind::InvalidDimension, "a mode family needs at least one mode");
  }

  /// A fixed snapshot, e.g. loaded from a file; θ is ignored and derivatives must be present.
  static SampledModeFamily snapshot(ModeSamples samples, QuadratureRule rule = QuadratureRule::Trapezoid) {
    if (samples.derivatives.size() == 0)
      fail(ErrorKind::InputError, "a sampled snapshot needs derivative columns");
    const int n = static_cast<int>(samples.values.cols());
    return SampledModeFamily(n, [s = std::move(samples)](double) { return s; }, rule);
  }

  int modes() const override { return modes_; }
  std::string backend() const override { return std::string("quadrature/") + to_string(rule_); }

  ModeOverlaps evaluate(double theta) const override {
    ModeSamples s = sampler_(theta);
    check(s);
    if (s.derivatives.size() == 0) {
      const double h = theta_step_ > 0.0 ? theta_step_ : 1e-5 * std::max(1.0, std::abs(theta));
      const ModeSamples plus = sampler_(theta + h), minus = sampler_(theta - h);
      check(plus);
      check(minus);
      s.derivatives = (plus.values - minus.values) / (2.0 * h);
    }
    if (s.derivatives.rows() != s.values.rows() || s.derivatives.cols() != s.values.cols())
      fail(ErrorKind::ShapeError, "sampled derivatives do not match the mode samples");
    const Vector w = quadrature_weights(s.values.rows(), s.spacing, rule_);
    return ModeOverlaps{weighted_overlaps(s.values, s.values, w), weighted_overlaps(s.values, s.derivatives, w),
                        weighted_overlaps(s.derivatives, s.derivatives, w)};
  }

 private:
  void check(const ModeSamples& s) const {
    if (s.values.cols() != modes_)
      fail(ErrorKind::ShapeError, "sampler returned " + std::to_string(s.values.cols()) + " modes, expected " + std::to_string(modes_));
  }

  int modes_;
  std::function<ModeSamples(double)> sampler_;
  QuadratureRule rule_;
  double theta_step_;
};

/// Hermite-Gauss modes h_k((x - θ)/w) of a beam displaced by θ: the first `modes` of them.
/// ∂_θ h_k = (-sqrt(k/2) h_{k-1} + sqrt((k+1)/2) h_{k+1}) / w.
inline AnalyticModeFamily hermite_gauss_family(int modes, double width) {
  if (!(width > 0.0)) fail(ErrorKind::DomainError, "beam width must be positive");
  return AnalyticModeFamily(modes, [modes, width](double) {
    // expansion of ∂h_k over h_0..h_modes
    Matrix e = Matrix::Zero(modes, modes + 1);
    for (int k = 0; k < modes; ++k) {
      if (k > 0) e(k, k - 1) = -std::sqrt(k / 2.0) / width;
      e(k, k + 1) = std::sqrt((k + 1) / 2.0) / width;
    }
    ModeOverlaps o;
    o.overlap = CMatrix::Identity(modes, modes);
    o.C = e.leftCols(modes).cast<Complex>();
    o.G = (e * e.transpose()).cast<Complex>();
    return o;
  });
}

/// D_n, D_∂ and the Gram-Schmidt data behind them.
struct DerivativeCoupling {
  int n = 0;
  int m = 0;
  CMatrix c;        ///< c(k, l) = (u_l|∂u_k)
  CMatrix c_prime;  ///< c'(k, j) = (u'_j|∂u_k), zero for j created after k
  Matrix Dn;        ///< block (k, l) = embedding of c(k, l), transposed
  Matrix Dpartial;  ///< block (k, j) = embedding of c'(k, j), transposed
  std::vector<double> residual_norms;  ///< ‖∂u_k - projections‖ at each Gram-Schmidt step
  std::vector<int> source;             ///< populated mode that created derivative mode j
  double orthonormality_error = 0.0;
};

namespace detail {

inline Matrix embed_transposed_blocks(const CMatrix& c) {
  Matrix out(2 * c.rows(), 2 * c.cols());
  for (Eigen::Index k = 0; k < c.rows(); ++k)
    for (Eigen::Index j = 0; j < c.cols(); ++j) out.block<2, 2>(2 * k, 2 * j) = complex_block(c(k, j)).transpose();
  return out;
}

}  // namespace detail

/// Orthonormalizes the components of ∂u_k outside span{u} in populated-mode order.
inline DerivativeCoupling derivative_coupling(const ModeOverlaps& o, const Tolerances& tol = kDefaultTolerances) {
  const auto n = o.overlap.rows();
  if (n == 0 || o.overlap.cols() != n || o.C.rows() != n || o.C.cols() != n || o.G.rows() != n || o.G.cols() != n)
    fail(ErrorKind::ShapeError, "mode overlaps must be n x n matrices");
  DerivativeCoupling d;
  d.n = static_cast<int>(n);
  d.orthonormality_error = (o.overlap - CMatrix::Identity(n, n)).cwiseAbs().maxCoeff();
  if (d.orthonormality_error > tol.ortho)
    fail(ErrorKind::DomainError, "mode family is not orthonormal (deviation " + std::to_string(d.orthonormality_error) + ")");
  d.c = o.C;

  // Gram matrix of the residuals r_k = ∂u_k - Σ_l c(k, l) u_l: R(k, i) = (r_i|r_k).
  const CMatrix g = 0.5 * (o.G + o.G.adjoint());
  const CMatrix r = g - o.C * o.C.adjoint();
  const double scale = std::max(1.0, g.cwiseAbs().maxCoeff());
  Eigen::SelfAdjointEigenSolver<CMatrix> es(0.5 * (r + r.adjoint()), Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -tol.rank * scale)
    fail(ErrorKind::NumericalRank, "derivative Gram matrix is indefinite (min eigenvalue " +
                                       std::to_string(es.eigenvalues().minCoeff()) + ")");

  std::vector<CVector> t;  // u'_j = Σ_i t[j](i) r_i
  std::vector<std::vector<Complex>> cp(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    std::vector<Complex> row;
    double norm2 = r(k, k).real();
    for (const auto& tj : t) {
      Complex ckj = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) ckj += std::conj(tj(i)) * r(k, i);
      row.push_back(ckj);
      norm2 -= std::norm(ckj);
    }
    const double norm = std::sqrt(std::max(norm2, 0.0));
    d.residual_norms.push_back(norm);
    if (norm > tol.rank) {
      CVector next = CVector::Zero(n);
      next(k) = 1.0;
      for (std::size_t j = 0; j < t.size(); ++j) next -= row[j] * t[j];
      t.push_back(next / norm);
      row.push_back(norm);
      d.source.push_back(static_cast<int>(k));
    }
    cp[k] = std::move(row);
  }
  d.m = static_cast<int>(t.size());
  d.c_prime = CMatrix::Zero(n, d.m);
  for (Eigen::Index k = 0; k < n; ++k)
    for (std::size_t j = 0; j < cp[k].size(); ++j) d.c_prime(k, static_cast<Eigen::Index>(j)) = cp[k][j];
  d.Dn = detail::embed_transposed_blocks(d.c);
  d.Dpartial = d.m > 0 ? detail::embed_transposed_blocks(d.c_prime) : Matrix::Zero(2 * n, 0);
  return d;
}

inline DerivativeCoupling gram_schmidt_derivatives(const ModeFamily& family, double theta,
                                                   const Tolerances& tol = kDefaultTolerances) {
  const ModeOverlaps o = family.evaluate(theta);
  if (o.overlap.rows() != family.modes())
    fail(ErrorKind::ShapeError, "mode family returned overlaps of the wrong size");
  return derivative_coupling(o, tol);
}

/// A Gaussian state written in the populated modes u_k[θ], with explicit θ-derivatives of its moments.
struct ModeEncodedProblem {
  std::shared_ptr<const ModeFamily> family;
  double theta = 0.0;
  Matrix V;
  Vector xbar;
  Matrix dV;
  Vector dxbar;
};

struct CovarianceContribution {
  double value = 0.0;
  double trace_form = 0.0;
  std::vector<SldTerm> terms;  ///< over the n populated + m derivative modes
  int n = 0;
  int m = 0;
  int clamped = 0;
};

struct DisplacementContribution {
  double value = 0.0;
  double state_derivative = 0.0;  ///< ∂x̄ᵀ V⁻¹ ∂x̄
  double cross = 0.0;             ///< 2 ∂x̄ᵀ V⁻¹ D_nᵀ x̄
  double mode_motion = 0.0;       ///< x̄ᵀ (D_n V⁻¹ D_nᵀ + D_∂ D_∂ᵀ) x̄
};

namespace detail {

inline void require_problem(const ModeEncodedProblem& p, const DerivativeCoupling& d, const Tolerances& tol) {
  const auto dim = 2 * static_cast<Eigen::Index>(d.n);
  if (p.V.rows() != dim || p.V.cols() != dim || p.dV.rows() != dim || p.dV.cols() != dim || p.xbar.size() != dim ||
      p.dxbar.size() != dim)
    fail(ErrorKind::ShapeError, "problem moments do not match the " + std::to_string(d.n) + "-mode family");
  if (d.Dn.rows() != dim || d.Dpartial.rows() != dim || d.Dpartial.cols() != 2 * d.m)
    fail(ErrorKind::ShapeError, "derivative coupling has inconsistent dimensions");
  require_covariance_shape(p.V, tol, "mode-encoded problem");
  if ((p.dV - p.dV.transpose()).norm() > tol.symm * frobenius_scale(p.dV))
    fail(ErrorKind::ShapeError, "covariance derivative is not symmetric");
}

/// σ and ∂σ in the reduced basis {u_k} ∪ {u'_j}; derivative modes are vacuum.
inline std::pair<Matrix, Matrix> reduced_covariance(const ModeEncodedProblem& p, const DerivativeCoupling& d) {
  const auto dn = 2 * d.n, dm = 2 * d.m;
  const Matrix excess = symmetrized(p.V) - Matrix::Identity(dn, dn);
  Matrix sigma = Matrix::Identity(dn + dm, dn + dm);
  sigma.topLeftCorner(dn, dn) = symmetrized(p.V);
  Matrix ds = Matrix::Zero(dn + dm, dn + dm);
  ds.topLeftCorner(dn, dn) = d.Dn.transpose() * excess + excess * d.Dn + symmetrized(p.dV);
  if (dm > 0) {
    ds.topRightCorner(dn, dm) = excess * d.Dpartial;
    ds.bottomLeftCorner(dm, dn) = d.Dpartial.transpose() * excess;
  }
  return {sigma, ds};
}

}  // namespace detail

/// F_σ over the populated block (ν_jν_k) and the populated-derivative block (ν_j · 1).
inline CovarianceContribution f_sigma_mode_encoded(const ModeEncodedProblem& p, const DerivativeCoupling& d,
                                                   const Tolerances& tol = kDefaultTolerances) {
  detail::require_problem(p, d, tol);
  const auto w = williamson(p.V, tol);
  const auto dn = 2 * d.n, dm = 2 * d.m;
  Matrix s_inv = Matrix::Identity(dn + dm, dn + dm);
  s_inv.topLeftCorner(dn, dn) = symplectic_inverse(w.S);
  Vector nu = Vector::Ones(d.n + d.m);
  nu.head(d.n) = w.nu;

  const auto [sigma, ds] = detail::reduced_covariance(p, d);
  CovarianceContribution out;
  out.n = d.n;
  out.m = d.m;
  out.clamped = w.clamped;
  out.terms = detail::sld_terms(s_inv * ds * s_inv.transpose(), nu, tol);
  out.value = detail::sum_contributions(out.terms);
  out.trace_form = (detail::assemble_l2(out.terms, s_inv) * ds).trace();
  const double gap = std::abs(out.trace_form - out.value);
  if (gap > tol.xcheck * std::max(1.0, std::abs(out.value)))
    fail(ErrorKind::InternalInconsistency, "trace and double-sum forms of F_sigma differ by " + std::to_string(gap));
  return out;
}

inline DisplacementContribution f_xbar_mode_encoded(const ModeEncodedProblem& p, const DerivativeCoupling& d,
                                                    const Tolerances& tol = kDefaultTolerances) {
  detail::require_problem(p, d, tol);
  Eigen::LDLT<Matrix> ldlt(detail::symmetrized(p.V));
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0)
    throw DecompositionError("f_xbar_mode_encoded: V is singular", 0.0);
  const Vector motion = d.Dn.transpose() * p.xbar;
  const Vector leak = d.Dpartial.transpose() * p.xbar;
  DisplacementContribution out;
  out.state_derivative = p.dxbar.dot(ldlt.solve(p.dxbar));
  out.cross = 2.0 * p.dxbar.dot(ldlt.solve(motion));
  out.mode_motion = motion.dot(ldlt.solve(motion)) + leak.squaredNorm();
  out.value = out.state_derivative + out.cross + out.mode_motion;
  return out;
}

inline QfiBreakdown mode_encoded_qfi(const ModeEncodedProblem& p, const DerivativeCoupling& d,
                                     const Tolerances& tol = kDefaultTolerances) {
  const auto cov = f_sigma_mode_encoded(p, d, tol);
  const auto disp = f_xbar_mode_encoded(p, d, tol);
  QfiBreakdown out;
  out.f_sigma = cov.value;
  out.f_sigma_trace = cov.trace_form;
  out.f_xbar = disp.value;
  out.total = out.f_sigma + out.f_xbar;
  out.terms = cov.terms;
  out.clamped = cov.clamped;
  double populated = 0.0, leakage = 0.0;
  for (const auto& t : cov.terms) (t.j < d.n && t.k < d.n ? populated : leakage) += t.contribution;
  out.groups["populated-block"] = populated;
  out.groups["leakage-block"] = leakage;
  out.groups["state-derivative"] = disp.state_derivative;
  out.groups["cross"] = disp.cross;
  out.groups["mode-motion"] = disp.mode_motion;
  return out;
}

inline QfiBreakdown mode_encoded_qfi(const ModeEncodedProblem& p, const Tolerances& tol = kDefaultTolerances) {
  if (!p.family) fail(ErrorKind::InputError, "mode-encoded problem has no mode family");
  return mode_encoded_qfi(p, gram_schmidt_derivatives(*p.family, p.theta, tol), tol);
}

/// Mode whose q quadrature carries all of F_x̄: coefficients over {u_0..u_{n-1}, u'_0..u'_{m-1}}.
struct SensingMode {
  CVector coefficients;
  Vector direction;  ///< unit quadrature vector e, F_x̄ = ‖y‖² eᵀ (V ⊕ 1)⁻¹ e
  double norm = 0.0; ///< ‖y‖
  double f_xbar = 0.0;
};

inline SensingMode sensing_mode(const ModeEncodedProblem& p, const DerivativeCoupling& d,
                                const Tolerances& tol = kDefaultTolerances) {
  detail::require_problem(p, d, tol);
  const auto dn = 2 * d.n, dm = 2 * d.m;
  Vector y(dn + dm);
  y.head(dn) = p.dxbar + d.Dn.transpose() * p.xbar;
  y.tail(dm) = d.Dpartial.transpose() * p.xbar;
  SensingMode s;
  s.norm = y.norm();
  if (!(s.norm > tol.zero)) fail(ErrorKind::UndefinedSensingMode, "mean field and its derivative give no displacement signal");
  s.direction = y / s.norm;
  s.coefficients.resize(d.n + d.m);
  for (int k = 0; k < d.n + d.m; ++k) s.coefficients(k) = Complex(s.direction(2 * k), s.direction(2 * k + 1));
  Matrix sigma = Matrix::Identity(dn + dm, dn + dm);
  sigma.topLeftCorner(dn, dn) = detail::symmetrized(p.V);
  s.f_xbar = s.norm * s.norm * s.direction.dot(sigma.ldlt().solve(s.direction));
  return s;
}

}  // namespace modeqfi
