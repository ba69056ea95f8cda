#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "modeqfi/symplectic.hpp"

namespace modeqfi {

struct GaussianState {
  Vector xbar;
  Matrix sigma;

  int modes() const { return static_cast<int>(xbar.size() / 2); }
};

inline GaussianState make_state(Vector xbar, Matrix sigma, const Tolerances& tol = kDefaultTolerances) {
  detail::require_covariance_shape(sigma, tol, "make_state");
  if (xbar.size() != sigma.rows())
    fail(ErrorKind::ShapeError, "make_state: displacement has length " + std::to_string(xbar.size()) +
                                    " but covariance is " + std::to_string(sigma.rows()) + "x" + std::to_string(sigma.cols()));
  if (!xbar.allFinite()) fail(ErrorKind::ShapeError, "make_state: displacement has non-finite entries");
  sigma = detail::symmetrized(sigma);
  if (!is_physical(sigma, tol)) fail(ErrorKind::UnphysicalState, "make_state: covariance violates the uncertainty relation");
  return GaussianState{std::move(xbar), std::move(sigma)};
}

namespace detail {

inline void require_nonnegative(double value, const char* name) {
  if (!(value >= 0.0) || !std::isfinite(value))
    fail(ErrorKind::DomainError, std::string(name) + " must be a finite non-negative number, got " + std::to_string(value));
}

inline Eigen::Matrix2d rotation(double angle) {
  Eigen::Matrix2d r;
  r << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return r;
}

}  // namespace detail

inline GaussianState vacuum(int modes) {
  if (modes < 1) fail(ErrorKind::InvalidDimension, "vacuum needs at least one mode");
  return GaussianState{Vector::Zero(2 * modes), Matrix::Identity(2 * modes, 2 * modes)};
}

/// x̄ = 2 (Re α, Im α), σ = 1.
inline GaussianState coherent(Complex alpha) {
  GaussianState s = vacuum(1);
  s.xbar << 2.0 * alpha.real(), 2.0 * alpha.imag();
  return s;
}

inline GaussianState thermal(double n0) {
  detail::require_nonnegative(n0, "thermal photon number");
  return GaussianState{Vector::Zero(2), (2.0 * n0 + 1.0) * Matrix::Identity(2, 2)};
}

/// (2 N_T + 1) R diag(e^{-2r}, e^{2r}) R^T: r > 0 squeezes the direction at `axis` from the q axis.
inline Matrix squeezed_thermal_covariance(double n_thermal, double r, double axis = 0.0) {
  detail::require_nonnegative(n_thermal, "thermal photon number");
  if (!std::isfinite(r) || !std::isfinite(axis)) fail(ErrorKind::DomainError, "squeezing parameters must be finite");
  const Eigen::Matrix2d rot = detail::rotation(axis);
  const Eigen::Matrix2d d = Eigen::Vector2d(std::exp(-2.0 * r), std::exp(2.0 * r)).asDiagonal();
  return (2.0 * n_thermal + 1.0) * rot * d * rot.transpose();
}

inline GaussianState squeezed_thermal(double n_thermal, double r, double axis = 0.0) {
  return GaussianState{Vector::Zero(2), squeezed_thermal_covariance(n_thermal, r, axis)};
}

inline GaussianState squeezed_vacuum(double r, double axis = 0.0) { return squeezed_thermal(0.0, r, axis); }

/// Product state a ⊗ b: modes of `a` come first.
inline GaussianState direct_sum(const GaussianState& a, const GaussianState& b) {
  const auto na = a.xbar.size(), nb = b.xbar.size();
  GaussianState s{Vector(na + nb), Matrix::Zero(na + nb, na + nb)};
  s.xbar << a.xbar, b.xbar;
  s.sigma.topLeftCorner(na, na) = a.sigma;
  s.sigma.bottomRightCorner(nb, nb) = b.sigma;
  return s;
}

/// Total mean photon number, (tr σ)/4 + |x̄|²/4 - N/2.
inline double mean_photon_number(const GaussianState& s) {
  return s.sigma.trace() / 4.0 + s.xbar.squaredNorm() / 4.0 - 0.5 * s.modes();
}

/// x̄ -> T x̄ + z, σ -> T σ T^T + N.
class GaussianChannel {
 public:
  GaussianChannel(Matrix t, Matrix noise, Vector shift, const Tolerances& tol = kDefaultTolerances)
      : t_(std::move(t)), noise_(std::move(noise)), shift_(std::move(shift)) {
    if (t_.rows() % 2 != 0 || t_.cols() % 2 != 0 || t_.rows() == 0 || t_.cols() == 0)
      fail(ErrorKind::ShapeError, "channel: T must be 2N' x 2N");
    if (noise_.rows() != t_.rows() || noise_.cols() != t_.rows() || shift_.size() != t_.rows())
      fail(ErrorKind::ShapeError, "channel: noise and shift must match the output dimension of T");
    if ((noise_ - noise_.transpose()).norm() > tol.symm * detail::frobenius_scale(noise_))
      fail(ErrorKind::ShapeError, "channel: noise matrix is not symmetric");
    noise_ = detail::symmetrized(noise_);
    const int n_out = static_cast<int>(t_.rows() / 2), n_in = static_cast<int>(t_.cols() / 2);
    const Matrix skew = t_ * omega_matrix(n_in) * t_.transpose() - omega_matrix(n_out);
    const CMatrix h = noise_.cast<Complex>() + Complex(0.0, 1.0) * skew.cast<Complex>();
    Eigen::SelfAdjointEigenSolver<CMatrix> es(h, Eigen::EigenvaluesOnly);
    min_eigenvalue_ = es.eigenvalues().minCoeff();
    if (min_eigenvalue_ < -tol.phys)
      fail(ErrorKind::UnphysicalState, "channel violates complete positivity (min eigenvalue " + std::to_string(min_eigenvalue_) + ")");
  }

  static GaussianChannel identity(int modes) {
    return {Matrix::Identity(2 * modes, 2 * modes), Matrix::Zero(2 * modes, 2 * modes), Vector::Zero(2 * modes)};
  }

  const Matrix& T() const { return t_; }
  const Matrix& noise() const { return noise_; }
  const Vector& shift() const { return shift_; }
  int input_modes() const { return static_cast<int>(t_.cols() / 2); }
  int output_modes() const { return static_cast<int>(t_.rows() / 2); }
  double positivity_margin() const { return min_eigenvalue_; }

 private:
  Matrix t_;
  Matrix noise_;
  Vector shift_;
  double min_eigenvalue_ = 0.0;
};

inline GaussianState apply_channel(const GaussianState& s, const GaussianChannel& ch) {
  if (ch.T().cols() != s.xbar.size())
    fail(ErrorKind::ShapeError, "apply_channel: channel acts on " + std::to_string(ch.input_modes()) + " modes, state has " +
                                    std::to_string(s.modes()));
  return GaussianState{ch.T() * s.xbar + ch.shift(), detail::symmetrized(ch.T() * s.sigma * ch.T().transpose() + ch.noise())};
}

/// The channel "first a, then b".
inline GaussianChannel compose(const GaussianChannel& b, const GaussianChannel& a) {
  if (b.T().cols() != a.T().rows()) fail(ErrorKind::ShapeError, "compose: output of the first channel does not match input of the second");
  return {b.T() * a.T(), b.T() * a.noise() * b.T().transpose() + b.noise(), b.T() * a.shift() + b.shift()};
}

inline GaussianChannel loss_channel(const std::vector<double>& kappa) {
  if (kappa.empty()) fail(ErrorKind::InvalidDimension, "loss_channel needs at least one mode");
  const int n = static_cast<int>(kappa.size());
  Matrix t = Matrix::Zero(2 * n, 2 * n), noise = Matrix::Zero(2 * n, 2 * n);
  for (int k = 0; k < n; ++k) {
    if (!(kappa[k] >= 0.0 && kappa[k] <= 1.0))
      fail(ErrorKind::DomainError, "transmissivity must lie in [0, 1], got " + std::to_string(kappa[k]));
    t(2 * k, 2 * k) = t(2 * k + 1, 2 * k + 1) = std::sqrt(kappa[k]);
    noise(2 * k, 2 * k) = noise(2 * k + 1, 2 * k + 1) = 1.0 - kappa[k];
  }
  return {t, noise, Vector::Zero(2 * n)};
}

/// U_kl = (v_l|u_k); O is its real orthogonal-symplectic image.
struct BasisChange {
  CMatrix U;
  Matrix O;

  GaussianChannel channel() const {
    return {O, Matrix::Zero(O.rows(), O.rows()), Vector::Zero(O.rows())};
  }
};

inline BasisChange basis_change_from_unitary(const CMatrix& u, const Tolerances& tol = kDefaultTolerances) {
  if (u.rows() != u.cols() || u.rows() == 0) fail(ErrorKind::ShapeError, "basis change needs a square non-empty matrix");
  const double dev = (u * u.adjoint() - CMatrix::Identity(u.rows(), u.cols())).norm();
  if (dev > tol.unitary) fail(ErrorKind::DomainError, "basis change is not unitary (deviation " + std::to_string(dev) + ")");
  // block (k, l) is [[Re U_kl, Im U_kl], [-Im U_kl, Re U_kl]], the embedding of conj(U_kl)
  return BasisChange{u, embed_complex(u.conjugate())};
}

inline double wigner_density(const GaussianState& s, const Vector& x) {
  if (x.size() != s.xbar.size()) fail(ErrorKind::ShapeError, "wigner_density: point has the wrong dimension");
  Eigen::LDLT<Matrix> ldlt(s.sigma);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0.0)
    throw DecompositionError("wigner_density: covariance is singular", 0.0);
  const Vector d = x - s.xbar;
  const double quad = d.dot(ldlt.solve(d));
  const double det = ldlt.vectorD().prod();
  return std::exp(-0.5 * quad) / (std::pow(2.0 * std::numbers::pi, s.modes()) * std::sqrt(det));
}

}  // namespace modeqfi
