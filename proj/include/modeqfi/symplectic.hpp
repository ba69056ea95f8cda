#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "modeqfi/errors.hpp"
#include "modeqfi/tolerances.hpp"

namespace modeqfi {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using Complex = std::complex<double>;

/// Quadrature ordering is interleaved everywhere: (q1, p1, q2, p2, ...).
struct SymplecticForm {
  int modes = 0;
  Matrix omega;
};

inline SymplecticForm symplectic_form(int modes) {
  if (modes < 1) fail(ErrorKind::InvalidDimension, "symplectic form needs at least one mode, got " + std::to_string(modes));
  SymplecticForm form{modes, Matrix::Zero(2 * modes, 2 * modes)};
  for (int k = 0; k < modes; ++k) {
    form.omega(2 * k, 2 * k + 1) = 1.0;
    form.omega(2 * k + 1, 2 * k) = -1.0;
  }
  return form;
}

inline Matrix omega_matrix(int modes) { return symplectic_form(modes).omega; }

/// Real 2x2 image of a complex number acting on (Re, Im): [[Re, -Im], [Im, Re]].
/// Shared by basis changes and derivative couplings so the sign convention lives in one place.
inline Eigen::Matrix2d complex_block(Complex c) {
  Eigen::Matrix2d b;
  b << c.real(), -c.imag(), c.imag(), c.real();
  return b;
}

/// Blockwise real embedding of a complex matrix: block (i, j) = complex_block(C(i, j)).
inline Matrix embed_complex(const CMatrix& c) {
  Matrix out(2 * c.rows(), 2 * c.cols());
  for (Eigen::Index i = 0; i < c.rows(); ++i)
    for (Eigen::Index j = 0; j < c.cols(); ++j) out.block<2, 2>(2 * i, 2 * j) = complex_block(c(i, j));
  return out;
}

namespace detail {

inline double frobenius_scale(const Matrix& m) { return std::max(1.0, m.norm()); }

inline void require_covariance_shape(const Matrix& sigma, const Tolerances& tol, const char* who) {
  if (sigma.rows() != sigma.cols() || sigma.rows() == 0 || sigma.rows() % 2 != 0)
    fail(ErrorKind::ShapeError, std::string(who) + ": covariance must be a non-empty 2N x 2N matrix, got " +
                                    std::to_string(sigma.rows()) + "x" + std::to_string(sigma.cols()));
  if (!sigma.allFinite()) fail(ErrorKind::ShapeError, std::string(who) + ": covariance has non-finite entries");
  const double asym = (sigma - sigma.transpose()).norm();
  if (asym > tol.symm * frobenius_scale(sigma))
    fail(ErrorKind::ShapeError, std::string(who) + ": covariance is not symmetric (asymmetry " + std::to_string(asym) + ")");
}

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Positive eigenvalues of the Hermitian matrix sqrt(sigma) (i Omega) sqrt(sigma); these coincide
/// with the spectrum of i Omega sigma. Returns an empty vector when sigma is not positive definite.
inline std::vector<double> positive_symplectic_spectrum(const Matrix& sigma) {
  const int n = static_cast<int>(sigma.rows() / 2);
  Eigen::SelfAdjointEigenSolver<Matrix> es(sigma);
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0) return {};
  const Matrix root = es.operatorSqrt();
  const CMatrix h = Complex(0.0, 1.0) * (root * omega_matrix(n) * root).cast<Complex>();
  Eigen::SelfAdjointEigenSolver<CMatrix> hs(h, Eigen::EigenvaluesOnly);
  std::vector<double> nu;
  nu.reserve(n);
  for (int i = 0; i < n; ++i) nu.push_back(hs.eigenvalues()(2 * n - 1 - i));
  return nu;
}

/// Connected groups of modes, where two modes are linked if their 2x2 covariance block is nonzero.
inline std::vector<std::vector<int>> coupled_mode_groups(const Matrix& sigma) {
  const int n = static_cast<int>(sigma.rows() / 2);
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      if (sigma.block<2, 2>(2 * a, 2 * b).cwiseAbs().maxCoeff() > 0.0) parent[find(a)] = find(b);
  std::vector<std::vector<int>> groups;
  std::vector<int> slot(n, -1);
  for (int a = 0; a < n; ++a) {
    const int root = find(a);
    if (slot[root] < 0) {
      slot[root] = static_cast<int>(groups.size());
      groups.emplace_back();
    }
    groups[slot[root]].push_back(a);
  }
  return groups;
}

}  // namespace detail

inline std::vector<double> symplectic_eigenvalues(const Matrix& sigma, const Tolerances& tol = kDefaultTolerances) {
  detail::require_covariance_shape(sigma, tol, "symplectic_eigenvalues");
  const Matrix s = detail::symmetrized(sigma);
  auto nu = detail::positive_symplectic_spectrum(s);
  if (nu.empty() || nu.back() < 1.0 - tol.phys)
    fail(ErrorKind::UnphysicalState, "covariance violates the uncertainty relation (min symplectic eigenvalue " +
                                         (nu.empty() ? std::string("undefined") : std::to_string(nu.back())) + ")");
  return nu;
}

/// True iff sigma + i Omega >= 0 up to `tol.phys` on the smallest symplectic eigenvalue.
inline bool is_physical(const Matrix& sigma, const Tolerances& tol = kDefaultTolerances) {
  detail::require_covariance_shape(sigma, tol, "is_physical");
  const auto nu = detail::positive_symplectic_spectrum(detail::symmetrized(sigma));
  return !nu.empty() && nu.back() >= 1.0 - tol.phys;
}

/// sigma = S (nu (x) 1_2) S^T with S symplectic and nu non-increasing.
struct WilliamsonDecomposition {
  Matrix S;
  Vector nu;
  /// Input mode group each Williamson mode came from (diagnostic; ties in nu keep this order).
  std::vector<int> source_group;
  /// Number of symplectic eigenvalues raised to exactly 1 after passing the physicality check.
  int clamped = 0;
  double max_clamp = 0.0;

  int modes() const { return static_cast<int>(nu.size()); }

  Matrix nu_matrix() const {
    Matrix d = Matrix::Zero(2 * modes(), 2 * modes());
    for (int k = 0; k < modes(); ++k) d(2 * k, 2 * k) = d(2 * k + 1, 2 * k + 1) = nu(k);
    return d;
  }
};

namespace detail {

struct ModeBlock {
  double nu;
  Eigen::Matrix<double, Eigen::Dynamic, 2> columns;  // columns of S in the full 2N space
  int group;
};

/// Single-mode Williamson form: nu = sqrt(det), S = sqrt(sigma / nu), which has unit determinant.
inline ModeBlock single_mode_block(const Matrix& sigma, int mode, int group) {
  const int dim = static_cast<int>(sigma.rows());
  const Eigen::Matrix2d s = sigma.block<2, 2>(2 * mode, 2 * mode);
  const double nu = std::sqrt(s.determinant());
  const Eigen::Matrix2d m = s / nu;
  const Eigen::Matrix2d root = (m + Eigen::Matrix2d::Identity()) / std::sqrt(m.trace() + 2.0);
  ModeBlock b{nu, Eigen::Matrix<double, Eigen::Dynamic, 2>::Zero(dim, 2), group};
  b.columns.block<2, 2>(2 * mode, 0) = root;
  return b;
}

/// General group via the Hermitian eigenproblem of i sigma^{-1/2} Omega sigma^{-1/2}.
inline std::vector<ModeBlock> coupled_group_blocks(const Matrix& sigma, const std::vector<int>& modes, int group) {
  const int dim = static_cast<int>(sigma.rows());
  const int g = static_cast<int>(modes.size());
  Matrix sub(2 * g, 2 * g);
  for (int a = 0; a < g; ++a)
    for (int b = 0; b < g; ++b) sub.block<2, 2>(2 * a, 2 * b) = sigma.block<2, 2>(2 * modes[a], 2 * modes[b]);
  Eigen::SelfAdjointEigenSolver<Matrix> es(sub);
  const Matrix root = es.operatorSqrt();
  const Matrix inv_root = es.operatorInverseSqrt();
  const Matrix k = inv_root * omega_matrix(g) * inv_root;
  Eigen::SelfAdjointEigenSolver<CMatrix> hs(Complex(0.0, 1.0) * k.cast<Complex>());
  if (hs.info() != Eigen::Success) throw DecompositionError("williamson: eigen-solver failed", 0.0);
  std::vector<ModeBlock> blocks;
  for (int i = 0; i < g; ++i) {
    const int idx = 2 * g - 1 - i;  // largest eigenvalue of i K is 1 / (smallest nu)
    const double lambda = hs.eigenvalues()(idx);
    const CVector e = hs.eigenvectors().col(idx);
    // K p = lambda q, K q = -lambda p with (q, p) = sqrt(2) (Im e, Re e) gives Z^T K Z = lambda omega.
    Eigen::Matrix<double, Eigen::Dynamic, 2> z(2 * g, 2);
    z.col(0) = std::sqrt(2.0) * e.imag();
    z.col(1) = std::sqrt(2.0) * e.real();
    const double nu = 1.0 / lambda;
    const Eigen::Matrix<double, Eigen::Dynamic, 2> local = root * z / std::sqrt(nu);
    ModeBlock b{nu, Eigen::Matrix<double, Eigen::Dynamic, 2>::Zero(dim, 2), group};
    for (int a = 0; a < g; ++a) b.columns.block<2, 2>(2 * modes[a], 0) = local.block<2, 2>(2 * a, 0);
    blocks.push_back(std::move(b));
  }
  return blocks;
}

}  // namespace detail

inline WilliamsonDecomposition williamson(const Matrix& sigma, const Tolerances& tol = kDefaultTolerances) {
  detail::require_covariance_shape(sigma, tol, "williamson");
  const Matrix s = detail::symmetrized(sigma);
  if (!is_physical(s, tol)) {
    const auto nu = detail::positive_symplectic_spectrum(s);
    fail(ErrorKind::UnphysicalState, "williamson: covariance violates the uncertainty relation (min symplectic eigenvalue " +
                                         (nu.empty() ? std::string("undefined") : std::to_string(nu.back())) + ")");
  }
  const int n = static_cast<int>(s.rows() / 2);

  std::vector<detail::ModeBlock> blocks;
  const auto groups = detail::coupled_mode_groups(s);
  for (int gi = 0; gi < static_cast<int>(groups.size()); ++gi) {
    if (groups[gi].size() == 1) {
      blocks.push_back(detail::single_mode_block(s, groups[gi][0], gi));
    } else {
      auto more = detail::coupled_group_blocks(s, groups[gi], gi);
      std::move(more.begin(), more.end(), std::back_inserter(blocks));
    }
  }
  std::stable_sort(blocks.begin(), blocks.end(), [](const auto& a, const auto& b) {
    if (a.nu != b.nu) return a.nu > b.nu;
    return a.group < b.group;
  });

  WilliamsonDecomposition w;
  w.S.resize(2 * n, 2 * n);
  w.nu.resize(n);
  for (int k = 0; k < n; ++k) {
    w.S.middleCols<2>(2 * k) = blocks[k].columns;
    double nu = blocks[k].nu;
    if (nu < 1.0) {
      ++w.clamped;
      w.max_clamp = std::max(w.max_clamp, 1.0 - nu);
      nu = 1.0;
    }
    w.nu(k) = nu;
    w.source_group.push_back(blocks[k].group);
  }

  const Matrix omega = omega_matrix(n);
  const double symp_res = (w.S * omega * w.S.transpose() - omega).cwiseAbs().maxCoeff();
  if (symp_res > tol.symp) throw DecompositionError("williamson: S is not symplectic", symp_res);
  const double recon_res = (w.S * w.nu_matrix() * w.S.transpose() - s).norm() / detail::frobenius_scale(s);
  if (recon_res > tol.recon + w.max_clamp) throw DecompositionError("williamson: reconstruction failed", recon_res);
  return w;
}

/// Inverse of a symplectic matrix without a linear solve: S^{-1} = -Omega S^T Omega.
inline Matrix symplectic_inverse(const Matrix& s) {
  const Matrix omega = omega_matrix(static_cast<int>(s.rows() / 2));
  return -omega * s.transpose() * omega;
}

/// O₁ Z O₂ with O_i passive (embedded unitaries) and Z a product of single-mode squeezers.
template <class Rng>
Matrix random_symplectic(int n, Rng& rng, double max_squeeze = 1.0) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform(-max_squeeze, max_squeeze);
  auto passive = [&] {
    CMatrix z(n, n);
    for (auto& x : z.reshaped()) x = Complex(normal(rng), normal(rng));
    const CMatrix u = Eigen::HouseholderQR<CMatrix>(z).householderQ();
    return embed_complex(u);
  };
  Matrix squeeze = Matrix::Identity(2 * n, 2 * n);
  for (int k = 0; k < n; ++k) {
    const double r = uniform(rng);
    squeeze(2 * k, 2 * k) = std::exp(-r);
    squeeze(2 * k + 1, 2 * k + 1) = std::exp(r);
  }
  return passive() * squeeze * passive();
}

}  // namespace modeqfi
