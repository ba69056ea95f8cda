#pragma once

namespace modeqfi {

/// Numerical thresholds shared by all modules. Defaults are the pinned values
/// used by the test and acceptance suites; every field may be overridden.
struct Tolerances {
  double phys = 1e-9;     ///< slack on symplectic eigenvalues >= 1
  double symm = 1e-10;    ///< relative asymmetry accepted for covariance matrices
  double symp = 1e-8;     ///< S Omega S^T = Omega residual
  double recon = 1e-8;    ///< S nu S^T = sigma relative residual
  double sing = 1e-10;    ///< denominators below this are treated as zero
  double zero = 1e-8;     ///< coefficients below this are treated as zero
  double xcheck = 1e-8;   ///< trace form vs double-sum form of F_sigma (relative)
  double ortho = 1e-8;    ///< mode-family orthonormality
  double rank = 1e-7;     ///< residual norm deciding a new derivative mode
  double unitary = 1e-10; ///< U U^dagger = 1 deviation
};

inline constexpr Tolerances kDefaultTolerances{};

}  // namespace modeqfi
