#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "modeqfi/modes.hpp"

namespace modeqfi {

// ---------------------------------------------------------------------------
// Beam positioning
// ---------------------------------------------------------------------------

/// η = ‖∂u_0‖, ξ = (u_0|∂u_1), ζ = ‖∂u_1 - ξ u_0‖ for a beam displaced by d.
struct BeamGeometry {
  double eta = 0.0;
  double xi = 0.0;
  double zeta = 0.0;

  /// u(x) ∝ exp(-x²/2w²): η² = 1/2w², ξ = -η, ζ = 1/w.
  static BeamGeometry gaussian(double width) {
    if (!(width > 0.0)) fail(ErrorKind::DomainError, "beam width must be positive");
    const double eta = 1.0 / (std::sqrt(2.0) * width);
    return {eta, -eta, 1.0 / width};
  }
};

/// Populations of the beam mode u_0 and of its derivative mode u_1 (squeezed thermal, N_S = sinh² r).
struct BeamScenario {
  BeamGeometry geometry = BeamGeometry::gaussian(1.0);
  double n0 = 0.0;
  double n_thermal = 0.0;
  double r = 0.0;
  double d_n0 = 0.0;
  double d_n_thermal = 0.0;
  double d_r = 0.0;
  double kappa0 = 1.0;
  double kappa1 = 1.0;
  double squeezing_axis = 0.0;

  double n_squeezed() const { return std::sinh(r) * std::sinh(r); }
  double n1() const { return n_thermal + n_squeezed() + 2.0 * n_thermal * n_squeezed(); }
  double chi() const { return n1() > 0.0 ? n_squeezed() / n1() : 0.0; }

  /// N_S = χ N_1, N_T = (1 - χ) N_1 / (1 + 2 χ N_1).
  static BeamScenario from_chi(double chi, double n1, double n0, BeamGeometry g = BeamGeometry::gaussian(1.0)) {
    if (!(chi >= 0.0 && chi <= 1.0)) fail(ErrorKind::DomainError, "squeezing fraction must lie in [0, 1]");
    detail::require_nonnegative(n1, "N1");
    detail::require_nonnegative(n0, "N0");
    BeamScenario s;
    s.geometry = g;
    s.n0 = n0;
    s.n_thermal = (1.0 - chi) * n1 / (1.0 + 2.0 * chi * n1);
    s.r = std::asinh(std::sqrt(chi * n1));
    return s;
  }
};

namespace detail {

inline void require_beam(const BeamScenario& s) {
  require_nonnegative(s.n0, "N0");
  require_nonnegative(s.n_thermal, "N_T");
  if (!std::isfinite(s.r) || !std::isfinite(s.d_n0) || !std::isfinite(s.d_n_thermal) || !std::isfinite(s.d_r))
    fail(ErrorKind::DomainError, "beam scenario has non-finite entries");
}

/// (∂N_0)² / (N_0 (N_0 + 1)), the thermal population term.
inline double thermal_population_term(const BeamScenario& s) {
  if (s.d_n0 == 0.0) return 0.0;
  if (s.n0 == 0.0) fail(ErrorKind::DomainError, "N0 = 0 with nonzero dN0/dd leaves the population term undefined");
  return s.d_n0 * s.d_n0 / (s.n0 * (s.n0 + 1.0));
}

/// a / b with the 0/0 limit taken as 0; used where a vanishes at least as fast as b.
inline double ratio_or_zero(double a, double b) { return b == 0.0 ? 0.0 : a / b; }

}  // namespace detail

/// |∂α|² + 4η²N_0, with |∂α|² written as (∂N_0)²/N_0 for x̄ = 2(Re α, Im α).
inline double displacement_qfi_coherent(const BeamScenario& s) {
  detail::require_beam(s);
  double f = 4.0 * s.geometry.eta * s.geometry.eta * s.n0;
  if (s.d_n0 != 0.0) {
    if (s.n0 == 0.0) fail(ErrorKind::DomainError, "N0 = 0 with nonzero dN0/dd leaves |d alpha|^2 undefined");
    f += s.d_n0 * s.d_n0 / s.n0;
  }
  return f;
}

inline double displacement_qfi_thermal(const BeamScenario& s) {
  detail::require_beam(s);
  return detail::thermal_population_term(s) + 4.0 * s.geometry.eta * s.geometry.eta * s.n0;
}

/// Thermal u_0 with a squeezed-vacuum derivative mode, N_1 = sinh² r.
inline double displacement_qfi_thermal_squeezed(const BeamScenario& s) {
  detail::require_beam(s);
  const auto& g = s.geometry;
  const double n0 = s.n0, n1 = s.n_squeezed();
  return detail::thermal_population_term(s) + 4.0 * std::pow(n0 * g.eta - g.xi, 2) * n1 / (n0 + 1.0) +
         4.0 * n0 * g.eta * g.eta * (n1 + 1.0) + 4.0 * g.zeta * g.zeta * n1;
}

/// Thermal u_0 with a squeezed-thermal derivative mode (N_T, N_S).
inline double displacement_qfi_general(const BeamScenario& s) {
  detail::require_beam(s);
  const auto& g = s.geometry;
  const double n0 = s.n0, nt = s.n_thermal, ns = s.n_squeezed();
  const double mixed = 2.0 * n0 * nt + n0 + nt;
  return detail::thermal_population_term(s) +
         4.0 * ns * std::pow(g.xi * (nt + 1.0) - g.eta * n0, 2) / (mixed + 1.0) +
         4.0 * (ns + 1.0) *
             detail::ratio_or_zero(g.eta * g.eta * n0 * n0 + n0 * nt * (2.0 * g.eta * g.xi + g.zeta * g.zeta * (2.0 * nt + 1.0)), mixed) +
         4.0 * nt * nt * (ns + 1.0) * detail::ratio_or_zero(g.zeta * g.zeta + g.xi * g.xi, mixed) +
         4.0 * ns * g.zeta * g.zeta * (nt + 1.0);
}

/// Thermal u_0 with a thermal derivative mode holding N_1 = N_T photons.
inline double displacement_qfi_thermal_thermal(const BeamScenario& s) {
  detail::require_beam(s);
  const auto& g = s.geometry;
  const double n0 = s.n0, n1 = s.n_thermal;
  return detail::thermal_population_term(s) +
         4.0 * detail::ratio_or_zero(std::pow(g.eta * n0 + g.xi * n1, 2), 2.0 * n0 * n1 + n0 + n1) +
         4.0 * g.zeta * g.zeta * n1;
}

/// Coherent u_0 (α independent of d) with the derivative mode squeezed along q.
inline double displacement_qfi_coherent_squeezed(const BeamScenario& s) {
  detail::require_beam(s);
  if (s.d_n0 != 0.0) fail(ErrorKind::DomainError, "the coherent-squeezed form assumes dN0/dd = 0");
  const auto& g = s.geometry;
  return 4.0 * s.n0 * g.eta * g.eta * std::exp(2.0 * s.r) + 4.0 * (g.xi * g.xi + g.zeta * g.zeta) * s.n_squeezed();
}

/// Coherent u_0 averaged over uniformly distributed squeezing directions.
inline double displacement_qfi_averaged(const BeamScenario& s) {
  detail::require_beam(s);
  if (s.d_n0 != 0.0) fail(ErrorKind::DomainError, "the direction-averaged form assumes dN0/dd = 0");
  const auto& g = s.geometry;
  return 4.0 * s.n0 * g.eta * g.eta * std::cosh(2.0 * s.r) + 4.0 * (g.xi * g.xi + g.zeta * g.zeta) * s.n_squeezed();
}

/// Post-loss populations for transmissivities κ_0 (beam mode) and κ_1 (derivative mode).
inline BeamScenario apply_loss_substitutions(const BeamScenario& in) {
  detail::require_beam(in);
  for (double k : {in.kappa0, in.kappa1})
    if (!(k >= 0.0 && k <= 1.0)) fail(ErrorKind::DomainError, "transmissivity must lie in [0, 1], got " + std::to_string(k));
  const double k1 = in.kappa1, nt = in.n_thermal, ns = in.n_squeezed();
  BeamScenario out = in;
  out.n0 = in.n0 * in.kappa0;
  const double a = 2.0 * k1 * (2.0 * ns * nt + nt + ns) + 1.0;
  const double b = 4.0 * k1 * k1 * ns * (2.0 * nt + 1.0) * (2.0 * nt + 1.0) * (ns + 1.0);
  out.n_thermal = std::max(0.0, 0.5 * (std::sqrt(std::max(a * a - b, 1.0)) - 1.0));
  out.r = 0.5 * std::asinh(k1 * (2.0 * nt + 1.0) / (2.0 * out.n_thermal + 1.0) * std::sinh(2.0 * in.r));
  out.kappa0 = out.kappa1 = 1.0;
  return out;
}

/// Extra covariance term when N_T and r of the derivative mode depend on d.
inline double parameter_dependent_loss_term(const BeamScenario& s) {
  detail::require_beam(s);
  const double nt = s.n_thermal;
  const double gap = 4.0 * nt * (nt + 1.0);
  double f = 4.0 * (2.0 * nt + 1.0) * (2.0 * nt + 1.0) * s.d_r * s.d_r / (gap + 2.0);
  if (s.d_n_thermal != 0.0) {
    if (gap == 0.0) fail(ErrorKind::SingularTerm, "N_T = 0 with nonzero dN_T/dd makes the population term singular");
    f += 4.0 * s.d_n_thermal * s.d_n_thermal / gap;
  }
  return f;
}

/// Two-mode family {u_0, u_1} (or just u_0) with the given geometry.
inline std::shared_ptr<const ModeFamily> beam_family(const BeamGeometry& g, int modes = 2) {
  if (modes == 1) {
    return std::make_shared<AnalyticModeFamily>(1, [g](double) {
      ModeOverlaps o{CMatrix::Identity(1, 1), CMatrix::Zero(1, 1), CMatrix::Constant(1, 1, g.eta * g.eta)};
      return o;
    });
  }
  if (modes != 2) fail(ErrorKind::InvalidDimension, "beam families have one or two populated modes");
  return std::make_shared<AnalyticModeFamily>(2, [g](double) {
    ModeOverlaps o{CMatrix::Identity(2, 2), CMatrix::Zero(2, 2), CMatrix::Zero(2, 2)};
    o.C(0, 1) = g.eta;
    o.C(1, 0) = g.xi;
    o.G(0, 0) = g.eta * g.eta;
    o.G(1, 1) = g.xi * g.xi + g.zeta * g.zeta;
    return o;
  });
}

enum class BeamSource { Thermal, Coherent };

/// Mode-encoded problem for the beam: thermal or coherent (real α) u_0, squeezed-thermal u_1.
/// Uses a single populated mode when u_1 is in vacuum and stays there.
inline ModeEncodedProblem beam_problem(const BeamScenario& s, BeamSource source) {
  detail::require_beam(s);
  const bool derivative_populated = s.n_thermal != 0.0 || s.r != 0.0 || s.d_n_thermal != 0.0 || s.d_r != 0.0;
  const int n = derivative_populated ? 2 : 1;
  ModeEncodedProblem p;
  p.family = beam_family(s.geometry, n);
  p.V = Matrix::Identity(2 * n, 2 * n);
  p.dV = Matrix::Zero(2 * n, 2 * n);
  p.xbar = Vector::Zero(2 * n);
  p.dxbar = Vector::Zero(2 * n);
  if (source == BeamSource::Thermal) {
    p.V.topLeftCorner(2, 2) *= 2.0 * s.n0 + 1.0;
    p.dV.topLeftCorner(2, 2) = 2.0 * s.d_n0 * Matrix::Identity(2, 2);
  } else {
    p.xbar(0) = 2.0 * std::sqrt(s.n0);
    if (s.d_n0 != 0.0) {
      if (s.n0 == 0.0) fail(ErrorKind::DomainError, "N0 = 0 with nonzero dN0/dd leaves the coherent amplitude derivative undefined");
      p.dxbar(0) = s.d_n0 / std::sqrt(s.n0);
    }
  }
  if (n == 2) {
    p.V.bottomRightCorner(2, 2) = squeezed_thermal_covariance(s.n_thermal, s.r, s.squeezing_axis);
    const Eigen::Matrix2d rot = detail::rotation(s.squeezing_axis);
    const double em = std::exp(-2.0 * s.r), ep = std::exp(2.0 * s.r);
    const Eigen::Matrix2d d = 2.0 * s.d_n_thermal * Eigen::Vector2d(em, ep).asDiagonal().toDenseMatrix() +
                              (2.0 * s.n_thermal + 1.0) * 2.0 * s.d_r * Eigen::Vector2d(-em, ep).asDiagonal().toDenseMatrix();
    p.dV.bottomRightCorner(2, 2) = rot * d * rot.transpose();
  }
  return p;
}

/// Applies a parameter-independent channel to the populated-mode moments.
inline ModeEncodedProblem apply_channel(const ModeEncodedProblem& p, const GaussianChannel& ch) {
  if (ch.T().cols() != p.V.rows() || ch.T().rows() != p.V.rows())
    fail(ErrorKind::ShapeError, "channel must act on the populated modes of the problem");
  ModeEncodedProblem out = p;
  out.V = detail::symmetrized(ch.T() * p.V * ch.T().transpose() + ch.noise());
  out.dV = detail::symmetrized(ch.T() * p.dV * ch.T().transpose());
  out.xbar = ch.T() * p.xbar + ch.shift();
  out.dxbar = ch.T() * p.dxbar;
  return out;
}

// ---------------------------------------------------------------------------
// Pulse separation
// ---------------------------------------------------------------------------

/// Overlap data of two copies of u(t) separated by τ, and the derivative-mode constants of
/// u_0, v_0 (symmetric/antisymmetric superpositions). σ₄ is ∫|u''|².
struct PulseConstants {
  double tau = 0.0;
  double delta = 1.0;
  double one_minus_delta = 0.0;
  double d_delta = 0.0;
  double dd_delta = 0.0;
  double beta = 0.0;
  double d_beta = 0.0;
  double dk2 = 0.0;
  double sigma4 = 0.0;
  double epsilon = 0.0;
  double eta_u = 0.0, eta_v = 0.0;
  double xi_u = 0.0, xi_v = 0.0;
  double zeta_u = 0.0, zeta_v = 0.0;
  std::vector<std::string> flags;
};

namespace detail {

/// Σ_{j≥0} x^{2j} / (2j+3)! = (sinh x - x) / x³.
inline double sinh_remainder(double x) {
  double term = 1.0 / 6.0, sum = term;
  for (int j = 1; j < 40 && term > 1e-18 * sum; ++j) {
    term *= x * x / ((2.0 * j + 2.0) * (2.0 * j + 3.0));
    sum += term;
  }
  return sum;
}

/// Σ_{k odd ≥ k0} c(k) x^{k - k0} / k!.
template <class Coef>
inline double odd_series(double x, int k0, Coef coef) {
  double fact = 1.0;
  for (int i = 2; i <= k0; ++i) fact *= i;
  double power = 1.0, sum = 0.0;
  for (int k = k0; k < k0 + 80; k += 2) {
    if (k > k0) {
      fact *= static_cast<double>(k - 1) * k;
      power *= x * x;
    }
    const double term = coef(k) * power / fact;
    sum += term;
    if (std::abs(term) < 1e-18 * std::abs(sum)) break;
  }
  return sum;
}

}  // namespace detail

/// Closed forms for u(t) = exp(-t²/2w²)/(πw²)^{1/4}, in cancellation-free form.
/// With x = τ²/4w², η_u² = (x sech²(x/2) + 2 tanh(x/2))/16w² and ξ = -η for both modes.
inline PulseConstants gaussian_pulse_constants(double tau, double width) {
  if (!(width > 0.0)) fail(ErrorKind::DomainError, "pulse width must be positive");
  if (!(tau >= 0.0) || !std::isfinite(tau)) fail(ErrorKind::DomainError, "pulse separation must be finite and non-negative");
  PulseConstants c;
  c.tau = tau;
  const double w2 = width * width, w4 = w2 * w2;
  const double x = tau * tau / (4.0 * w2);
  c.delta = std::exp(-x);
  c.one_minus_delta = -std::expm1(-x);
  c.d_delta = -tau * c.delta / (2.0 * w2);
  c.dd_delta = (tau * tau / (4.0 * w4) - 1.0 / (2.0 * w2)) * c.delta;
  c.beta = -c.dd_delta;
  const double a = 1.0 / (4.0 * w2);
  c.d_beta = (8.0 * a * a * a * tau * tau * tau - 12.0 * a * a * tau) * c.delta;
  c.dk2 = 1.0 / (2.0 * w2);
  c.sigma4 = 3.0 / (4.0 * w4);
  c.epsilon = (std::pow(tau / width, 4) - 12.0 * std::pow(tau / width, 2) + 12.0) * c.delta / (16.0 * w4);
  if (c.delta == 0.0 && tau > 0.0) c.flags.push_back("underflow:delta");

  const double half = 0.5 * x;
  const double ch_half = std::cosh(half);
  const double eta_u2 = (x / (ch_half * ch_half) + 2.0 * std::tanh(half)) / (16.0 * w2);
  double eta_v2, zeta_u2, zeta_v2;
  if (x < 2.0) {
    c.flags.push_back("series:small-separation");
    const double s2 = x == 0.0 ? 1.0 : std::sinh(half) / half;
    eta_v2 = x * detail::sinh_remainder(x) / (4.0 * w2 * s2 * s2);
    const double sh = std::sinh(x);
    const double nu3 = detail::odd_series(x, 3, [](int k) { return std::pow(2.0, k) + 2.0 * (k - 1.0) * (k - 1.0); });
    const double nv7 = detail::odd_series(x, 7, [](int k) { return std::pow(2.0, k) - 2.0 * (k - 1.0) * (k - 1.0); });
    // (x + sinh x)² = x² (1 + sinh x / x)², (sinh x - x)² = x⁶ S1²
    const double ratio = x == 0.0 ? 1.0 : sh / x;
    const double s1 = detail::sinh_remainder(x);
    zeta_u2 = nu3 * x / (8.0 * w2 * (1.0 + ratio) * (1.0 + ratio));
    zeta_v2 = nv7 * x / (8.0 * w2 * s1 * s1);
  } else {
    const double inv_sh_half = 1.0 / std::sinh(half);
    eta_v2 = (2.0 / std::tanh(half) - x * inv_sh_half * inv_sh_half) / (16.0 * w2);
    const double inv_sh = 1.0 / std::sinh(x), coth = 1.0 / std::tanh(x);
    const double motion = x * inv_sh * (coth + inv_sh);  // x (1 + cosh x) / sinh² x
    const double bend = x * inv_sh * (coth - inv_sh);    // x (cosh x - 1) / sinh² x
    zeta_u2 = (2.0 * coth - 2.0 * motion + 2.0 * (1.0 + x * x) * inv_sh) / (8.0 * w2 * std::pow(x * inv_sh + 1.0, 2));
    zeta_v2 = (2.0 * coth + 2.0 * bend - 2.0 * (1.0 + x * x) * inv_sh) / (8.0 * w2 * std::pow(1.0 - x * inv_sh, 2));
  }
  c.eta_u = std::sqrt(eta_u2);
  c.eta_v = std::sqrt(std::max(eta_v2, 0.0));
  c.xi_u = -c.eta_u;
  c.xi_v = -c.eta_v;
  c.zeta_u = std::sqrt(std::max(zeta_u2, 0.0));
  c.zeta_v = std::sqrt(std::max(zeta_v2, 0.0));
  return c;
}

/// Real even pulse shape with its first two derivatives.
struct PulseShape {
  std::function<double(double)> u, du, d2u;
  double support = 0.0;  ///< |t| beyond which u is negligible
  int points = 2001;     ///< grid nodes over [-support - τ/2, support + τ/2]
  std::string name;
};

inline PulseShape gaussian_pulse_shape(double width) {
  if (!(width > 0.0)) fail(ErrorKind::DomainError, "pulse width must be positive");
  const double norm = std::pow(std::numbers::pi * width * width, -0.25), w2 = width * width;
  PulseShape s;
  s.u = [=](double t) { return norm * std::exp(-t * t / (2.0 * w2)); };
  s.du = [=](double t) { return -t / w2 * norm * std::exp(-t * t / (2.0 * w2)); };
  s.d2u = [=](double t) { return (t * t / (w2 * w2) - 1.0 / w2) * norm * std::exp(-t * t / (2.0 * w2)); };
  s.support = 14.0 * width;
  s.name = "gaussian";
  return s;
}

namespace detail {

struct PulseSectorSamples {
  Vector m0, dm0, m1, dm1;
  double eta = 0.0;
};

struct PulseGrid {
  double start = 0.0, spacing = 0.0;
  Vector t, weights;
  Vector um, up, dum, dup, d2um, d2up;  // u, u', u'' at t - τ/2 (m) and t + τ/2 (p)
  double delta = 0.0, d_delta = 0.0, dd_delta = 0.0;
};

inline PulseGrid pulse_grid(const PulseShape& s, double tau, QuadratureRule rule) {
  if (s.points < 3 || !(s.support > 0.0)) fail(ErrorKind::DomainError, "pulse shape needs a support and at least three nodes");
  PulseGrid g;
  const double half = s.support + 0.5 * tau;
  g.start = -half;
  g.spacing = 2.0 * half / (s.points - 1);
  g.t = Vector::LinSpaced(s.points, -half, half);
  g.weights = quadrature_weights(s.points, g.spacing, rule);
  auto eval = [&](const std::function<double(double)>& f, double shift) {
    Vector v(s.points);
    for (int i = 0; i < s.points; ++i) v(i) = f(g.t(i) + shift);
    return v;
  };
  g.um = eval(s.u, -0.5 * tau);
  g.up = eval(s.u, 0.5 * tau);
  g.dum = eval(s.du, -0.5 * tau);
  g.dup = eval(s.du, 0.5 * tau);
  g.d2um = eval(s.d2u, -0.5 * tau);
  g.d2up = eval(s.d2u, 0.5 * tau);
  const auto integral = [&](const Vector& a, const Vector& b) { return g.weights.dot(a.cwiseProduct(b)); };
  g.delta = integral(g.um, g.up);
  g.d_delta = 0.5 * (integral(g.um, g.dup) - integral(g.dum, g.up));
  g.dd_delta = 0.25 * (integral(g.d2um, g.up) - 2.0 * integral(g.dum, g.dup) + integral(g.um, g.d2up));
  return g;
}

/// m_0 = (u(t-τ/2) ± u(t+τ/2)) / sqrt(2(1 ± δ)), m_1 = ∂_τ m_0 / η and their exact τ-derivatives.
inline PulseSectorSamples pulse_sector(const PulseGrid& g, double sign) {
  const Vector s = g.um + sign * g.up;
  const Vector s1 = 0.5 * (-g.dum + sign * g.dup);
  const Vector s2 = 0.25 * (g.d2um + sign * g.d2up);
  const double q = 2.0 * (1.0 + sign * g.delta), q1 = sign * 2.0 * g.d_delta, q2 = sign * 2.0 * g.dd_delta;
  if (!(q > 0.0)) fail(ErrorKind::DomainError, "pulse sector has vanishing norm; the separation is too small for quadrature");
  const double gq = std::pow(q, -0.5);
  const double g1 = -0.5 * std::pow(q, -1.5) * q1;
  const double g2 = 0.75 * std::pow(q, -2.5) * q1 * q1 - 0.5 * std::pow(q, -1.5) * q2;
  PulseSectorSamples out;
  out.m0 = s * gq;
  const Vector dm0 = s1 * gq + s * g1;
  const Vector d2m0 = s2 * gq + 2.0 * s1 * g1 + s * g2;
  out.eta = std::sqrt(g.weights.dot(dm0.cwiseProduct(dm0)));
  if (!(out.eta > 0.0)) fail(ErrorKind::NumericalRank, "pulse derivative mode has zero norm");
  const double d_eta = g.weights.dot(dm0.cwiseProduct(d2m0)) / out.eta;
  out.dm0 = dm0;
  out.m1 = dm0 / out.eta;
  out.dm1 = d2m0 / out.eta - d_eta * dm0 / (out.eta * out.eta);
  return out;
}

}  // namespace detail

/// Defining integrals evaluated by quadrature for an arbitrary real even shape; β' by central difference in τ.
inline PulseConstants pulse_mode_constants(const PulseShape& shape, double tau, QuadratureRule rule = QuadratureRule::Trapezoid) {
  if (!(tau > 0.0) || !std::isfinite(tau)) fail(ErrorKind::DomainError, "quadrature pulse constants need a positive separation");
  const auto g = detail::pulse_grid(shape, tau, rule);
  const auto integral = [&](const Vector& a, const Vector& b) { return g.weights.dot(a.cwiseProduct(b)); };
  PulseConstants c;
  c.tau = tau;
  c.delta = g.delta;
  c.one_minus_delta = 1.0 - g.delta;
  c.d_delta = g.d_delta;
  c.dd_delta = g.dd_delta;
  c.beta = integral(g.dum, g.dup);
  c.dk2 = integral(g.dum, g.dum);
  c.sigma4 = integral(g.d2um, g.d2um);
  c.epsilon = integral(g.d2um, g.d2up);
  const double h = 1e-4 * std::max(shape.support / 14.0, tau);
  const auto gp = detail::pulse_grid(shape, tau + h, rule), gm = detail::pulse_grid(shape, tau - h, rule);
  c.d_beta = (gp.weights.dot(gp.dum.cwiseProduct(gp.dup)) - gm.weights.dot(gm.dum.cwiseProduct(gm.dup))) / (2.0 * h);
  const auto u = detail::pulse_sector(g, 1.0), v = detail::pulse_sector(g, -1.0);
  c.eta_u = u.eta;
  c.eta_v = v.eta;
  c.xi_u = integral(u.m0, u.dm1);
  c.xi_v = integral(v.m0, v.dm1);
  c.zeta_u = std::sqrt(std::max(integral(u.dm1, u.dm1) - c.xi_u * c.xi_u, 0.0));
  c.zeta_v = std::sqrt(std::max(integral(v.dm1, v.dm1) - c.xi_v * c.xi_v, 0.0));
  c.flags.push_back(std::string("quadrature:") + to_string(rule));
  return c;
}

/// Thermal pulses (N_0 each) with both first-derivative modes squeezed by r.
inline double pulse_qfi_thermal_squeezed(double n0, double r, const PulseConstants& c) {
  detail::require_nonnegative(n0, "N0");
  const double d = c.delta, s2 = std::sinh(r) * std::sinh(r), c2 = std::cosh(r) * std::cosh(r);
  const double one_minus_d2 = c.one_minus_delta * (1.0 + d);
  // δ'²/(1 - δ²) tends to Δk² as τ → 0
  const double slope = one_minus_d2 > 0.0 ? c.d_delta * c.d_delta / one_minus_d2 : c.dk2;
  const double nu = n0 * (1.0 + d), nv = n0 * c.one_minus_delta;
  const double population = 2.0 * n0 * (1.0 + n0 * (1.0 + d * d)) * slope / ((1.0 + n0) * (1.0 + n0) - n0 * n0 * d * d);
  return population + 4.0 * (c.zeta_u * c.zeta_u + c.zeta_v * c.zeta_v) * s2 +
         4.0 * n0 * (c.eta_u * c.eta_u * (1.0 + d) + c.eta_v * c.eta_v * c.one_minus_delta) * c2 +
         4.0 * std::pow(nu * c.eta_u - c.xi_u, 2) / (1.0 + nu) * s2 + 4.0 * std::pow(nv * c.eta_v - c.xi_v, 2) / (1.0 + nv) * s2;
}

/// Mean-field term for coherent pulses with relative phase φ and q-squeezed derivative modes.
inline double pulse_qfi_coherent_displacement(double n0, double r, double phi, const PulseConstants& c) {
  detail::require_nonnegative(n0, "N0");
  const double d = c.delta, cp = std::cos(phi), sp = std::sin(phi);
  const double one_minus_d2 = c.one_minus_delta * (1.0 + d);
  const double slope = one_minus_d2 > 0.0 ? c.d_delta * c.d_delta / one_minus_d2 : c.dk2;
  const double eu2 = c.eta_u * c.eta_u, ev2 = c.eta_v * c.eta_v;
  return 2.0 * n0 * (c.one_minus_delta + d * (1.0 - cp)) * slope +
         2.0 * n0 * std::exp(2.0 * r) * (eu2 * (1.0 + d) * (1.0 + cp) * (1.0 + cp) + ev2 * c.one_minus_delta * (1.0 - cp) * (1.0 - cp)) +
         2.0 * n0 * std::exp(-2.0 * r) * sp * sp * (eu2 * (1.0 + d) + ev2 * c.one_minus_delta);
}

inline double pulse_qfi_coherent_squeezed(double n0, double r, double phi, const PulseConstants& c) {
  return pulse_qfi_coherent_displacement(n0, r, phi, c) + pulse_qfi_thermal_squeezed(0.0, r, c);
}

/// τ → 0 limit of the thermal-squeezed pulse QFI, independent of r.
inline double pulse_limit_small_separation(double n0, double dk2) { return 2.0 * n0 * dk2; }

/// τ → ∞ limit: each pulse becomes an independent beam moving at dτ/2.
inline double pulse_limit_large_separation(double n0, double r, double dk2) {
  return 2.0 * dk2 * (3.0 * std::sinh(r) * std::sinh(r) + n0 * std::cosh(2.0 * r));
}

/// One nonzero (a_jk^(l))² entry; j, k name modes u0, v0, u1, v1, u2, v2.
struct CoefficientEntry {
  std::string group;  ///< "a", "b" or "d"
  std::string j, k;
  int l = 0;
  double square = 0.0;
};

/// Nonzero squared coefficients of the thermal-squeezed pulse problem. Each listed (j, k) also appears as (k, j).
inline std::vector<CoefficientEntry> pulse_coefficient_squares(double n0, double r, const PulseConstants& c) {
  detail::require_nonnegative(n0, "N0");
  const double s2 = std::sinh(r) * std::sinh(r), c2 = std::cosh(r) * std::cosh(r);
  const double nu = n0 * (1.0 + c.delta), nv = n0 * c.one_minus_delta;
  const double a2 = 8.0 * n0 * n0 * c.d_delta * c.d_delta;
  return {
      {"a", "u0", "u0", 2, a2},
      {"a", "v0", "v0", 2, a2},
      {"b", "u0", "u1", 1, 8.0 * std::pow(nu * c.eta_u - c.xi_u, 2) * s2},
      {"b", "u0", "u1", 2, 8.0 * nu * nu * c.eta_u * c.eta_u * c2},
      {"b", "v0", "v1", 1, 8.0 * std::pow(nv * c.eta_v - c.xi_v, 2) * s2},
      {"b", "v0", "v1", 2, 8.0 * nv * nv * c.eta_v * c.eta_v * c2},
      {"d", "u1", "u2", 1, 8.0 * c.zeta_u * c.zeta_u * s2},
      {"d", "v1", "v2", 1, 8.0 * c.zeta_v * c.zeta_v * s2},
  };
}

/// {u_0, v_0, u_1, v_1} with overlaps from the constants at each τ.
inline std::shared_ptr<const ModeFamily> pulse_family(std::function<PulseConstants(double)> constants) {
  return std::make_shared<AnalyticModeFamily>(4, [constants = std::move(constants)](double tau) {
    const PulseConstants c = constants(tau);
    ModeOverlaps o{CMatrix::Identity(4, 4), CMatrix::Zero(4, 4), CMatrix::Zero(4, 4)};
    o.C(0, 2) = c.eta_u;
    o.C(2, 0) = c.xi_u;
    o.C(1, 3) = c.eta_v;
    o.C(3, 1) = c.xi_v;
    o.G(0, 0) = c.eta_u * c.eta_u;
    o.G(1, 1) = c.eta_v * c.eta_v;
    o.G(2, 2) = c.xi_u * c.xi_u + c.zeta_u * c.zeta_u;
    o.G(3, 3) = c.xi_v * c.xi_v + c.zeta_v * c.zeta_v;
    return o;
  });
}

inline std::shared_ptr<const ModeFamily> gaussian_pulse_family(double width) {
  return pulse_family([width](double tau) { return gaussian_pulse_constants(tau, width); });
}

/// The same four modes sampled on a grid, for any real even shape.
inline std::shared_ptr<const ModeFamily> sampled_pulse_family(const PulseShape& shape, QuadratureRule rule = QuadratureRule::Trapezoid) {
  return std::make_shared<SampledModeFamily>(
      4,
      [shape, rule](double tau) {
        const auto g = detail::pulse_grid(shape, tau, rule);
        const auto u = detail::pulse_sector(g, 1.0), v = detail::pulse_sector(g, -1.0);
        ModeSamples s;
        s.start = g.start;
        s.spacing = g.spacing;
        s.values.resize(shape.points, 4);
        s.derivatives.resize(shape.points, 4);
        s.values << u.m0.cast<Complex>(), v.m0.cast<Complex>(), u.m1.cast<Complex>(), v.m1.cast<Complex>();
        s.derivatives << u.dm0.cast<Complex>(), v.dm0.cast<Complex>(), u.dm1.cast<Complex>(), v.dm1.cast<Complex>();
        return s;
      },
      rule);
}

enum class PulseSource { Thermal, Coherent };

struct PulseScenario {
  double tau = 1.0;
  double n0 = 1.0;
  double r = 0.0;
  double phi = 0.0;  ///< relative phase of coherent pulses
};

/// Mode-encoded problem at separation τ: u_0, v_0 carry the pulses, u_1, v_1 are squeezed vacua.
inline ModeEncodedProblem pulse_problem(const PulseScenario& s, PulseSource source, std::shared_ptr<const ModeFamily> family,
                                        const PulseConstants& c) {
  detail::require_nonnegative(s.n0, "N0");
  ModeEncodedProblem p;
  p.family = std::move(family);
  p.theta = s.tau;
  p.V = Matrix::Identity(8, 8);
  p.dV = Matrix::Zero(8, 8);
  p.xbar = Vector::Zero(8);
  p.dxbar = Vector::Zero(8);
  const double d = c.delta;
  if (source == PulseSource::Thermal) {
    p.V.block<2, 2>(0, 0) *= 2.0 * s.n0 * (1.0 + d) + 1.0;
    p.V.block<2, 2>(2, 2) *= 2.0 * s.n0 * c.one_minus_delta + 1.0;
    p.dV.block<2, 2>(0, 0) = 2.0 * s.n0 * c.d_delta * Matrix::Identity(2, 2);
    p.dV.block<2, 2>(2, 2) = -2.0 * s.n0 * c.d_delta * Matrix::Identity(2, 2);
  } else {
    if (!(c.one_minus_delta > 0.0)) fail(ErrorKind::DomainError, "coherent pulses need a positive separation");
    const double cp = std::cos(s.phi), sp = std::sin(s.phi);
    const double au = std::sqrt(2.0 * s.n0 * (1.0 + d)), av = std::sqrt(2.0 * s.n0 * c.one_minus_delta);
    p.xbar.segment<2>(0) << au * (1.0 + cp), au * sp;
    p.xbar.segment<2>(2) << av * (1.0 - cp), -av * sp;
    const double dau = std::sqrt(2.0 * s.n0) * 0.5 * c.d_delta / std::sqrt(1.0 + d);
    const double dav = -std::sqrt(2.0 * s.n0) * 0.5 * c.d_delta / std::sqrt(c.one_minus_delta);
    p.dxbar.segment<2>(0) << dau * (1.0 + cp), dau * sp;
    p.dxbar.segment<2>(2) << dav * (1.0 - cp), -dav * sp;
  }
  p.V.block<2, 2>(4, 4) = squeezed_thermal_covariance(0.0, s.r);
  p.V.block<2, 2>(6, 6) = squeezed_thermal_covariance(0.0, s.r);
  return p;
}

inline ModeEncodedProblem gaussian_pulse_problem(const PulseScenario& s, PulseSource source, double width = 1.0) {
  return pulse_problem(s, source, gaussian_pulse_family(width), gaussian_pulse_constants(s.tau, width));
}

}  // namespace modeqfi
