#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "modeqfi/io.hpp"
#include "oracles/oracles.hpp"

using namespace modeqfi;

namespace {

ModeSamples to_samples(const oracle::MaterializedModes& m, double start) {
  return ModeSamples{start, m.spacing, m.values, m.derivatives};
}

// u_k(θ) = Σ_l h_l(t − θ) W_lk(θ), W = exp(iθH): modes that move and rotate into each other with complex phases.
oracle::MaterializedModes rotated_hermite_gauss(int n, double theta, const CMatrix& hermitian, bool moving = true) {
  const auto base = oracle::hermite_gauss_samples(n, 1.0, moving ? theta : 0.0);
  Eigen::SelfAdjointEigenSolver<CMatrix> es(hermitian);
  CVector phase(n);
  for (int k = 0; k < n; ++k) phase(k) = std::exp(Complex(0.0, theta * es.eigenvalues()(k)));
  const CMatrix w = es.eigenvectors() * phase.asDiagonal() * es.eigenvectors().adjoint();
  const CMatrix dw = Complex(0.0, 1.0) * hermitian * w;
  oracle::MaterializedModes m;
  m.spacing = base.spacing;
  m.values = base.values * w;
  m.derivatives = (moving ? CMatrix(base.derivatives * w) : CMatrix::Zero(base.values.rows(), n)) + base.values * dw;
  return m;
}

CMatrix random_hermitian(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  CMatrix h(n, n);
  for (auto& x : h.reshaped()) x = Complex(normal(rng), normal(rng));
  return 0.5 * (h + h.adjoint());
}

struct RandomMoments {
  Matrix V, dV;
  Vector xbar, dxbar;
};

RandomMoments random_moments(int n, std::mt19937_64& rng) {
  return {oracle::random_covariance(n, rng, 1.5), oracle::random_symmetric(2 * n, rng), oracle::random_vector(2 * n, rng),
          oracle::random_vector(2 * n, rng)};
}

}  // namespace

TEST(Quadrature, SimpsonIsExactForCubics) {
  const int points = 11;
  const double h = 0.1;
  const Vector w = quadrature_weights(points, h, QuadratureRule::Simpson);
  double integral = 0.0;
  for (int i = 0; i < points; ++i) integral += w(i) * std::pow(i * h, 3);
  EXPECT_NEAR(integral, 0.25, 1e-14);
  EXPECT_NEAR(quadrature_weights(points, h, QuadratureRule::Trapezoid).sum(), 1.0, 1e-14);
  // even point counts fall back to the trapezoid on the last interval
  EXPECT_NEAR(quadrature_weights(12, h, QuadratureRule::Simpson).sum(), 1.1, 1e-14);
}

TEST(GramSchmidt, HermiteGaussCreatesOneNewMode) {
  const double w = 1.7;
  const auto d1 = gram_schmidt_derivatives(hermite_gauss_family(1, w), 0.0);
  ASSERT_EQ(d1.m, 1);
  EXPECT_NEAR(std::abs(d1.c_prime(0, 0)), 1.0 / (std::sqrt(2.0) * w), 1e-14);
  EXPECT_NEAR(std::abs(d1.c(0, 0)), 0.0, 1e-15);

  const auto d3 = gram_schmidt_derivatives(hermite_gauss_family(3, w), 0.0);
  EXPECT_EQ(d3.m, 1);
  EXPECT_EQ(d3.source, (std::vector<int>{2}));
  EXPECT_NEAR(std::abs(d3.c_prime(2, 0)), std::sqrt(1.5) / w, 1e-14);
}

TEST(GramSchmidt, SampledMatchesAnalyticHermiteGauss) {
  const auto samples = oracle::hermite_gauss_samples(3, 1.0, 0.2);
  SampledModeFamily sampled(3, [&](double) { return to_samples(samples, -14.0); });
  const auto a = gram_schmidt_derivatives(hermite_gauss_family(3, 1.0), 0.2);
  const auto b = gram_schmidt_derivatives(sampled, 0.2);
  EXPECT_EQ(a.m, b.m);
  EXPECT_NEAR((a.Dn - b.Dn).norm(), 0.0, 1e-10);
  EXPECT_NEAR((a.Dpartial - b.Dpartial).norm(), 0.0, 1e-10);
}

TEST(GramSchmidt, RejectsInconsistentOverlaps) {
  ModeOverlaps o{CMatrix::Identity(1, 1), CMatrix::Constant(1, 1, 0.5), CMatrix::Constant(1, 1, 0.1)};
  try {
    derivative_coupling(o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NumericalRank);
  }
  o.G(0, 0) = 1.0;
  o.overlap(0, 0) = 1.01;
  try {
    derivative_coupling(o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DomainError);
  }
}

TEST(ModeEncoded, MovingHermiteGaussMatchesBruteForce) {
  std::mt19937_64 rng(41);
  for (int n : {1, 2, 3}) {
    const double theta = 0.3;
    const auto m = oracle::hermite_gauss_samples(n, 1.0, theta);
    const auto mom = random_moments(n, rng);
    ModeEncodedProblem p{std::make_shared<AnalyticModeFamily>(hermite_gauss_family(n, 1.0)), theta, mom.V, mom.xbar, mom.dV, mom.dxbar};
    const double got = mode_encoded_qfi(p).total;
    const double want = oracle::brute_force_qfi(m, mom.V, mom.xbar, mom.dV, mom.dxbar);
    EXPECT_NEAR(got, want, 1e-7 * want) << "n=" << n;
  }
}

TEST(ModeEncoded, ComplexRotatedFamilyMatchesBruteForce) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 4; ++trial) {
    const int n = 2 + trial % 2;
    const CMatrix h = random_hermitian(n, rng);
    const double theta = 0.4 + 0.1 * trial;
    const auto mom = random_moments(n, rng);
    auto family = std::make_shared<SampledModeFamily>(n, [n, h](double t) { return to_samples(rotated_hermite_gauss(n, t, h), -14.0); });
    const auto d = gram_schmidt_derivatives(*family, theta);
    ModeEncodedProblem p{family, theta, mom.V, mom.xbar, mom.dV, mom.dxbar};
    const double got = mode_encoded_qfi(p, d).total;
    const double want = oracle::brute_force_qfi(rotated_hermite_gauss(n, theta, h), mom.V, mom.xbar, mom.dV, mom.dxbar);
    EXPECT_NEAR(got, want, 1e-7 * want) << "trial " << trial;
  }
}

TEST(ModeEncoded, ThetaFiniteDifferenceFamily) {
  // no derivative columns: the family differentiates its sampler in θ
  std::mt19937_64 rng(43);
  const CMatrix h = random_hermitian(2, rng);
  const auto mom = random_moments(2, rng);
  auto exact = std::make_shared<SampledModeFamily>(2, [h](double t) { return to_samples(rotated_hermite_gauss(2, t, h), -14.0); });
  auto numeric = std::make_shared<SampledModeFamily>(2, [h](double t) {
    auto s = to_samples(rotated_hermite_gauss(2, t, h), -14.0);
    s.derivatives.resize(0, 0);
    return s;
  });
  const double a = mode_encoded_qfi({exact, 0.5, mom.V, mom.xbar, mom.dV, mom.dxbar}).total;
  const double b = mode_encoded_qfi({numeric, 0.5, mom.V, mom.xbar, mom.dV, mom.dxbar}).total;
  EXPECT_NEAR(a, b, 1e-6 * a);
}

TEST(ModeEncoded, IndependentOfPopulatedModeOrder) {
  std::mt19937_64 rng(44);
  const CMatrix h = random_hermitian(3, rng);
  const auto mom = random_moments(3, rng);
  const std::vector<int> perm{2, 0, 1};
  Matrix P = Matrix::Zero(6, 6);
  for (int k = 0; k < 3; ++k) P.block<2, 2>(2 * k, 2 * perm[static_cast<std::size_t>(k)]) = Matrix::Identity(2, 2);
  auto family = std::make_shared<SampledModeFamily>(3, [h](double t) { return to_samples(rotated_hermite_gauss(3, t, h), -14.0); });
  auto permuted = std::make_shared<SampledModeFamily>(3, [h, perm](double t) {
    auto s = to_samples(rotated_hermite_gauss(3, t, h), -14.0);
    CMatrix v(s.values.rows(), 3), d(s.values.rows(), 3);
    for (int k = 0; k < 3; ++k) {
      v.col(k) = s.values.col(perm[static_cast<std::size_t>(k)]);
      d.col(k) = s.derivatives.col(perm[static_cast<std::size_t>(k)]);
    }
    s.values = v;
    s.derivatives = d;
    return s;
  });
  const double a = mode_encoded_qfi({family, 0.2, mom.V, mom.xbar, mom.dV, mom.dxbar}).total;
  const double b = mode_encoded_qfi({permuted, 0.2, P * mom.V * P.transpose(), P * mom.xbar, P * mom.dV * P.transpose(), P * mom.dxbar}).total;
  EXPECT_NEAR(a, b, 1e-9 * a);
}

TEST(ModeEncoded, RotationWithinSpanCreatesNoDerivativeMode) {
  std::mt19937_64 rng(45);
  const CMatrix h = random_hermitian(2, rng);
  auto family = std::make_shared<SampledModeFamily>(2, [h](double t) { return to_samples(rotated_hermite_gauss(2, t, h, false), -14.0); });
  const auto d = gram_schmidt_derivatives(*family, 0.7);
  EXPECT_EQ(d.m, 0);
  const auto mom = random_moments(2, rng);
  const double got = mode_encoded_qfi({family, 0.7, mom.V, mom.xbar, mom.dV, mom.dxbar}, d).total;
  const double want = oracle::brute_force_qfi(rotated_hermite_gauss(2, 0.7, h, false), mom.V, mom.xbar, mom.dV, mom.dxbar);
  EXPECT_NEAR(got, want, 1e-8 * want);
}

TEST(ModeEncoded, UnpopulatedDerivativeModeAddsNothing) {
  // the same thermal beam with and without its vacuum derivative mode listed as populated
  const BeamGeometry g = BeamGeometry::gaussian(1.3);
  ModeEncodedProblem one{beam_family(g, 1), 0.0, 5.0 * Matrix::Identity(2, 2), Vector::Zero(2), Matrix::Zero(2, 2), Vector::Zero(2)};
  ModeEncodedProblem two{beam_family(g, 2), 0.0, Matrix::Identity(4, 4), Vector::Zero(4), Matrix::Zero(4, 4), Vector::Zero(4)};
  two.V.topLeftCorner(2, 2) *= 5.0;
  EXPECT_NEAR(mode_encoded_qfi(one).total, mode_encoded_qfi(two).total, 1e-13);
}

TEST(ModeEncoded, StaticFamilyReducesToStateQfi) {
  std::mt19937_64 rng(46);
  const auto mom = random_moments(2, rng);
  auto family = std::make_shared<AnalyticModeFamily>(2, [](double) {
    return ModeOverlaps{CMatrix::Identity(2, 2), CMatrix::Zero(2, 2), CMatrix::Zero(2, 2)};
  });
  const double a = mode_encoded_qfi({family, 0.0, mom.V, mom.xbar, mom.dV, mom.dxbar}).total;
  const double b = qfi(make_state(mom.xbar, mom.V), mom.dV, mom.dxbar).total;
  EXPECT_NEAR(a, b, 1e-12 * b);
}

TEST(ModeEncoded, GroupsSumToTotal) {
  std::mt19937_64 rng(47);
  const auto mom = random_moments(2, rng);
  const auto b = mode_encoded_qfi({std::make_shared<AnalyticModeFamily>(hermite_gauss_family(2, 1.0)), 0.0, mom.V, mom.xbar, mom.dV, mom.dxbar});
  double sum = 0.0;
  for (const auto& [name, v] : b.groups) sum += v;
  EXPECT_NEAR(sum, b.total, 1e-12 * b.total);
  EXPECT_GT(b.groups.at("leakage-block"), 0.0);
}

TEST(SensingMode, CarriesTheDisplacementInformation) {
  std::mt19937_64 rng(48);
  const auto mom = random_moments(2, rng);
  ModeEncodedProblem p{std::make_shared<AnalyticModeFamily>(hermite_gauss_family(2, 1.0)), 0.0, mom.V, mom.xbar, mom.dV, mom.dxbar};
  const auto d = gram_schmidt_derivatives(*p.family, 0.0);
  const auto s = sensing_mode(p, d);
  EXPECT_NEAR(s.f_xbar, f_xbar_mode_encoded(p, d).value, 1e-12 * s.f_xbar);
  EXPECT_NEAR(s.coefficients.norm(), 1.0, 1e-14);
  p.xbar.setZero();
  p.dxbar.setZero();
  try {
    sensing_mode(p, d);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UndefinedSensingMode);
  }
}

TEST(ModeSamplesIo, RoundTrip) {
  const auto m = oracle::hermite_gauss_samples(2, 1.0, 0.1, 6.0, 101);
  std::stringstream buf;
  write_mode_samples(buf, to_samples(m, -6.0), 0.1);
  const auto back = read_mode_samples(buf);
  ASSERT_TRUE(back.theta.has_value());
  EXPECT_DOUBLE_EQ(*back.theta, 0.1);
  EXPECT_EQ(back.samples.values.rows(), 101);
  EXPECT_NEAR((back.samples.values - m.values).norm(), 0.0, 1e-15);
  EXPECT_NEAR((back.samples.derivatives - m.derivatives).norm(), 0.0, 1e-15);
}

TEST(ModeSamplesIo, RejectsNonUniformGrid) {
  std::stringstream buf("# domain 0 2\n# spacing 1\n# modes 1\n0,1,0,0,0\n1,1,0,0,0\n2.5,1,0,0,0\n");
  EXPECT_THROW(read_mode_samples(buf), Error);
}
