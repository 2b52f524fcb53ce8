#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "nestedkf/stochastic.hpp"

using namespace nkf;

namespace {

const CovModel kI{CovModelKind::IsoDiag, 8};
const CovModel kII{CovModelKind::IsoExp, 8};
const CovModel kIII{CovModelKind::CirculantSym, 8};
const CovModel kIV{CovModelKind::AnisoDiag, 8};

Theta theta(std::initializer_list<double> v, CovModel m) {
  Vector t(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) t[i++] = x;
  return Theta(t, m);
}

double min_eigenvalue(const Matrix& s) {
  return Eigen::SelfAdjointEigenSolver<Matrix>(s).eigenvalues().minCoeff();
}

Theta random_theta(Stream& g, CovModel m) {
  Vector v(m.param_count());
  switch (m.kind) {
    case CovModelKind::IsoDiag:
    case CovModelKind::AnisoDiag:
      for (auto& x : v) x = 3.0 * g.normal();
      break;
    case CovModelKind::IsoExp:
      v << 3.0 * g.normal(), g.normal();
      break;
    case CovModelKind::CirculantSym:
      for (auto& x : v) x = 2.0 * g.normal();
      break;
  }
  return Theta(v, m);
}

// One-sample KS statistic of samples against N(0, 1).
double ks_statistic(std::vector<double> s) {
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  double d = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double cdf = 0.5 * std::erfc(-s[i] / std::sqrt(2.0));
    d = std::max({d, cdf - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - cdf});
  }
  return d;
}

}  // namespace

TEST(RingDistance, Examples) {
  EXPECT_EQ(ring_distance(0, 7, 8), 1);
  EXPECT_EQ(ring_distance(0, 4, 8), 4);
  EXPECT_EQ(ring_distance(2, 2, 8), 0);
  EXPECT_EQ(ring_distance(1, 6, 8), 3);
}

TEST(BuildSigma, IsotropicDiagonal) {
  const CovMatrix c = build_sigma(theta({2.0}, kI));
  EXPECT_EQ(c.sigma, Matrix(4.0 * Matrix::Identity(8, 8)));
  EXPECT_TRUE(c.diagonal);
}

TEST(BuildSigma, ExponentialDecayEntries) {
  const CovMatrix c = build_sigma(theta({2.0, 0.3}, kII));
  EXPECT_NEAR(c.sigma(0, 4), 4.0 * std::exp(-1.2), 1e-12);
  EXPECT_NEAR(c.sigma(0, 4), 1.2048, 1e-4);
  EXPECT_NEAR(c.sigma(0, 7), 4.0 * std::exp(-0.3), 1e-12);
  EXPECT_NEAR(c.sigma(3, 3), 4.0, 1e-12);
}

TEST(BuildSigma, CirculantIdentity) {
  const CovMatrix c = build_sigma(theta({1, 0, 0, 0, 0}, kIII));
  EXPECT_LE((c.sigma - Matrix::Identity(8, 8)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(BuildSigma, CirculantLayout) {
  const CovMatrix c = build_sigma(theta({3.0, 0.9, -0.4, 0.2, 0.1}, kIII));
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      const double expect = std::vector<double>{3.0, 0.9, -0.4, 0.2, 0.1}[ring_distance(i, j, 8)];
      EXPECT_NEAR(c.sigma(i, j), expect, 1e-12);
    }
}

TEST(BuildSigma, AnisotropicDiagonalUsesStdDevs) {
  Vector s(8);
  s << 2.5, 2.5, 2.5, 2.5, 1.5, 1.5, 1.5, 1.5;
  const CovMatrix c = build_sigma(Theta(s, kIV));
  for (int i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(c.sigma(i, i), s[i] * s[i]);
  EXPECT_EQ((c.sigma.array() != 0.0).count(), 8);
}

TEST(BuildSigma, WrongParameterCountIsRejected) {
  EXPECT_THROW(Theta(Vector::Zero(3), kII), DimensionError);
  EXPECT_THROW(Theta(Vector::Zero(4), kIII), DimensionError);
}

TEST(ProjectPsd, ValidMatrixUnchanged) {
  const Matrix s = build_sigma(theta({2.0, 0.3}, kII), false).sigma;
  EXPECT_EQ(project_psd(s, kII), s);
  const Matrix d = 4.0 * Matrix::Identity(8, 8);
  EXPECT_EQ(project_psd(d, kI), d);
}

TEST(ProjectPsd, CirculantOutputIsPsd) {
  // With N = 8 this row has eigenvalues 7.3 and 0.1, so it is already valid.
  const Matrix s = build_sigma(theta({1, 0.9, 0.9, 0.9, 0.9}, kIII)).sigma;
  EXPECT_GE(min_eigenvalue(s), kPsdFloor);
  EXPECT_EQ(s, build_sigma(theta({1, 0.9, 0.9, 0.9, 0.9}, kIII), false).sigma);
}

TEST(ProjectPsd, IndefiniteCirculantIsClipped) {
  // 1 + 1.8 cos(pi) = -0.8 at wavenumber 4.
  const Theta t = theta({1, 0.9, 0, 0, 0}, kIII);
  EXPECT_NEAR(min_eigenvalue(raw_sigma(t)), -0.8, 1e-12);
  EXPECT_THROW(build_sigma(t, false), FactorizationError);
  const Matrix s = build_sigma(t).sigma;
  EXPECT_GE(min_eigenvalue(s), kPsdFloor * (1.0 - 1e-6) - 1e-14);
  EXPECT_LE((s - s.transpose()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ProjectPsd, NegativeSigmaIsFloored) {
  const CovMatrix c = build_sigma(theta({-0.5}, kI));
  EXPECT_LE((c.sigma - 1e-16 * Matrix::Identity(8, 8)).cwiseAbs().maxCoeff(), 1e-30);
  EXPECT_EQ(repair_theta(theta({-0.5}, kI)).values[0], kPsdFloor);
  EXPECT_EQ(repair_theta(theta({2.0, -0.2}, kII)).values[1], 0.0);
}

TEST(ProjectPsd, Idempotent) {
  Stream g = seed_stream(21, {});
  for (CovModel m : {kI, kII, kIII, kIV})
    for (int trial = 0; trial < 50; ++trial) {
      const Matrix once = build_sigma(random_theta(g, m)).sigma;
      const Matrix twice = project_psd(once, m);
      EXPECT_LE((twice - once).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, once.cwiseAbs().maxCoeff()));
    }
}

TEST(BuildSigma, RandomThetaIsSymmetricPsdAndFactors) {
  Stream g = seed_stream(22, {});
  for (CovModel m : {kI, kII, kIII, kIV})
    for (int trial = 0; trial < 100; ++trial) {
      const CovMatrix c = build_sigma(random_theta(g, m));
      const double scale = std::max(1.0, c.sigma.cwiseAbs().maxCoeff());
      EXPECT_LE((c.sigma - c.sigma.transpose()).cwiseAbs().maxCoeff(), 1e-12 * scale);
      EXPECT_GE(min_eigenvalue(c.sigma), -1e-10 * scale);
      EXPECT_LE((c.chol * c.chol.transpose() - c.sigma).norm() / c.sigma.norm(), 1e-10);
    }
}

TEST(BuildSigma, CirculantModelsCommuteWithRotation) {
  Stream g = seed_stream(23, {});
  Matrix P = Matrix::Zero(8, 8);
  for (int i = 0; i < 8; ++i) P((i + 1) % 8, i) = 1.0;
  for (CovModel m : {kII, kIII})
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix s = build_sigma(random_theta(g, m)).sigma;
      EXPECT_LE((P * s * P.transpose() - s).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, s.norm()));
    }
}

TEST(SampleGaussian, IdentityMoments) {
  const CovMatrix c = build_sigma(theta({1.0}, kI));
  Stream g = seed_stream(31, {});
  const int n = 1000000;
  Vector sum = Vector::Zero(8);
  for (int i = 0; i < n; ++i) sum += sample_gaussian(c, g);
  EXPECT_LE((sum / n).cwiseAbs().maxCoeff(), 0.005);
}

TEST(SampleGaussian, ScaledVariance) {
  const CovMatrix c = build_sigma(theta({2.0}, kI));
  Stream g = seed_stream(32, {});
  const int n = 1000000;
  Vector sq = Vector::Zero(8), z(8);
  for (int i = 0; i < n; ++i) {
    sample_gaussian(c, g, z);
    sq += z.cwiseAbs2();
  }
  for (int k = 0; k < 8; ++k) EXPECT_NEAR(sq[k] / n, 4.0, 0.08);
}

TEST(SampleGaussian, CorrelatedCovarianceRecovered) {
  const CovMatrix c = build_sigma(theta({2.0, 0.3}, kII));
  Stream g = seed_stream(33, {});
  const int n = 400000;
  Matrix acc = Matrix::Zero(8, 8);
  Vector z(8);
  for (int i = 0; i < n; ++i) {
    sample_gaussian(c, g, z);
    acc.noalias() += z * z.transpose();
  }
  EXPECT_LE((acc / n - c.sigma).cwiseAbs().maxCoeff(), 0.06);
}

TEST(SampleGaussian, ZeroFactorGivesZero) {
  CovMatrix c;
  c.sigma = Matrix::Zero(8, 8);
  c.chol = Matrix::Zero(8, 8);
  Stream g = seed_stream(34, {});
  for (int i = 0; i < 10; ++i) EXPECT_EQ(sample_gaussian(c, g), Vector::Zero(8));
  c.diagonal = true;
  EXPECT_EQ(sample_gaussian(c, g), Vector::Zero(8));
}

TEST(Ar1, ZeroPhiIsFreshDraw) {
  const CovMatrix c = build_sigma(theta({2.0, 0.3}, kII));
  Stream g = seed_stream(41, {});
  NoiseState s{Vector::Constant(8, 100.0), 0.0};
  Stream copy = g;
  ar1_step(s, c, g);
  EXPECT_EQ(s.e, sample_gaussian(c, copy));
}

TEST(Ar1, StationaryVarianceAndLagOneCorrelation) {
  const CovMatrix c = build_sigma(theta({2.0}, kI));
  Stream g = seed_stream(42, {});
  NoiseState s = stationary_noise(c, 0.984, g);
  const int n = 1000000;
  Vector sq = Vector::Zero(8), lag = Vector::Zero(8), prev = s.e, scratch(8);
  for (int i = 0; i < n; ++i) {
    ar1_step(s, c, g, scratch);
    sq += s.e.cwiseAbs2();
    lag += s.e.cwiseProduct(prev);
    prev = s.e;
  }
  for (int k = 0; k < 8; ++k) {
    EXPECT_NEAR(sq[k] / n, 4.0, 0.03 * 4.0) << "component " << k;
    EXPECT_NEAR(lag[k] / sq[k], 0.984, 0.002) << "component " << k;
  }
}

TEST(Ar1, StartsFromStationaryDistribution) {
  // e(0) scaled by 1/sigma is standard normal; a single draw per stream.
  const CovMatrix c = build_sigma(theta({2.0}, kI));
  std::vector<double> z;
  for (std::uint32_t m = 0; m < 2000; ++m) {
    Stream g = seed_stream(43, {0, 0, m, Purpose::ForecastNoise});
    z.push_back(stationary_noise(c, 0.984, g).e[0] / 2.0);
  }
  EXPECT_LT(ks_statistic(z), 1.36 / std::sqrt(2000.0));
}

TEST(Ar1, RejectsPhiOutsideUnitInterval) {
  const CovMatrix c = build_sigma(theta({2.0}, kI));
  Stream g = seed_stream(44, {});
  EXPECT_THROW(stationary_noise(c, 1.0, g), std::invalid_argument);
  EXPECT_THROW(stationary_noise(c, -0.1, g), std::invalid_argument);
}
