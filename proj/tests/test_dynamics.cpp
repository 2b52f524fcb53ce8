#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "nestedkf/dynamics.hpp"
#include "nestedkf/stochastic.hpp"

using namespace nkf;

namespace {

// Index-by-index evaluation written directly from the 1-based equations, with
// explicit modular wrapping. Kept deliberately naive.
Vector reference_two_scale(const Vector& x, const Vector& y, const ModelConsts& c) {
  const int N = c.N, MN = c.M * c.N;
  auto X = [&](int n) { return x[((n - 1) % N + N) % N]; };   // 1-based, cyclic
  auto Y = [&](int m) { return y[((m - 1) % MN + MN) % MN]; };
  Vector out(N + MN);
  for (int n = 1; n <= N; ++n) {
    double sum = 0.0;
    for (int m = c.M * (n - 1) + 1; m <= c.M * n; ++m) sum += Y(m);
    out[n - 1] = -X(n - 1) * (X(n - 2) - X(n + 1)) - X(n) + c.F - c.h * c.c / c.b * sum;
  }
  for (int m = 1; m <= MN; ++m) {
    const int n = 1 + (m - 1) / c.M;
    out[N + m - 1] = -c.c * c.b * Y(m + 1) * (Y(m + 2) - Y(m - 1)) - c.c * Y(m) + c.h * c.c / c.b * X(n);
  }
  return out;
}

Vector reference_truncated(const Vector& x, const DetParams& p, const Vector& e) {
  const int N = static_cast<int>(x.size());
  auto X = [&](int n) { return x[((n - 1) % N + N) % N]; };
  Vector out(N);
  for (int n = 1; n <= N; ++n)
    out[n - 1] = -X(n - 1) * (X(n - 2) - X(n + 1)) - X(n) + p.a0 + p.a1 * X(n) + e[n - 1];
  return out;
}

Vector random_vector(std::mt19937_64& g, int n, double scale) {
  std::normal_distribution<double> d(0.0, scale);
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = d(g);
  return v;
}

Vector rotate(const Vector& v, int by) {
  const auto n = v.size();
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[(i + by) % n] = v[i];
  return out;
}

}  // namespace

TEST(TwoScaleTendency, ZeroStateGivesPureForcing) {
  ModelConsts c;
  const FullState d = two_scale_tendency(FullState(c.N, c.M), c);
  for (int n = 0; n < c.N; ++n) EXPECT_DOUBLE_EQ(d.x()[n], 20.0);
  for (int m = 0; m < c.N * c.M; ++m) EXPECT_DOUBLE_EQ(d.y()[m], 0.0);
}

TEST(TwoScaleTendency, UnitSmallScaleCouplingSum) {
  ModelConsts c;
  const FullState s(Vector::Zero(c.N), Vector::Ones(c.N * c.M));
  const FullState d = two_scale_tendency(s, c);
  for (int n = 0; n < c.N; ++n) EXPECT_NEAR(d.x()[n], -12.0, 1e-12);
}

TEST(TwoScaleTendency, MatchesIndexByIndexReference) {
  ModelConsts c;
  std::mt19937_64 g(11);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector x = random_vector(g, c.N, 5.0);
    const Vector y = random_vector(g, c.N * c.M, 0.5);
    const FullState d = two_scale_tendency(FullState(x, y), c);
    const Vector ref = reference_two_scale(x, y, c);
    EXPECT_LE((d.values() - ref).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, ref.cwiseAbs().maxCoeff()));
  }
}

TEST(TwoScaleTendency, CyclicSymmetry) {
  ModelConsts c;
  std::mt19937_64 g(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x = random_vector(g, c.N, 5.0);
    const Vector y = random_vector(g, c.N * c.M, 0.5);
    const FullState d = two_scale_tendency(FullState(x, y), c);
    const FullState dr = two_scale_tendency(FullState(rotate(x, 1), rotate(y, c.M)), c);
    EXPECT_LE((Vector(dr.x()) - rotate(d.x(), 1)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((Vector(dr.y()) - rotate(d.y(), c.M)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(TruncatedTendency, FittedForcingAtRest) {
  const Vector d = truncated_tendency(Vector::Zero(8), DetParams{19.169, -0.813}, Vector::Zero(8));
  for (int n = 0; n < 8; ++n) EXPECT_DOUBLE_EQ(d[n], 19.169);
}

TEST(TruncatedTendency, UnforcedRestIsStationary) {
  const Vector d = truncated_tendency(Vector::Zero(8), DetParams{0.0, 0.0}, Vector::Zero(8));
  EXPECT_EQ(d, Vector::Zero(8));
}

TEST(TruncatedTendency, NoisePassesThroughAdditively) {
  Vector e = Vector::Zero(8);
  e[0] = 1.0;
  const Vector d = truncated_tendency(Vector::Zero(8), DetParams{0.0, 0.0}, e);
  EXPECT_EQ(d, e);
}

TEST(TruncatedTendency, MatchesReferenceAndIsCyclic) {
  std::mt19937_64 g(13);
  const DetParams p{19.169, -0.813};
  for (int trial = 0; trial < 100; ++trial) {
    const Vector x = random_vector(g, 8, 5.0);
    const Vector e = random_vector(g, 8, 2.0);
    const Vector d = truncated_tendency(x, p, e);
    EXPECT_LE((d - reference_truncated(x, p, e)).cwiseAbs().maxCoeff(), 1e-12);
    const Vector dr = truncated_tendency(rotate(x, 1), p, rotate(e, 1));
    EXPECT_LE((dr - rotate(d, 1)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(TruncatedTendency, RejectsWrongNoiseLength) {
  EXPECT_THROW(truncated_tendency(Vector::Zero(8), DetParams{}, Vector::Zero(7)), DimensionError);
}

TEST(Rk4, ZeroTendencyIsIdentity) {
  const Vector s = Vector::LinSpaced(5, -1.0, 3.0);
  const Vector out = rk4_step(s, 0.01, [](ConstVectorRef, VectorRef o) { o.setZero(); });
  EXPECT_EQ(out, s);
}

TEST(Rk4, ExponentialDecayOneStep) {
  const Vector out = rk4_step(Vector::Ones(1), 0.005, [](ConstVectorRef in, VectorRef o) { o = -in; });
  EXPECT_LT(std::abs(out[0] - std::exp(-0.005)), 1e-12);
}

TEST(Rk4, FourthOrderGlobalConvergence) {
  const double lambda = -1.3, T = 2.0;
  auto global_error = [&](double dt) {
    Vector s = Vector::Ones(1);
    Rk4Workspace ws;
    const int steps = static_cast<int>(std::lround(T / dt));
    for (int i = 0; i < steps; ++i)
      rk4_step(VectorRef(s), dt, [&](ConstVectorRef in, VectorRef o) { o = lambda * in; }, ws);
    return std::abs(s[0] - std::exp(lambda * T));
  };
  std::vector<double> logdt, logerr;
  for (double dt : {0.2, 0.1, 0.05, 0.025}) {
    logdt.push_back(std::log(dt));
    logerr.push_back(std::log(global_error(dt)));
  }
  // least-squares slope of log error against log dt
  const double n = static_cast<double>(logdt.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < logdt.size(); ++i) mx += logdt[i] / n, my += logerr[i] / n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < logdt.size(); ++i) {
    sxy += (logdt[i] - mx) * (logerr[i] - my);
    sxx += (logdt[i] - mx) * (logdt[i] - mx);
  }
  const double order = sxy / sxx;
  EXPECT_GE(order, 3.7);
  EXPECT_LE(order, 4.3);
}

TEST(Rk4, NonFiniteStateIsBlowup) {
  Vector s = Vector::Ones(2);
  Rk4Workspace ws;
  EXPECT_THROW(
      rk4_step(VectorRef(s), 0.1, [](ConstVectorRef, VectorRef o) { o.setConstant(INFINITY); }, ws),
      BlowupError);
  EXPECT_THROW(rk4_step(Vector::Ones(1), 0.0, [](ConstVectorRef, VectorRef o) { o.setZero(); }),
               std::invalid_argument);
}

TEST(NatureRun, DefaultTruncatedRecordCount) {
  EXPECT_EQ(steps_per_interval(0.05, 0.005), 10);
  EXPECT_EQ(steps_per_interval(0.05, 0.001), 50);
  EXPECT_EQ(std::lround(250.0 / 0.005), 50000);
  NatureRunSpec spec;  // spinup 1460, duration 250, dt 0.005, record 0.05
  Stream rng = seed_stream(3, {});
  const CovMatrix cov = build_sigma(Theta(Vector::Constant(1, 2.0), {CovModelKind::IsoDiag, 8}));
  const NatureRun run = generate_truncated_nature(8, 20.0, DetParams{}, cov, 0.984, spec, rng);
  EXPECT_EQ(run.trajectory.size(), 5000u);
  EXPECT_GT(run.snapshots.size(), 200u);
  // Bounded under the adopted sign of the parameterization.
  double maxabs = 0.0;
  for (const auto& r : run.trajectory.records) maxabs = std::max(maxabs, r.cwiseAbs().maxCoeff());
  EXPECT_LT(maxabs, 30.0);
  EXPECT_GT(maxabs, 5.0);
}

TEST(NatureRun, DeterministicGivenSeed) {
  NatureRunSpec spec;
  spec.spinup = 10.0;
  spec.duration = 5.0;
  spec.snapshot_start = 1.0;
  const CovMatrix cov = build_sigma(Theta(Vector::Constant(1, 2.0), {CovModelKind::IsoDiag, 8}));
  Stream a = seed_stream(5, {}), b = seed_stream(5, {});
  const NatureRun ra = generate_truncated_nature(8, 20.0, DetParams{}, cov, 0.984, spec, a);
  const NatureRun rb = generate_truncated_nature(8, 20.0, DetParams{}, cov, 0.984, spec, b);
  ASSERT_EQ(ra.trajectory.size(), 100u);
  for (std::size_t i = 0; i < ra.trajectory.size(); ++i)
    EXPECT_EQ(ra.trajectory.records[i], rb.trajectory.records[i]);
}

TEST(NatureRun, ZeroDurationIsEmpty) {
  NatureRunSpec spec;
  spec.spinup = 1.0;
  spec.duration = 0.0;
  spec.dt = 0.001;
  EXPECT_TRUE(generate_two_scale_nature(ModelConsts{}, spec).trajectory.empty());
}

TEST(NatureRun, MisalignedRecordIntervalIsRejected) {
  NatureRunSpec spec;
  spec.record_every = 0.0523;
  spec.spinup = 0.1;
  spec.duration = 1.0;
  EXPECT_THROW(generate_two_scale_nature(ModelConsts{}, spec), AlignmentError);
}

TEST(TruncatedModel, NearbyTrajectoriesSeparate) {
  const DetParams p{19.169, -0.813};
  const Vector zero = Vector::Zero(8);
  auto f = [&](ConstVectorRef in, VectorRef o) { truncated_tendency(in, o, p, zero); };
  Vector a = spinup_initial_condition(8, 20.0);
  Rk4Workspace ws;
  for (int i = 0; i < 20000; ++i) rk4_step(VectorRef(a), 0.005, f, ws);
  Vector b = a;
  b[3] += 1e-8;
  for (int i = 0; i < 4000; ++i) {
    rk4_step(VectorRef(a), 0.005, f, ws);
    rk4_step(VectorRef(b), 0.005, f, ws);
  }
  EXPECT_GT((a - b).norm(), 1e-4);
  EXPECT_LT(a.cwiseAbs().maxCoeff(), 30.0);
}

TEST(SubgridForcing, Examples) {
  ModelConsts c;
  const Vector f0 = subgrid_forcing(FullState(c.N, c.M), c);
  EXPECT_EQ(f0, Vector::Constant(c.N, 20.0));
  const Vector f1 = subgrid_forcing(FullState(Vector::Zero(c.N), Vector::Ones(c.N * c.M)), c);
  for (int n = 0; n < c.N; ++n) EXPECT_NEAR(f1[n], -12.0, 1e-12);
}

TEST(FitDeterministicParams, RecoversExactLinearForcing) {
  std::vector<double> x, f;
  for (int i = 0; i < 200; ++i) {
    x.push_back(-5.0 + 0.07 * i);
    f.push_back(19.169 - 0.813 * x.back());
  }
  const DetParams p = fit_linear(x, f);
  EXPECT_NEAR(p.a0, 19.169, 1e-9);
  EXPECT_NEAR(p.a1, -0.813, 1e-9);
}

TEST(FitDeterministicParams, ConstantTrajectoryIsRankDeficient) {
  ModelConsts c;
  std::vector<FullState> traj(3, FullState(Vector::Constant(c.N, 1.5), Vector::Zero(c.N * c.M)));
  EXPECT_THROW(fit_deterministic_params(traj, c), RankDeficiencyError);
  EXPECT_THROW(fit_deterministic_params(std::vector<FullState>(1, traj[0]), c), RankDeficiencyError);
}

TEST(FitDeterministicParams, ShortTwoScaleRunIsNearStandardValues) {
  // Loose check on a short run; the long-run tolerance is in the acceptance suite.
  ModelConsts c;
  FullState s(c.N, c.M);
  s.values().head(c.N) = spinup_initial_condition(c.N, c.F);
  const FullState spun = integrate_two_scale(s, c, 0.001, 20000, 20000).back();
  const auto traj = integrate_two_scale(spun, c, 0.001, 100000, 50);
  const DetParams p = fit_deterministic_params(traj, c);
  EXPECT_NEAR(p.a0, 19.169, 0.15 * 19.169);
  EXPECT_NEAR(p.a1, -0.813, 0.25 * 0.813);
}
