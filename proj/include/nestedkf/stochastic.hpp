#pragma once

// Model-error covariance structures, Gaussian sampling and the AR(1) red-noise
// forcing of the truncated model.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "dynamics.hpp"
#include "errors.hpp"
#include "rng.hpp"

namespace nkf {

inline constexpr double kPsdFloor = 1e-8;

enum class CovModelKind {
  IsoDiag,       // I:   sigma^2 * Identity, theta = (sigma)
  IsoExp,        // II:  sigma^2 exp(-rho d_ij), theta = (sigma, rho)
  CirculantSym,  // III: symmetric circulant, theta = (variance, c_1..c_{N/2})
  AnisoDiag,     // IV:  diag(sigma_1^2..sigma_N^2), theta = (sigma_1..sigma_N)
};

struct CovModel {
  CovModelKind kind = CovModelKind::IsoDiag;
  int N = 8;

  int param_count() const {
    switch (kind) {
      case CovModelKind::IsoDiag: return 1;
      case CovModelKind::IsoExp: return 2;
      case CovModelKind::CirculantSym: return 1 + N / 2;
      case CovModelKind::AnisoDiag: return N;
    }
    return 0;
  }

  std::string name() const {
    switch (kind) {
      case CovModelKind::IsoDiag: return "I";
      case CovModelKind::IsoExp: return "II";
      case CovModelKind::CirculantSym: return "III";
      case CovModelKind::AnisoDiag: return "IV";
    }
    return "?";
  }

  static CovModel parse(const std::string& s, int N) {
    if (s == "I" || s == "iso_diag") return {CovModelKind::IsoDiag, N};
    if (s == "II" || s == "iso_exp") return {CovModelKind::IsoExp, N};
    if (s == "III" || s == "circulant") return {CovModelKind::CirculantSym, N};
    if (s == "IV" || s == "aniso_diag") return {CovModelKind::AnisoDiag, N};
    throw ConfigError("unknown covariance model '" + s + "'");
  }

  bool operator==(const CovModel&) const = default;
};

struct Theta {
  Vector values;
  CovModel model;

  Theta() = default;
  Theta(Vector v, CovModel m) : values(std::move(v)), model(m) {
    if (values.size() != model.param_count())
      throw DimensionError("Theta: expected " + std::to_string(model.param_count()) +
                           " parameters for model " + model.name() + ", got " +
                           std::to_string(values.size()));
  }
};

struct CovMatrix {
  Matrix sigma;
  Matrix chol;  // lower triangular, chol * chol^T == sigma
  bool diagonal = false;
};

inline int ring_distance(int i, int j, int N) {
  const int d = std::abs(i - j);
  return std::min(d, N - d);
}

namespace detail {

// Eigenvalues of the symmetric circulant with first row `row` (a real DFT).
inline Vector circulant_eigenvalues(const Vector& row) {
  const int N = static_cast<int>(row.size());
  Vector lambda(N);
  for (int k = 0; k < N; ++k) {
    double s = 0.0;
    for (int j = 0; j < N; ++j) s += row[j] * std::cos(2.0 * std::numbers::pi * j * k / N);
    lambda[k] = s;
  }
  return lambda;
}

inline Vector circulant_row_from_eigenvalues(const Vector& lambda) {
  const int N = static_cast<int>(lambda.size());
  Vector row(N);
  for (int j = 0; j < N; ++j) {
    double s = 0.0;
    for (int k = 0; k < N; ++k) s += lambda[k] * std::cos(2.0 * std::numbers::pi * j * k / N);
    row[j] = s / N;
  }
  return row;
}

inline Matrix circulant_from_row(const Vector& row) {
  const int N = static_cast<int>(row.size());
  Matrix m(N, N);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) m(i, j) = row[(j - i + N) % N];
  return m;
}

// Clips circulant eigenvalues at the floor. Returns false when nothing needed
// clipping (row left untouched).
inline bool clip_circulant_row(Vector& row) {
  Vector lambda = circulant_eigenvalues(row);
  if (lambda.minCoeff() >= kPsdFloor) return false;
  lambda = lambda.cwiseMax(kPsdFloor);
  row = circulant_row_from_eigenvalues(lambda);
  return true;
}

inline Vector circulant_row_from_theta(const Vector& v, int N) {
  Vector row(N);
  for (int j = 0; j < N; ++j) row[j] = v[ring_distance(0, j, N)];
  return row;
}

}  // namespace detail

// Covariance implied by theta, without any repair.
inline Matrix raw_sigma(const Theta& theta) {
  const int N = theta.model.N;
  const Vector& v = theta.values;
  switch (theta.model.kind) {
    case CovModelKind::IsoDiag:
      return v[0] * v[0] * Matrix::Identity(N, N);
    case CovModelKind::IsoExp: {
      Matrix s(N, N);
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) s(i, j) = v[0] * v[0] * std::exp(-v[1] * ring_distance(i, j, N));
      return s;
    }
    case CovModelKind::CirculantSym:
      return detail::circulant_from_row(detail::circulant_row_from_theta(v, N));
    case CovModelKind::AnisoDiag:
      return v.cwiseAbs2().asDiagonal();
  }
  return {};
}

// Maps theta onto the nearest valid parameter vector: sigma-type parameters
// clamped at the floor, rho >= 0, circulant parameters replaced by the first
// row of the eigenvalue-clipped circulant. Valid theta is returned unchanged.
inline Theta repair_theta(const Theta& theta) {
  Theta out = theta;
  Vector& v = out.values;
  const int N = theta.model.N;
  switch (theta.model.kind) {
    case CovModelKind::IsoDiag:
    case CovModelKind::AnisoDiag:
      v = v.cwiseMax(kPsdFloor);
      break;
    case CovModelKind::IsoExp:
      v[0] = std::max(v[0], kPsdFloor);
      v[1] = std::max(v[1], 0.0);
      break;
    case CovModelKind::CirculantSym: {
      Vector row = detail::circulant_row_from_theta(v, N);
      if (detail::clip_circulant_row(row)) {
        for (int d = 0; d <= N / 2; ++d) v[d] = row[d];
      }
      break;
    }
  }
  return out;
}

// PSD repair of a symmetric matrix produced by one of the covariance models.
// Circulant structures (II, III) have their DFT eigenvalues clipped at the
// floor; diagonal structures (I, IV) have their variances floored at eps^2.
// Input that is already valid is returned unchanged.
inline Matrix project_psd(const Matrix& sigma, const CovModel& model) {
  switch (model.kind) {
    case CovModelKind::IsoDiag:
    case CovModelKind::AnisoDiag: {
      Matrix out = sigma;
      for (int i = 0; i < out.rows(); ++i) out(i, i) = std::max(out(i, i), kPsdFloor * kPsdFloor);
      return out;
    }
    case CovModelKind::IsoExp:
    case CovModelKind::CirculantSym: {
      Vector row = sigma.row(0).transpose();
      if (!detail::clip_circulant_row(row)) return sigma;
      return detail::circulant_from_row(row);
    }
  }
  return sigma;
}

inline CovMatrix build_sigma(const Theta& theta, bool project = true) {
  CovMatrix cov;
  const Theta t = project ? repair_theta(theta) : theta;
  cov.sigma = raw_sigma(t);
  if (project) cov.sigma = project_psd(cov.sigma, t.model);
  cov.diagonal = t.model.kind == CovModelKind::IsoDiag || t.model.kind == CovModelKind::AnisoDiag;
  if (cov.diagonal) {
    if ((cov.sigma.diagonal().array() < 0.0).any())
      throw FactorizationError("build_sigma: negative variance on the diagonal");
    cov.chol = cov.sigma.diagonal().cwiseSqrt().asDiagonal();
    return cov;
  }
  Eigen::LLT<Matrix> llt(cov.sigma);
  if (llt.info() != Eigen::Success)
    throw FactorizationError("build_sigma: covariance for model " + t.model.name() +
                             " is not positive definite");
  cov.chol = llt.matrixL();
  return cov;
}

// chol * z, z ~ N(0, I), written into `out` without allocating.
inline void sample_gaussian(const CovMatrix& cov, Stream& rng, VectorRef out) {
  const Eigen::Index n = cov.chol.rows();
  if (cov.diagonal) {
    for (Eigen::Index i = 0; i < n; ++i) out[i] = cov.chol(i, i) * rng.normal();
    return;
  }
  // Draw z into out, then multiply by the lower factor from the bottom up.
  for (Eigen::Index i = 0; i < n; ++i) out[i] = rng.normal();
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j <= i; ++j) s += cov.chol(i, j) * out[j];
    out[i] = s;
  }
}

inline Vector sample_gaussian(const CovMatrix& cov, Stream& rng) {
  Vector out(cov.chol.rows());
  sample_gaussian(cov, rng, out);
  return out;
}

struct NoiseState {
  Vector e;
  double phi = 0.984;
};

// Stationary start: e(0) ~ N(0, Sigma).
inline NoiseState stationary_noise(const CovMatrix& cov, double phi, Stream& rng) {
  if (!(phi >= 0.0 && phi < 1.0)) throw std::invalid_argument("AR(1): phi must lie in [0, 1)");
  return NoiseState{sample_gaussian(cov, rng), phi};
}

// Scratch-using form for hot loops.
inline void ar1_step(NoiseState& state, const CovMatrix& cov, Stream& rng, VectorRef scratch) {
  sample_gaussian(cov, rng, scratch);
  state.e = state.phi * state.e + std::sqrt(1.0 - state.phi * state.phi) * scratch;
}

inline void ar1_step(NoiseState& state, const CovMatrix& cov, Stream& rng) {
  Vector scratch(state.e.size());
  ar1_step(state, cov, rng, scratch);
}

// Truncated Lorenz-96 with AR(1) forcing, advanced one noise update and one
// RK4 step at a time. Holds its own scratch, so one instance per thread.
class StochasticTruncatedStepper {
 public:
  StochasticTruncatedStepper(DetParams det, double dt) : det_(det), dt_(dt) {}

  void step(VectorRef x, NoiseState& noise, const CovMatrix& cov, Stream& rng) {
    if (scratch_.size() != x.size()) scratch_.resize(x.size());
    ar1_step(noise, cov, rng, scratch_);
    const Vector& e = noise.e;
    const DetParams p = det_;
    rk4_step(x, dt_, [&](ConstVectorRef in, VectorRef out) { truncated_tendency(in, out, p, e); },
             ws_);
  }

  double dt() const { return dt_; }
  const DetParams& det() const { return det_; }

 private:
  DetParams det_;
  double dt_;
  Rk4Workspace ws_;
  Vector scratch_;
};

// Nature run of the truncated stochastic model under a fixed covariance.
inline NatureRun generate_truncated_nature(int N, double F, const DetParams& det,
                                           const CovMatrix& cov, double phi,
                                           const NatureRunSpec& spec, Stream& rng) {
  StochasticTruncatedStepper stepper(det, spec.dt);
  NoiseState noise = stationary_noise(cov, phi, rng);
  return detail::integrate_nature(spinup_initial_condition(N, F), N, spec, [&](Vector& x) {
    stepper.step(VectorRef(x), noise, cov, rng);
  });
}

}  // namespace nkf
