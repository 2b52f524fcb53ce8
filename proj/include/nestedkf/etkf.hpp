#pragma once

// Inner-cycle state estimation: ensemble forecast under a fixed theta and the
// symmetric square-root ensemble transform Kalman filter.

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dynamics.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "stochastic.hpp"

namespace nkf {

/*
 * Ensemble transform, written in whitened observation space.
 *
 *   A  = W^{-1} Y'        (m x k), W W^T = R, Y' predicted-obs perturbations
 *   d  = W^{-1} (y - ybar)
 *   Pa = [(k-1) I + A^T A]^{-1}
 *   w  = Pa A^T d                       mean weights
 *   T  = [(k-1) Pa]^{1/2}               symmetric root
 *   Xa = xbar + X' w + X' T
 *
 * With the thin SVD A^T = V S U^T, Pa and T are diagonal in the span of V and
 * the identity (resp. 1/(k-1)) on its complement, so
 *   w = V diag(s / (k-1+s^2)) U^T d,
 *   T = I + V diag(sqrt((k-1)/(k-1+s^2)) - 1) V^T,
 * which never forms a k x k matrix and scales to very large ensembles.
 */
struct EnsembleTransform {
  Vector weights;  // w, length k
  Matrix basis;    // V, k x r
  Vector scales;   // sqrt((k-1)/(k-1+s^2)) - 1, length r

  // X' w for perturbations X' (n x k).
  Vector mean_increment(const Matrix& perts) const { return perts * weights; }

  // X' T.
  Matrix transform(const Matrix& perts) const {
    const Matrix xv = perts * basis;
    return perts + xv * scales.asDiagonal() * basis.transpose();
  }

  // Full k x k transform matrix, for tests on small ensembles.
  Matrix dense() const {
    const Eigen::Index k = weights.size();
    return Matrix::Identity(k, k) + basis * scales.asDiagonal() * basis.transpose();
  }
};

inline EnsembleTransform compute_transform(const Matrix& whitened_perts,
                                           const Vector& whitened_innovation) {
  const Eigen::Index m = whitened_perts.rows();
  const Eigen::Index k = whitened_perts.cols();
  if (k < 2) throw SingularTransformError("ensemble transform needs at least two members");
  if (whitened_innovation.size() != m) throw DimensionError("ensemble transform: innovation length");
  if (!whitened_perts.allFinite() || !whitened_innovation.allFinite())
    throw SingularTransformError("ensemble transform: non-finite input");
  EnsembleTransform t;
  const double km1 = static_cast<double>(k - 1);
  if (m == 0) {
    t.weights = Vector::Zero(k);
    t.basis = Matrix::Zero(k, 0);
    t.scales = Vector::Zero(0);
    return t;
  }
  Eigen::JacobiSVD<Matrix> svd(whitened_perts.transpose(), Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector s = svd.singularValues();
  const Vector denom = (km1 + s.array().square()).matrix();
  if (!(denom.minCoeff() > 0.0)) throw SingularTransformError("ensemble transform: singular weight matrix");
  t.basis = svd.matrixU();  // right singular vectors of A, k x r
  const Vector ut_d = svd.matrixV().transpose() * whitened_innovation;
  t.weights = t.basis * (s.array() / denom.array() * ut_d.array()).matrix();
  t.scales = ((km1 / denom.array()).sqrt() - 1.0).matrix();
  return t;
}

struct Observation {
  Vector y;
  std::vector<int> indices;  // observed state components
  double r_var = 1.0;

  Eigen::Index size() const { return y.size(); }
};

inline Vector observe(ConstVectorRef state, const std::vector<int>& indices) {
  Vector out(static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) out[static_cast<Eigen::Index>(i)] = state[indices[i]];
  return out;
}

struct ObsSpaceStats {
  Vector mean_pred_obs;    // H(xbar^f)
  Matrix forecast_obs_cov; // H P^f H^T; a single column holding the diagonal if diagonal_only
  bool diagonal_only = false;
};

struct InnerEnsemble {
  Matrix members;  // N x N_I, one member per column
  std::vector<NoiseState> noise;
  Theta theta;
  CovMatrix cov;

  Eigen::Index size() const { return members.cols(); }
  Vector mean() const { return members.rowwise().mean(); }

  // Installs theta with repair and rebuilds the noise covariance.
  void set_theta(const Theta& t) {
    theta = repair_theta(t);
    cov = build_sigma(theta);
  }
};

// Integrates every member `steps` steps; each step first advances the member's
// AR(1) noise. streams[i] belongs to member i.
inline void forecast_ensemble(InnerEnsemble& ens, StochasticTruncatedStepper& stepper, int steps,
                              std::span<Stream> streams) {
  if (steps < 1) throw std::invalid_argument("forecast_ensemble: steps must be >= 1");
  if (streams.size() != static_cast<std::size_t>(ens.size()) ||
      ens.noise.size() != static_cast<std::size_t>(ens.size()))
    throw DimensionError("forecast_ensemble: one stream and one noise state per member required");
  for (Eigen::Index i = 0; i < ens.size(); ++i) {
    auto x = ens.members.col(i);
    try {
      for (int s = 0; s < steps; ++s) stepper.step(x, ens.noise[i], ens.cov, streams[i]);
    } catch (const BlowupError& e) {
      throw BlowupError("forecast member " + std::to_string(i) + ": " + e.what());
    }
  }
}

inline ObsSpaceStats obs_space_stats(const Vector& mean_pred, const Matrix& pred_perts,
                                     bool diagonal_only) {
  ObsSpaceStats st;
  st.mean_pred_obs = mean_pred;
  st.diagonal_only = diagonal_only;
  const double km1 = static_cast<double>(pred_perts.cols() - 1);
  if (diagonal_only) {
    st.forecast_obs_cov = (pred_perts.array().square().rowwise().sum() / km1).matrix();
  } else {
    Matrix c = pred_perts * pred_perts.transpose() / km1;
    st.forecast_obs_cov = 0.5 * (c + c.transpose());
  }
  return st;
}

// Symmetric square-root ETKF analysis in place. Forecast perturbations are
// multiplied by `inflation` first. Returns observation-space statistics of the
// (inflated) forecast ensemble.
inline ObsSpaceStats etkf_analysis(InnerEnsemble& ens, const Observation& obs, double inflation = 1.0,
                                   bool diagonal_stats = false) {
  if (obs.y.size() != static_cast<Eigen::Index>(obs.indices.size()))
    throw DimensionError("etkf_analysis: |y| != |obs_indices|");
  if (!(obs.r_var > 0.0)) throw std::invalid_argument("etkf_analysis: r_var must be positive");
  const Eigen::Index k = ens.size();
  if (k < 2) throw SingularTransformError("etkf_analysis: ensemble needs at least two members");

  const Vector xbar = ens.mean();
  Matrix xp = ens.members.colwise() - xbar;
  if (inflation != 1.0) xp *= inflation;

  const Eigen::Index m = obs.y.size();
  Matrix yp(m, k);
  Vector ybar(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    yp.row(r) = xp.row(obs.indices[static_cast<std::size_t>(r)]);
    ybar[r] = xbar[obs.indices[static_cast<std::size_t>(r)]];
  }
  ObsSpaceStats stats = obs_space_stats(ybar, yp, diagonal_stats);
  if (m == 0) return stats;

  const double w = 1.0 / std::sqrt(obs.r_var);
  const EnsembleTransform t = compute_transform(yp * w, (obs.y - ybar) * w);
  const Vector xa = xbar + t.mean_increment(xp);
  ens.members = t.transform(xp).colwise() + xa;
  return stats;
}

inline double state_rmse(ConstVectorRef a, ConstVectorRef b) {
  if (a.size() != b.size()) throw DimensionError("state_rmse: length mismatch");
  if (a.size() == 0) return 0.0;
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

// Mean over components of the ensemble variance, square-rooted.
inline double ensemble_spread(const Matrix& members) {
  const Vector mean = members.rowwise().mean();
  const double km1 = static_cast<double>(members.cols() - 1);
  return std::sqrt((members.colwise() - mean).array().square().sum() / km1 /
                   static_cast<double>(members.rows()));
}

}  // namespace nkf
