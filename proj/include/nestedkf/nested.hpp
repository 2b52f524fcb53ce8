#pragma once

// Outer-cycle parameter estimation: N_J inner filters run K cycles each with
// theta held fixed, their mean predicted observations are stacked over the
// window, and one ETKF step updates the theta ensemble.

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "etkf.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "stochastic.hpp"

namespace nkf {

struct OuterBank {
  std::vector<InnerEnsemble> ensembles;
  std::vector<std::vector<Stream>> streams;  // streams[j][i] drives member i of ensemble j
  int window = 5;                            // K
  int outer_cycle = 0;                       // completed outer cycles, l

  std::size_t size() const { return ensembles.size(); }

  std::vector<Theta> thetas() const {
    std::vector<Theta> out;
    out.reserve(ensembles.size());
    for (const auto& e : ensembles) out.push_back(e.theta);
    return out;
  }

  void validate() const {
    if (ensembles.size() < 1) throw DimensionError("OuterBank: no ensembles");
    if (streams.size() != ensembles.size()) throw DimensionError("OuterBank: streams per ensemble");
    if (window < 1) throw std::invalid_argument("OuterBank: K must be >= 1");
  }
};

struct WindowOptions {
  DetParams det;
  double dt = 0.005;
  int steps_per_cycle = 10;
  double inflation = 1.0;
  bool diag_shortcut = false;
  int workers = 1;
};

struct WindowRecord {
  std::vector<Matrix> pred_obs;      // K entries, each n_obs x N_J
  std::vector<Matrix> mean_obs_cov;  // K entries: H Pbar H^T, or n_obs x 1 diagonal
  bool diagonal = false;
  std::vector<Observation> obs;

  int window() const { return static_cast<int>(pred_obs.size()); }
};

// Analysis mean and spread per (k, j), filled when requested by run_window.
struct WindowAnalysis {
  std::vector<std::vector<Vector>> means;
  std::vector<std::vector<double>> spread;
};

inline WindowRecord run_window(OuterBank& bank, std::span<const Observation> window,
                               const WindowOptions& opt, WindowAnalysis* analysis = nullptr) {
  bank.validate();
  const int K = static_cast<int>(window.size());
  if (K != bank.window) throw DimensionError("run_window: expected K observation sets");
  const std::size_t NJ = bank.size();

  std::vector<std::vector<ObsSpaceStats>> stats(NJ);
  WindowAnalysis an;
  an.means.assign(static_cast<std::size_t>(K), std::vector<Vector>(NJ));
  an.spread.assign(static_cast<std::size_t>(K), std::vector<double>(NJ, 0.0));

  parallel_for(NJ, opt.workers, [&](std::size_t j) {
    StochasticTruncatedStepper stepper(opt.det, opt.dt);
    auto& ens = bank.ensembles[j];
    stats[j].reserve(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
      try {
        forecast_ensemble(ens, stepper, opt.steps_per_cycle, bank.streams[j]);
        stats[j].push_back(etkf_analysis(ens, window[static_cast<std::size_t>(k)], opt.inflation,
                                         opt.diag_shortcut));
      } catch (const Error& e) {
        throw Error(e.kind(), "ensemble j=" + std::to_string(j) + ", cycle k=" +
                                  std::to_string(k + 1) + ": " + e.what());
      }
      an.means[static_cast<std::size_t>(k)][j] = ens.mean();
      an.spread[static_cast<std::size_t>(k)][j] = ensemble_spread(ens.members);
    }
  });

  WindowRecord rec;
  rec.diagonal = opt.diag_shortcut;
  rec.obs.assign(window.begin(), window.end());
  for (int k = 0; k < K; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    const Eigen::Index m = window[kk].size();
    Matrix pred(m, static_cast<Eigen::Index>(NJ));
    Matrix cov = Matrix::Zero(stats[0][kk].forecast_obs_cov.rows(), stats[0][kk].forecast_obs_cov.cols());
    for (std::size_t j = 0; j < NJ; ++j) {
      pred.col(static_cast<Eigen::Index>(j)) = stats[j][kk].mean_pred_obs;
      cov += stats[j][kk].forecast_obs_cov;
    }
    rec.pred_obs.push_back(std::move(pred));
    rec.mean_obs_cov.push_back(cov / static_cast<double>(NJ));
  }
  if (analysis) *analysis = std::move(an);
  return rec;
}

// Block-diagonal observation error covariance of the aggregated window.
struct BlockDiagCov {
  std::vector<Matrix> blocks;  // full blocks, or single-column diagonals when `diagonal`
  bool diagonal = false;

  Eigen::Index size() const {
    Eigen::Index n = 0;
    for (const auto& b : blocks) n += b.rows();
    return n;
  }

  Matrix dense() const {
    const Eigen::Index n = size();
    Matrix out = Matrix::Zero(n, n);
    Eigen::Index off = 0;
    for (const auto& b : blocks) {
      const Eigen::Index r = b.rows();
      if (diagonal)
        out.block(off, off, r, r) = b.col(0).asDiagonal();
      else
        out.block(off, off, r, r) = b;
      off += r;
    }
    return out;
  }

  // Applies L^{-1} (L L^T = this) to the rows of `m` in place.
  void whiten(Matrix& m) const {
    if (m.rows() != size()) throw DimensionError("BlockDiagCov::whiten: row count");
    Eigen::Index off = 0;
    for (const auto& b : blocks) {
      const Eigen::Index r = b.rows();
      if (diagonal) {
        if ((b.col(0).array() <= 0.0).any())
          throw SingularTransformError("aggregated R*: non-positive diagonal entry");
        m.middleRows(off, r).array().colwise() /= b.col(0).array().sqrt();
      } else {
        Eigen::LLT<Matrix> llt(b);
        if (llt.info() != Eigen::Success)
          throw SingularTransformError("aggregated R*: block is not positive definite");
        llt.matrixL().solveInPlace(m.middleRows(off, r));
      }
      off += r;
    }
  }
};

struct AggregatedWindow {
  Vector y;        // stacked observations, length K * n_obs
  Matrix pred_obs; // (K * n_obs) x N_J, member j stacks its K mean predicted observations
  BlockDiagCov r_star;
};

inline AggregatedWindow aggregate(const WindowRecord& rec, bool diag_shortcut) {
  const int K = rec.window();
  if (K == 0 || static_cast<int>(rec.obs.size()) != K || static_cast<int>(rec.mean_obs_cov.size()) != K)
    throw DimensionError("aggregate: inconsistent window record");
  AggregatedWindow agg;
  Eigen::Index total = 0;
  for (const auto& o : rec.obs) total += o.size();
  const Eigen::Index NJ = rec.pred_obs[0].cols();
  agg.y.resize(total);
  agg.pred_obs.resize(total, NJ);
  agg.r_star.diagonal = diag_shortcut;
  Eigen::Index off = 0;
  for (int k = 0; k < K; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    const Observation& o = rec.obs[kk];
    const Eigen::Index m = o.size();
    agg.y.segment(off, m) = o.y;
    agg.pred_obs.middleRows(off, m) = rec.pred_obs[kk];
    const Matrix& c = rec.mean_obs_cov[kk];
    if (diag_shortcut) {
      const Vector d = c.cols() == 1 && m != 1 ? Vector(c.col(0)) : Vector(c.diagonal());
      agg.r_star.blocks.push_back((d.array() + o.r_var).matrix());
    } else {
      if (rec.diagonal) throw DimensionError("aggregate: full R* requested from a diagonal-only record");
      agg.r_star.blocks.push_back(c + o.r_var * Matrix::Identity(m, m));
    }
    off += m;
  }
  return agg;
}

// ETKF step on the theta ensemble with the stacked mean predicted observations
// as its observation-space ensemble. R* already carries H Pbar H^T + R; the
// member spread supplies H P^xx H^T.
inline std::vector<Theta> parameter_update(std::span<const Theta> thetas, const Matrix& pred_obs,
                                           const Vector& y, const BlockDiagCov& r_star) {
  const auto NJ = static_cast<Eigen::Index>(thetas.size());
  if (NJ < 2) throw SingularTransformError("parameter_update: needs at least two theta members");
  if (pred_obs.cols() != NJ || pred_obs.rows() != y.size() || r_star.size() != y.size())
    throw DimensionError("parameter_update: dimension mismatch");
  const Eigen::Index p = thetas[0].values.size();
  Matrix th(p, NJ);
  for (Eigen::Index j = 0; j < NJ; ++j) {
    if (thetas[static_cast<std::size_t>(j)].values.size() != p ||
        !(thetas[static_cast<std::size_t>(j)].model == thetas[0].model))
      throw DimensionError("parameter_update: theta members disagree in model");
    th.col(j) = thetas[static_cast<std::size_t>(j)].values;
  }
  const Vector th_mean = th.rowwise().mean();
  const Matrix th_pert = th.colwise() - th_mean;
  const Vector ybar = pred_obs.rowwise().mean();
  Matrix yp = pred_obs.colwise() - ybar;
  Matrix innov = y - ybar;
  r_star.whiten(yp);
  r_star.whiten(innov);
  const EnsembleTransform t = compute_transform(yp, innov.col(0));
  const Vector mean_a = th_mean + t.mean_increment(th_pert);
  const Matrix pert_a = t.transform(th_pert);
  std::vector<Theta> out;
  out.reserve(thetas.size());
  for (Eigen::Index j = 0; j < NJ; ++j) out.emplace_back(mean_a + pert_a.col(j), thetas[0].model);
  return out;
}

// Per-inner-cycle and per-outer-cycle diagnostics of a nested run.
struct NestedDiagnostics {
  std::vector<Vector> theta_mean;    // after each outer update, length L
  std::vector<Vector> theta_spread;  // ensemble standard deviation per parameter
  std::vector<double> rmse;          // per inner cycle, mean over j of analysis-mean RMSE; length L*K
  std::vector<double> spread;        // per inner cycle, mean over j of analysis spread
};

inline Vector theta_mean(std::span<const Theta> thetas) {
  Vector m = Vector::Zero(thetas[0].values.size());
  for (const auto& t : thetas) m += t.values;
  return m / static_cast<double>(thetas.size());
}

inline Vector theta_spread(std::span<const Theta> thetas) {
  const Vector m = theta_mean(thetas);
  Vector s = Vector::Zero(m.size());
  if (thetas.size() < 2) return s;
  for (const auto& t : thetas) s += (t.values - m).cwiseAbs2();
  return (s / static_cast<double>(thetas.size() - 1)).cwiseSqrt();
}

struct NestedOptions {
  WindowOptions window;
  bool update_parameters = true;  // false: state-only filtering with fixed thetas
  double theta_inflation = 1.0;   // prior theta perturbations scaled by this before each update; 1 = off
};

inline std::vector<Theta> inflate_thetas(std::span<const Theta> thetas, double factor) {
  std::vector<Theta> out(thetas.begin(), thetas.end());
  if (factor == 1.0) return out;
  const Vector m = theta_mean(thetas);
  for (auto& t : out) t.values = m + factor * (t.values - m);
  return out;
}

// Alternates run_window / aggregate / parameter_update for L outer cycles.
// `truth` (optional, aligned with `obs`) enables the RMSE diagnostics.
inline NestedDiagnostics nested_assimilation(OuterBank& bank, std::span<const Observation> obs, int L,
                                             const NestedOptions& opt,
                                             std::span<const Vector> truth = {}) {
  bank.validate();
  const int K = bank.window;
  if (L < 0) throw std::invalid_argument("nested_assimilation: L must be >= 0");
  if (obs.size() < static_cast<std::size_t>(L) * static_cast<std::size_t>(K))
    throw DimensionError("nested_assimilation: fewer than L*K observation sets");
  if (!truth.empty() && truth.size() < obs.size())
    throw DimensionError("nested_assimilation: truth shorter than observations");
  if (opt.update_parameters && bank.size() < 2)
    throw SingularTransformError("nested_assimilation: parameter updates need N_J >= 2");

  NestedDiagnostics diag;
  for (int l = 0; l < L; ++l) {
    const std::size_t first = static_cast<std::size_t>(l) * static_cast<std::size_t>(K);
    WindowAnalysis an;
    WindowRecord rec;
    try {
      rec = run_window(bank, obs.subspan(first, static_cast<std::size_t>(K)), opt.window, &an);
    } catch (const Error& e) {
      throw Error(e.kind(), "outer cycle l=" + std::to_string(l + 1) + ": " + e.what());
    }
    for (int k = 0; k < K; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      double rm = 0.0, sp = 0.0;
      for (std::size_t j = 0; j < bank.size(); ++j) {
        if (!truth.empty()) rm += state_rmse(an.means[kk][j], truth[first + kk]);
        sp += an.spread[kk][j];
      }
      diag.rmse.push_back(truth.empty() ? 0.0 : rm / static_cast<double>(bank.size()));
      diag.spread.push_back(sp / static_cast<double>(bank.size()));
    }
    if (opt.update_parameters) {
      const AggregatedWindow agg = aggregate(rec, opt.window.diag_shortcut);
      const std::vector<Theta> prior = inflate_thetas(bank.thetas(), opt.theta_inflation);
      const std::vector<Theta> post = parameter_update(prior, agg.pred_obs, agg.y, agg.r_star);
      for (std::size_t j = 0; j < bank.size(); ++j) bank.ensembles[j].set_theta(post[j]);
    }
    const std::vector<Theta> now = bank.thetas();
    diag.theta_mean.push_back(theta_mean(now));
    diag.theta_spread.push_back(theta_spread(now));
    ++bank.outer_cycle;
  }
  return diag;
}

}  // namespace nkf
