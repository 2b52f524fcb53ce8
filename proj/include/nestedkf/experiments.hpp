#pragma once

// Experiment protocols: nature and observation generation, stochastic twin and
// imperfect-model nested runs, exhaustive state-only search over a theta grid,
// and the offline residual covariance diagnostic.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "config.hpp"
#include "dynamics.hpp"
#include "errors.hpp"
#include "etkf.hpp"
#include "nested.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "stochastic.hpp"

namespace nkf {

// y = H(truth) + N(0, r_var I) at every `interval` along the trajectory.
inline std::vector<Observation> make_observations(const Trajectory& truth, const std::vector<int>& indices,
                                                  double r_var, double interval, Stream& rng) {
  if (!(r_var >= 0.0)) throw std::invalid_argument("make_observations: r_var must be >= 0");
  if (truth.empty()) return {};
  const int stride = steps_per_interval(interval, truth.record_interval);
  if (stride < 1) throw AlignmentError("make_observations: interval shorter than the record stride");
  const double sd = std::sqrt(r_var);
  std::vector<Observation> out;
  out.reserve(truth.size() / static_cast<std::size_t>(stride));
  for (std::size_t r = static_cast<std::size_t>(stride) - 1; r < truth.size(); r += static_cast<std::size_t>(stride)) {
    Observation o;
    o.indices = indices;
    o.r_var = r_var;
    o.y = observe(truth.records[r], indices);
    for (Eigen::Index i = 0; i < o.y.size(); ++i) o.y[i] += sd * rng.normal();
    out.push_back(std::move(o));
  }
  return out;
}

// Nature trajectory, its observation-time truth (large-scale part) and the pool
// of decorrelated attractor snapshots for initial ensembles.
struct NatureData {
  NatureRun run;
  std::vector<Vector> truth;  // large-scale state at each observation time
  std::vector<int> obs_indices;
};

inline NatureData make_nature(const ExperimentConfig& cfg) {
  cfg.validate();
  NatureRunSpec spec;
  spec.duration = cfg.duration;
  spec.spinup = cfg.spinup;
  spec.record_every = cfg.obs_interval;
  spec.snapshot_spacing = cfg.snapshot_spacing;
  spec.snapshot_start = std::min(100.0, 0.1 * cfg.spinup);
  NatureData nd;
  if (cfg.two_scale_nature) {
    spec.dt = cfg.dt_two_scale;
    nd.run = generate_two_scale_nature(cfg.consts, spec);
  } else {
    spec.dt = cfg.dt_truncated;
    Stream rng = seed_stream(cfg.seed, {0, 0, 0, Purpose::NatureNoise});
    const CovMatrix cov = build_sigma(Theta(cfg.nature_theta, cfg.cov_model));
    nd.run = generate_truncated_nature(cfg.consts.N, cfg.consts.F, cfg.det, cov, cfg.phi, spec, rng);
  }
  nd.truth.reserve(nd.run.trajectory.size());
  for (const auto& r : nd.run.trajectory.records) nd.truth.push_back(r.head(cfg.consts.N));
  nd.obs_indices.resize(static_cast<std::size_t>(cfg.consts.N));
  std::iota(nd.obs_indices.begin(), nd.obs_indices.end(), 0);
  return nd;
}

inline std::vector<Observation> replicate_observations(const ExperimentConfig& cfg, const NatureData& nd,
                                                       int replicate) {
  Stream rng = seed_stream(cfg.seed, {static_cast<std::uint32_t>(replicate), 0, 0, Purpose::Observation});
  return make_observations(nd.run.trajectory, nd.obs_indices, cfg.r_var, cfg.obs_interval, rng);
}

// N_I distinct snapshots drawn at random from the pool.
inline Matrix pick_initial_members(std::span<const Vector> pool, int n_members, Stream& rng) {
  if (pool.empty()) throw ConfigError("initial ensemble: empty snapshot pool");
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Matrix members(pool[0].size(), n_members);
  for (int i = 0; i < n_members; ++i) {
    const std::size_t slot = static_cast<std::size_t>(i) % idx.size();
    if (slot == 0) std::shuffle(idx.begin(), idx.end(), rng.engine());
    members.col(i) = pool[idx[slot]];
  }
  return members;
}

// Bank of `thetas.size()` ensembles for `replicate`. Streams are keyed by
// (replicate, j, i), so a given replicate sees the same initial members and
// noise draws whatever theta it is run with. With shared_ensemble_streams every
// ensemble uses the j = 0 streams (common random numbers across the bank).
inline OuterBank make_bank(const ExperimentConfig& cfg, const NatureData& nd, int replicate,
                           const std::vector<Theta>& thetas, int window) {
  OuterBank bank;
  bank.window = window;
  const auto r = static_cast<std::uint32_t>(replicate);
  for (std::size_t j = 0; j < thetas.size(); ++j) {
    const auto jj = cfg.shared_ensemble_streams ? 0u : static_cast<std::uint32_t>(j);
    InnerEnsemble ens;
    ens.set_theta(thetas[j]);
    Stream pick = seed_stream(cfg.seed, {r, jj, 0, Purpose::InitialPick});
    ens.members = pick_initial_members(nd.run.snapshots, cfg.n_inner, pick);
    std::vector<Stream> streams;
    streams.reserve(static_cast<std::size_t>(cfg.n_inner));
    for (int i = 0; i < cfg.n_inner; ++i) {
      streams.push_back(seed_stream(cfg.seed, {r, jj, static_cast<std::uint32_t>(i), Purpose::ForecastNoise}));
      ens.noise.push_back(stationary_noise(ens.cov, cfg.phi, streams.back()));
    }
    bank.ensembles.push_back(std::move(ens));
    bank.streams.push_back(std::move(streams));
  }
  return bank;
}

inline std::vector<Theta> draw_prior(const ExperimentConfig& cfg, int replicate) {
  std::vector<Theta> out;
  for (int j = 0; j < cfg.n_outer; ++j) {
    Stream rng = seed_stream(cfg.seed, {static_cast<std::uint32_t>(replicate), static_cast<std::uint32_t>(j), 0,
                                        Purpose::Prior});
    Vector v(cfg.prior_mean.size());
    for (Eigen::Index p = 0; p < v.size(); ++p) v[p] = cfg.prior_mean[p] + cfg.prior_spread[p] * rng.normal();
    out.push_back(repair_theta(Theta(v, cfg.cov_model)));
  }
  return out;
}

inline WindowOptions window_options(const ExperimentConfig& cfg, int workers) {
  WindowOptions w;
  w.det = cfg.det;
  w.dt = cfg.dt_truncated;
  w.steps_per_cycle = cfg.steps_per_cycle();
  w.inflation = cfg.inflation;
  w.diag_shortcut = cfg.diag_rstar;
  w.workers = workers;
  return w;
}

struct RunSummary {
  int replicate = 0;
  std::uint64_t seed = 0;
  std::vector<Vector> theta_mean;
  std::vector<Vector> theta_spread;
  std::vector<double> rmse;
  std::vector<double> spread;
  Vector final_theta;      // instantaneous ensemble mean after the last outer cycle
  Vector tail_theta_mean;  // mean of theta_mean over the tail window
  Vector tail_theta_std;   // temporal std of theta_mean over the tail window
  double tail_rmse = 0.0;  // mean RMSE excluding the spinup inner cycles
  double wall_seconds = 0.0;
};

inline double mean_excluding(std::span<const double> xs, int skip) {
  const std::size_t s = std::min(xs.size(), static_cast<std::size_t>(std::max(skip, 0)));
  if (xs.size() == s) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(xs.begin() + static_cast<std::ptrdiff_t>(s), xs.end(), 0.0) /
         static_cast<double>(xs.size() - s);
}

inline void finalize_tail(RunSummary& s, int tail_cycles, int spinup_cycles) {
  s.tail_rmse = mean_excluding(s.rmse, spinup_cycles);
  if (s.theta_mean.empty()) return;
  s.final_theta = s.theta_mean.back();
  const std::size_t n = std::min(s.theta_mean.size(), static_cast<std::size_t>(tail_cycles));
  const std::size_t first = s.theta_mean.size() - n;
  Vector m = Vector::Zero(s.final_theta.size());
  for (std::size_t i = first; i < s.theta_mean.size(); ++i) m += s.theta_mean[i];
  m /= static_cast<double>(n);
  Vector var = Vector::Zero(m.size());
  for (std::size_t i = first; i < s.theta_mean.size(); ++i) var += (s.theta_mean[i] - m).cwiseAbs2();
  s.tail_theta_mean = m;
  s.tail_theta_std = n > 1 ? Vector((var / static_cast<double>(n - 1)).cwiseSqrt()) : Vector(Vector::Zero(m.size()));
}

// One nested-filter replicate against a prepared nature run.
inline RunSummary run_nested_replicate(const ExperimentConfig& cfg, const NatureData& nd, int replicate,
                                       int workers = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<Observation> obs = replicate_observations(cfg, nd, replicate);
  const int L = std::min<int>(cfg.outer_cycles, static_cast<int>(obs.size()) / cfg.window);
  OuterBank bank = make_bank(cfg, nd, replicate, draw_prior(cfg, replicate), cfg.window);
  NestedOptions opt;
  opt.window = window_options(cfg, workers);
  opt.theta_inflation = cfg.theta_inflation;
  NestedDiagnostics d = nested_assimilation(bank, obs, L, opt, nd.truth);
  RunSummary s;
  s.replicate = replicate;
  s.seed = cfg.seed;
  s.theta_mean = std::move(d.theta_mean);
  s.theta_spread = std::move(d.theta_spread);
  s.rmse = std::move(d.rmse);
  s.spread = std::move(d.spread);
  finalize_tail(s, cfg.tail_cycles, cfg.spinup_cycles);
  s.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return s;
}

// Replicates run in parallel when there are several of them, otherwise the
// worker budget is spent on the N_J inner filters of each window. Results do
// not depend on the split.
inline std::vector<RunSummary> run_replicates(const ExperimentConfig& cfg, const NatureData& nd) {
  std::vector<RunSummary> out(static_cast<std::size_t>(cfg.replicates));
  const int inner_workers = cfg.replicates > 1 ? 1 : cfg.workers;
  parallel_for(out.size(), cfg.replicates > 1 ? cfg.workers : 1, [&](std::size_t r) {
    out[r] = run_nested_replicate(cfg, nd, static_cast<int>(r), inner_workers);
  });
  return out;
}

inline std::vector<RunSummary> run_twin_experiment(const ExperimentConfig& cfg) {
  if (cfg.kind != ExperimentKind::Twin) throw ConfigError("run_twin_experiment: kind must be twin");
  ExperimentConfig c = cfg;
  c.two_scale_nature = false;
  return run_replicates(c, make_nature(c));
}

inline std::vector<RunSummary> run_imperfect_experiment(const ExperimentConfig& cfg) {
  if (cfg.kind != ExperimentKind::Imperfect) throw ConfigError("run_imperfect_experiment: kind must be imperfect");
  ExperimentConfig c = cfg;
  c.two_scale_nature = true;
  return run_replicates(c, make_nature(c));
}

// Time-mean analysis RMSE of a state-only filter with theta fixed, over the
// first `cycles` observation times, excluding the spinup cycles.
inline double state_only_rmse(const ExperimentConfig& cfg, const NatureData& nd, std::span<const Observation> obs,
                              const Theta& theta, int replicate, int cycles) {
  cycles = std::min<int>(cycles, static_cast<int>(obs.size()));
  OuterBank bank = make_bank(cfg, nd, replicate, {theta}, 1);
  NestedOptions opt;
  opt.window = window_options(cfg, 1);
  opt.update_parameters = false;
  const NestedDiagnostics d = nested_assimilation(bank, obs, cycles, opt, nd.truth);
  return mean_excluding(d.rmse, cfg.spinup_cycles);
}

struct ExhaustiveResult {
  std::vector<Vector> points;
  std::vector<std::vector<double>> replicate_rmse;  // [point][replicate]
  std::vector<double> rmse;                          // replicate mean per point
  std::size_t argmin = 0;
};

inline std::vector<Vector> grid_points(const ExperimentConfig& cfg) {
  const auto p = cfg.cov_model.param_count();
  Vector base = cfg.grid_base.size() == p ? cfg.grid_base
                : cfg.two_scale_nature   ? cfg.prior_mean
                                         : cfg.nature_theta;
  std::vector<Vector> pts{base};
  for (const auto& axis : cfg.grid) {
    std::vector<Vector> next;
    for (const auto& pt : pts)
      for (double v : axis.values) {
        Vector q = pt;
        q[axis.param] = v;
        next.push_back(q);
      }
    pts = std::move(next);
  }
  return pts;
}

// Replicate-averaged state-only RMSE at each grid point. Every point sees the
// same replicate observations, initial members and noise streams.
inline ExhaustiveResult exhaustive_search(const ExperimentConfig& cfg, const NatureData& nd,
                                          const std::vector<Vector>& points) {
  if (points.empty()) throw ConfigError("exhaustive_search: empty grid");
  std::vector<std::vector<Observation>> obs(static_cast<std::size_t>(cfg.replicates));
  for (int r = 0; r < cfg.replicates; ++r) obs[static_cast<std::size_t>(r)] = replicate_observations(cfg, nd, r);
  ExhaustiveResult res;
  res.points = points;
  res.replicate_rmse.assign(points.size(), std::vector<double>(static_cast<std::size_t>(cfg.replicates)));
  const std::size_t n_items = points.size() * static_cast<std::size_t>(cfg.replicates);
  parallel_for(n_items, cfg.workers, [&](std::size_t item) {
    const std::size_t pt = item / static_cast<std::size_t>(cfg.replicates);
    const std::size_t r = item % static_cast<std::size_t>(cfg.replicates);
    try {
      res.replicate_rmse[pt][r] = state_only_rmse(cfg, nd, obs[r], Theta(points[pt], cfg.cov_model),
                                                  static_cast<int>(r), cfg.exhaustive_cycles);
    } catch (const Error& e) {
      throw Error(e.kind(), "grid point " + std::to_string(pt) + ", replicate " + std::to_string(r) + ": " +
                                e.what());
    }
  });
  for (const auto& rr : res.replicate_rmse)
    res.rmse.push_back(std::accumulate(rr.begin(), rr.end(), 0.0) / static_cast<double>(rr.size()));
  res.argmin = static_cast<std::size_t>(std::min_element(res.rmse.begin(), res.rmse.end()) - res.rmse.begin());
  return res;
}

inline ExhaustiveResult exhaustive_search(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  if (c.grid.empty()) throw ConfigError("exhaustive_search: config has no grid axes");
  const NatureData nd = make_nature(c);
  return exhaustive_search(c, nd, grid_points(c));
}

struct ResidualDiagnostic {
  DetParams det;
  Matrix covariance;    // N x N time-sample covariance of the residual vector
  Vector by_distance;   // ring-distance averages, index 0 = variance
  double variance_sd = 0.0;  // spread of the N diagonal entries
  std::size_t samples = 0;
};

// Collocated large-scale states and subgrid forcing along a two-scale run.
struct ForcingSamples {
  std::vector<Vector> x;
  std::vector<Vector> forcing;

  std::size_t size() const { return x.size(); }
  void add(const FullState& s, const ModelConsts& c) {
    x.push_back(s.x());
    forcing.push_back(subgrid_forcing(s, c));
  }
};

inline DetParams fit_deterministic_params(const ForcingSamples& samples) {
  std::vector<double> xs, fs;
  for (std::size_t t = 0; t < samples.size(); ++t) {
    xs.insert(xs.end(), samples.x[t].data(), samples.x[t].data() + samples.x[t].size());
    fs.insert(fs.end(), samples.forcing[t].data(), samples.forcing[t].data() + samples.forcing[t].size());
  }
  return fit_linear(xs, fs);
}

// Residual covariance of r = (a0 + a1 x) - subgrid forcing.
inline ResidualDiagnostic residual_statistics(const ForcingSamples& samples, const DetParams& det) {
  ResidualDiagnostic out;
  out.det = det;
  out.samples = samples.size();
  if (samples.size() == 0) throw std::invalid_argument("residual_statistics: no samples");
  const auto N = static_cast<int>(samples.x[0].size());
  Matrix r(N, static_cast<Eigen::Index>(samples.size()));
  for (std::size_t t = 0; t < samples.size(); ++t)
    r.col(static_cast<Eigen::Index>(t)) =
        (det.a0 + det.a1 * samples.x[t].array()).matrix() - samples.forcing[t];
  const Vector mean = r.rowwise().mean();
  const Matrix centered = r.colwise() - mean;
  const double denom = samples.size() > 1 ? static_cast<double>(samples.size() - 1) : 1.0;
  const Matrix cov = centered * centered.transpose() / denom;
  out.covariance = 0.5 * (cov + cov.transpose());
  out.by_distance = Vector::Zero(N / 2 + 1);
  Vector counts = Vector::Zero(N / 2 + 1);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      const int d = ring_distance(i, j, N);
      out.by_distance[d] += out.covariance(i, j);
      counts[d] += 1.0;
    }
  out.by_distance = out.by_distance.cwiseQuotient(counts);
  const Vector diag = out.covariance.diagonal();
  out.variance_sd = std::sqrt((diag.array() - diag.mean()).square().sum() / std::max(1, N - 1));
  return out;
}

// Long two-scale integration from a spun-up state; fits (a0, a1) on the run
// and reports the residual covariance.
inline ResidualDiagnostic residual_covariance_diagnostic(const ExperimentConfig& cfg) {
  if (!(cfg.residual_duration > 0.0)) throw std::invalid_argument("residual diagnostic: duration must be > 0");
  const ModelConsts& c = cfg.consts;
  c.validate();
  const double dt = cfg.dt_two_scale;
  FullState s(c.N, c.M);
  s.values().head(c.N) = spinup_initial_condition(c.N, c.F);
  const long spin = std::lround(cfg.spinup / dt);
  const long stride = steps_per_interval(cfg.residual_sample_every, dt);
  const long steps = std::lround(cfg.residual_duration / dt);
  Rk4Workspace ws;
  auto f = [&c](ConstVectorRef in, VectorRef o) { two_scale_tendency(in, o, c); };
  for (long t = 0; t < spin; ++t) rk4_step(VectorRef(s.values()), dt, f, ws);
  ForcingSamples samples;
  samples.x.reserve(static_cast<std::size_t>(steps / stride));
  samples.forcing.reserve(static_cast<std::size_t>(steps / stride));
  for (long t = 1; t <= steps; ++t) {
    rk4_step(VectorRef(s.values()), dt, f, ws);
    if (t % stride == 0) samples.add(s, c);
  }
  return residual_statistics(samples, fit_deterministic_params(samples));
}

}  // namespace nkf
