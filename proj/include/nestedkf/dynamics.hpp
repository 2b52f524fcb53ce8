#pragma once

// Two-scale and truncated Lorenz-96 systems, a classical RK4 integrator and
// the deterministic-parameterization fit used by the imperfect-model runs.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "errors.hpp"

namespace nkf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using VectorRef = Eigen::Ref<Vector>;
using ConstVectorRef = Eigen::Ref<const Vector>;

struct ModelConsts {
  int N = 8;  // large-scale variables
  int M = 32;  // small-scale variables per large-scale variable
  double F = 20.0;
  double h = 1.0;
  double b = 10.0;
  double c = 10.0;

  double coupling() const { return h * c / b; }
  int full_size() const { return N + M * N; }

  void validate() const {
    if (N < 4) throw std::invalid_argument("ModelConsts: N must be >= 4");
    if (M < 1) throw std::invalid_argument("ModelConsts: M must be >= 1");
    for (double v : {F, h, b, c})
      if (!std::isfinite(v)) throw std::invalid_argument("ModelConsts: non-finite constant");
    if (h == 0.0 || b == 0.0 || c == 0.0)
      throw std::invalid_argument("ModelConsts: h, b, c must be nonzero");
  }
};

// Linear deterministic parameterization a0 + a1 x of the unresolved forcing.
struct DetParams {
  double a0 = 19.169;
  double a1 = -0.813;
};

// Two-scale state stored contiguously as [x (N) | y (M*N)] so the integrator
// can treat it as one vector.
class FullState {
 public:
  FullState() = default;
  FullState(int N, int M) : N_(N), M_(M), values_(Vector::Zero(N + M * N)) {}
  FullState(const Vector& x, const Vector& y) : N_(static_cast<int>(x.size())) {
    if (N_ == 0 || y.size() % N_ != 0)
      throw DimensionError("FullState: |y| must be a multiple of |x|");
    M_ = static_cast<int>(y.size() / N_);
    values_.resize(N_ + y.size());
    values_ << x, y;
  }
  FullState(Vector values, int N, int M) : N_(N), M_(M), values_(std::move(values)) {
    if (values_.size() != N + M * N) throw DimensionError("FullState: wrong packed length");
  }

  int N() const { return N_; }
  int M() const { return M_; }
  auto x() { return values_.head(N_); }
  auto x() const { return values_.head(N_); }
  auto y() { return values_.tail(M_ * N_); }
  auto y() const { return values_.tail(M_ * N_); }
  Vector& values() { return values_; }
  const Vector& values() const { return values_; }

 private:
  int N_ = 0;
  int M_ = 0;
  Vector values_;
};

namespace detail {

// Advection and damping common to both models:
// -x_{n-1}(x_{n-2} - x_{n+1}) - x_n, cyclic in n.
inline void l96_advection(const double* x, double* out, int N) {
  for (int n = 0; n < N; ++n) {
    const int m1 = n == 0 ? N - 1 : n - 1;
    const int m2 = n < 2 ? n + N - 2 : n - 2;
    const int p1 = n == N - 1 ? 0 : n + 1;
    out[n] = -x[m1] * (x[m2] - x[p1]) - x[n];
  }
}

}  // namespace detail

// Tendency of the packed two-scale state (see FullState). Writes into `out`.
inline void two_scale_tendency(ConstVectorRef s, VectorRef out, const ModelConsts& c) {
  const int N = c.N;
  const int M = c.M;
  const int MN = M * N;
  const double* x = s.data();
  const double* y = s.data() + N;
  double* dx = out.data();
  double* dy = out.data() + N;
  const double hcb = c.coupling();
  const double cb = c.c * c.b;

  detail::l96_advection(x, dx, N);
  for (int n = 0; n < N; ++n) {
    double sum = 0.0;
    for (int m = M * n; m < M * (n + 1); ++m) sum += y[m];
    dx[n] += c.F - hcb * sum;
  }
  for (int m = 0; m < MN; ++m) {
    const int p1 = m == MN - 1 ? 0 : m + 1;
    const int p2 = m >= MN - 2 ? m + 2 - MN : m + 2;
    const int m1 = m == 0 ? MN - 1 : m - 1;
    dy[m] = -cb * y[p1] * (y[p2] - y[m1]) - c.c * y[m] + hcb * x[m / M];
  }
}

inline FullState two_scale_tendency(const FullState& s, const ModelConsts& c) {
  if (s.N() != c.N || s.M() != c.M) throw DimensionError("two_scale_tendency: state/consts mismatch");
  Vector out(s.values().size());
  two_scale_tendency(s.values(), out, c);
  return FullState(std::move(out), c.N, c.M);
}

// Truncated model: advection-damping plus the parameterized forcing
// a0 + a1 x_n + e_n entering with positive sign.
inline void truncated_tendency(ConstVectorRef x, VectorRef out, const DetParams& p,
                               ConstVectorRef noise) {
  const int N = static_cast<int>(x.size());
  detail::l96_advection(x.data(), out.data(), N);
  for (int n = 0; n < N; ++n) out[n] += p.a0 + p.a1 * x[n] + noise[n];
}

inline Vector truncated_tendency(const Vector& x, const DetParams& p, const Vector& noise) {
  if (noise.size() != x.size()) throw DimensionError("truncated_tendency: |e| != N");
  Vector out(x.size());
  truncated_tendency(x, out, p, noise);
  return out;
}

// F - (hc/b) * sum of the small-scale variables attached to each x_n.
inline Vector subgrid_forcing(const FullState& s, const ModelConsts& c) {
  Vector f(c.N);
  const auto y = s.y();
  for (int n = 0; n < c.N; ++n) f[n] = c.F - c.coupling() * y.segment(n * c.M, c.M).sum();
  return f;
}

// Scratch buffers for rk4_step; sized on first use.
struct Rk4Workspace {
  Vector k1, k2, k3, k4, stage;

  void resize(Eigen::Index n) {
    if (k1.size() == n) return;
    k1.resize(n);
    k2.resize(n);
    k3.resize(n);
    k4.resize(n);
    stage.resize(n);
  }
};

// One classical RK4 step in place. `f(state, out)` evaluates the tendency.
template <class Tendency>
void rk4_step(VectorRef s, double dt, Tendency&& f, Rk4Workspace& ws) {
  if (!(dt > 0.0)) throw std::invalid_argument("rk4_step: dt must be positive");
  ws.resize(s.size());
  f(ConstVectorRef(s), VectorRef(ws.k1));
  ws.stage = s + 0.5 * dt * ws.k1;
  f(ConstVectorRef(ws.stage), VectorRef(ws.k2));
  ws.stage = s + 0.5 * dt * ws.k2;
  f(ConstVectorRef(ws.stage), VectorRef(ws.k3));
  ws.stage = s + dt * ws.k3;
  f(ConstVectorRef(ws.stage), VectorRef(ws.k4));
  s += (dt / 6.0) * (ws.k1 + 2.0 * ws.k2 + 2.0 * ws.k3 + ws.k4);
  if (!s.allFinite()) throw BlowupError("rk4_step: state became non-finite");
}

template <class Tendency>
Vector rk4_step(const Vector& s, double dt, Tendency&& f) {
  Rk4Workspace ws;
  Vector out = s;
  rk4_step(VectorRef(out), dt, std::forward<Tendency>(f), ws);
  return out;
}

// Number of integration steps spanning `interval`; throws if the interval is
// not an integer multiple of dt.
inline int steps_per_interval(double interval, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  const double ratio = interval / dt;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio))
    throw AlignmentError("interval " + std::to_string(interval) +
                         " is not an integer multiple of dt " + std::to_string(dt));
  return static_cast<int>(rounded);
}

// A recorded model trajectory: records[r] is the state at time (r+1)*interval
// after the end of the spinup.
struct Trajectory {
  double record_interval = 0.0;
  std::vector<Vector> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

struct NatureRunSpec {
  double duration = 250.0;
  double dt = 0.005;
  double spinup = 1460.0;
  double record_every = 0.05;
  // Attractor snapshots for initial ensembles are taken during spinup every
  // `snapshot_spacing` time units after `snapshot_start`, stopping at least one
  // spacing before the nature run begins.
  double snapshot_spacing = 5.0;
  double snapshot_start = 100.0;
};

struct NatureRun {
  Trajectory trajectory;
  std::vector<Vector> snapshots;  // large-scale part only
};

namespace detail {

template <class Step>
NatureRun integrate_nature(Vector state, int n_large, const NatureRunSpec& spec, Step&& step) {
  if (!(spec.dt > 0.0)) throw std::invalid_argument("nature run: dt must be positive");
  if (spec.duration < 0.0 || spec.spinup < 0.0)
    throw std::invalid_argument("nature run: negative duration or spinup");
  NatureRun run;
  run.trajectory.record_interval = spec.record_every;
  const int per_record = steps_per_interval(spec.record_every, spec.dt);
  const long spin_steps = std::lround(spec.spinup / spec.dt);
  const long snap_every =
      spec.snapshot_spacing > 0.0 ? std::lround(spec.snapshot_spacing / spec.dt) : 0;
  const long snap_first = std::lround(spec.snapshot_start / spec.dt);
  for (long t = 1; t <= spin_steps; ++t) {
    step(state);
    if (snap_every > 0 && t >= snap_first && t % snap_every == 0 && spin_steps - t >= snap_every)
      run.snapshots.push_back(state.head(n_large));
  }
  const long n_records = std::lround(spec.duration / spec.record_every);
  run.trajectory.records.reserve(static_cast<std::size_t>(n_records));
  for (long r = 0; r < n_records; ++r) {
    for (int s = 0; s < per_record; ++s) step(state);
    run.trajectory.records.push_back(state);
  }
  return run;
}

}  // namespace detail

// All-F large-scale state with a 1e-3 kick on the first variable.
inline Vector spinup_initial_condition(int N, double F) {
  Vector x = Vector::Constant(N, F);
  x[0] += 1e-3;
  return x;
}

// Two-scale nature run. Records hold the packed full state.
inline NatureRun generate_two_scale_nature(const ModelConsts& c, const NatureRunSpec& spec) {
  c.validate();
  Vector s = Vector::Zero(c.full_size());
  s.head(c.N) = spinup_initial_condition(c.N, c.F);
  Rk4Workspace ws;
  auto f = [&c](ConstVectorRef in, VectorRef out) { two_scale_tendency(in, out, c); };
  return detail::integrate_nature(std::move(s), c.N, spec,
                                  [&](Vector& st) { rk4_step(VectorRef(st), spec.dt, f, ws); });
}

// Integrates the two-scale model for `steps` steps and returns every
// `stride`-th state (used by long diagnostics that do not need a spinup spec).
inline std::vector<FullState> integrate_two_scale(FullState s, const ModelConsts& c, double dt,
                                                  long steps, long stride) {
  std::vector<FullState> out;
  Rk4Workspace ws;
  auto f = [&c](ConstVectorRef in, VectorRef o) { two_scale_tendency(in, o, c); };
  for (long t = 1; t <= steps; ++t) {
    rk4_step(VectorRef(s.values()), dt, f, ws);
    if (t % stride == 0) out.push_back(s);
  }
  return out;
}

// Ordinary least squares of forcing samples on collocated x samples.
inline DetParams fit_linear(std::span<const double> x, std::span<const double> forcing) {
  if (x.size() != forcing.size()) throw DimensionError("fit_linear: sample count mismatch");
  if (x.size() < 2) throw RankDeficiencyError("fit_linear: need at least two samples");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, mf = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    mf += forcing[i];
  }
  mx /= n;
  mf /= n;
  double sxx = 0.0, sxf = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxf += (x[i] - mx) * (forcing[i] - mf);
  }
  if (!(sxx > 1e-14 * n * std::max(1.0, mx * mx)))
    throw RankDeficiencyError("fit_linear: all x samples identical");
  const double a1 = sxf / sxx;
  return DetParams{mf - a1 * mx, a1};
}

// Pools subgrid_forcing samples against x_n over every n and record.
inline DetParams fit_deterministic_params(std::span<const FullState> trajectory,
                                          const ModelConsts& c) {
  if (trajectory.size() < 2) throw RankDeficiencyError("fit_deterministic_params: need >= 2 records");
  std::vector<double> xs, fs;
  xs.reserve(trajectory.size() * c.N);
  fs.reserve(trajectory.size() * c.N);
  for (const auto& s : trajectory) {
    const Vector f = subgrid_forcing(s, c);
    for (int n = 0; n < c.N; ++n) {
      xs.push_back(s.x()[n]);
      fs.push_back(f[n]);
    }
  }
  return fit_linear(xs, fs);
}

}  // namespace nkf
