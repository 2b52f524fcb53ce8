#pragma once

// Declarative experiment configuration. Every default reproduces the standard
// setup: N=8, M=32, F=20, N_I=30, N_J=15, K=5, sigma_R^2=1, phi=0.984,
// obs every 0.05 time units, 1460 units of spinup, 250-unit nature run.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dynamics.hpp"
#include "errors.hpp"
#include "stochastic.hpp"

namespace nkf {

enum class ExperimentKind { Nature, Twin, Imperfect, Exhaustive, ResidualDiag };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Nature: return "nature";
    case ExperimentKind::Twin: return "twin";
    case ExperimentKind::Imperfect: return "imperfect";
    case ExperimentKind::Exhaustive: return "exhaustive";
    case ExperimentKind::ResidualDiag: return "residuals";
  }
  return "?";
}

inline ExperimentKind parse_kind(const std::string& s) {
  if (s == "nature") return ExperimentKind::Nature;
  if (s == "twin") return ExperimentKind::Twin;
  if (s == "imperfect") return ExperimentKind::Imperfect;
  if (s == "exhaustive") return ExperimentKind::Exhaustive;
  if (s == "residuals" || s == "residual-diag") return ExperimentKind::ResidualDiag;
  throw ConfigError("unknown experiment kind '" + s + "'");
}

// One axis of an exhaustive-search lattice over a single theta component.
struct GridAxis {
  int param = 0;
  std::vector<double> values;

  static GridAxis range(int param, double from, double to, double step) {
    if (!(step > 0.0) || to < from) throw ConfigError("grid axis: need step > 0 and to >= from");
    GridAxis a{param, {}};
    const long n = std::lround((to - from) / step);
    for (long i = 0; i <= n; ++i) a.values.push_back(from + static_cast<double>(i) * step);
    return a;
  }
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::Twin;
  // Nature model for exhaustive and nature runs: false = truncated stochastic
  // (twin setting), true = two-scale (imperfect setting).
  bool two_scale_nature = false;

  ModelConsts consts;
  DetParams det;
  double dt_truncated = 0.005;
  double dt_two_scale = 0.001;
  double obs_interval = 0.05;
  double spinup = 1460.0;
  double duration = 250.0;
  double r_var = 1.0;
  double phi = 0.984;

  CovModel cov_model{CovModelKind::IsoDiag, 8};
  Vector nature_theta = Vector::Constant(1, 2.0);
  Vector prior_mean = Vector::Constant(1, 1.5);
  Vector prior_spread = Vector::Constant(1, 0.5);

  int n_inner = 30;
  int n_outer = 15;
  int window = 5;          // K
  int outer_cycles = 1000; // L
  int spinup_cycles = 200; // inner cycles excluded from RMSE statistics
  int tail_cycles = 200;   // outer cycles for tail theta statistics
  int replicates = 10;
  std::uint64_t seed = 1;
  bool diag_rstar = false;
  double inflation = 1.0;
  double theta_inflation = 1.0;         // multiplicative theta-spread inflation before each update
  bool shared_ensemble_streams = false; // common random numbers across the N_J ensembles
  int workers = 1;

  std::vector<GridAxis> grid;
  Vector grid_base;           // values of theta components not on a grid axis
  int exhaustive_cycles = 2500;

  double residual_duration = 10000.0;
  double residual_sample_every = 0.05;

  double snapshot_spacing = 5.0;

  std::string out_dir = ".";

  double nature_dt() const { return two_scale_nature ? dt_two_scale : dt_truncated; }
  int steps_per_cycle() const { return steps_per_interval(obs_interval, dt_truncated); }

  void validate() const {
    consts.validate();
    steps_per_interval(obs_interval, dt_truncated);
    steps_per_interval(obs_interval, dt_two_scale);
    if (cov_model.N != consts.N) throw ConfigError("cov model ring size must equal N");
    const auto p = cov_model.param_count();
    if (prior_mean.size() != p || prior_spread.size() != p)
      throw ConfigError("prior mean/spread must have " + std::to_string(p) + " components");
    if (!two_scale_nature && nature_theta.size() != p)
      throw ConfigError("nature theta must have " + std::to_string(p) + " components");
    if (replicates < 1) throw ConfigError("replicates must be >= 1");
    if (n_inner < 2) throw ConfigError("N_I must be >= 2");
    if (n_outer < 1) throw ConfigError("N_J must be >= 1");
    if ((kind == ExperimentKind::Twin || kind == ExperimentKind::Imperfect) && n_outer < 2)
      throw ConfigError("N_J must be >= 2 for parameter estimation");
    if (window < 1) throw ConfigError("K must be >= 1");
    if (outer_cycles < 0 || spinup_cycles < 0 || tail_cycles < 1) throw ConfigError("bad cycle counts");
    if (!(r_var >= 0.0)) throw ConfigError("r_var must be >= 0");
    if (!(phi >= 0.0 && phi < 1.0)) throw ConfigError("phi must lie in [0, 1)");
    if (!(inflation > 0.0) || !(theta_inflation >= 1.0)) throw ConfigError("inflation factors out of range");
    for (const auto& a : grid) {
      if (a.param < 0 || a.param >= p) throw ConfigError("grid axis parameter index out of range");
      if (a.values.empty()) throw ConfigError("grid axis has no values");
    }
  }
};

namespace detail {

inline Vector json_vector(const nlohmann::json& j) {
  if (j.is_number()) return Vector::Constant(1, j.get<double>());
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace detail

// Reads a config object; absent keys keep their defaults. Single-valued theta
// vectors (nature, prior mean, prior spread) are broadcast to every parameter.
inline ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig cfg = {}) {
  try {
    if (j.contains("kind")) cfg.kind = parse_kind(j.at("kind").get<std::string>());
    if (cfg.kind == ExperimentKind::Imperfect || cfg.kind == ExperimentKind::ResidualDiag)
      cfg.two_scale_nature = true;
    if (j.contains("nature")) cfg.two_scale_nature = j.at("nature").get<std::string>() == "two_scale";
    if (j.contains("model")) {
      const auto& m = j.at("model");
      cfg.consts.N = m.value("N", cfg.consts.N);
      cfg.consts.M = m.value("M", cfg.consts.M);
      cfg.consts.F = m.value("F", cfg.consts.F);
      cfg.consts.h = m.value("h", cfg.consts.h);
      cfg.consts.b = m.value("b", cfg.consts.b);
      cfg.consts.c = m.value("c", cfg.consts.c);
      cfg.det.a0 = m.value("a0", cfg.det.a0);
      cfg.det.a1 = m.value("a1", cfg.det.a1);
    }
    cfg.dt_truncated = j.value("dt_truncated", cfg.dt_truncated);
    cfg.dt_two_scale = j.value("dt_two_scale", cfg.dt_two_scale);
    cfg.obs_interval = j.value("obs_interval", cfg.obs_interval);
    cfg.spinup = j.value("spinup", cfg.spinup);
    cfg.duration = j.value("duration", cfg.duration);
    cfg.r_var = j.value("r_var", cfg.r_var);
    cfg.phi = j.value("phi", cfg.phi);
    cfg.cov_model.N = cfg.consts.N;
    if (j.contains("cov_model")) cfg.cov_model = CovModel::parse(j.at("cov_model").get<std::string>(), cfg.consts.N);
    const auto p = cfg.cov_model.param_count();
    auto broadcast = [p](Vector v) {
      return v.size() == 1 && p > 1 ? Vector(Vector::Constant(p, v[0])) : v;
    };
    if (j.contains("nature_theta")) cfg.nature_theta = detail::json_vector(j.at("nature_theta"));
    if (j.contains("prior_mean")) cfg.prior_mean = detail::json_vector(j.at("prior_mean"));
    if (j.contains("prior_spread")) cfg.prior_spread = detail::json_vector(j.at("prior_spread"));
    cfg.nature_theta = broadcast(cfg.nature_theta);
    cfg.prior_mean = broadcast(cfg.prior_mean);
    cfg.prior_spread = broadcast(cfg.prior_spread);
    cfg.n_inner = j.value("n_inner", cfg.n_inner);
    cfg.n_outer = j.value("n_outer", cfg.n_outer);
    cfg.window = j.value("K", cfg.window);
    cfg.outer_cycles = j.value("L", cfg.outer_cycles);
    cfg.spinup_cycles = j.value("spinup_cycles", cfg.spinup_cycles);
    cfg.tail_cycles = j.value("tail_cycles", cfg.tail_cycles);
    cfg.replicates = j.value("replicates", cfg.replicates);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.diag_rstar = j.value("diag_rstar", cfg.diag_rstar);
    cfg.inflation = j.value("inflation", cfg.inflation);
    cfg.theta_inflation = j.value("theta_inflation", cfg.theta_inflation);
    cfg.shared_ensemble_streams = j.value("shared_ensemble_streams", cfg.shared_ensemble_streams);
    cfg.workers = j.value("workers", cfg.workers);
    if (j.contains("grid")) {
      cfg.grid.clear();
      for (const auto& a : j.at("grid")) {
        const int param = a.value("param", 0);
        if (a.contains("values"))
          cfg.grid.push_back(GridAxis{param, a.at("values").get<std::vector<double>>()});
        else
          cfg.grid.push_back(GridAxis::range(param, a.at("from").get<double>(), a.at("to").get<double>(),
                                             a.at("step").get<double>()));
      }
    }
    if (j.contains("grid_base")) cfg.grid_base = detail::json_vector(j.at("grid_base"));
    cfg.exhaustive_cycles = j.value("exhaustive_cycles", cfg.exhaustive_cycles);
    cfg.residual_duration = j.value("residual_duration", cfg.residual_duration);
    cfg.residual_sample_every = j.value("residual_sample_every", cfg.residual_sample_every);
    cfg.snapshot_spacing = j.value("snapshot_spacing", cfg.snapshot_spacing);
    cfg.out_dir = j.value("out", cfg.out_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return cfg;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["kind"] = to_string(c.kind);
  j["nature"] = c.two_scale_nature ? "two_scale" : "truncated";
  j["model"] = {{"N", c.consts.N}, {"M", c.consts.M}, {"F", c.consts.F}, {"h", c.consts.h},
                {"b", c.consts.b}, {"c", c.consts.c}, {"a0", c.det.a0}, {"a1", c.det.a1}};
  j["dt_truncated"] = c.dt_truncated;
  j["dt_two_scale"] = c.dt_two_scale;
  j["obs_interval"] = c.obs_interval;
  j["spinup"] = c.spinup;
  j["duration"] = c.duration;
  j["r_var"] = c.r_var;
  j["phi"] = c.phi;
  j["cov_model"] = c.cov_model.name();
  j["nature_theta"] = detail::to_std(c.nature_theta);
  j["prior_mean"] = detail::to_std(c.prior_mean);
  j["prior_spread"] = detail::to_std(c.prior_spread);
  j["n_inner"] = c.n_inner;
  j["n_outer"] = c.n_outer;
  j["K"] = c.window;
  j["L"] = c.outer_cycles;
  j["spinup_cycles"] = c.spinup_cycles;
  j["tail_cycles"] = c.tail_cycles;
  j["replicates"] = c.replicates;
  j["seed"] = c.seed;
  j["diag_rstar"] = c.diag_rstar;
  j["inflation"] = c.inflation;
  j["theta_inflation"] = c.theta_inflation;
  j["shared_ensemble_streams"] = c.shared_ensemble_streams;
  j["workers"] = c.workers;
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& a : c.grid) grid.push_back({{"param", a.param}, {"values", a.values}});
  j["grid"] = grid;
  j["grid_base"] = detail::to_std(c.grid_base);
  j["exhaustive_cycles"] = c.exhaustive_cycles;
  j["residual_duration"] = c.residual_duration;
  j["residual_sample_every"] = c.residual_sample_every;
  j["snapshot_spacing"] = c.snapshot_spacing;
  j["out"] = c.out_dir;
  return j;
}

}  // namespace nkf
