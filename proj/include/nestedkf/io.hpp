#pragma once

// Flat-file outputs. CSV files start with a schema header comment
// ("# nestedkf <table> v1") followed by a column header row; floats are
// written with max_digits10 so they round-trip exactly.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "experiments.hpp"

#ifndef NKF_VERSION
#define NKF_VERSION "unknown"
#endif

namespace nkf {

inline constexpr int kCsvSchemaVersion = 1;

inline std::string version_string() { return NKF_VERSION; }

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error("io", "cannot open " + path.string() + " for writing");
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  return os;
}

inline void schema_header(std::ostream& os, const std::string& table) {
  os << "# nestedkf " << table << " v" << kCsvSchemaVersion << '\n';
}

inline nlohmann::json to_json(const Vector& v) { return to_std(v); }

}  // namespace detail

// Columns: replicate,l,k,rmse,spread
inline void write_inner_csv(std::ostream& os, const std::vector<RunSummary>& runs, int window) {
  detail::schema_header(os, "inner");
  os << "replicate,l,k,rmse,spread\n";
  for (const auto& r : runs)
    for (std::size_t c = 0; c < r.rmse.size(); ++c)
      os << r.replicate << ',' << c / window + 1 << ',' << c % window + 1 << ',' << r.rmse[c] << ','
         << r.spread[c] << '\n';
}

// Columns: replicate,l,theta_mean_0..,theta_spread_0..
inline void write_outer_csv(std::ostream& os, const std::vector<RunSummary>& runs, int n_params) {
  detail::schema_header(os, "outer");
  os << "replicate,l";
  for (int p = 0; p < n_params; ++p) os << ",theta_mean_" << p;
  for (int p = 0; p < n_params; ++p) os << ",theta_spread_" << p;
  os << '\n';
  for (const auto& r : runs)
    for (std::size_t l = 0; l < r.theta_mean.size(); ++l) {
      os << r.replicate << ',' << l + 1;
      for (int p = 0; p < n_params; ++p) os << ',' << r.theta_mean[l][p];
      for (int p = 0; p < n_params; ++p) os << ',' << r.theta_spread[l][p];
      os << '\n';
    }
}

// Columns: record,t,x_0..x_{n-1} (large-scale part of the truth)
inline void write_nature_csv(std::ostream& os, const NatureData& nd) {
  detail::schema_header(os, "nature");
  const auto n = nd.truth.empty() ? 0 : nd.truth[0].size();
  os << "record,t";
  for (Eigen::Index i = 0; i < n; ++i) os << ",x_" << i;
  os << '\n';
  for (std::size_t r = 0; r < nd.truth.size(); ++r) {
    os << r + 1 << ',' << static_cast<double>(r + 1) * nd.run.trajectory.record_interval;
    for (Eigen::Index i = 0; i < n; ++i) os << ',' << nd.truth[r][i];
    os << '\n';
  }
}

// Columns: cycle,y_0..y_{m-1}
inline void write_observations_csv(std::ostream& os, const std::vector<Observation>& obs) {
  detail::schema_header(os, "observations");
  const auto m = obs.empty() ? 0 : obs[0].size();
  os << "cycle";
  for (Eigen::Index i = 0; i < m; ++i) os << ",y_" << obs[0].indices[static_cast<std::size_t>(i)];
  os << '\n';
  for (std::size_t c = 0; c < obs.size(); ++c) {
    os << c + 1;
    for (Eigen::Index i = 0; i < m; ++i) os << ',' << obs[c].y[i];
    os << '\n';
  }
}

// Columns: point,theta_0..,rmse,rmse_rep_0..
inline void write_exhaustive_csv(std::ostream& os, const ExhaustiveResult& res) {
  detail::schema_header(os, "exhaustive");
  const auto p = res.points.empty() ? 0 : res.points[0].size();
  const auto reps = res.replicate_rmse.empty() ? 0 : res.replicate_rmse[0].size();
  os << "point";
  for (Eigen::Index i = 0; i < p; ++i) os << ",theta_" << i;
  os << ",rmse";
  for (std::size_t r = 0; r < reps; ++r) os << ",rmse_rep_" << r;
  os << '\n';
  for (std::size_t g = 0; g < res.points.size(); ++g) {
    os << g;
    for (Eigen::Index i = 0; i < p; ++i) os << ',' << res.points[g][i];
    os << ',' << res.rmse[g];
    for (double v : res.replicate_rmse[g]) os << ',' << v;
    os << '\n';
  }
}

// Rows i, columns j of the residual covariance. Columns: i,cov_0..cov_{N-1}
inline void write_residual_csv(std::ostream& os, const ResidualDiagnostic& d) {
  detail::schema_header(os, "residual_cov");
  os << "i";
  for (Eigen::Index j = 0; j < d.covariance.cols(); ++j) os << ",cov_" << j;
  os << '\n';
  for (Eigen::Index i = 0; i < d.covariance.rows(); ++i) {
    os << i;
    for (Eigen::Index j = 0; j < d.covariance.cols(); ++j) os << ',' << d.covariance(i, j);
    os << '\n';
  }
}

inline nlohmann::json summary_json(const RunSummary& r) {
  return {{"replicate", r.replicate},
          {"final_theta", detail::to_json(r.final_theta)},
          {"tail_theta_mean", detail::to_json(r.tail_theta_mean)},
          {"tail_theta_std", detail::to_json(r.tail_theta_std)},
          {"tail_rmse", r.tail_rmse},
          {"outer_cycles", r.theta_mean.size()},
          {"inner_cycles", r.rmse.size()},
          {"wall_seconds", r.wall_seconds}};
}

inline nlohmann::json envelope(const ExperimentConfig& cfg) {
  return {{"version", version_string()},
          {"schema", kCsvSchemaVersion},
          {"experiment", to_string(cfg.kind)},
          {"seed", cfg.seed},
          {"config", config_to_json(cfg)}};
}

// Aggregates over replicates: mean and std of the tail-mean theta and the
// instantaneous final theta, mean tail RMSE.
inline nlohmann::json replicate_statistics(const std::vector<RunSummary>& runs) {
  nlohmann::json j;
  if (runs.empty() || runs[0].tail_theta_mean.size() == 0) return j;
  const auto p = runs[0].tail_theta_mean.size();
  const double n = static_cast<double>(runs.size());
  auto stats = [&](auto get) {
    Vector m = Vector::Zero(p), v = Vector::Zero(p);
    for (const auto& r : runs) m += get(r);
    m /= n;
    for (const auto& r : runs) v += (get(r) - m).cwiseAbs2();
    if (runs.size() > 1) v /= n - 1.0;
    return nlohmann::json{{"mean", detail::to_json(m)}, {"std", detail::to_json(Vector(v.cwiseSqrt()))}};
  };
  j["tail_theta"] = stats([](const RunSummary& r) -> const Vector& { return r.tail_theta_mean; });
  j["final_theta"] = stats([](const RunSummary& r) -> const Vector& { return r.final_theta; });
  double rm = 0.0;
  for (const auto& r : runs) rm += r.tail_rmse;
  j["tail_rmse"] = rm / n;
  return j;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  auto os = detail::open_out(path);
  os << j.dump(2) << '\n';
}

template <class Writer>
void write_file(const std::filesystem::path& path, Writer&& w) {
  auto os = detail::open_out(path);
  w(os);
  if (!os) throw Error("io", "write failed for " + path.string());
}

}  // namespace nkf
