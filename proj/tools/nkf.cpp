// nkf: command-line front end for the experiment protocols.
//
//   nkf <nature|twin|imperfect|exhaustive|residuals> [--config f] [--seed s]
//       [--out dir] [--replicates n] [--diag-rstar] [--inflation f] [--workers n]
//
// Results go to <out>/ as CSV tables plus summary.json. Failures print one
// JSON object {"error": <kind>, "message": ...} on stderr and exit nonzero.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "nestedkf/nestedkf.hpp"

namespace {

using namespace nkf;
namespace fs = std::filesystem;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> replicates;
  bool diag_rstar = false;
  std::optional<double> inflation;
  std::optional<int> workers;
};

ExperimentConfig resolve(const Overrides& o, ExperimentKind kind) {
  ExperimentConfig cfg;
  cfg.kind = kind;
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw ConfigError("cannot read config file '" + o.config + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    // The subcommand decides the protocol; a config kind only picks defaults.
    cfg = config_from_json(j, cfg);
    cfg.kind = kind;
  }
  if (kind == ExperimentKind::Imperfect || kind == ExperimentKind::ResidualDiag) cfg.two_scale_nature = true;
  if (kind == ExperimentKind::Twin || kind == ExperimentKind::Nature) cfg.two_scale_nature = false;
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.out_dir = *o.out;
  if (o.replicates) cfg.replicates = *o.replicates;
  if (o.diag_rstar) cfg.diag_rstar = true;
  if (o.inflation) cfg.inflation = *o.inflation;
  if (o.workers) cfg.workers = *o.workers;
  cfg.validate();
  return cfg;
}

void run_nature(const ExperimentConfig& cfg) {
  const NatureData nd = make_nature(cfg);
  const fs::path out = cfg.out_dir;
  write_file(out / "nature.csv", [&](std::ostream& os) { write_nature_csv(os, nd); });
  const auto obs = replicate_observations(cfg, nd, 0);
  write_file(out / "observations.csv", [&](std::ostream& os) { write_observations_csv(os, obs); });
  nlohmann::json j = envelope(cfg);
  j["records"] = nd.truth.size();
  j["snapshots"] = nd.run.snapshots.size();
  j["observations"] = obs.size();
  write_json(out / "summary.json", j);
}

void write_nested(const ExperimentConfig& cfg, const std::vector<RunSummary>& runs) {
  const fs::path out = cfg.out_dir;
  write_file(out / "inner.csv", [&](std::ostream& os) { write_inner_csv(os, runs, cfg.window); });
  write_file(out / "outer.csv",
             [&](std::ostream& os) { write_outer_csv(os, runs, static_cast<int>(cfg.cov_model.param_count())); });
  nlohmann::json j = envelope(cfg);
  j["replicates"] = nlohmann::json::array();
  for (const auto& r : runs) j["replicates"].push_back(summary_json(r));
  j["statistics"] = replicate_statistics(runs);
  write_json(out / "summary.json", j);
}

void run_exhaustive(const ExperimentConfig& cfg) {
  const ExhaustiveResult res = exhaustive_search(cfg);
  const fs::path out = cfg.out_dir;
  write_file(out / "exhaustive.csv", [&](std::ostream& os) { write_exhaustive_csv(os, res); });
  nlohmann::json j = envelope(cfg);
  j["points"] = res.points.size();
  j["argmin"] = detail::to_json(res.points[res.argmin]);
  j["min_rmse"] = res.rmse[res.argmin];
  write_json(out / "summary.json", j);
}

void run_residuals(const ExperimentConfig& cfg) {
  const ResidualDiagnostic d = residual_covariance_diagnostic(cfg);
  const fs::path out = cfg.out_dir;
  write_file(out / "residual_cov.csv", [&](std::ostream& os) { write_residual_csv(os, d); });
  nlohmann::json j = envelope(cfg);
  j["a0"] = d.det.a0;
  j["a1"] = d.det.a1;
  j["by_distance"] = detail::to_json(d.by_distance);
  j["variance_sd"] = d.variance_sd;
  j["samples"] = d.samples;
  write_json(out / "summary.json", j);
}

int fail(const std::string& kind, const std::string& message, int code = 1) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nested ensemble Kalman filters for stochastic parameter estimation on Lorenz-96"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);
  Overrides o;

  const std::vector<std::pair<std::string, ExperimentKind>> commands{
      {"nature", ExperimentKind::Nature},
      {"twin", ExperimentKind::Twin},
      {"imperfect", ExperimentKind::Imperfect},
      {"exhaustive", ExperimentKind::Exhaustive},
      {"residuals", ExperimentKind::ResidualDiag}};
  const std::map<std::string, std::string> help{
      {"nature", "generate a nature run and its observations"},
      {"twin", "nested filter on a truncated stochastic nature run"},
      {"imperfect", "nested filter on a two-scale nature run"},
      {"exhaustive", "state-only RMSE over a theta grid"},
      {"residuals", "offline residual covariance of the deterministic parameterization"}};
  for (const auto& [name, kind] : commands) {
    CLI::App* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", o.config, "JSON experiment config");
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--replicates", o.replicates, "replicate count");
    sub->add_flag("--diag-rstar", o.diag_rstar, "diagonal forecast covariance in R*");
    sub->add_option("--inflation", o.inflation, "multiplicative state inflation");
    sub->add_option("--workers", o.workers, "worker threads");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), e.get_exit_code() ? e.get_exit_code() : 2);
  }

  try {
    for (const auto& [name, kind] : commands) {
      if (!app.got_subcommand(name)) continue;
      const ExperimentConfig cfg = resolve(o, kind);
      switch (kind) {
        case ExperimentKind::Nature: run_nature(cfg); break;
        case ExperimentKind::Twin: write_nested(cfg, run_twin_experiment(cfg)); break;
        case ExperimentKind::Imperfect: write_nested(cfg, run_imperfect_experiment(cfg)); break;
        case ExperimentKind::Exhaustive: run_exhaustive(cfg); break;
        case ExperimentKind::ResidualDiag: run_residuals(cfg); break;
      }
      std::cout << (fs::path(cfg.out_dir) / "summary.json").string() << std::endl;
    }
  } catch (const Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail("io", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
