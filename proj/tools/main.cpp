// Benchmark CLI: simulate trajectories, corrupt them with measurement noise,
// run individual filters on files, or execute the full comparison pipeline.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "penlang/harness.hpp"

namespace {

using namespace penlang;

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::string> out_dir;
  std::vector<double> intervals;
  std::vector<std::string> methods;
  std::size_t replicate = 0;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required) {
  auto* opt = cmd->add_option("--config", flags.config_path,
                              "experiment config file (JSON)");
  if (config_required) opt->required();
  cmd->add_option("--seed", flags.seed, "master seed override");
  cmd->add_option("--workers", flags.workers, "worker thread override");
  cmd->add_option("--out", flags.out_dir, "output directory override");
  cmd->add_option("--interval-min", flags.intervals,
                  "sampling interval override, minutes (repeatable)");
  cmd->add_option("--method", flags.methods,
                  "filter method override (repeatable)");
  cmd->add_option("--replicate", flags.replicate,
                  "replicate index for stream derivation");
}

ExperimentConfig effective_config(const CommonFlags& flags) {
  ExperimentConfig cfg = load_config(flags.config_path);
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.workers) cfg.workers = *flags.workers;
  if (flags.out_dir) cfg.output_dir = std::filesystem::path(*flags.out_dir);
  if (!flags.intervals.empty()) cfg.intervals_minutes = flags.intervals;
  if (!flags.methods.empty()) {
    cfg.filters.clear();
    for (const std::string& m : flags.methods)
      cfg.filters.push_back(parse_method(m));
  }
  validate(cfg);
  return cfg;
}

std::filesystem::path require_out(const ExperimentConfig& cfg) {
  if (!cfg.output_dir)
    throw std::runtime_error("this verb needs --out or an output in the config");
  std::filesystem::create_directories(*cfg.output_dir);
  return *cfg.output_dir;
}

void print_summary(const std::vector<SummaryRow>& summary) {
  std::printf("%-16s %12s %6s %9s %12s %14s\n", "method", "interval_min", "n",
              "failures", "mean_rmse_km", "mean_max_km");
  for (const SummaryRow& s : summary)
    std::printf("%-16s %12g %6zu %9zu %12.4f %14.4f\n", s.method.c_str(),
                s.interval_minutes, s.count, s.failures, s.mean_rmse_km,
                s.mean_max_error_km);
}

int run_simulate(const CommonFlags& flags) {
  ExperimentConfig cfg = effective_config(flags);
  const auto out = require_out(cfg);
  const auto n_steps = static_cast<std::size_t>(
      std::llround(cfg.t_hours * 3600.0 / cfg.sim_step_seconds));
  RandomStream rng = RandomStream::derive(cfg.seed, {1, flags.replicate});
  const Trajectory truth =
      simulate_trajectory(cfg.sde_model(), cfg.resolved_initial_state(),
                          cfg.sim_step_hours(), n_steps, cfg.sim_scheme, rng);
  write_trajectory(out / "truth_fine.csv", truth);
  std::printf("wrote %s (%zu steps)\n",
              (out / "truth_fine.csv").string().c_str(), truth.size());
  return 0;
}

int run_corrupt(const CommonFlags& flags, const std::string& traj_path) {
  ExperimentConfig cfg = effective_config(flags);
  const auto out = require_out(cfg);
  const Trajectory fine = read_trajectory(traj_path);
  if (fine.size() < 2) throw std::runtime_error("trajectory too short");
  const double h_fine = fine[1].t_hours - fine[0].t_hours;
  for (std::size_t i = 0; i < cfg.intervals_minutes.size(); ++i) {
    const double interval = cfg.intervals_minutes[i];
    const auto factor =
        static_cast<std::size_t>(std::llround(interval / 60.0 / h_fine));
    if (factor < 1 ||
        std::abs(static_cast<double>(factor) * h_fine - interval / 60.0) >
            1e-6 * interval / 60.0)
      throw std::runtime_error("trajectory step does not divide interval");
    const Trajectory coarse = subsample(fine, factor);
    RandomStream rng = RandomStream::derive(cfg.seed, {2, flags.replicate, i});
    const ObservationSeries obs = add_noise(coarse, cfg.noise, rng);
    char tag[32];
    std::snprintf(tag, sizeof(tag), "%gmin.csv", interval);
    write_trajectory(out / ("truth_" + std::string(tag)), coarse);
    write_observations(out / ("obs_" + std::string(tag)), obs);
    std::printf("wrote %s (%zu observations)\n",
                (out / ("obs_" + std::string(tag))).string().c_str(),
                obs.size());
  }
  return 0;
}

int run_filter_verb(const CommonFlags& flags, const std::string& obs_path,
                    const std::string& truth_path) {
  ExperimentConfig cfg = effective_config(flags);
  const auto out = require_out(cfg);
  if (flags.methods.size() != 1)
    throw std::runtime_error("filter verb needs exactly one --method");
  const FilterEntry entry = parse_method(flags.methods[0]);
  const ObservationSeries obs = read_observations(obs_path);
  if (obs.size() < 2) throw std::runtime_error("need at least 2 observations");
  const double h_obs = obs[1].t_hours - obs[0].t_hours;
  RandomStream rng = RandomStream::derive(cfg.seed, {3, flags.replicate, 0, 0});
  const FilterOutput output = run_filter(obs, cfg.filter_config(entry),
                                         cfg.sde_model(), h_obs, rng);
  const std::string stem = "est_" + entry.method;
  write_filter_output(out / (stem + ".csv"), output);
  if (entry.algorithm != FilterAlgorithm::Particle)
    write_filter_covariances(out / (stem + "_cov.csv"), output);
  std::printf("wrote %s (%zu steps)\n", (out / (stem + ".csv")).string().c_str(),
              output.steps.size());
  if (!truth_path.empty()) {
    const Scores s = score(read_trajectory(truth_path), output);
    std::printf("rmse_km=%.6f max_error_km=%.6f\n", s.rmse_km, s.max_error_km);
  }
  return 0;
}

int run_bench(const CommonFlags& flags) {
  const ExperimentConfig cfg = effective_config(flags);
  const ExperimentResult result = run_experiment(cfg);
  print_summary(result.summary);
  if (cfg.output_dir)
    std::printf("artifacts in %s\n", cfg.output_dir->string().c_str());
  return 0;
}

int run_report(const std::string& metrics_path, const std::string& out_dir) {
  const std::vector<MetricsRow> rows = read_metrics(metrics_path);
  const std::vector<SummaryRow> summary = summarize(rows);
  const std::filesystem::path out(out_dir);
  std::filesystem::create_directories(out);
  write_summary(out / "summary.csv", summary);
  std::ofstream lf(out / "long.csv");
  if (!lf) throw std::runtime_error("cannot write long.csv");
  lf.precision(17);
  lf << "method,interval_min,replicate,metric,value\n";
  for (const MetricsRow& r : rows) {
    if (r.rmse_km)
      lf << r.method << "," << r.interval_minutes << "," << r.replicate
         << ",rmse_km," << *r.rmse_km << "\n";
    if (r.max_error_km)
      lf << r.method << "," << r.interval_minutes << "," << r.replicate
         << ",max_error_km," << *r.max_error_km << "\n";
    lf << r.method << "," << r.interval_minutes << "," << r.replicate
       << ",outside_fraction," << r.outside_fraction << "\n";
  }
  print_summary(summary);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"penalized Langevin trajectory simulation and filtering"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string traj_path, obs_path, truth_path, metrics_path, report_out;

  CLI::App* simulate = app.add_subcommand("simulate", "simulate a trajectory");
  add_common(simulate, flags, true);

  CLI::App* corrupt =
      app.add_subcommand("corrupt", "subsample and add measurement noise");
  add_common(corrupt, flags, true);
  corrupt->add_option("--traj", traj_path, "input trajectory CSV")->required();

  CLI::App* filter =
      app.add_subcommand("filter", "run one filter on an observation file");
  add_common(filter, flags, true);
  filter->add_option("--obs", obs_path, "input observation CSV")->required();
  filter->add_option("--truth", truth_path, "truth CSV to score against");

  CLI::App* bench =
      app.add_subcommand("bench", "full pipeline over all replicates");
  add_common(bench, flags, true);

  CLI::App* report =
      app.add_subcommand("report", "summarize a metrics file");
  report->add_option("--metrics", metrics_path, "metrics.csv from bench")
      ->required();
  report->add_option("--out", report_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (simulate->parsed()) return run_simulate(flags);
    if (corrupt->parsed()) return run_corrupt(flags, traj_path);
    if (filter->parsed()) return run_filter_verb(flags, obs_path, truth_path);
    if (bench->parsed()) return run_bench(flags);
    if (report->parsed()) return run_report(metrics_path, report_out);
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["error"] = e.what();
    err["verb"] = app.get_subcommands().empty()
                      ? ""
                      : app.get_subcommands().front()->get_name();
    std::cerr << err.dump() << std::endl;
    return 1;
  }
  return 0;
}
