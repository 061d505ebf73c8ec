#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "penlang/dynamics.hpp"
#include "penlang/filters.hpp"
#include "penlang/noise.hpp"

namespace penlang {

/// Penalty scale as a power law of the simulation step (hours):
/// lambda = scale * h^exponent.  The rule is always evaluated at the fine
/// simulation step, never at the observation interval.
struct LambdaRule {
  double scale = 1.0;
  double exponent = 0.8;

  double lambda_for(double h_sim) const;
};

/// One row of the filter comparison matrix.  The method string encodes
/// algorithm, scheme and penalization, e.g. "ekf_pen" or "pf_strang".
struct FilterEntry {
  std::string method;
  FilterAlgorithm algorithm = FilterAlgorithm::Kalman;
  Scheme scheme = Scheme::LieTrotter;
  bool penalized = false;
  std::optional<std::size_t> particles;  ///< overrides the experiment default
};

/// Decodes "kf", "kf_pen", "ekf", "ekf_pen", "pf_lt", "pf_lt_pen",
/// "pf_strang", "pf_strang_pen"; throws std::invalid_argument otherwise.
FilterEntry parse_method(const std::string& method);

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::size_t replicates = 20;
  double t_hours = 12.0;
  double sim_step_seconds = 1.0;
  std::vector<double> intervals_minutes{1.0, 3.0, 5.0, 20.0};
  Scheme sim_scheme = Scheme::LieTrotter;
  MovementParams movement{1.0, 5.0, 0.1};
  PotentialSpec potential;
  std::optional<PolygonDomain> domain;
  LambdaRule lambda_rule;
  MeasurementModel noise = GaussianError{0.2};
  std::vector<FilterEntry> filters;
  std::size_t particles = 500;  ///< default particle count for PF entries
  std::optional<StateVector> initial_state;
  std::size_t workers = 1;
  std::optional<std::filesystem::path> output_dir;
  bool store_fine_truth = false;

  double sim_step_hours() const { return sim_step_seconds / 3600.0; }
  double lambda() const { return lambda_rule.lambda_for(sim_step_hours()); }
  /// Movement model with the penalty scale applied.
  SdeModel sde_model() const;
  /// Configured initial state, or rest at the first well center.
  StateVector resolved_initial_state() const;
  /// Filter configuration for one entry (measurement model and particle
  /// count filled in).
  FilterConfig filter_config(const FilterEntry& entry) const;
};

/// Parses the structured config file (JSON).  Unknown keys anywhere are
/// errors; the domain path is resolved relative to the config file.
ExperimentConfig load_config(const std::filesystem::path& file);

/// Cross-field validation (intervals divisible by the simulation step,
/// positive horizons, sane particle counts, ...).  An empty filter list is
/// allowed; simulation-only runs need none.
void validate(const ExperimentConfig& config);

struct Scores {
  double rmse_km = 0.0;       ///< mean Euclidean position error
  double max_error_km = 0.0;  ///< worst-case Euclidean position error
};

/// Scores estimated positions against the true states at the same times.
/// Throws std::invalid_argument on length or timestamp misalignment.
Scores score(const Trajectory& truth, const FilterOutput& estimates);
Scores score_positions(const Trajectory& truth,
                       const std::vector<Vec2>& positions);

/// One observation per state, position plus a model error draw.
ObservationSeries add_noise(const Trajectory& traj,
                            const MeasurementModel& model, RandomStream& rng);

struct MetricsRow {
  std::string method;
  double interval_minutes = 0.0;
  std::size_t replicate = 0;
  std::optional<double> rmse_km;       ///< empty when the filter failed
  std::optional<double> max_error_km;  ///< empty when the filter failed
  double wall_time_s = 0.0;
  double outside_fraction = 0.0;  ///< estimated positions outside the domain
  bool failed = false;
  std::string reason;
};

struct SummaryRow {
  std::string method;
  double interval_minutes = 0.0;
  std::size_t count = 0;
  std::size_t failures = 0;
  double mean_rmse_km = 0.0;
  double mean_max_error_km = 0.0;
};

/// Per-(method, interval) means over the non-failed rows, ordered as first
/// encountered.
std::vector<SummaryRow> summarize(const std::vector<MetricsRow>& rows);

struct ExperimentResult {
  std::vector<MetricsRow> rows;
  std::vector<SummaryRow> summary;
};

/// Full protocol: simulate each replicate at the fine step, subsample to
/// every interval, corrupt, run every filter, score.  Replicates run on a
/// worker pool; results are identical for any worker count.  When an output
/// directory is configured all artifacts are persisted there.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// metrics.csv excludes wall times so that repeated runs are byte-identical;
/// timings land in a separate file.
void write_metrics(const std::filesystem::path& file,
                   const std::vector<MetricsRow>& rows);
void write_timings(const std::filesystem::path& file,
                   const std::vector<MetricsRow>& rows);
void write_summary(const std::filesystem::path& file,
                   const std::vector<SummaryRow>& rows);
std::vector<MetricsRow> read_metrics(const std::filesystem::path& file);

/// Fraction of states lying outside the domain; 0 without a domain.
double outside_fraction(const std::vector<Vec2>& positions,
                        const std::optional<PolygonDomain>& domain);

}  // namespace penlang
