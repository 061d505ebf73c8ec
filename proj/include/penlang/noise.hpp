#pragma once

#include <filesystem>
#include <variant>
#include <vector>

#include "penlang/random.hpp"
#include "penlang/types.hpp"

namespace penlang {

/// Isotropic Gaussian measurement error with per-axis standard deviation.
struct GaussianError {
  double sigma_obs = 0.2;
};

/// Heavy-tailed isotropic error: independent univariate location-scale
/// Student's t on each axis, scale sigma_obs, dof > 2.
struct StudentError {
  double sigma_obs = 0.2;
  double dof = 3.0;
};

/// X-shaped satellite telemetry error: a two-component mixture of bivariate
/// Student's t-distributions whose scale matrices are mirrored across the
/// axes, spreading errors along the two diagonals.
struct ArgosError {
  double sigma_obs = 0.2;
  double dof = 3.0;
  double rho = 0.7;         ///< correlation parameter, (-1, 1)
  double anisotropy = 0.4;  ///< > 0; only rho*sqrt(anisotropy) is identified
  double mix_weight = 0.5;  ///< probability of the first diagonal, [0, 1]

  Mat2 scale() const;         ///< sigma^2 [[1, rho sqrt a], [rho sqrt a, 1]]
  Mat2 scale_mirror() const;  ///< off-diagonal sign flipped
};

using MeasurementModel = std::variant<GaussianError, StudentError, ArgosError>;

/// Throws std::invalid_argument on out-of-range parameters (sigma_obs <= 0,
/// dof <= 2, |rho sqrt a| >= 1, mix weight outside [0, 1]).
void validate(const MeasurementModel& model);

/// Draws one error vector.  For the mixture model, `branch` (optional)
/// receives 0 or 1 for the selected component so tests can condition on it.
Vec2 sample_error(const MeasurementModel& model, RandomStream& rng,
                  int* branch = nullptr);

/// Exact log-density of an observation residual under the model.
/// Throws std::invalid_argument on a non-finite residual.
double log_density(const MeasurementModel& model, const Vec2& residual);

/// One Gaussian component of a moment-matched approximation.
struct GaussianComponent {
  double weight = 1.0;
  Mat2 cov = Mat2::Identity();
};

/// Gaussian (mixture) approximation matching the error covariance:
/// one component for Gaussian/Student models, two for the Argos mixture,
/// with Student-family covariances inflated by dof/(dof - 2).
std::vector<GaussianComponent> moment_match(const MeasurementModel& model);

/// One noisy position record.
struct Observation {
  double t_hours = 0.0;
  Vec2 position = Vec2::Zero();
};

using ObservationSeries = std::vector<Observation>;

/// Delimited text with a "t_hours,y1_km,y2_km" header line.
void write_observations(const std::filesystem::path& file,
                        const ObservationSeries& series);
ObservationSeries read_observations(const std::filesystem::path& file);

}  // namespace penlang
