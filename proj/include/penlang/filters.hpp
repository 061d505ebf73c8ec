#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "penlang/dynamics.hpp"
#include "penlang/noise.hpp"
#include "penlang/random.hpp"
#include "penlang/types.hpp"

namespace penlang {

enum class FilterAlgorithm { Kalman, ExtendedKalman, Particle };

enum class ResamplingPolicy {
  EveryStep,  ///< resample unconditionally each step
  Adaptive,   ///< resample only when ESS drops below half the cloud size
};

struct FilterConfig {
  FilterAlgorithm algorithm = FilterAlgorithm::ExtendedKalman;
  Scheme scheme = Scheme::LieTrotter;  ///< particle filter only
  bool penalized = true;               ///< false forces lambda = +inf
  MeasurementModel model = GaussianError{};
  std::size_t particle_count = 500;    ///< particle filter only, >= 2
  ResamplingPolicy resampling = ResamplingPolicy::EveryStep;
  /// Zero out weights of particles proposed outside the domain.  Off by
  /// default: the smooth penalty is the supported mechanism and this mask is
  /// known to cause weight degeneracy near corners.
  bool hard_constraint_weights = false;
  /// Velocity prior standard deviation at initialization; defaults to the
  /// movement speed scale nu when unset.
  std::optional<double> initial_velocity_sd;
};

void validate(const FilterConfig& cfg);

/// Raised when a filter cannot continue (e.g. every particle weight
/// underflowed); step() reports the observation index.
class FilterError : public std::runtime_error {
 public:
  FilterError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " at observation " + std::to_string(step)),
        step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct StepEstimate {
  double t_hours = 0.0;
  Vec4 mean = Vec4::Zero();
  std::optional<Mat4> covariance;  ///< posterior (Gaussian) or cloud covariance
  std::optional<double> ess;       ///< particle filter only
  std::optional<double> log_evidence_increment;  ///< particle filter only
};

struct FilterOutput {
  std::vector<StepEstimate> steps;  ///< one per observation, index-aligned
  int psd_repairs = 0;   ///< covariance clamp events (Gaussian filters)
  int resamples = 0;     ///< resampling events (particle filter)
};

/// Kalman or extended Kalman filter on the linearized state space.  Both
/// share the prediction mean; the extended variant also propagates the
/// residual-drift Jacobian through the covariance.  Non-Gaussian models are
/// replaced by their isotropic moment-matched Gaussian.
FilterOutput run_gaussian_filter(const ObservationSeries& observations,
                                 const FilterConfig& cfg, const SdeModel& model,
                                 double h);

/// Gaussian mixture proposal over the packed state (one component for
/// Gaussian/Student observation models, two for the Argos mixture).
struct GaussianMixtureProposal {
  struct Component {
    double log_weight = 0.0;
    Vec4 mean = Vec4::Zero();
    Mat4 cov = Mat4::Zero();
    Mat4 precision = Mat4::Zero();
    Mat4 factor = Mat4::Zero();
    double logdet = 0.0;  ///< log det cov
  };
  std::vector<Component> components;

  Vec4 sample(RandomStream& rng) const;
  double log_density(const Vec4& u) const;
};

/// Position-only mixture used as the first stage of the Strang proposal.
struct PositionMixtureProposal {
  struct Component {
    double log_weight = 0.0;
    Vec2 mean = Vec2::Zero();
    Mat2 cov = Mat2::Zero();
    Mat2 precision = Mat2::Zero();
    Mat2 factor = Mat2::Zero();
    double logdet = 0.0;
  };
  std::vector<Component> components;

  Vec2 sample(RandomStream& rng) const;
  double log_density(const Vec2& x) const;
};

/// Two-stage Strang proposal: observation-informed position mixture, then
/// the exact Gaussian velocity conditional shifted by the trailing half ODE
/// step.
struct StrangProposal {
  PositionMixtureProposal position;
  Vec4 pre_correction_mean = Vec4::Zero();  ///< mean of the linear-flow state
  double half_step = 0.0;
  Mat2 cond_gain = Mat2::Zero();
  Mat2 cond_cov = Mat2::Zero();
  Mat2 cond_factor = Mat2::Zero();
  double cond_logdet = 0.0;

  Vec2 velocity_mean(const SdeModel& model,
                     std::optional<std::size_t> center, const Vec2& x) const;
  Vec2 sample_velocity(const SdeModel& model,
                       std::optional<std::size_t> center, const Vec2& x,
                       RandomStream& rng) const;
};

/// Per-(model, observation model, step) cache of every matrix the particle
/// proposals and transition densities need, one entry per well plus the
/// flat-surface slot.  Immutable after construction.
class ProposalKit {
 public:
  ProposalKit(const SdeModel& model, const MeasurementModel& obs_model,
              double h);

  double step() const { return cache_.step(); }
  const StepContext& context(std::optional<std::size_t> center) const {
    return cache_.at(center);
  }
  std::optional<std::size_t> center_for(const Vec2& position) const {
    return model_.potential.select_center(position);
  }
  const SdeModel& model() const { return model_; }

  /// Mean of the linear flow applied to the full-step residual ODE (the
  /// one-step transition mean of the Lie-Trotter scheme).
  Vec4 lt_mean(const Vec4& u_prev) const;
  /// Mean of the linear flow applied to the half-step residual ODE (the law
  /// of the Strang intermediate state).
  Vec4 strang_mean(const Vec4& u_prev) const;

  GaussianMixtureProposal lt_proposal(const Vec4& u_prev, const Vec2& y) const;
  StrangProposal strang_proposal(const Vec4& u_prev, const Vec2& y) const;

  /// log N(u; lt_mean(u_prev), Q) with the jittered step covariance.
  double log_lt_transition(const Vec4& u, const Vec4& u_prev) const;
  /// log N(x; strang_mean_x(u_prev), Q_xx); the velocity factor of the
  /// Strang transition cancels against the proposal and never needs
  /// evaluating.
  double log_strang_position_transition(const Vec2& x,
                                        const Vec4& u_prev) const;

 private:
  struct CenterCache {
    Mat4 cov_inv = Mat4::Zero();
    double cov_logdet = 0.0;
    Mat2 qxx_inv = Mat2::Zero();
    double qxx_logdet = 0.0;
    Mat2 cond_gain = Mat2::Zero();
    Mat2 cond_cov = Mat2::Zero();
    Mat2 cond_factor = Mat2::Zero();
    double cond_logdet = 0.0;
    struct LtComponent {
      double log_weight = 0.0;
      Mat4 cov = Mat4::Zero(), precision = Mat4::Zero(), factor = Mat4::Zero();
      Mat4 from_prior = Mat4::Zero();          // cov * Q^-1
      Eigen::Matrix<double, 4, 2> from_obs{};  // cov * L^T C^-1
      double logdet = 0.0;
    };
    struct StrangComponent {
      double log_weight = 0.0;
      Mat2 cov = Mat2::Zero(), precision = Mat2::Zero(), factor = Mat2::Zero();
      Mat2 from_prior = Mat2::Zero(), from_obs = Mat2::Zero();
      double logdet = 0.0;
    };
    std::vector<LtComponent> lt;
    std::vector<StrangComponent> strang;
  };

  const CenterCache& cache_for(std::optional<std::size_t> center) const;

  SdeModel model_;
  StepContextCache cache_;
  std::vector<CenterCache> centers_;  // index = well; last slot = flat
};

/// Sequential Monte Carlo filter with the observation-informed proposals.
FilterOutput run_particle_filter(const ObservationSeries& observations,
                                 const FilterConfig& cfg, const SdeModel& model,
                                 double h, RandomStream& rng);

/// Dispatches on cfg.algorithm; particle runs consume the random stream.
FilterOutput run_filter(const ObservationSeries& observations,
                        const FilterConfig& cfg, const SdeModel& model,
                        double h, RandomStream& rng);

/// Systematic (single stratified uniform) resampling of normalized weights.
/// Throws std::invalid_argument when all weights vanish.
std::vector<std::size_t> systematic_resample(const std::vector<double>& weights,
                                             RandomStream& rng);

/// (sum w)^2 / sum w^2; equals 1/sum W^2 for normalized weights.
double effective_sample_size(const std::vector<double>& weights);

/// Delimited text, header t_hours,mean_x1,mean_x2,mean_v1,mean_v2,ess; the
/// ess field is left empty for Gaussian filters.
void write_filter_output(const std::filesystem::path& file,
                         const FilterOutput& output);

/// Sidecar of per-step 4x4 covariances, row-major, 16 columns.
void write_filter_covariances(const std::filesystem::path& file,
                              const FilterOutput& output);

}  // namespace penlang
