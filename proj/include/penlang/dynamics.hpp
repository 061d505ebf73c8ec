#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <vector>

#include "penlang/geometry.hpp"
#include "penlang/linalg.hpp"
#include "penlang/potential.hpp"
#include "penlang/random.hpp"
#include "penlang/types.hpp"

namespace penlang {

/// Position-velocity state of the movement process.
struct StateVector {
  Vec2 position = Vec2::Zero();  ///< km
  Vec2 velocity = Vec2::Zero();  ///< km/h

  Vec4 packed() const {
    Vec4 u;
    u << position, velocity;
    return u;
  }
  static StateVector unpack(const Vec4& u) {
    return {u.head<2>(), u.tail<2>()};
  }
  bool finite() const { return position.allFinite() && velocity.allFinite(); }
};

/// Full model of the constrained movement SDE.  lambda = +inf (the default)
/// disables the domain penalty even when a domain is present, which is how
/// the unpenalized filter variants are expressed.
struct SdeModel {
  MovementParams movement;
  PotentialSpec potential;
  std::optional<PolygonDomain> domain;
  double lambda = std::numeric_limits<double>::infinity();

  bool penalty_active() const {
    return domain.has_value() && std::isfinite(lambda);
  }
  Vec2 penalty(const Vec2& x) const {
    return penalty_active() ? domain->penalty(x, lambda) : Vec2::Zero();
  }
  Mat2 penalty_jacobian(const Vec2& x) const {
    return penalty_active() ? domain->penalty_jacobian(x, lambda) : Mat2::Zero();
  }
};

/// Throws std::invalid_argument on invalid movement parameters or lambda <= 0.
void validate(const SdeModel& model);

/// Velocity rows of the residual drift left over after linearizing the SDE
/// around well `center`:
///   2 alpha_l (e_l(x) - 1) B_l (x - c_l) + grad H_excluding_l(x) + penalty(x).
/// With no active well the full gradient of H remains.
Vec2 residual_velocity_drift(const SdeModel& model,
                             std::optional<std::size_t> center, const Vec2& x);

/// Residual drift on the packed state; position rows are identically zero.
Vec4 residual_drift(const SdeModel& model, std::optional<std::size_t> center,
                    const Vec4& u);

/// Position Jacobian of residual_velocity_drift (used by the extended filter).
Mat2 residual_velocity_jacobian(const SdeModel& model,
                                std::optional<std::size_t> center,
                                const Vec2& x);

/// Exact solution of the residual ODE over one step: u - h * residual_drift(u).
Vec4 ode_flow(const SdeModel& model, std::optional<std::size_t> center,
              const Vec4& u, double h);

/// Everything needed to advance the linear sub-flow for one (well, step)
/// pair.  Immutable once built; safe to share across threads.
struct StepContext {
  std::optional<std::size_t> center;
  double step = 0.0;                  ///< h in hours
  Vec4 fixed_point = Vec4::Zero();    ///< (c_l, 0, 0), zero when flat
  Mat4 drift = Mat4::Zero();          ///< linearized drift matrix
  Mat4 exp_drift = Mat4::Identity();  ///< exp(drift * h)
  Mat4 cov = Mat4::Zero();            ///< one-step noise covariance
  Mat4 cov_factor = Mat4::Zero();     ///< F with F F^T = cov
  bool cov_via_quadrature = false;
};

StepContext make_step_context(const SdeModel& model,
                              std::optional<std::size_t> center, double h);

/// Prebuilt contexts for every well of a model at a fixed step size.
class StepContextCache {
 public:
  StepContextCache(const SdeModel& model, double h);

  double step() const { return step_; }
  const StepContext& at(std::optional<std::size_t> center) const;

 private:
  double step_;
  std::vector<StepContext> contexts_;  // index = center; last slot = flat
};

/// One draw of the linear-flow noise, eta = cov_factor * z.
Vec4 draw_step_noise(const StepContext& ctx, RandomStream& rng);

/// Linear sub-flow: exp(Ah)(u - u*) + u* + eta.
Vec4 ou_flow(const StepContext& ctx, const Vec4& u, const Vec4& eta);
Vec4 ou_flow(const StepContext& ctx, const Vec4& u, RandomStream& rng);

/// One step of the Lie-Trotter composition (linear flow after residual ODE).
Vec4 lie_trotter_step(const SdeModel& model, const StepContext& ctx,
                      const Vec4& u, const Vec4& eta);
Vec4 lie_trotter_step(const SdeModel& model, const StepContext& ctx,
                      const Vec4& u, RandomStream& rng);

/// One Strang step, keeping the post-linear-flow intermediate state that the
/// filters need.
struct StrangStep {
  Vec4 state;         ///< final state after the trailing half ODE step
  Vec4 intermediate;  ///< state right after the linear flow
};

StrangStep strang_step(const SdeModel& model, const StepContext& ctx,
                       const Vec4& u, const Vec4& eta);
StrangStep strang_step(const SdeModel& model, const StepContext& ctx,
                       const Vec4& u, RandomStream& rng);

enum class Scheme { LieTrotter, Strang };

struct TrajectoryPoint {
  double t_hours = 0.0;
  StateVector state;
};

using Trajectory = std::vector<TrajectoryPoint>;

/// Simulates n_steps steps of size h from u0, re-selecting the active well
/// from the current position at every step.  Returns n_steps + 1 states.
/// Throws std::runtime_error naming the step index if the state leaves the
/// finite range.
Trajectory simulate_trajectory(const SdeModel& model, const StateVector& u0,
                               double h, std::size_t n_steps, Scheme scheme,
                               RandomStream& rng);

/// Keeps every factor-th state starting at index 0.  factor must be >= 1 and
/// divide the step count exactly.
Trajectory subsample(const Trajectory& traj, std::size_t factor);

/// Delimited text with a "t_hours,x1_km,x2_km,v1_kmh,v2_kmh" header.
void write_trajectory(const std::filesystem::path& file, const Trajectory& traj);
Trajectory read_trajectory(const std::filesystem::path& file);

}  // namespace penlang
