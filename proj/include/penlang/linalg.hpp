#pragma once

#include <optional>

#include "penlang/potential.hpp"
#include "penlang/random.hpp"
#include "penlang/types.hpp"

namespace penlang {

/// Movement parameters of the velocity process.
struct MovementParams {
  double tau = 1.0;    ///< persistence time (hours), > 0
  double nu = 1.0;     ///< long-run speed scale (km/h), > 0
  double omega = 0.0;  ///< rotational velocity (rad/h)

  double damping() const { return 1.0 / tau; }
  double diffusion() const;  ///< velocity noise intensity

  /// Damping-rotation matrix A = [[c, -omega], [omega, c]] with c = 1/tau.
  Mat2 friction() const;
};

/// Throws std::invalid_argument unless tau > 0 and nu > 0.
void validate(const MovementParams& params);

/// Linearized state drift around well l:
///   [[0, I], [-2 alpha_l B_l, -A]],
/// or with a zero position block when no well is active.
struct DriftMatrix {
  Mat4 value = Mat4::Zero();
  std::optional<std::size_t> center;  ///< active well, nullopt when flat

  static DriftMatrix make(const MovementParams& movement,
                          const PotentialSpec& potential,
                          std::optional<std::size_t> center);
};

/// Constant diffusion matrix diag(0, 0, sigma^2, sigma^2) of the state SDE.
struct NoiseMatrix {
  double sigma = 0.0;  ///< >= 0; zero gives the deterministic flow

  Mat4 value() const;

  static NoiseMatrix make(const MovementParams& movement);
};

/// exp(m); throws std::invalid_argument on non-finite input.
Mat4 matrix_exponential(const Mat4& m);

struct OuCovariance {
  Mat4 value = Mat4::Zero();
  /// True when the Kronecker-sum closed form was abandoned for numerical
  /// quadrature (drift matrix singular or nearly so, e.g. a flat surface).
  bool via_quadrature = false;
};

/// Covariance int_0^h exp(As) G exp(A^T s) ds of the linear SDE over one
/// step.  Solves the Kronecker-sum linear system when it is well conditioned
/// and otherwise integrates by adaptive Simpson quadrature to 1e-10 absolute
/// accuracy per entry.
OuCovariance ou_covariance(const DriftMatrix& drift, const NoiseMatrix& noise,
                           double h);

struct ConditionalGaussian {
  Vec2 mean = Vec2::Zero();
  Mat2 cov = Mat2::Zero();
};

/// Velocity block of a joint state Gaussian conditioned on an exactly
/// observed position.
ConditionalGaussian condition_gaussian(const Vec4& mean, const Mat4& cov,
                                       const Vec2& observed_position);

/// Factor F with F F^T = cov, by symmetric eigendecomposition.  Eigenvalues
/// in [-tol, 0) are clamped to zero; anything below -tol throws
/// std::invalid_argument (tol = 1e-10 * max(1, |trace|)).
Eigen::MatrixXd mvn_factor(const Eigen::MatrixXd& cov);

/// Draw from N(mean, cov) using mvn_factor.
Eigen::VectorXd sample_mvn(const Eigen::VectorXd& mean,
                           const Eigen::MatrixXd& cov, RandomStream& rng);

}  // namespace penlang
