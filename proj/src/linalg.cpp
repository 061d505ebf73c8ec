#include "penlang/linalg.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

namespace penlang {
namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

using Mat16 = Eigen::Matrix<double, 16, 16>;
using Vec16 = Eigen::Matrix<double, 16, 1>;

// Relative condition threshold beyond which the Kronecker-sum solve is not
// trusted.  A flat surface makes the drift matrix singular, so this gate is
// routinely exercised, not merely defensive.
constexpr double kConditionLimit = 1e12;

Mat4 quad_integrand(const Mat4& a, const Mat4& gamma, double s) {
  const Mat4 e = (a * s).exp();
  return e * gamma * e.transpose();
}

// Adaptive Simpson on a matrix integrand, max-abs entrywise error control.
Mat4 adaptive_simpson(const Mat4& a, const Mat4& gamma, double lo, double hi,
                      const Mat4& f_lo, const Mat4& f_mid, const Mat4& f_hi,
                      const Mat4& whole, double tol, int depth) {
  const double mid = 0.5 * (lo + hi);
  const Mat4 f_l = quad_integrand(a, gamma, 0.5 * (lo + mid));
  const Mat4 f_r = quad_integrand(a, gamma, 0.5 * (mid + hi));
  const Mat4 left = (mid - lo) / 6.0 * (f_lo + 4.0 * f_l + f_mid);
  const Mat4 right = (hi - mid) / 6.0 * (f_mid + 4.0 * f_r + f_hi);
  const Mat4 delta = left + right - whole;
  if (depth <= 0 || delta.cwiseAbs().maxCoeff() <= 15.0 * tol)
    return left + right + delta / 15.0;
  return adaptive_simpson(a, gamma, lo, mid, f_lo, f_l, f_mid, left, 0.5 * tol,
                          depth - 1) +
         adaptive_simpson(a, gamma, mid, hi, f_mid, f_r, f_hi, right, 0.5 * tol,
                          depth - 1);
}

Mat4 integrate_covariance(const Mat4& a, const Mat4& gamma, double h) {
  const Mat4 f_lo = quad_integrand(a, gamma, 0.0);
  const Mat4 f_mid = quad_integrand(a, gamma, 0.5 * h);
  const Mat4 f_hi = quad_integrand(a, gamma, h);
  const Mat4 whole = h / 6.0 * (f_lo + 4.0 * f_mid + f_hi);
  return adaptive_simpson(a, gamma, 0.0, h, f_lo, f_mid, f_hi, whole, 1e-10, 40);
}

}  // namespace

double MovementParams::diffusion() const {
  return 2.0 * nu / std::sqrt(kPi * tau);
}

Mat2 MovementParams::friction() const {
  const double c = damping();
  Mat2 a;
  a << c, -omega, omega, c;
  return a;
}

void validate(const MovementParams& params) {
  if (!(params.tau > 0.0))
    throw std::invalid_argument("movement persistence tau must be > 0");
  if (!(params.nu > 0.0))
    throw std::invalid_argument("movement speed scale nu must be > 0");
  if (!std::isfinite(params.omega))
    throw std::invalid_argument("movement rotation omega must be finite");
}

DriftMatrix DriftMatrix::make(const MovementParams& movement,
                              const PotentialSpec& potential,
                              std::optional<std::size_t> center) {
  validate(movement);
  DriftMatrix drift;
  drift.center = center;
  drift.value.block<2, 2>(0, 2) = Mat2::Identity();
  drift.value.block<2, 2>(2, 2) = -movement.friction();
  if (center) {
    const PotentialComponent& well = potential.component(*center);
    drift.value.block<2, 2>(2, 0) = -2.0 * well.alpha * well.precision;
  }
  return drift;
}

Mat4 NoiseMatrix::value() const {
  Mat4 g = Mat4::Zero();
  g(2, 2) = sigma * sigma;
  g(3, 3) = sigma * sigma;
  return g;
}

NoiseMatrix NoiseMatrix::make(const MovementParams& movement) {
  validate(movement);
  return NoiseMatrix{movement.diffusion()};
}

Mat4 matrix_exponential(const Mat4& m) {
  if (!m.allFinite())
    throw std::invalid_argument("matrix exponential of non-finite matrix");
  return m.exp();
}

OuCovariance ou_covariance(const DriftMatrix& drift, const NoiseMatrix& noise,
                           double h) {
  if (!(h > 0.0)) throw std::invalid_argument("step length must be > 0");
  if (!(noise.sigma >= 0.0))
    throw std::invalid_argument("noise intensity must be >= 0");
  const Mat4 a = drift.value;
  const Mat4 gamma = noise.value();
  OuCovariance out;
  if (noise.sigma == 0.0) return out;

  const Mat16 sum = Eigen::kroneckerProduct(Mat4::Identity(), a) +
                    Eigen::kroneckerProduct(a, Mat4::Identity());
  const Eigen::JacobiSVD<Mat16> svd(sum, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const double s_max = svd.singularValues()(0);
  const double s_min = svd.singularValues()(15);
  if (s_min > 0.0 && s_max / s_min < kConditionLimit) {
    // C solves A C + C A^T = Gamma; the step covariance telescopes to
    // exp(Ah) C exp(A^T h) - C.
    const Vec16 vec_c = svd.solve(Vec16(Eigen::Map<const Vec16>(gamma.data())));
    const Mat4 c = Eigen::Map<const Mat4>(vec_c.data());
    const Mat4 e = matrix_exponential(a * h);
    out.value = e * c * e.transpose() - c;
  } else {
    out.value = integrate_covariance(a, gamma, h);
    out.via_quadrature = true;
  }
  out.value = 0.5 * (out.value + out.value.transpose()).eval();
  return out;
}

ConditionalGaussian condition_gaussian(const Vec4& mean, const Mat4& cov,
                                       const Vec2& observed_position) {
  const Mat2 q_xx = cov.topLeftCorner<2, 2>();
  const double det = q_xx.determinant();
  if (!(det > 0.0) || !std::isfinite(det))
    throw std::invalid_argument(
        "cannot condition on position: singular position covariance");
  const Mat2 q_vx = cov.bottomLeftCorner<2, 2>();
  const Mat2 gain = q_vx * q_xx.inverse();
  ConditionalGaussian out;
  out.mean = mean.tail<2>() + gain * (observed_position - mean.head<2>());
  out.cov = cov.bottomRightCorner<2, 2>() - gain * q_xx * gain.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  return out;
}

Eigen::MatrixXd mvn_factor(const Eigen::MatrixXd& cov) {
  if (cov.rows() != cov.cols())
    throw std::invalid_argument("covariance must be square");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success)
    throw std::invalid_argument("covariance eigendecomposition failed");
  const double tol = 1e-10 * std::max(1.0, std::abs(cov.trace()));
  Eigen::VectorXd lambda = eig.eigenvalues();
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) < -tol)
      throw std::invalid_argument("covariance is not positive semidefinite");
    lambda(i) = std::max(lambda(i), 0.0);
  }
  return eig.eigenvectors() * lambda.cwiseSqrt().asDiagonal();
}

Eigen::VectorXd sample_mvn(const Eigen::VectorXd& mean,
                           const Eigen::MatrixXd& cov, RandomStream& rng) {
  const Eigen::MatrixXd factor = mvn_factor(cov);
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return mean + factor * z;
}

}  // namespace penlang
