#include "penlang/potential.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace penlang {

PotentialSpec::PotentialSpec(std::vector<PotentialComponent> components)
    : components_(std::move(components)) {
  for (const PotentialComponent& c : components_) {
    if (!(c.alpha > 0.0))
      throw std::invalid_argument("potential component needs alpha > 0");
    if (!c.center.allFinite() || !c.precision.allFinite())
      throw std::invalid_argument("potential component is not finite");
    const double asym = std::abs(c.precision(0, 1) - c.precision(1, 0));
    if (asym > 1e-12 * (1.0 + c.precision.cwiseAbs().maxCoeff()))
      throw std::invalid_argument("potential precision must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat2> eig(c.precision);
    if (!(eig.eigenvalues().minCoeff() > 0.0))
      throw std::invalid_argument("potential precision must be positive definite");
  }
}

const PotentialComponent& PotentialSpec::component(std::size_t j) const {
  if (j >= components_.size())
    throw std::out_of_range("potential component index out of range");
  return components_[j];
}

double PotentialSpec::kernel(const Vec2& x, std::size_t j) const {
  const PotentialComponent& c = component(j);
  const Vec2 r = x - c.center;
  return std::exp(-r.dot(c.precision * r));
}

double PotentialSpec::value(const Vec2& x) const {
  double h = 0.0;
  for (std::size_t j = 0; j < components_.size(); ++j)
    h -= components_[j].alpha * kernel(x, j);
  return h;
}

Vec2 PotentialSpec::gradient(const Vec2& x,
                             std::optional<std::size_t> exclude) const {
  if (exclude && *exclude >= components_.size())
    throw std::out_of_range("excluded component index out of range");
  Vec2 g = Vec2::Zero();
  for (std::size_t j = 0; j < components_.size(); ++j) {
    if (exclude && *exclude == j) continue;
    const PotentialComponent& c = components_[j];
    const Vec2 r = x - c.center;
    g += 2.0 * c.alpha * kernel(x, j) * (c.precision * r);
  }
  return g;
}

Mat2 PotentialSpec::hessian(const Vec2& x,
                            std::optional<std::size_t> exclude) const {
  if (exclude && *exclude >= components_.size())
    throw std::out_of_range("excluded component index out of range");
  Mat2 h = Mat2::Zero();
  for (std::size_t j = 0; j < components_.size(); ++j) {
    if (exclude && *exclude == j) continue;
    const PotentialComponent& c = components_[j];
    const Vec2 br = c.precision * (x - c.center);
    h += 2.0 * c.alpha * kernel(x, j) * (c.precision - 2.0 * br * br.transpose());
  }
  return h;
}

std::optional<std::size_t> PotentialSpec::select_center(const Vec2& x) const {
  if (components_.empty()) return std::nullopt;
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < components_.size(); ++j) {
    const PotentialComponent& c = components_[j];
    const Vec2 r = x - c.center;
    // log |grad H_j|^2; the log of the quadratic form underflows to -inf at
    // the well center, which ranks last without poisoning the comparison.
    const double score = 2.0 * std::log(2.0) + 2.0 * std::log(c.alpha) -
                         2.0 * r.dot(c.precision * r) +
                         std::log((c.precision * r).squaredNorm());
    if (score > best_score) {
      best_score = score;
      best = j;
    }
  }
  return best;
}

}  // namespace penlang
