#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "penlang/types.hpp"

namespace penlang {

/// One attractive well of the movement potential.
struct PotentialComponent {
  double alpha = 1.0;              ///< well depth, > 0
  Vec2 center = Vec2::Zero();      ///< well location
  Mat2 precision = Mat2::Identity();  ///< symmetric positive definite shape
};

/// Smooth attraction surface H(x) = -sum_j alpha_j exp(-(x-c_j)^T B_j (x-c_j)).
///
/// An empty component list is valid and models a flat surface (pure
/// persistent motion); callers must handle the "no active well" case that
/// select_center() reports for it.
class PotentialSpec {
 public:
  PotentialSpec() = default;  // flat surface

  /// Validates every component (alpha > 0, symmetric positive definite
  /// precision); throws std::invalid_argument otherwise.
  explicit PotentialSpec(std::vector<PotentialComponent> components);

  std::size_t size() const { return components_.size(); }
  bool flat() const { return components_.empty(); }
  const PotentialComponent& component(std::size_t j) const;

  /// Squeezed-exponential factor e_j(x) = exp(-(x-c_j)^T B_j (x-c_j)).
  double kernel(const Vec2& x, std::size_t j) const;

  /// Surface value H(x).
  double value(const Vec2& x) const;

  /// Gradient of H, optionally with component `exclude` left out.
  Vec2 gradient(const Vec2& x,
                std::optional<std::size_t> exclude = std::nullopt) const;

  /// Hessian of H, optionally with component `exclude` left out.
  Mat2 hessian(const Vec2& x,
               std::optional<std::size_t> exclude = std::nullopt) const;

  /// Index of the component whose gradient contribution dominates at x,
  /// decided in log scale so vanishing contributions underflow to -inf
  /// rather than NaN.  Ties resolve to the lowest index; a flat surface
  /// yields std::nullopt.
  std::optional<std::size_t> select_center(const Vec2& x) const;

 private:
  std::vector<PotentialComponent> components_;
};

}  // namespace penlang
