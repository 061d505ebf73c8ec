#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "penlang/types.hpp"

namespace penlang {

/// Result of projecting a point onto the domain.
struct Projection {
  Vec2 point;            ///< closest point of the domain
  int edge_index = -1;   ///< boundary edge realizing the minimum; -1 if inside
  bool clamped = false;  ///< projection landed on an edge endpoint
  bool inside = false;   ///< query point was already in the domain
};

/// Simple polygon (possibly nonconvex) acting as the habitat domain.
///
/// Vertices are stored in file order; edge k joins vertex k to vertex k+1
/// (wrapping at the end).  The boundary belongs to the domain.  Validity
/// (at least three vertices, no duplicate neighbours, no self-intersection)
/// is enforced at construction, so instances are always usable.
class PolygonDomain {
 public:
  /// Validates and takes ownership of the vertex list.
  /// Throws std::invalid_argument on a degenerate or self-intersecting input.
  static PolygonDomain from_vertices(std::vector<Vec2> vertices);

  /// Reads a vertex file: one "x y" pair per line, blank lines and lines
  /// starting with '#' ignored.  The first vertex must not be repeated at
  /// the end; the closing edge is implicit.
  static PolygonDomain load(const std::filesystem::path& file);

  /// Writes the same format accepted by load().
  void save(const std::filesystem::path& file) const;

  const std::vector<Vec2>& vertices() const { return vertices_; }
  std::size_t edge_count() const { return vertices_.size(); }

  /// Even-odd membership test; points on the boundary count as inside.
  bool contains(const Vec2& x) const;

  /// Closest-point projection onto the domain.  Outside points scan every
  /// boundary edge; ties are broken towards the lowest edge index.
  Projection project(const Vec2& x) const;

  /// Soft-constraint restoring term (x - project(x)) / lambda.
  Vec2 penalty(const Vec2& x, double lambda) const;

  /// Spatial Jacobian of penalty().  Uses the projection differential:
  /// zero inside, (I - d d^T / |d|^2) / lambda against an edge interior,
  /// I / lambda when the projection clamps to a vertex.
  Mat2 penalty_jacobian(const Vec2& x, double lambda) const;

 private:
  explicit PolygonDomain(std::vector<Vec2> vertices);

  std::vector<Vec2> vertices_;
  std::vector<Vec2> edge_dir_;      // vertex[k+1] - vertex[k]
  std::vector<double> edge_len2_;   // squared edge lengths
};

}  // namespace penlang
