#include "penlang/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

namespace penlang {
namespace {

double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

bool on_segment(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 d = b - a;
  const Vec2 r = p - a;
  if (cross(d, r) != 0.0) return false;
  const double t = r.dot(d);
  return t >= 0.0 && t <= d.squaredNorm();
}

// Proper or improper intersection of segments ab and cd.
bool segments_intersect(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  const double d1 = cross(d - c, a - c);
  const double d2 = cross(d - c, b - c);
  const double d3 = cross(b - a, c - a);
  const double d4 = cross(b - a, d - a);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
      ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
    return true;
  if (d1 == 0 && on_segment(a, c, d)) return true;
  if (d2 == 0 && on_segment(b, c, d)) return true;
  if (d3 == 0 && on_segment(c, a, b)) return true;
  if (d4 == 0 && on_segment(d, a, b)) return true;
  return false;
}

}  // namespace

PolygonDomain::PolygonDomain(std::vector<Vec2> vertices)
    : vertices_(std::move(vertices)) {
  const std::size_t n = vertices_.size();
  edge_dir_.resize(n);
  edge_len2_.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    edge_dir_[k] = vertices_[(k + 1) % n] - vertices_[k];
    edge_len2_[k] = edge_dir_[k].squaredNorm();
  }
}

PolygonDomain PolygonDomain::from_vertices(std::vector<Vec2> vertices) {
  const std::size_t n = vertices.size();
  if (n < 3) throw std::invalid_argument("polygon needs at least 3 vertices");
  for (std::size_t k = 0; k < n; ++k) {
    if (!vertices[k].allFinite())
      throw std::invalid_argument("polygon vertex is not finite");
    if ((vertices[(k + 1) % n] - vertices[k]).squaredNorm() == 0.0)
      throw std::invalid_argument("polygon has coincident consecutive vertices");
  }
  // Simplicity: non-adjacent edges must not touch.  O(n^2) is fine for the
  // small habitat polygons this library works with.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (segments_intersect(vertices[i], vertices[(i + 1) % n],
                             vertices[j], vertices[(j + 1) % n]))
        throw std::invalid_argument("polygon is self-intersecting");
    }
  }
  return PolygonDomain(std::move(vertices));
}

PolygonDomain PolygonDomain::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open polygon file: " + file.string());
  std::vector<Vec2> vertices;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    double x = 0.0, y = 0.0;
    std::string rest;
    if (!(fields >> x >> y) || (fields >> rest))
      throw std::runtime_error(file.string() + ":" + std::to_string(line_no) +
                               ": expected exactly two numeric fields");
    vertices.emplace_back(x, y);
  }
  if (vertices.size() >= 2 &&
      (vertices.front() - vertices.back()).squaredNorm() == 0.0)
    throw std::runtime_error(file.string() +
                             ": first vertex must not be repeated at the end");
  return from_vertices(std::move(vertices));
}

void PolygonDomain::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write polygon file: " + file.string());
  out.precision(17);
  for (const Vec2& v : vertices_) out << v.x() << " " << v.y() << "\n";
}

bool PolygonDomain::contains(const Vec2& x) const {
  const std::size_t n = vertices_.size();
  bool odd = false;
  for (std::size_t k = 0; k < n; ++k) {
    const Vec2& a = vertices_[k];
    const Vec2& b = vertices_[(k + 1) % n];
    if (on_segment(x, a, b)) return true;  // boundary belongs to the domain
    if ((a.y() > x.y()) != (b.y() > x.y())) {
      const double t = (x.y() - a.y()) / (b.y() - a.y());
      if (x.x() < a.x() + t * (b.x() - a.x())) odd = !odd;
    }
  }
  return odd;
}

Projection PolygonDomain::project(const Vec2& x) const {
  Projection result;
  result.point = x;
  if (contains(x)) {
    result.inside = true;
    return result;
  }
  const std::size_t n = vertices_.size();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) {
    const double gamma_raw = (x - vertices_[k]).dot(edge_dir_[k]) / edge_len2_[k];
    const double gamma = std::clamp(gamma_raw, 0.0, 1.0);
    const Vec2 candidate = vertices_[k] + gamma * edge_dir_[k];
    const double dist2 = (x - candidate).squaredNorm();
    // Strict comparison keeps the lowest edge index on ties.  The first
    // edge is accepted unconditionally so that a query so remote that every
    // squared distance overflows to infinity still projects onto the
    // boundary instead of falling through untouched.
    if (dist2 < best || result.edge_index < 0) {
      best = dist2;
      result.point = candidate;
      result.edge_index = static_cast<int>(k);
      result.clamped = (gamma != gamma_raw);
    }
  }
  return result;
}

Vec2 PolygonDomain::penalty(const Vec2& x, double lambda) const {
  const Projection p = project(x);
  if (p.inside) return Vec2::Zero();
  return (x - p.point) / lambda;
}

Mat2 PolygonDomain::penalty_jacobian(const Vec2& x, double lambda) const {
  const Projection p = project(x);
  if (p.inside) return Mat2::Zero();
  if (p.clamped) return Mat2::Identity() / lambda;
  const Vec2& d = edge_dir_[static_cast<std::size_t>(p.edge_index)];
  const Mat2 dpi = d * d.transpose() / edge_len2_[static_cast<std::size_t>(p.edge_index)];
  return (Mat2::Identity() - dpi) / lambda;
}

}  // namespace penlang
