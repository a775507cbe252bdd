#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <optional>
#include <utility>

namespace vasoperf {

using Vec3 = Eigen::Vector3d;

/// Axis-aligned box, lengths in μm.
struct Box3 {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();

  Vec3 extent() const { return hi - lo; }
  Vec3 center() const { return 0.5 * (lo + hi); }
  double volume() const {
    const Vec3 e = extent();
    return e.x() * e.y() * e.z();
  }
  bool valid() const { return (hi.array() > lo.array()).all(); }

  /// Closed containment with an absolute slack.
  bool contains(const Vec3& p, double slack = 0.0) const {
    return (p.array() >= lo.array() - slack).all() && (p.array() <= hi.array() + slack).all();
  }

  /// Distance from an interior point to the nearest face (0 outside).
  double distance_to_boundary(const Vec3& p) const;
};

std::optional<Box3> intersect(const Box3& a, const Box3& b);

/// Parameter interval [t0, t1] ⊂ [0, 1] of the segment a + t (b - a) inside
/// the closed box (slab clipping). Empty or single-point intersections give
/// nullopt.
std::optional<std::pair<double, double>> clip_segment(const Vec3& a, const Vec3& b, const Box3& box);

/// Distance along the ray from `origin` in direction `dir` to the box
/// boundary. `origin` must lie inside the box.
double ray_exit_distance(const Vec3& origin, const Vec3& dir, const Box3& box);

}  // namespace vasoperf
