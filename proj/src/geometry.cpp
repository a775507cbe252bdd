#include "vasoperf/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vasoperf {

double Box3::distance_to_boundary(const Vec3& p) const {
  if (!contains(p)) return 0.0;
  const Vec3 a = p - lo;
  const Vec3 b = hi - p;
  return std::min(a.minCoeff(), b.minCoeff());
}

std::optional<Box3> intersect(const Box3& a, const Box3& b) {
  Box3 r{a.lo.cwiseMax(b.lo), a.hi.cwiseMin(b.hi)};
  if (!r.valid()) return std::nullopt;
  return r;
}

std::optional<std::pair<double, double>> clip_segment(const Vec3& a, const Vec3& b, const Box3& box) {
  double t0 = 0.0;
  double t1 = 1.0;
  const Vec3 d = b - a;
  for (int k = 0; k < 3; ++k) {
    if (d[k] == 0.0) {
      if (a[k] < box.lo[k] || a[k] > box.hi[k]) return std::nullopt;
      continue;
    }
    double ta = (box.lo[k] - a[k]) / d[k];
    double tb = (box.hi[k] - a[k]) / d[k];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 >= t1) return std::nullopt;
  }
  return std::make_pair(t0, t1);
}

double ray_exit_distance(const Vec3& origin, const Vec3& dir, const Box3& box) {
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    if (dir[k] > 0.0) best = std::min(best, (box.hi[k] - origin[k]) / dir[k]);
    if (dir[k] < 0.0) best = std::min(best, (box.lo[k] - origin[k]) / dir[k]);
  }
  return best;
}

}  // namespace vasoperf
