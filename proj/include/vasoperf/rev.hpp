#pragma once

#include "vasoperf/geometry.hpp"
#include "vasoperf/network.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace vasoperf {

/// Vessel length, volume and lateral surface inside a region, split by class.
struct VesselContent {
  double length_small = 0.0;
  double length_large = 0.0;
  double volume_small = 0.0;
  double volume_large = 0.0;
  double surface_small = 0.0;
  double surface_large = 0.0;

  VesselContent& operator+=(const VesselContent& o);
};

/// Content of the closed box; cylinder volume apportioned by clipped length.
VesselContent clip_content(const VesselNetwork& net, const Box3& box);

struct GrowthPoint {
  double l = 0.0;  // cube root of the clipped volume [μm]
  double vf_small = 0.0;
  double sv_small = 0.0;  // 1/μm
};

struct GrowthCurve {
  Vec3 center = Vec3::Zero();
  std::vector<GrowthPoint> points;
};

struct GrowthOptions {
  int n_centers = 20;
  int max_steps = 300;
  double initial_fraction = 1.0 / 300.0;  // initial edge over the largest extent
};

/// Probe cubes grown around random centers in the inner 70% of each axis.
/// Growth stops when a cube covers the domain.
std::vector<GrowthCurve> grow_probe_cubes(const VesselNetwork& net, const Box3& domain, std::uint64_t seed,
                                          const GrowthOptions& opt = {});

struct RevSelection {
  int window = 3;           // growth steps
  double tolerance = 0.1;   // relative range of vf over the window
  double fraction = 0.8;    // of curves that must be stable
};

/// Smallest l at which enough curves have a stable small-vessel volume
/// fraction over the following window. GeometryError if none stabilizes.
double select_rev_length(const std::vector<GrowthCurve>& curves, const RevSelection& sel = {});

/// Mean small-vessel volume fraction over all curve points with l ≥ l_rev.
double plateau_volume_fraction(const std::vector<GrowthCurve>& curves, double l_rev);

struct Rev {
  int id = 0;
  std::array<int, 3> cell{};
  Box3 box;
  double volume = 0.0;
  VesselContent content;
  double vf_small = 0.0;
  double vf_large = 0.0;
  double vf_total = 0.0;
  double sv_small = 0.0;
  double r_tilde = 0.0;
};

class RevPartition {
 public:
  RevPartition() = default;
  RevPartition(const Box3& domain, double l_rev);

  const Box3& domain() const { return domain_; }
  double target_length() const { return l_rev_; }
  const std::array<int, 3>& counts() const { return counts_; }
  Vec3 edge() const { return edge_; }
  std::size_t size() const { return revs_.size(); }
  const std::vector<Rev>& revs() const { return revs_; }
  const Rev& rev(int id) const { return revs_[static_cast<std::size_t>(id)]; }

  /// REV containing p (half-open cells, outer faces closed); -1 outside.
  int rev_of(const Vec3& p) const;
  /// Split [a, b] at cell faces; calls f(rev id, t0, t1) per piece.
  template <class F>
  void for_each_piece(const Vec3& a, const Vec3& b, F&& f) const;

  /// Fill per-REV vessel statistics from a partitioned network.
  void compute_statistics(const VesselNetwork& net);

 private:
  int cell_index(int axis, double x) const;

  Box3 domain_;
  double l_rev_ = 0.0;
  std::array<int, 3> counts_{1, 1, 1};
  Vec3 edge_ = Vec3::Zero();
  std::vector<Rev> revs_;
};

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Least-squares line; ContractError for fewer than two points or zero x spread.
LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

struct RadialProfile {
  std::vector<double> r_tilde;
  std::vector<double> vf_large, vf_small, vf_total;
  LinearFit fit_large, fit_small, fit_total;
};

RadialProfile radial_profile(const RevPartition& revs);

void write_rev_stats_csv(const RevPartition& revs, const std::filesystem::path& file);
void write_growth_curves_csv(const std::vector<GrowthCurve>& curves, const std::filesystem::path& file);

// ---------------------------------------------------------------------------

template <class F>
void RevPartition::for_each_piece(const Vec3& a, const Vec3& b, F&& f) const {
  std::vector<double> cuts{0.0, 1.0};
  for (int k = 0; k < 3; ++k) {
    const double d = b[k] - a[k];
    if (d == 0.0) continue;
    for (int i = 0; i <= counts_[static_cast<std::size_t>(k)]; ++i) {
      const double plane = domain_.lo[k] + i * edge_[k];
      const double t = (plane - a[k]) / d;
      if (t > 0.0 && t < 1.0) cuts.push_back(t);
    }
  }
  std::sort(cuts.begin(), cuts.end());
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    const double t0 = cuts[k], t1 = cuts[k + 1];
    if (t1 <= t0) continue;
    const int id = rev_of(a + 0.5 * (t0 + t1) * (b - a));
    if (id >= 0) f(id, t0, t1);
  }
}

}  // namespace vasoperf
