#include "vasoperf/rev.hpp"

#include "vasoperf/errors.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace vasoperf {

VesselContent& VesselContent::operator+=(const VesselContent& o) {
  length_small += o.length_small;
  length_large += o.length_large;
  volume_small += o.volume_small;
  volume_large += o.volume_large;
  surface_small += o.surface_small;
  surface_large += o.surface_large;
  return *this;
}

namespace {

void add_piece(VesselContent& c, const VesselNetwork& net, const VesselSegment& s, double len) {
  const double vol = std::numbers::pi * s.radius * s.radius * len;
  const double surf = 2.0 * std::numbers::pi * s.radius * len;
  if (net.is_large(s.id)) {
    c.length_large += len;
    c.volume_large += vol;
    c.surface_large += surf;
  } else {
    c.length_small += len;
    c.volume_small += vol;
    c.surface_small += surf;
  }
}

}  // namespace

VesselContent clip_content(const VesselNetwork& net, const Box3& box) {
  VesselContent c;
  for (const auto& s : net.segments()) {
    const auto t = clip_segment(net.node(s.node_a).position, net.node(s.node_b).position, box);
    if (t) add_piece(c, net, s, (t->second - t->first) * s.length);
  }
  return c;
}

std::vector<GrowthCurve> grow_probe_cubes(const VesselNetwork& net, const Box3& domain, std::uint64_t seed,
                                          const GrowthOptions& opt) {
  if (!domain.valid()) throw ConfigError("growth domain must have positive extent");
  if (opt.n_centers < 1 || opt.max_steps < 1 || !(opt.initial_fraction > 0.0))
    throw ConfigError("growth options must be positive");
  std::mt19937_64 rng(seed);
  const Vec3 ext = domain.extent();
  const double step = opt.initial_fraction * ext.maxCoeff();
  std::vector<GrowthCurve> curves;
  for (int c = 0; c < opt.n_centers; ++c) {
    GrowthCurve curve;
    for (int k = 0; k < 3; ++k) {
      std::uniform_real_distribution<double> u(domain.lo[k] + 0.15 * ext[k], domain.hi[k] - 0.15 * ext[k]);
      curve.center[k] = u(rng);
    }
    for (int n = 1; n <= opt.max_steps; ++n) {
      const double half = 0.5 * n * step;
      const Box3 cube{curve.center - Vec3::Constant(half), curve.center + Vec3::Constant(half)};
      const auto clipped = intersect(cube, domain);
      if (!clipped) continue;
      const double vol = clipped->volume();
      const VesselContent content = clip_content(net, *clipped);
      curve.points.push_back({std::cbrt(vol), content.volume_small / vol, content.surface_small / vol});
      if (clipped->lo == domain.lo && clipped->hi == domain.hi) break;
    }
    curves.push_back(std::move(curve));
  }
  return curves;
}

namespace {

bool stable_from(const GrowthCurve& c, std::size_t k, const RevSelection& sel) {
  const std::size_t end = k + static_cast<std::size_t>(sel.window);
  if (end >= c.points.size()) return false;
  double lo = c.points[k].vf_small, hi = lo, sum = 0.0;
  for (std::size_t i = k; i <= end; ++i) {
    lo = std::min(lo, c.points[i].vf_small);
    hi = std::max(hi, c.points[i].vf_small);
    sum += c.points[i].vf_small;
  }
  const double mean = sum / static_cast<double>(end - k + 1);
  if (mean == 0.0) return false;
  return (hi - lo) / std::abs(mean) < sel.tolerance;
}

}  // namespace

double select_rev_length(const std::vector<GrowthCurve>& curves, const RevSelection& sel) {
  if (curves.size() < 3) throw ContractError("REV selection needs at least three growth curves");
  if (sel.window < 1 || !(sel.tolerance > 0.0) || !(sel.fraction > 0.0 && sel.fraction <= 1.0))
    throw ConfigError("invalid REV selection rule");
  std::vector<double> candidates;
  for (const auto& c : curves)
    for (const auto& p : c.points) candidates.push_back(p.l);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  const auto needed = static_cast<std::size_t>(std::ceil(sel.fraction * static_cast<double>(curves.size()) - 1e-9));
  for (double l : candidates) {
    std::size_t stable = 0;
    for (const auto& c : curves) {
      const auto it = std::lower_bound(c.points.begin(), c.points.end(), l,
                                       [](const GrowthPoint& p, double v) { return p.l < v; });
      if (it == c.points.end()) continue;
      if (stable_from(c, static_cast<std::size_t>(it - c.points.begin()), sel)) ++stable;
    }
    if (stable >= needed) return l;
  }
  throw GeometryError("small-vessel volume fraction does not stabilize in the growth curves; use a larger domain");
}

double plateau_volume_fraction(const std::vector<GrowthCurve>& curves, double l_rev) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : curves)
    for (const auto& p : c.points)
      if (p.l >= l_rev) {
        sum += p.vf_small;
        ++n;
      }
  if (n == 0) throw ContractError("no growth points beyond the REV length");
  return sum / static_cast<double>(n);
}

RevPartition::RevPartition(const Box3& domain, double l_rev) : domain_(domain), l_rev_(l_rev) {
  if (!domain.valid()) throw ConfigError("REV domain must have positive extent");
  if (!(l_rev > 0.0)) throw ConfigError("REV length must be positive");
  const Vec3 ext = domain.extent();
  if (l_rev > ext.minCoeff() * (1.0 + 1e-12))
    throw ConfigError("REV length exceeds the smallest domain extent");
  for (int k = 0; k < 3; ++k) {
    counts_[static_cast<std::size_t>(k)] = std::max(1, static_cast<int>(std::lround(ext[k] / l_rev)));
    edge_[k] = ext[k] / counts_[static_cast<std::size_t>(k)];
  }
  const Vec3 center = domain.center();
  for (int k = 0; k < counts_[2]; ++k)
    for (int j = 0; j < counts_[1]; ++j)
      for (int i = 0; i < counts_[0]; ++i) {
        Rev r;
        r.id = static_cast<int>(revs_.size());
        r.cell = {i, j, k};
        r.box.lo = domain.lo + Vec3(i * edge_.x(), j * edge_.y(), k * edge_.z());
        r.box.hi = r.box.lo + edge_;
        // snap the outer faces to the domain
        if (i == counts_[0] - 1) r.box.hi.x() = domain.hi.x();
        if (j == counts_[1] - 1) r.box.hi.y() = domain.hi.y();
        if (k == counts_[2] - 1) r.box.hi.z() = domain.hi.z();
        r.volume = r.box.volume();
        const Vec3 d = r.box.center() - center;
        r.r_tilde = d.norm() == 0.0 ? 0.0 : 1.0 / ray_exit_distance(center, d, domain);
        revs_.push_back(r);
      }
}

int RevPartition::cell_index(int axis, double x) const {
  const double slack = 1e-9 * edge_[axis];
  if (x < domain_.lo[axis] - slack || x > domain_.hi[axis] + slack) return -1;
  const int n = counts_[static_cast<std::size_t>(axis)];
  const int i = static_cast<int>(std::floor((x - domain_.lo[axis]) / edge_[axis]));
  return std::clamp(i, 0, n - 1);
}

int RevPartition::rev_of(const Vec3& p) const {
  const int i = cell_index(0, p.x()), j = cell_index(1, p.y()), k = cell_index(2, p.z());
  if (i < 0 || j < 0 || k < 0) return -1;
  return (k * counts_[1] + j) * counts_[0] + i;
}

void RevPartition::compute_statistics(const VesselNetwork& net) {
  for (auto& r : revs_) r.content = VesselContent{};
  for (const auto& s : net.segments()) {
    const Vec3& a = net.node(s.node_a).position;
    const Vec3& b = net.node(s.node_b).position;
    for_each_piece(a, b, [&](int id, double t0, double t1) {
      add_piece(revs_[static_cast<std::size_t>(id)].content, net, s, (t1 - t0) * s.length);
    });
  }
  for (auto& r : revs_) {
    r.vf_small = r.content.volume_small / r.volume;
    r.vf_large = r.content.volume_large / r.volume;
    r.vf_total = r.vf_small + r.vf_large;
    r.sv_small = r.content.surface_small / r.volume;
  }
}

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ContractError("fit_line: size mismatch");
  if (x.size() < 2) throw ContractError("linear fit needs at least two points");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw ContractError("linear fit needs spread in x");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  return f;
}

RadialProfile radial_profile(const RevPartition& revs) {
  if (revs.size() < 2) throw ContractError("radial profile needs at least two REVs");
  RadialProfile p;
  for (const auto& r : revs.revs()) {
    p.r_tilde.push_back(r.r_tilde);
    p.vf_large.push_back(r.vf_large);
    p.vf_small.push_back(r.vf_small);
    p.vf_total.push_back(r.vf_total);
  }
  p.fit_large = fit_line(p.r_tilde, p.vf_large);
  p.fit_small = fit_line(p.r_tilde, p.vf_small);
  p.fit_total = fit_line(p.r_tilde, p.vf_total);
  return p;
}

void write_rev_stats_csv(const RevPartition& revs, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot write " + file.string());
  out.precision(17);
  out << "rev_id,cx,cy,cz,volume,vf_small,vf_large,vf_total,sv_small,r_tilde\n";
  for (const auto& r : revs.revs()) {
    const Vec3 c = r.box.center();
    out << r.id << ',' << c.x() << ',' << c.y() << ',' << c.z() << ',' << r.volume << ',' << r.vf_small << ','
        << r.vf_large << ',' << r.vf_total << ',' << r.sv_small << ',' << r.r_tilde << '\n';
  }
}

void write_growth_curves_csv(const std::vector<GrowthCurve>& curves, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot write " + file.string());
  out.precision(17);
  out << "curve,step,cx,cy,cz,l,vf_small,sv_small\n";
  for (std::size_t c = 0; c < curves.size(); ++c)
    for (std::size_t k = 0; k < curves[c].points.size(); ++k) {
      const auto& p = curves[c].points[k];
      out << c << ',' << k << ',' << curves[c].center.x() << ',' << curves[c].center.y() << ','
          << curves[c].center.z() << ',' << p.l << ',' << p.vf_small << ',' << p.sv_small << '\n';
    }
}

}  // namespace vasoperf
