#include <doctest.h>

#include "vasoperf/errors.hpp"
#include "vasoperf/rev.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

using namespace vasoperf;

namespace {

VesselNetwork all_small(const VesselNetwork& net) {
  return net.with_partition(std::vector<VesselClass>(net.n_segments(), VesselClass::small));
}

VesselNetwork lattice(double edge, double pitch, double radius, double sparsity = 0.0, std::uint64_t seed = 1) {
  GeneratorSpec spec;
  spec.kind = GeneratorKind::lattice;
  spec.box = Box3{Vec3::Zero(), Vec3::Constant(edge)};
  spec.pitch = pitch;
  spec.radius = radius;
  spec.center_sparsity = sparsity;
  spec.max_segment_length = 1e9;
  return all_small(generate_synthetic_network(spec, seed));
}

double total_volume(const VesselNetwork& net) {
  double v = 0.0;
  for (const auto& s : net.segments()) v += std::numbers::pi * s.radius * s.radius * s.length;
  return v;
}

}  // namespace

TEST_CASE("clipped content of the whole domain equals the network content") {
  const auto net = lattice(400.0, 80.0, 4.0);
  const auto c = clip_content(net, Box3{Vec3::Zero(), Vec3::Constant(400.0)});
  CHECK(c.volume_small == doctest::Approx(total_volume(net)).epsilon(1e-12));
  CHECK(c.volume_large == 0.0);
  // full lattice lines: three axes, (400/80)² lines each
  CHECK(c.length_small == doctest::Approx(3 * 25 * 400.0).epsilon(1e-12));
  CHECK(c.surface_small == doctest::Approx(2.0 * std::numbers::pi * 4.0 * c.length_small).epsilon(1e-12));
}

TEST_CASE("growth curves reach the lattice volume fraction") {
  const double a = 80.0, r = 4.0;
  const auto net = lattice(800.0, a, r);
  const Box3 domain{Vec3::Zero(), Vec3::Constant(800.0)};
  const auto curves = grow_probe_cubes(net, domain, 7);
  REQUIRE(curves.size() == 20);
  for (const auto& c : curves) {
    CHECK((c.center.array() >= 120.0).all());
    CHECK((c.center.array() <= 680.0).all());
    REQUIRE(!c.points.empty());
    for (std::size_t k = 1; k < c.points.size(); ++k) CHECK(c.points[k].l > c.points[k - 1].l);
    CHECK(c.points.back().l <= 800.0 + 1e-9);
  }
  // cubes aligned with n whole lattice cells hold the exact fraction, so the
  // plateau sets in near one pitch
  const double l_rev = select_rev_length(curves);
  CHECK(std::abs(l_rev - a) <= 2.0 * a);
  // a longer window can only delay stability
  RevSelection long_window;
  long_window.window = 5;
  CHECK(select_rev_length(curves, long_window) >= l_rev);
  const double plateau = plateau_volume_fraction(curves, l_rev);
  CHECK(std::abs(plateau / (3.0 * std::numbers::pi * r * r / (a * a)) - 1.0) < 0.02);

  SUBCASE("growth stops once the cube covers the domain") {
    GrowthOptions opt;
    opt.n_centers = 3;
    opt.max_steps = 10000;
    for (const auto& c : grow_probe_cubes(net, domain, 7, opt)) {
      CHECK(c.points.back().l == doctest::Approx(800.0));
      CHECK(c.points.back().vf_small == doctest::Approx(3.0 * std::numbers::pi * r * r / (a * a)).epsilon(1e-12));
      CHECK(c.points.size() < 600);
    }
  }
  SUBCASE("same seed, same centers") {
    const auto again = grow_probe_cubes(net, domain, 7);
    for (std::size_t i = 0; i < curves.size(); ++i) CHECK(again[i].center == curves[i].center);
    const auto other = grow_probe_cubes(net, domain, 8);
    CHECK(other[0].center != curves[0].center);
  }
}

TEST_CASE("REV selection rule") {
  auto flat = [](double value, int n) {
    GrowthCurve c;
    for (int k = 1; k <= n; ++k) c.points.push_back({10.0 * k, value, 0.0});
    return c;
  };
  SUBCASE("too few curves") {
    std::vector<GrowthCurve> two{flat(0.1, 10), flat(0.1, 10)};
    CHECK_THROWS_AS(select_rev_length(two), ContractError);
  }
  SUBCASE("constant curves are stable at the first point") {
    std::vector<GrowthCurve> cs{flat(0.1, 10), flat(0.2, 10), flat(0.3, 10)};
    CHECK(select_rev_length(cs) == 10.0);
  }
  SUBCASE("zero mean is unstable") {
    std::vector<GrowthCurve> cs{flat(0.0, 10), flat(0.0, 10), flat(0.0, 10)};
    CHECK_THROWS_AS(select_rev_length(cs), GeometryError);
  }
  SUBCASE("a late step settles the selection") {
    // values alternate until l = 50, then stay within 5%
    std::vector<GrowthCurve> cs;
    for (int i = 0; i < 5; ++i) {
      GrowthCurve c;
      for (int k = 1; k <= 12; ++k) c.points.push_back({10.0 * k, k < 5 ? (k % 2 ? 0.1 : 0.3) : 0.2 + 0.001 * k, 0.0});
      cs.push_back(c);
    }
    CHECK(select_rev_length(cs) == 50.0);
  }
  SUBCASE("white noise never stabilizes") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<GrowthCurve> cs(5);
    for (auto& c : cs)
      for (int k = 1; k <= 100; ++k) c.points.push_back({1.0 * k, u(rng), 0.0});
    CHECK_THROWS_AS(select_rev_length(cs), GeometryError);
  }
}

TEST_CASE("REV partition conserves vessel content") {
  const Box3 domain{Vec3::Zero(), Vec3(300.0, 300.0, 300.0)};
  const RevPartition part(domain, 100.0);
  REQUIRE(part.size() == 27);
  for (const auto& r : part.revs()) CHECK(r.volume == doctest::Approx(1e6).epsilon(1e-12));
  CHECK(part.rev_of(Vec3(0.0, 0.0, 0.0)) == 0);
  CHECK(part.rev_of(Vec3(300.0, 300.0, 300.0)) == 26);
  CHECK(part.rev_of(Vec3(100.0, 0.0, 0.0)) == 1);  // shared faces go to the upper cell
  CHECK(part.rev_of(Vec3(301.0, 0.0, 0.0)) == -1);
  CHECK(part.rev(13).r_tilde == 0.0);
  CHECK(part.rev(0).r_tilde == doctest::Approx(2.0 / 3.0));

  SUBCASE("random segments") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 300.0);
    std::vector<Vec3> pos;
    std::vector<SegmentSpec> segs;
    for (int i = 0; i < 200; ++i) {
      pos.emplace_back(u(rng), u(rng), u(rng));
      pos.emplace_back(u(rng), u(rng), u(rng));
      segs.push_back({2 * i, 2 * i + 1, 3.0});
    }
    const auto net = all_small(VesselNetwork(pos, {}, segs));
    RevPartition p = part;
    p.compute_statistics(net);
    VesselContent sum;
    for (const auto& r : p.revs()) sum += r.content;
    CHECK(std::abs(sum.volume_small / total_volume(net) - 1.0) < 1e-9);
    // each piece agrees with direct clipping against the REV box
    for (const auto& r : p.revs()) {
      const auto direct = clip_content(net, r.box);
      CHECK(r.content.length_small == doctest::Approx(direct.length_small).epsilon(1e-9));
    }
  }
  SUBCASE("segments lying on REV faces are counted once") {
    const auto net = lattice(300.0, 100.0, 2.0);  // lines at 50, 150, 250
    std::vector<Vec3> pos{{0.0, 100.0, 100.0}, {300.0, 100.0, 100.0}, {100.0, 0.0, 200.0}, {100.0, 300.0, 200.0}};
    const auto faces = all_small(VesselNetwork(pos, {}, {{0, 1, 2.0}, {2, 3, 2.0}}));
    RevPartition p = part;
    p.compute_statistics(faces);
    VesselContent sum;
    for (const auto& r : p.revs()) sum += r.content;
    CHECK(sum.length_small == doctest::Approx(600.0).epsilon(1e-12));
    p.compute_statistics(net);
    for (const auto& r : p.revs()) CHECK(r.vf_small == doctest::Approx(3.0 * std::numbers::pi * 4.0 / 1e4).epsilon(1e-12));
  }
}

TEST_CASE("REV grid edges") {
  const RevPartition small(Box3{Vec3::Zero(), Vec3::Constant(10.0)}, 3.3);
  CHECK(small.size() == 27);
  for (const auto& r : small.revs()) CHECK(r.volume == doctest::Approx(1000.0 / 27.0).epsilon(1e-12));

  // extents within 5% of multiples of l_REV
  const double l_rev = 100.0;
  const RevPartition p(Box3{Vec3::Zero(), Vec3(304.0, 196.0, 412.0)}, l_rev);
  CHECK(p.counts() == std::array<int, 3>{3, 2, 4});
  double total = 0.0;
  for (const auto& r : p.revs()) {
    total += r.volume;
    for (int k = 0; k < 3; ++k) CHECK(std::abs(r.box.extent()[k] / l_rev - 1.0) < 0.05);
  }
  CHECK(std::abs(total / p.domain().volume() - 1.0) < 1e-12);
  CHECK_THROWS_AS(RevPartition(Box3{Vec3::Zero(), Vec3(100.0, 100.0, 50.0)}, 60.0), ConfigError);
}

TEST_CASE("radial profile") {
  SUBCASE("uniform lattice: flat profile") {
    const auto net = lattice(480.0, 80.0, 4.0);
    RevPartition p(Box3{Vec3::Zero(), Vec3::Constant(480.0)}, 160.0);
    p.compute_statistics(net);
    const auto prof = radial_profile(p);
    CHECK(std::abs(prof.fit_small.slope) < 1e-12);
    CHECK(prof.fit_total.intercept == doctest::Approx(3.0 * std::numbers::pi * 16.0 / 6400.0).epsilon(1e-12));
  }
  SUBCASE("central rarefaction: positive slope") {
    const auto net = lattice(480.0, 40.0, 2.0, 0.8, 9);
    RevPartition p(Box3{Vec3::Zero(), Vec3::Constant(480.0)}, 96.0);
    p.compute_statistics(net);
    CHECK(radial_profile(p).fit_small.slope > 0.0);
  }
  SUBCASE("a single REV has no profile") {
    RevPartition p(Box3{Vec3::Zero(), Vec3::Constant(100.0)}, 100.0);
    CHECK_THROWS_AS(radial_profile(p), ContractError);
  }
  SUBCASE("fit_line") {
    const auto f = fit_line({0.0, 1.0, 2.0}, {1.0, 3.0, 5.0});
    CHECK(f.slope == doctest::Approx(2.0));
    CHECK(f.intercept == doctest::Approx(1.0));
    CHECK(f.r2 == doctest::Approx(1.0));
    CHECK_THROWS_AS(fit_line({1.0}, {1.0}), ContractError);
    CHECK_THROWS_AS(fit_line({1.0, 1.0}, {1.0, 2.0}), ContractError);
  }
}

TEST_CASE("REV CSV output") {
  RevPartition p(Box3{Vec3::Zero(), Vec3::Constant(200.0)}, 100.0);
  p.compute_statistics(lattice(200.0, 50.0, 2.0));
  const auto file = std::filesystem::temp_directory_path() / "vp_rev_stats.csv";
  write_rev_stats_csv(p, file);
  std::ifstream in(file);
  std::string header;
  std::getline(in, header);
  CHECK(header == "rev_id,cx,cy,cz,volume,vf_small,vf_large,vf_total,sv_small,r_tilde");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 8);
  std::filesystem::remove(file);
}
