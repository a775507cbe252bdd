#include <doctest.h>

#include "vasoperf/coupling.hpp"
#include "vasoperf/errors.hpp"

#include <cmath>
#include <map>
#include <random>

using namespace vasoperf;

namespace {

VesselNetwork line(const Vec3& a, const Vec3& b, int pieces = 1, double radius = 5.0) {
  std::vector<Vec3> pos;
  std::vector<SegmentSpec> segs;
  for (int i = 0; i <= pieces; ++i) pos.push_back(a + (static_cast<double>(i) / pieces) * (b - a));
  for (int i = 0; i < pieces; ++i) segs.push_back({i, i + 1, radius});
  return VesselNetwork(pos, {}, segs);
}

std::vector<int> all_segments(const VesselNetwork& n) {
  std::vector<int> s(n.n_segments());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<int>(i);
  return s;
}

// Tiling: per owner, sorted intervals cover [-1,1] without gaps or overlaps.
void check_tiling(const VesselNetwork& net, const std::vector<IntegrationSegment>& segs) {
  std::map<int, std::vector<std::pair<double, double>>> by_owner;
  std::map<int, double> len;
  for (const auto& s : segs) {
    CHECK(s.xi_a < s.xi_b);
    by_owner[s.owner].push_back({s.xi_a, s.xi_b});
    len[s.owner] += s.length;
  }
  for (auto& [owner, iv] : by_owner) {
    std::sort(iv.begin(), iv.end());
    CHECK(iv.front().first == -1.0);
    CHECK(iv.back().second == 1.0);
    for (std::size_t k = 0; k + 1 < iv.size(); ++k) CHECK(iv[k].second == iv[k + 1].first);
    CHECK(std::abs(len[owner] - net.segment(owner).length) <= 1e-10 * net.segment(owner).length);
  }
  CHECK(by_owner.size() == net.n_segments());
}

DofMap vascular_dofs(const TissueMesh& m) { return DofMap::from_mask(m.vascular_node_mask()); }

}  // namespace

TEST_CASE("segment inside one element spans [-1,1]") {
  const auto mesh = build_box_mesh(Box3{Vec3::Zero(), Vec3::Constant(100.0)}, {2, 2, 2}, 1.0, 1.0);
  const auto net = line(Vec3(10, 10, 10), Vec3(40, 30, 20));
  const auto segs = build_segments(net, {0}, mesh);
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].xi_a == -1.0);
  CHECK(segs[0].xi_b == 1.0);
  CHECK(segs[0].gauss.size() == 3);
  for (const auto& gp : segs[0].gauss) {
    CHECK((mesh.map(segs[0].host, gp.host_xi) - gp.x).norm() < 1e-10);
    CHECK(mesh.inverse_map(segs[0].host, gp.x).has_value());
  }
}

TEST_CASE("segment crossing one face splits at the analytic intersection") {
  const auto mesh = build_box_mesh(Box3{Vec3::Zero(), Vec3::Constant(100.0)}, {2, 2, 2}, 1.0, 1.0);
  // crosses the plane x = 50 at parameter t = (50-20)/(90-20)
  const Vec3 a(20, 10, 10), b(90, 40, 30);
  const auto net = line(a, b);
  const auto segs = build_segments(net, {0}, mesh);
  REQUIRE(segs.size() == 2);
  const double t = 30.0 / 70.0;
  CHECK(segs[0].xi_b == doctest::Approx(2 * t - 1).epsilon(1e-14));
  CHECK(segs[0].length == doctest::Approx(t * (b - a).norm()).epsilon(1e-13));
  CHECK(segs[0].length + segs[1].length == doctest::Approx((b - a).norm()).epsilon(1e-14));
  check_tiling(net, segs);
}

TEST_CASE("segment along a mesh edge is assigned deterministically") {
  const auto mesh = build_box_mesh(Box3{Vec3::Zero(), Vec3::Constant(90.0)}, {3, 3, 3}, 1.0, 1.0);
  // lies on the edge shared by four elements at y = z = 30
  const auto net = line(Vec3(5, 30, 30), Vec3(85, 30, 30), 2);
  const auto segs = build_segments(net, all_segments(net), mesh);
  check_tiling(net, segs);
  for (const auto& s : segs) {
    // the lowest-id element touching the edge at that x
    const Vec3 mid = net.node(net.segment(s.owner).node_a).position +
                     0.25 * (s.xi_a + s.xi_b + 2.0) * (net.node(net.segment(s.owner).node_b).position -
                                                       net.node(net.segment(s.owner).node_a).position);
    const auto loc = mesh.locate(mid);
    REQUIRE(loc);
    CHECK(loc->element == s.host);
  }
  const auto again = build_segments(net, all_segments(net), mesh);
  REQUIRE(again.size() == segs.size());
  for (std::size_t k = 0; k < segs.size(); ++k) CHECK(again[k].host == segs[k].host);
}

TEST_CASE("segment leaving the mesh raises a geometry error naming it") {
  const auto mesh = build_box_mesh(Box3{Vec3::Zero(), Vec3::Constant(90.0)}, {3, 3, 3}, 1.0, 1.0);
  const auto net = line(Vec3(10, 10, 10), Vec3(120, 10, 10), 3);
  try {
    build_segments(net, all_segments(net), mesh);
    FAIL("expected GeometryError");
  } catch (const GeometryError& e) {
    CHECK(std::string(e.what()).find("1D element 2") != std::string::npos);
  }
}

TEST_CASE("line exchange blocks: zeroth moment, mass entries, transpose") {
  const auto mesh = build_box_mesh(Box3{Vec3::Zero(), Vec3::Constant(100.0)}, {4, 3, 5}, 1.0, 1.0);
  const Vec3 a(3, 7, 11), b(91, 83, 77);
  const auto net = line(a, b);
  const double len = (b - a).norm();
  const auto segs = build_segments(net, {0}, mesh);
  const double c = 0.37;
  const auto bl = assemble_line_exchange(segs, net, mesh, [&](int) { return c; }, DofMap::identity(2),
                                         DofMap::identity(mesh.n_nodes()));
  CHECK(Eigen::MatrixXd(bl.b11).sum() == doctest::Approx(c * len).epsilon(1e-12));
  CHECK(Eigen::MatrixXd(bl.b13).sum() == doctest::Approx(c * len).epsilon(1e-12));
  CHECK(Eigen::MatrixXd(bl.b33).sum() == doctest::Approx(c * len).epsilon(1e-12));
  CHECK(bl.load1.sum() == doctest::Approx(c * len).epsilon(1e-12));
  CHECK(bl.load3.sum() == doctest::Approx(c * len).epsilon(1e-12));
  const Eigen::MatrixXd d11(bl.b11);
  CHECK(d11(0, 0) == doctest::Approx(c * len / 3.0).epsilon(1e-12));
  CHECK(d11(1, 1) == doctest::Approx(c * len / 3.0).epsilon(1e-12));
  CHECK(d11(0, 1) == doctest::Approx(c * len / 6.0).epsilon(1e-12));
  CHECK((Eigen::MatrixXd(bl.b31) - Eigen::MatrixXd(bl.b13).transpose()).cwiseAbs().maxCoeff() == 0.0);
  const Eigen::MatrixXd d33(bl.b33);
  CHECK((d33 - d33.transpose()).cwiseAbs().maxCoeff() < 1e-14 * d33.cwiseAbs().maxCoeff());
}

TEST_CASE("mortar operators: partition-of-unity row sums on non-matching pairs") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(2.0, 118.0);
  const std::array<std::array<int, 3>, 3> res{{{3, 4, 5}, {7, 7, 7}, {5, 9, 6}}};
  for (int pair = 0; pair < 3; ++pair) {
    const auto mesh = build_box_mesh(Box3{Vec3::Zero(), Vec3::Constant(120.0)}, res[static_cast<std::size_t>(pair)], 2.0, 1.3);
    // random polyline, refined differently per pair
    std::vector<Vec3> pos;
    std::vector<SegmentSpec> segs;
    for (int i = 0; i < 12; ++i) pos.emplace_back(u(rng), u(rng), u(rng));
    for (int i = 0; i + 1 < 12; ++i) segs.push_back({i, i + 1, 4.0});
    const auto net = subdivide(VesselNetwork(pos, {}, segs), 7.0 + 9.0 * pair);
    const auto is = build_segments(net, all_segments(net), mesh);
    check_tiling(net, is);
    const auto ops = assemble_mortar(is, net, mesh, DofMap::identity(net.n_nodes()), vascular_dofs(mesh));
    const Eigen::VectorXd rd = ops.d * Eigen::VectorXd::Ones(ops.d.cols());
    const Eigen::VectorXd rm = ops.m * Eigen::VectorXd::Ones(ops.m.cols());
    double worst = 0.0;
    for (long j = 0; j < ops.kappa.size(); ++j) {
      CHECK(ops.kappa[j] > 0.0);
      worst = std::max({worst, std::abs(rd[j] - ops.kappa[j]) / ops.kappa[j], std::abs(rm[j] - ops.kappa[j]) / ops.kappa[j]});
    }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("weighted gap: matching fields, translation invariance, multipliers") {
  const auto mesh = build_box_mesh(Box3{Vec3::Zero(), Vec3::Constant(100.0)}, {5, 4, 6}, 1.5, 1.2);
  const auto net = subdivide(line(Vec3(4, 9, 13), Vec3(95, 88, 71)), 10.0);
  const auto is = build_segments(net, all_segments(net), mesh);
  const DofMap d3 = vascular_dofs(mesh);
  const auto ops = assemble_mortar(is, net, mesh, DofMap::identity(net.n_nodes()), d3);
  auto field = [](const Vec3& p) { return 1000.0 + 3.0 * p.x() - 2.0 * p.y() + 0.5 * p.z(); };
  Eigen::VectorXd p1(static_cast<long>(net.n_nodes())), p3(d3.size);
  for (const auto& n : net.nodes()) p1[n.id] = field(n.position);
  for (std::size_t i = 0; i < mesh.n_nodes(); ++i)
    if (d3[static_cast<int>(i)] >= 0) p3[d3[static_cast<int>(i)]] = field(mesh.nodes()[i]);
  const Eigen::VectorXd g = weighted_gap(ops, p1, p3);
  CHECK((g.array() / ops.kappa.array()).abs().maxCoeff() < 1e-10);

  const Eigen::VectorXd c1 = Eigen::VectorXd::Constant(p1.size(), 321.0), c3 = Eigen::VectorXd::Constant(p3.size(), 321.0);
  CHECK((weighted_gap(ops, c1, c3).array() / ops.kappa.array()).abs().maxCoeff() < 1e-10);
  CHECK(weighted_gap(ops, 0 * c1, 0 * c3).cwiseAbs().maxCoeff() == 0.0);

  Eigen::VectorXd q1 = Eigen::VectorXd::Random(p1.size()) * 100.0, q3 = Eigen::VectorXd::Random(p3.size()) * 100.0;
  const Eigen::VectorXd g0 = weighted_gap(ops, q1, q3);
  const Eigen::VectorXd gs = weighted_gap(ops, q1 + 55.0 * Eigen::VectorXd::Ones(p1.size()), q3 + 55.0 * Eigen::VectorXd::Ones(p3.size()));
  CHECK((g0 - gs).cwiseAbs().maxCoeff() < 1e-9 * g0.cwiseAbs().maxCoeff());

  CHECK(recover_multipliers(ops, 100.0, Eigen::VectorXd::Zero(g0.size())).cwiseAbs().maxCoeff() == 0.0);
  const Eigen::VectorXd l1 = recover_multipliers(ops, 100.0, g0), l2 = recover_multipliers(ops, 200.0, g0);
  CHECK((l2 - 2.0 * l1).cwiseAbs().maxCoeff() < 1e-12 * l2.cwiseAbs().maxCoeff());
  CHECK_THROWS_AS(recover_multipliers(ops, 0.0, g0), ConfigError);
  CHECK_THROWS_AS(weighted_gap(ops, p1.head(2), p3), ContractError);
}

TEST_CASE("scaled gap is independent of the 1D resolution") {
  const auto mesh = build_box_mesh(Box3{Vec3::Zero(), Vec3::Constant(100.0)}, {6, 6, 6}, 1.0, 1.0);
  const DofMap d3 = vascular_dofs(mesh);
  auto f3 = [](const Vec3& p) { return 4.0 * p.x() - 1.5 * p.z(); };
  Eigen::VectorXd p3(d3.size);
  for (std::size_t i = 0; i < mesh.n_nodes(); ++i)
    if (d3[static_cast<int>(i)] >= 0) p3[d3[static_cast<int>(i)]] = f3(mesh.nodes()[i]);
  std::vector<double> means;
  for (double h : {10.0, 5.0}) {
    const auto net = subdivide(line(Vec3(5, 47, 52), Vec3(95, 47, 52)), h);
    const auto is = build_segments(net, all_segments(net), mesh);
    const auto ops = assemble_mortar(is, net, mesh, DofMap::identity(net.n_nodes()), d3);
    // 1D pressure offset by 10 Pa against a linear 3D field
    Eigen::VectorXd p1(static_cast<long>(net.n_nodes()));
    for (const auto& n : net.nodes()) p1[n.id] = f3(n.position) + 10.0;
    const Eigen::VectorXd sg = weighted_gap(ops, p1, p3).array() / ops.kappa.array();
    CHECK((sg.array() - 10.0).abs().maxCoeff() < 1e-9);
    means.push_back(sg.mean());
  }
  CHECK(means[0] == doctest::Approx(means[1]).epsilon(1e-12));
}
