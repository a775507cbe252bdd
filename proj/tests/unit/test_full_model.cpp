#include <doctest.h>

#include "vasoperf/errors.hpp"
#include "vasoperf/full_model.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <set>

using namespace vasoperf;

namespace {

constexpr double kHigh = 5999.4;
constexpr double kLow = 1999.8;

VesselNetwork axial_vessel(double p_left, double p_right, double h = 10.0, double radius = 6.0) {
  std::vector<Vec3> pos{Vec3(0, 50, 50), Vec3(100, 50, 50)};
  std::vector<NodeBc> bcs{NodeBc::pressure(p_left), NodeBc::pressure(p_right)};
  return subdivide(VesselNetwork(pos, bcs, {{0, 1, radius}}), h);
}

TissueMesh unit_box(std::array<int, 3> res = {6, 6, 6}, double enlargement = 2.0) {
  return build_box_mesh(Box3{Vec3::Zero(), Vec3::Constant(100.0)}, res, enlargement, 1.3);
}

VesselNetwork lattice_with_tips(double box, int dead_ends, std::array<bool, 6> faces) {
  GeneratorSpec spec;
  spec.kind = GeneratorKind::lattice;
  spec.box = Box3{Vec3::Zero(), Vec3::Constant(box)};
  spec.pitch = 80.0;
  spec.radius = 4.0;
  spec.stub_faces = faces;
  spec.interior_dead_ends = dead_ends;
  return generate_synthetic_network(spec, 3);
}

}  // namespace

TEST_CASE("Starling flux per length") {
  PhysicsParams p;
  // 2π·10·2.1e-5·(5999.4 − 0 − 0.82·666.6)
  CHECK(starling_flux_per_length(5999.4, 0.0, 10.0, p) == doctest::Approx(7.194784263400684).epsilon(1e-13));
  CHECK(starling_flux_per_length(p.oncotic_shift(), 0.0, 3.0, p) == doctest::Approx(0.0));
  CHECK_THROWS_AS(starling_flux_per_length(1.0, 0.0, 0.0, p), DomainError);
  PhysicsParams bad;
  bad.sigma = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("zero wall conductivity decouples the compartments") {
  PhysicsParams p;
  p.lp_vessel = 0.0;
  const auto net = axial_vessel(kHigh, kLow);
  const auto mesh = unit_box();
  const auto t0 = std::chrono::steady_clock::now();
  const auto sys = assemble_full_system(net, mesh, p);
  const auto sol = solve_full(sys, net, mesh, p);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& n : net.nodes()) {
    const double expected = kHigh + (kLow - kHigh) * n.position.x() / 100.0;
    CHECK(std::abs(sol.p_vessel[n.id] - expected) < 1e-9);
  }
  CHECK(sol.p_if.cwiseAbs().maxCoeff() < 1e-9);
  CHECK(sol.total_leakage == 0.0);
  CHECK(secs < 5.0);
}

TEST_CASE("assembled blocks are consistent with the scaled symmetric system") {
  PhysicsParams p;
  const auto net = axial_vessel(kHigh, kLow);
  const auto mesh = unit_box({4, 5, 3});
  const auto sys = assemble_full_system(net, mesh, p);
  const Eigen::MatrixXd a(sys.a);
  CHECK((a - a.transpose()).cwiseAbs().maxCoeff() < 1e-12 * a.cwiseAbs().maxCoeff());
  const double ratio = p.density_ratio();
  const Eigen::MatrixXd top = ratio * a.topRows(sys.n1);
  CHECK((top.leftCols(sys.n1) - Eigen::MatrixXd(sys.k11)).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((top.rightCols(sys.n3) - Eigen::MatrixXd(sys.g13)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((ratio * sys.b.head(sys.n1) - sys.f1).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((sys.b.tail(sys.n3) - sys.f3).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mass balance and vessel-side conservation") {
  PhysicsParams p;
  const auto base = lattice_with_tips(240.0, 0, {true, true, false, false, false, false});
  std::vector<NodeBc> bcs = base.bcs();
  for (const auto& n : base.nodes()) {
    if (base.degree(n.id) != 1) continue;
    bcs[static_cast<std::size_t>(n.id)] = NodeBc::pressure(n.position.x() < 120.0 ? kHigh : kLow);
  }
  const auto net = base.with_bcs(bcs);
  const auto mesh = build_box_mesh(Box3{Vec3::Zero(), Vec3::Constant(240.0)}, {10, 10, 10}, 2.0, 1.3);
  const auto sys = assemble_full_system(net, mesh, p);
  const auto sol = solve_full(sys, net, mesh, p);
  CHECK(sol.mass_balance_error < 1e-8);
  CHECK(sol.total_leakage > 0.0);

  // inflow through the pressure nodes equals the (density weighted) leakage
  const Eigen::VectorXd r1 = sys.k11 * sol.p_vessel + sys.g13 * sol.p_if - sys.f1;
  double inflow = 0.0;
  for (const auto& n : net.nodes())
    if (n.bc.type == BcType::pressure) inflow += r1[n.id];
  CHECK(inflow == doctest::Approx(p.density_ratio() * sol.total_leakage).epsilon(1e-8));

  const auto again = solve_full(assemble_full_system(net, mesh, p), net, mesh, p);
  CHECK((again.p_if - sol.p_if).cwiseAbs().maxCoeff() == 0.0);
  CHECK((again.p_vessel - sol.p_vessel).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mirror symmetry of the interstitial pressure") {
  PhysicsParams p;
  const auto net = axial_vessel(kHigh, kHigh);
  const auto mesh = unit_box({6, 6, 6});
  const auto sol = solve_full(assemble_full_system(net, mesh, p), net, mesh, p);
  std::map<std::array<long, 3>, int> index;
  auto key = [](const Vec3& x) {
    return std::array<long, 3>{std::lround(x.x() * 1e6), std::lround(x.y() * 1e6), std::lround(x.z() * 1e6)};
  };
  for (std::size_t i = 0; i < mesh.n_nodes(); ++i) index[key(mesh.nodes()[i])] = static_cast<int>(i);
  const double scale = sol.p_if.cwiseAbs().maxCoeff();
  REQUIRE(scale > 0.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < mesh.n_nodes(); ++i) {
    const Vec3& x = mesh.nodes()[i];
    const auto it = index.find(key(Vec3(100.0 - x.x(), x.y(), x.z())));
    REQUIRE(it != index.end());
    worst = std::max(worst, std::abs(sol.p_if[static_cast<long>(i)] - sol.p_if[it->second]));
  }
  CHECK(worst < 1e-9 * scale);
}

TEST_CASE("superposition without oncotic shift") {
  PhysicsParams p;
  p.sigma = 0.0;
  const auto mesh = unit_box({5, 5, 5});
  const auto a = axial_vessel(kHigh, 0.0);
  const auto b = axial_vessel(0.0, kLow);
  const auto ab = axial_vessel(kHigh, kLow);
  const auto sa = solve_full(assemble_full_system(a, mesh, p), a, mesh, p);
  const auto sb = solve_full(assemble_full_system(b, mesh, p), b, mesh, p);
  const auto sab = solve_full(assemble_full_system(ab, mesh, p), ab, mesh, p);
  CHECK((sa.p_if + sb.p_if - sab.p_if).cwiseAbs().maxCoeff() < 1e-9 * sab.p_if.cwiseAbs().maxCoeff());
  CHECK((sa.p_vessel + sb.p_vessel - sab.p_vessel).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("Starling equilibrium gives zero leakage") {
  PhysicsParams p;
  const double level = 3000.0;
  p.outer_pressure = level - p.oncotic_shift();
  const auto net = axial_vessel(level, level);
  const auto mesh = unit_box({4, 4, 4});
  const auto sol = solve_full(assemble_full_system(net, mesh, p), net, mesh, p);
  CHECK((sol.p_vessel.array() - level).abs().maxCoeff() < 1e-8);
  CHECK((sol.p_if.array() - p.outer_pressure).abs().maxCoeff() < 1e-8);
  for (double l : sol.leakage) CHECK(std::abs(l) < 1e-10);
}

TEST_CASE("unanchored network component is rejected before solving") {
  PhysicsParams p;
  std::vector<Vec3> pos{Vec3(10, 10, 10), Vec3(40, 10, 10), Vec3(10, 60, 60), Vec3(40, 60, 60)};
  std::vector<NodeBc> bcs{NodeBc::pressure(kHigh), NodeBc::pressure(kLow), NodeBc{}, NodeBc{}};
  const VesselNetwork net(pos, bcs, {{0, 1, 4.0}, {2, 3, 4.0}});
  CHECK_THROWS_AS(assemble_full_system(net, unit_box({3, 3, 3}), p), SingularSystemError);
}

TEST_CASE("full model on a 200-segment lattice is fast") {
  PhysicsParams p;
  auto base = lattice_with_tips(240.0, 0, {true, true, true, true, true, true});
  REQUIRE(base.n_segments() >= 200);
  std::vector<NodeBc> bcs = base.bcs();
  for (const auto& n : base.nodes())
    if (base.degree(n.id) == 1) bcs[static_cast<std::size_t>(n.id)] = NodeBc::pressure(n.position.z() < 1.0 ? kHigh : kLow);
  const auto net = base.with_bcs(bcs);
  const auto mesh = build_box_mesh(Box3{Vec3::Zero(), Vec3::Constant(240.0)}, {10, 10, 10}, 1.0, 1.0);
  const auto t0 = std::chrono::steady_clock::now();
  const auto sol = solve_full(assemble_full_system(net, mesh, p), net, mesh, p);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("200-segment lattice with 10^3 mesh: " << secs << " s, " << net.n_segments() << " segments");
  CHECK(secs < 5.0);
  CHECK(sol.mass_balance_error < 1e-8);
}

// ---------------------------------------------------------------------------
// boundary condition pipeline

TEST_CASE("boundary assignment counts on a 100-tip lattice") {
  const auto net = lattice_with_tips(400.0, 25, {true, false, true, false, true, false});
  const Box3 box{Vec3::Zero(), Vec3::Constant(400.0)};
  const auto tips = classify_tips(net, box);
  REQUIRE(tips.hull.size() == 75);
  REQUIRE(tips.interior.size() == 25);
  BcAssignmentConfig cfg;
  const auto a = assign_boundary_conditions(net, box, 11, cfg);
  CHECK(a.pressure_tips.size() == 5);
  CHECK(a.noflux_tips.size() == 33);
  CHECK(a.unknown_tips.size() == 62);
  int high = 0, low = 0;
  for (int t : a.pressure_tips) {
    const auto& bc = a.network.node(t).bc;
    high += bc.value == cfg.p_high;
    low += bc.value == cfg.p_low;
    CHECK(std::find(tips.hull.begin(), tips.hull.end(), t) != tips.hull.end());
  }
  CHECK(high >= 1);
  CHECK(low >= 1);
  CHECK(high + low == 5);
  for (int h : a.pressure_tips)
    for (int l : a.pressure_tips)
      if (a.network.node(h).bc.value == cfg.p_high && a.network.node(l).bc.value == cfg.p_low)
        CHECK((a.network.node(h).position - a.network.node(l).position).norm() >= cfg.proximity_radius);

  const auto b = assign_boundary_conditions(net, box, 11, cfg);
  CHECK(a.pressure_tips == b.pressure_tips);
  CHECK(a.noflux_tips == b.noflux_tips);

  BcAssignmentConfig inf = cfg;
  inf.proximity_radius = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(assign_boundary_conditions(net, box, 11, inf), ConfigError);
  BcAssignmentConfig many = cfg;
  many.frac_pressure = 0.9;
  many.frac_noflux = 0.05;
  CHECK_THROWS_WITH_AS(assign_boundary_conditions(net, box, 11, many), doctest::Contains("achievable fraction 0.75"),
                       ConfigError);
}

TEST_CASE("flow fit is a no-op without unknown tips") {
  std::vector<Vec3> pos{Vec3(0, 0, 0), Vec3(50, 0, 0), Vec3(100, 0, 0)};
  const VesselNetwork net(pos, {NodeBc::pressure(kHigh), NodeBc{}, NodeBc::pressure(kLow)}, {{0, 1, 5.0}, {1, 2, 5.0}});
  const auto out = optimize_unknown_boundaries(net, FlowTargets{});
  CHECK(out.sign_iterations == 0);
  CHECK(out.flow.pressure[1] == doctest::Approx(0.5 * (kHigh + kLow)));
  CHECK(out.network.node(1).bc.type == BcType::none);
}

TEST_CASE("flow fit on a chain matches a one-parameter brute-force search") {
  // pressure tip, four interior nodes with conservation, one unknown tip
  std::vector<Vec3> pos;
  for (int i = 0; i < 6; ++i) pos.emplace_back(60.0 * i, 0.0, 0.0);
  std::vector<NodeBc> bcs(6);
  bcs[0] = NodeBc::pressure(kHigh);
  const std::vector<double> radii{8.0, 6.0, 5.0, 7.0, 4.5};
  std::vector<SegmentSpec> segs;
  for (int i = 0; i < 5; ++i) segs.push_back({i, i + 1, radii[static_cast<std::size_t>(i)]});
  const VesselNetwork net(pos, bcs, segs);
  FlowTargets t;
  const auto out = optimize_unknown_boundaries(net, t);
  REQUIRE(out.signs_converged);

  std::vector<double> resist;
  for (const auto& s : net.segments()) resist.push_back(1.0 / segment_conductance(s));
  auto pressures = [&](double tip) {
    double total = 0.0;
    for (double r : resist) total += r;
    const double q = (kHigh - tip) / total;
    std::vector<double> pr{kHigh};
    for (double r : resist) pr.push_back(pr.back() - q * r);
    return pr;
  };
  std::vector<double> signs;
  for (double q : out.flow.flow) signs.push_back(q < 0.0 ? -1.0 : 1.0);
  const std::vector<int> free{1, 2, 3, 4, 5};
  auto objective = [&](double tip) { return flow_fit_objective(net, pressures(tip), free, signs, t); };
  // scan for a bracket, then bisect on the sign of a central difference
  double best = 0.0, best_j = std::numeric_limits<double>::infinity();
  for (double tip = -20000.0; tip <= 20000.0; tip += 10.0) {
    const double j = objective(tip);
    if (j < best_j) {
      best_j = j;
      best = tip;
    }
  }
  double lo = best - 10.0, hi = best + 10.0;
  for (int it = 0; it < 200 && hi - lo > 1e-10; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (objective(mid + 100.0) - objective(mid - 100.0) > 0.0)
      hi = mid;
    else
      lo = mid;
  }
  const double tip_oracle = 0.5 * (lo + hi);
  CHECK(std::abs(out.flow.pressure[5] - tip_oracle) < 1e-6);
  CHECK(out.network.node(5).bc.type == BcType::pressure);
  CHECK(out.network.node(5).bc.value == out.flow.pressure[5]);
  const auto pr = pressures(tip_oracle);
  for (int i = 1; i < 5; ++i) CHECK(std::abs(out.flow.pressure[static_cast<std::size_t>(i)] - pr[static_cast<std::size_t>(i)]) < 1e-6);
}

TEST_CASE("flow fit on a star graph without shear targets has a closed form") {
  // center 0, pressure leaves 1..3, unknown tip 4
  std::vector<Vec3> pos{Vec3(0, 0, 0), Vec3(80, 0, 0), Vec3(0, 90, 0), Vec3(0, 0, 70), Vec3(-60, -10, 0)};
  const std::vector<double> leaf_p{kHigh, 4000.0, kLow};
  std::vector<NodeBc> bcs(5);
  for (int k = 0; k < 3; ++k) bcs[static_cast<std::size_t>(k + 1)] = NodeBc::pressure(leaf_p[static_cast<std::size_t>(k)]);
  const VesselNetwork net(pos, bcs, {{0, 1, 6.0}, {0, 2, 5.0}, {0, 3, 4.0}, {0, 4, 5.5}});
  FlowTargets t;
  t.w_tau = 0.0;
  const auto out = optimize_unknown_boundaries(net, t);
  double big_g = 0.0, weighted = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double g = segment_conductance(net.segment(k));
    big_g += g;
    weighted += g * leaf_p[static_cast<std::size_t>(k)];
  }
  const double gu = segment_conductance(net.segment(3));
  const double a = 1.0 + big_g / gu;
  const double b = weighted / gu + t.p_target;
  const double pc = (t.p_target + a * b) / (1.0 + a * a);
  const double tip = pc + (big_g * pc - weighted) / gu;
  CHECK(out.flow.pressure[0] == doctest::Approx(pc).epsilon(1e-10));
  CHECK(out.flow.pressure[4] == doctest::Approx(tip).epsilon(1e-10));
  double net_flow = 0.0;
  for (const auto& s : net.segments()) net_flow += out.flow.flow[static_cast<std::size_t>(s.id)];
  CHECK(std::abs(net_flow) < 1e-6 * std::abs(out.flow.flow[0]));
}
