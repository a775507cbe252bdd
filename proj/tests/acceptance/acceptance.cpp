// One PASS/FAIL line per acceptance criterion. Tolerances are fixed here;
// the exit status is non-zero if any criterion fails.

#include "vasoperf/coupling.hpp"
#include "vasoperf/errors.hpp"
#include "vasoperf/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>

using namespace vasoperf;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

// collects sub-checks; the detail lists every measured value
class Checks {
 public:
  void check(bool ok, const std::string& what) {
    pass_ = pass_ && ok;
    if (!detail_.empty()) detail_ += "; ";
    detail_ += what + (ok ? "" : " [FAILED]");
  }
  Outcome result() const { return {pass_, detail_}; }

 private:
  bool pass_ = true;
  std::string detail_;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

constexpr double kHigh = 5999.4;
constexpr double kLow = 1999.8;

VesselNetwork lattice(double edge, double pitch, double radius, double max_segment = 30.0,
                      std::array<bool, 6> faces = {true, true, true, true, true, true}, int dead_ends = 0) {
  GeneratorSpec spec;
  spec.kind = GeneratorKind::lattice;
  spec.box = Box3{Vec3::Zero(), Vec3::Constant(edge)};
  spec.pitch = pitch;
  spec.radius = radius;
  spec.max_segment_length = max_segment;
  spec.stub_faces = faces;
  spec.interior_dead_ends = dead_ends;
  return generate_synthetic_network(spec, 3);
}

// tips at the bottom face high, at the top face low, the rest dead ends
VesselNetwork with_axial_pressures(const VesselNetwork& base, double edge) {
  std::vector<NodeBc> bcs = base.bcs();
  for (const auto& n : base.nodes()) {
    if (base.degree(n.id) != 1) continue;
    if (n.position.z() < 1.0) bcs[static_cast<std::size_t>(n.id)] = NodeBc::pressure(kHigh);
    if (n.position.z() > edge - 1.0) bcs[static_cast<std::size_t>(n.id)] = NodeBc::pressure(kLow);
  }
  return base.with_bcs(bcs);
}

VesselNetwork all_small(const VesselNetwork& net) {
  return net.with_partition(std::vector<VesselClass>(net.n_segments(), VesselClass::small));
}

std::vector<int> all_segments(const VesselNetwork& n) {
  std::vector<int> s(n.n_segments());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<int>(i);
  return s;
}

// ---------------------------------------------------------------------------

Outcome decoupled_exactness() {
  const auto t0 = Clock::now();
  PhysicsParams p;
  p.lp_vessel = 0.0;
  const auto net = subdivide(
      VesselNetwork({Vec3(0, 50, 50), Vec3(100, 50, 50)}, {NodeBc::pressure(kHigh), NodeBc::pressure(kLow)},
                    {{0, 1, 6.0}}),
      10.0);
  const auto mesh = build_box_mesh(Box3{Vec3::Zero(), Vec3::Constant(100.0)}, {6, 6, 6}, 2.0, 1.3);
  const auto sol = solve_full(assemble_full_system(net, mesh, p), net, mesh, p);
  double e_vessel = 0.0;
  for (const auto& n : net.nodes())
    e_vessel = std::max(e_vessel, std::abs(sol.p_vessel[n.id] - (kHigh + (kLow - kHigh) * n.position.x() / 100.0)));
  const double e_if = (sol.p_if.array() - p.outer_pressure).abs().maxCoeff();
  const double secs = seconds_since(t0);
  Checks c;
  c.check(e_vessel < 1e-9, fmt("vessel error %.2e Pa (< 1e-9)", e_vessel));
  c.check(e_if < 1e-9, fmt("IF error %.2e Pa (< 1e-9)", e_if));
  c.check(secs < 5.0, fmt("%.2f s (< 5)", secs));
  return c.result();
}

Outcome mass_conservation() {
  struct Case {
    double edge, pitch, max_segment;
    int res;
  };
  // 200 to 2000 segments, 10³ to 20³ inner elements
  const std::vector<Case> cases{{240.0, 80.0, 30.0, 10}, {400.0, 80.0, 40.0, 15}, {480.0, 60.0, 60.0, 20}};
  Checks c;
  PhysicsParams p;
  std::size_t smallest = SIZE_MAX, largest = 0;
  for (const auto& k : cases) {
    const auto net = with_axial_pressures(lattice(k.edge, k.pitch, 4.0, k.max_segment), k.edge);
    const auto mesh = build_box_mesh(Box3{Vec3::Zero(), Vec3::Constant(k.edge)}, {k.res, k.res, k.res}, 1.5, 1.3);
    const auto sol = solve_full(assemble_full_system(net, mesh, p), net, mesh, p);
    smallest = std::min(smallest, net.n_segments());
    largest = std::max(largest, net.n_segments());
    c.check(sol.mass_balance_error < 1e-8, fmt("%g segments / %g^3: %.2e", static_cast<double>(net.n_segments()),
                                               k.res, sol.mass_balance_error));
  }
  // one case through the assignment and flow-fit pipeline
  const auto raw = lattice(320.0, 80.0, 4.0, 30.0);
  const Box3 box{Vec3::Zero(), Vec3::Constant(320.0)};
  BcAssignmentConfig bc;
  bc.proximity_radius = 100.0;
  const auto net = optimize_unknown_boundaries(assign_boundary_conditions(raw, box, 1, bc).network, {}).network;
  const auto mesh = build_box_mesh(box, {12, 12, 12}, 1.5, 1.3);
  const auto sol = solve_full(assemble_full_system(net, mesh, p), net, mesh, p);
  c.check(sol.mass_balance_error < 1e-8,
          fmt("%g segments / 12^3, assigned BCs: %.2e", static_cast<double>(net.n_segments()), sol.mass_balance_error));
  c.check(smallest >= 200 && largest <= 2000, fmt("segment range %g-%g", smallest, largest));
  return c.result();
}

Outcome mortar_partition_of_unity() {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(2.0, 118.0);
  const std::array<std::array<int, 3>, 3> res{{{3, 4, 5}, {7, 7, 7}, {5, 9, 6}}};
  double worst = 0.0;
  for (int pair = 0; pair < 3; ++pair) {
    const auto mesh =
        build_box_mesh(Box3{Vec3::Zero(), Vec3::Constant(120.0)}, res[static_cast<std::size_t>(pair)], 2.0, 1.3);
    std::vector<Vec3> pos;
    std::vector<SegmentSpec> segs;
    for (int i = 0; i < 12; ++i) pos.emplace_back(u(rng), u(rng), u(rng));
    for (int i = 0; i + 1 < 12; ++i) segs.push_back({i, i + 1, 4.0});
    const auto net = subdivide(VesselNetwork(pos, {}, segs), 7.0 + 9.0 * pair);
    const auto is = build_segments(net, all_segments(net), mesh);
    const auto ops = assemble_mortar(is, net, mesh, DofMap::identity(net.n_nodes()),
                                     DofMap::from_mask(mesh.vascular_node_mask()));
    const Eigen::VectorXd rd = ops.d * Eigen::VectorXd::Ones(ops.d.cols());
    const Eigen::VectorXd rm = ops.m * Eigen::VectorXd::Ones(ops.m.cols());
    for (long j = 0; j < ops.kappa.size(); ++j)
      worst = std::max({worst, std::abs(rd[j] - ops.kappa[j]) / ops.kappa[j],
                        std::abs(rm[j] - ops.kappa[j]) / ops.kappa[j]});
  }
  Checks c;
  c.check(worst < 1e-12, fmt("3 non-matching pairs, max relative row-sum error %.2e (< 1e-12)", worst));
  return c.result();
}

struct HybridCase {
  std::string name;
  VesselNetwork net;
  TissueMesh mesh;
};

HybridCase two_scale_case(const std::string& name, double edge, double pitch, double backbone, double max_segment,
                          int res, std::uint64_t bc_seed, double proximity, double keep, double min_length) {
  GeneratorSpec spec;
  spec.kind = GeneratorKind::two_scale;
  spec.box = Box3{Vec3::Zero(), Vec3::Constant(edge)};
  spec.pitch = pitch;
  spec.radius = 3.0;
  spec.backbone_radius = backbone;
  spec.max_segment_length = max_segment;
  const auto raw = generate_synthetic_network(spec, 21);
  BcAssignmentConfig bc;
  bc.proximity_radius = proximity;
  const auto net = optimize_unknown_boundaries(assign_boundary_conditions(raw, spec.box, bc_seed, bc).network, {}).network;
  HybridCase c{name, net, build_box_mesh(spec.box, {res, res, res}, 1.5, 1.3)};
  PhysicsParams p;
  const auto full = solve_full(assemble_full_system(c.net, c.mesh, p), c.net, c.mesh, p);
  c.net = partition_by_flow(c.net, full.flow, keep, min_length).network;
  return c;
}

Outcome penalty_behavior() {
  Checks c;
  PhysicsParams p;
  const HybridCase base = two_scale_case("320 um", 320.0, 64.0, 9.0, 32.0, 8, 4, 100.0, 0.1, 150.0);
  HybridParams hp;
  hp.kv = 5.0;
  hp.surface_density = 0.01;
  hp.smearing_radius = 80.0;
  const auto bcs = transfer_boundary_conditions(base.net, base.mesh, hp);
  // ε = 100·2^k; the three largest doublings form the asymptotic range
  const std::vector<double> sweep{100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0};
  std::vector<double> gaps;
  for (double eps : sweep) {
    hp.penalty = eps;
    gaps.push_back(solve_hybrid(assemble_hybrid_system(base.net, base.mesh, p, hp, bcs), base.net, base.mesh, p, hp)
                       .criterion.max_scaled_gap);
  }
  std::string pre = "pre-asymptotic ratios";
  for (std::size_t k = 0; k + 1 < gaps.size(); ++k) {
    const double ratio = gaps[k + 1] / gaps[k];
    if (k + 4 <= gaps.size() - 1) {
      pre += fmt(" %.3f", ratio);
      continue;
    }
    c.check(ratio >= 0.4 && ratio <= 0.6, fmt("gap ratio eps %g->%g: %.3f", sweep[k], sweep[k + 1], ratio));
  }
  c.check(true, pre);

  std::vector<HybridCase> cases;
  cases.push_back(base);
  cases.push_back(two_scale_case("200 um", 200.0, 40.0, 8.0, 1e9, 6, 2, 60.0, 0.15, 100.0));
  cases.push_back(two_scale_case("280 um dense", 280.0, 40.0, 9.0, 1000.0, 14, 4, 100.0, 0.1, 150.0));
  for (const auto& k : cases) {
    HybridParams h;
    h.kv = 1.0;
    h.surface_density = 0.01;
    h.smearing_radius = 20.0;
    h.penalty = 100.0;
    const auto b = transfer_boundary_conditions(k.net, k.mesh, h);
    const auto a = solve_hybrid_auto(k.net, k.mesh, p, h, b, SolverOptions{SolverMethod::cg});
    c.check(a.converged && a.tried.size() <= 5,
            k.name + fmt(": delta %.4f after %g solve(s), eps %g", a.solution.criterion.delta,
                         static_cast<double>(a.tried.size()), a.tried.back()));
  }
  return c.result();
}

Outcome gap_exactness() {
  const auto mesh = build_box_mesh(Box3{Vec3::Zero(), Vec3::Constant(100.0)}, {5, 4, 6}, 1.5, 1.2);
  const auto net = subdivide(VesselNetwork({Vec3(4, 9, 13), Vec3(95, 88, 71)}, {}, {{0, 1, 5.0}}), 10.0);
  const auto is = build_segments(net, all_segments(net), mesh);
  const DofMap d3 = DofMap::from_mask(mesh.vascular_node_mask());
  const auto ops = assemble_mortar(is, net, mesh, DofMap::identity(net.n_nodes()), d3);
  auto scaled_gap = [&](const std::function<double(const Vec3&)>& f) {
    Eigen::VectorXd p1(static_cast<long>(net.n_nodes())), p3(d3.size);
    for (const auto& n : net.nodes()) p1[n.id] = f(n.position);
    for (std::size_t i = 0; i < mesh.n_nodes(); ++i)
      if (d3[static_cast<int>(i)] >= 0) p3[d3[static_cast<int>(i)]] = f(mesh.nodes()[i]);
    return (weighted_gap(ops, p1, p3).array() / ops.kappa.array()).abs().maxCoeff();
  };
  const double g_const = scaled_gap([](const Vec3&) { return 3210.0; });
  const double g_lin = scaled_gap([](const Vec3& x) { return 1000.0 + 3.0 * x.x() - 2.0 * x.y() + 0.5 * x.z(); });
  Checks c;
  c.check(g_const < 1e-10, fmt("constant %.2e Pa", g_const));
  c.check(g_lin < 1e-10, fmt("linear %.2e Pa (< 1e-10)", g_lin));
  return c.result();
}

std::set<std::tuple<int, int, int, int>> geometric_crossings(const VesselNetwork& net, const RevPartition& revs) {
  std::set<std::tuple<int, int, int, int>> out;
  for (const auto& r : revs.revs())
    for (int j = 0; j < 3; ++j) {
      const double c = r.box.center()[j];
      for (const auto& s : net.segments()) {
        const Vec3& a = net.node(s.node_a).position;
        const Vec3& b = net.node(s.node_b).position;
        if (!((a[j] <= c && c < b[j]) || (b[j] <= c && c < a[j]))) continue;
        const Vec3 x = (b * (c - a[j]) + a * (b[j] - c)) / (b[j] - a[j]);
        bool inside = true;
        for (int k = 0; k < 3; ++k)
          if (k != j) inside = inside && r.box.lo[k] <= x[k] && x[k] < r.box.hi[k];
        if (inside) out.insert({r.id, j, s.id, b[j] > a[j] ? 1 : -1});
      }
    }
  return out;
}

Outcome metric_kernels() {
  Checks c;
  const std::vector<double> ref{1.0, 2.0, 3.0};
  const double one = r2(ref, ref), zero = r2(ref, {2.0, 2.0, 2.0}), half = r2(ref, {1.0, 2.0, 4.0});
  c.check(one == 1.0 && zero == 0.0 && std::abs(half - 0.5) < 1e-15, fmt("R2 %.17g / %.17g / %.17g", one, zero, half));

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double comp = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double a = u(rng), b = u(rng), cc = u(rng), d = u(rng);
    comp = std::max(comp, std::abs(r2_total(a, b, cc, d) - (a + b + cc + d) / 4.0));
  }
  c.check(comp == 0.0, fmt("R2_tot composition max deviation %.2e", comp));

  const RevPartition revs(Box3{Vec3::Zero(), Vec3::Constant(300.0)}, 100.0);
  std::uniform_real_distribution<double> x(-20.0, 320.0);
  std::vector<Vec3> pos;
  std::vector<SegmentSpec> segs;
  for (int i = 0; i < 100; ++i) {
    pos.emplace_back(x(rng), x(rng), x(rng));
    pos.emplace_back(x(rng), x(rng), x(rng));
    segs.push_back({2 * i, 2 * i + 1, 2.0});
  }
  const auto net = all_small(VesselNetwork(pos, {}, segs));
  const auto got = plane_crossings(net, revs, VesselSelection::whole);
  std::set<std::tuple<int, int, int, int>> set;
  for (const auto& k : got) set.insert({k.rev, k.axis, k.segment, k.sign});
  const auto oracle = geometric_crossings(net, revs);
  c.check(set == oracle && set.size() == got.size(),
          fmt("100 random segments: %g crossings, oracle %g", static_cast<double>(got.size()),
              static_cast<double>(oracle.size())));
  std::uniform_real_distribution<double> uq(-1e3, 1e3);
  std::vector<double> flow(net.n_segments());
  for (double& q : flow) q = uq(rng);
  const auto q = discrete_plane_flows(net, revs, flow, VesselSelection::whole);
  std::map<std::pair<int, int>, double> sums;
  for (const auto& [rev, axis, seg, sign] : oracle) sums[{rev, axis}] += sign * flow[static_cast<std::size_t>(seg)];
  double worst = 0.0;
  for (std::size_t r = 0; r < revs.size(); ++r)
    for (int j = 0; j < 3; ++j)
      worst = std::max(worst, std::abs(q[r][static_cast<std::size_t>(j)] - sums[{static_cast<int>(r), j}]));
  c.check(worst < 1e-12, fmt("signed sums max deviation %.2e (< 1e-12)", worst));
  return c.result();
}

// doubling the enlargement of a graded shell that is already far out
Outcome far_field() {
  const auto t0 = Clock::now();
  const double edge = 240.0, enlargement = 128.0;
  const auto net = with_axial_pressures(lattice(edge, 80.0, 4.0, 30.0), edge);
  const Box3 box{Vec3::Zero(), Vec3::Constant(edge)};
  PhysicsParams p;
  SolverOptions so{SolverMethod::cg};
  so.tolerance = 1e-12;
  const auto m1 = build_box_mesh(box, {10, 10, 10}, enlargement, 1.5);
  const auto m2 = build_box_mesh(box, {10, 10, 10}, 2.0 * enlargement, 1.5);
  const auto s1 = solve_full(assemble_full_system(net, m1, p), net, m1, p, so);
  const auto s2 = solve_full(assemble_full_system(net, m2, p), net, m2, p, so);
  double worst = 0.0, worst_abs = 0.0;
  for (std::size_t i = 0; i < m1.n_nodes(); ++i) {
    if (!m1.vascular_node_mask()[i]) continue;
    const double a = s1.p_if[static_cast<long>(i)];
    const double d = std::abs(m2.interpolate(s2.p_if, m1.node(static_cast<int>(i))) - a);
    worst = std::max(worst, d / std::abs(a));
    worst_abs = std::max(worst_abs, d);
  }
  const double secs = seconds_since(t0);
  Checks c;
  c.check(worst < 0.01, fmt("enlargement %g vs %g, %g segments: max pointwise change %.3f%% (< 1%%)", enlargement,
                            2.0 * enlargement, static_cast<double>(net.n_segments()), 100.0 * worst) +
                            fmt(", max %.3g Pa", worst_abs));
  c.check(secs < 120.0, fmt("%.1f s (< 120)", secs));
  return c.result();
}

// ---------------------------------------------------------------------------
// dense two-scale case, scalar calibration from two starts

struct DenseRun {
  bool ok = false;
  std::string error;
  double geometric_sv = 0.0;
  CalibrationResult first, second;
  double seconds_first = 0.0;
  double seconds_total = 0.0;
  std::optional<CalibrationResult> auto_rev;
  double auto_rev_length = 0.0;
};

CalibrationResult calibrate_scalar(const HybridCalibrationProblem& problem, double kv, double sv,
                                   const CalibrationConfig& c) {
  return calibrate(problem, {kv, sv}, {c.kv_bounds[0], c.surface_density_bounds[0]},
                   {c.kv_bounds[1], c.surface_density_bounds[1]}, c.lm);
}

DenseRun dense_case() {
  DenseRun run;
  try {
    const auto t0 = Clock::now();
    ExperimentConfig cfg;  // the built-in profile is this case
    const double edge = cfg.network.generator.box.hi.x() - cfg.network.generator.box.lo.x();
    cfg.rev.length = edge / 3.0;
    const PreparedNetwork prep = prepare_network(cfg, 4);
    const TissueMesh mesh = make_mesh(cfg.mesh, prep.network);
    const Box3 domain = tumor_box(mesh);
    const FullSolution full =
        solve_full(assemble_full_system(prep.network, mesh, cfg.physics), prep.network, mesh, cfg.physics);
    const VesselNetwork net = partition_by_flow(prep.network, full.flow, cfg.partition.keep_fraction,
                                                cfg.partition.min_component_length)
                                  .network;
    const RevStage rev = analyze_revs(cfg, net, domain);
    run.geometric_sv = geometric_surface_density(rev.partition, domain);
    HybridParams start = cfg.hybrid;
    start.kv = cfg.calibration.kv_init;
    start.surface_density = cfg.calibration.surface_density_init;
    const PenaltyOutcome initial = solve_hybrid_with_policy(net, mesh, cfg, start);
    HybridCalibrationProblem problem(net, mesh, cfg.physics, full, rev.partition, initial.params,
                                     CalibrationMode::scalar, false, cfg.calibration.weights);
    problem.set_solver_options(cfg.solver);
    run.first = calibrate_scalar(problem, cfg.calibration.kv_init, cfg.calibration.surface_density_init,
                                 cfg.calibration);
    run.seconds_first = seconds_since(t0);
    run.second = calibrate_scalar(problem, 0.2, 0.08, cfg.calibration);

    // same case with the REV length from the growth curves, for reference
    cfg.rev.length.reset();
    const RevStage sel = analyze_revs(cfg, net, domain);
    run.auto_rev_length = sel.length;
    HybridCalibrationProblem p2(net, mesh, cfg.physics, full, sel.partition, initial.params, CalibrationMode::scalar,
                                false, cfg.calibration.weights);
    p2.set_solver_options(cfg.solver);
    run.auto_rev = calibrate_scalar(p2, cfg.calibration.kv_init, cfg.calibration.surface_density_init,
                                    cfg.calibration);
    run.seconds_total = seconds_since(t0);
    run.ok = true;
  } catch (const std::exception& e) {
    run.error = e.what();
  }
  return run;
}

Outcome hybrid_fidelity(const DenseRun& run) {
  if (!run.ok) return {false, "dense case failed: " + run.error};
  const auto& r = run.first.report;
  const double sv = run.first.params.surface_density;
  const double sv_err = std::abs(sv - run.geometric_sv) / run.geometric_sv;
  Checks c;
  c.check(r.r2_large >= 0.95, fmt("R2_L %.4f (>= 0.95)", r.r2_large));
  c.check(r.r2_if >= 0.95, fmt("R2_IF %.4f (>= 0.95)", r.r2_if));
  c.check(r.mean_e_if_rel <= 0.05, fmt("E_IF %.2f%% (<= 5%%)", 100.0 * r.mean_e_if_rel));
  c.check(r.mean_e_v_rel <= 0.05, fmt("E_v %.2f%% (<= 5%%)", 100.0 * r.mean_e_v_rel));
  c.check(sv_err <= 0.2, fmt("S/V %.5f vs geometric %.5f, %.1f%% (<= 20%%)", sv, run.geometric_sv, 100.0 * sv_err));
  c.check(run.seconds_first <= 600.0, fmt("%.0f s (<= 600)", run.seconds_first));
  return c.result();
}

Outcome calibration_mechanics(const DenseRun& run) {
  if (!run.ok) return {false, "dense case failed: " + run.error};
  Checks c;
  bool per_iteration = true, monotone = true;
  for (const CalibrationResult* res : {&run.first, &run.second}) {
    const auto& lm = res->lm;
    const int step = static_cast<int>(lm.theta.size()) + 1;
    int prev = 0;
    double accepted_cost = std::numeric_limits<double>::infinity();
    for (const auto& it : lm.trace) {
      per_iteration = per_iteration && it.evaluations - prev == step;
      prev = it.evaluations;
      if (it.accepted) {
        monotone = monotone && it.cost <= accepted_cost;
        accepted_cost = it.cost;
      }
    }
    per_iteration = per_iteration && lm.evaluations == step * static_cast<int>(lm.trace.size());
  }
  c.check(per_iteration, fmt("n+1 = 3 evaluations per iteration (%g and %g iterations)",
                             static_cast<double>(run.first.lm.iterations), static_cast<double>(run.second.lm.iterations)));
  c.check(monotone, "accepted R2_tot monotone");
  const auto& a = run.first.lm.theta;
  const auto& b = run.second.lm.theta;
  const double d_kv = std::abs(a[0] - b[0]) / a[0], d_sv = std::abs(a[1] - b[1]) / a[1];
  c.check(d_kv <= 0.02 && d_sv <= 0.02,
          fmt("starts (1, 0.01) and (0.2, 0.08): kv %.4f vs %.4f, S/V %.5f", a[0], b[0], a[1]) +
              fmt(" vs %.5f; differences %.2f%% / %.2f%% (<= 2%%)", b[1], 100.0 * d_kv, 100.0 * d_sv));
  return c.result();
}

Outcome vf_linear_consistency() {
  // one line of every 2×2 block of lattice lines is large, so every REV
  // keeps the same small-vessel fraction
  const double edge = 240.0, pitch = 40.0;
  const auto raw = lattice(edge, pitch, 3.0, 1e9);
  std::vector<VesselClass> cls(raw.n_segments(), VesselClass::small);
  for (std::size_t s = 0; s < raw.n_segments(); ++s) {
    const auto& seg = raw.segment(static_cast<int>(s));
    const Vec3 a = raw.node(seg.node_a).position, b = raw.node(seg.node_b).position;
    int axis = 0;
    (b - a).cwiseAbs().maxCoeff(&axis);
    const Vec3 m = 0.5 * (a + b);
    const int i1 = static_cast<int>(std::floor(m[(axis + 1) % 3] / pitch));
    const int i2 = static_cast<int>(std::floor(m[(axis + 2) % 3] / pitch));
    if (i1 % 2 == 0 && i2 % 2 == 0) cls[s] = VesselClass::large;
  }
  const Box3 box{Vec3::Zero(), Vec3::Constant(edge)};
  BcAssignmentConfig bc;
  bc.proximity_radius = 60.0;
  const auto net =
      optimize_unknown_boundaries(assign_boundary_conditions(raw, box, 2, bc).network, {}).network.with_partition(cls);
  const auto mesh = build_box_mesh(box, {6, 6, 6}, 1.5, 1.3);
  PhysicsParams p;
  const auto full = solve_full(assemble_full_system(net, mesh, p), net, mesh, p);
  RevPartition revs(box, 80.0);
  revs.compute_statistics(net);
  const double f = revs.rev(0).vf_small;
  double spread = 0.0;
  for (const auto& r : revs.revs()) spread = std::max(spread, std::abs(r.vf_small - f) / f);

  HybridParams hp;
  hp.kv = 1.0;
  hp.surface_density = 0.02;
  hp.penalty = 200.0;
  hp.smearing_radius = 20.0;
  const HybridCalibrationProblem vf(net, mesh, p, full, revs, hp, CalibrationMode::vf_linear);
  const HybridCalibrationProblem sc(net, mesh, p, full, revs, hp, CalibrationMode::scalar, true);
  LmOptions opt;
  const auto r_sc = calibrate(sc, {1.0}, {1e-3}, {1e3}, opt);
  const auto r_vf = calibrate(vf, {1.0 / f}, {1e-3}, {1e6}, opt);
  const double kv = r_sc.lm.theta[0], alpha_f = r_vf.lm.theta[0] * f;
  const double d = std::abs(alpha_f - kv) / kv;
  Checks c;
  c.check(spread < 1e-12, fmt("%g REVs, fraction %.5f, spread %.1e", static_cast<double>(revs.size()), f, spread));
  c.check(d <= 0.02, fmt("alpha*f %.5f vs scalar kv %.5f: %.3f%% (<= 2%%)", alpha_f, kv, 100.0 * d));
  return c.result();
}

Outcome bc_pipeline() {
  Checks c;
  const auto net = lattice(400.0, 80.0, 4.0, 30.0, {true, false, true, false, true, false}, 25);
  const Box3 box{Vec3::Zero(), Vec3::Constant(400.0)};
  const auto tips = classify_tips(net, box);
  const auto a = assign_boundary_conditions(net, box, 11, BcAssignmentConfig{});
  c.check(tips.hull.size() + tips.interior.size() == 100, fmt("%g tips", static_cast<double>(tips.hull.size() +
                                                                                            tips.interior.size())));
  c.check(a.pressure_tips.size() == 5 && a.noflux_tips.size() == 33 && a.unknown_tips.size() == 62,
          fmt("pressure %g, no-flux %g, optimized %g (5/33/62)", static_cast<double>(a.pressure_tips.size()),
              static_cast<double>(a.noflux_tips.size()), static_cast<double>(a.unknown_tips.size())));

  // chain: pressure tip, conserving interior nodes, one unknown tip
  std::vector<Vec3> pos;
  for (int i = 0; i < 6; ++i) pos.emplace_back(60.0 * i, 0.0, 0.0);
  std::vector<NodeBc> bcs(6);
  bcs[0] = NodeBc::pressure(kHigh);
  const std::vector<double> radii{8.0, 6.0, 5.0, 7.0, 4.5};
  std::vector<SegmentSpec> segs;
  for (int i = 0; i < 5; ++i) segs.push_back({i, i + 1, radii[static_cast<std::size_t>(i)]});
  const VesselNetwork chain(pos, bcs, segs);
  const FlowTargets t;
  const auto out = optimize_unknown_boundaries(chain, t);
  std::vector<double> resist;
  for (const auto& s : chain.segments()) resist.push_back(1.0 / segment_conductance(s));
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
  auto objective = [&](double tip) { return flow_fit_objective(chain, pressures(tip), free, signs, t); };
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
  const double err = std::abs(out.flow.pressure[5] - 0.5 * (lo + hi));
  c.check(out.signs_converged && err < 1e-6, fmt("optimizer vs brute force %.2e Pa (< 1e-6)", err));
  return c.result();
}

Outcome rev_machinery() {
  Checks c;
  const double a = 80.0, r = 4.0, edge = 800.0;
  const auto net = all_small(lattice(edge, a, r, 1e9));
  const Box3 domain{Vec3::Zero(), Vec3::Constant(edge)};
  const auto curves = grow_probe_cubes(net, domain, 7);
  const double l_rev = select_rev_length(curves);
  const double plateau = plateau_volume_fraction(curves, l_rev);
  const double analytic = 3.0 * std::numbers::pi * r * r / (a * a);
  const double dev = std::abs(plateau / analytic - 1.0);
  c.check(dev < 0.02, fmt("plateau %.5f vs 3 pi R^2/a^2 = %.5f: %.2f%% (< 2%%), l_REV %.0f um", plateau, analytic,
                          100.0 * dev, l_rev));

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 300.0);
  std::vector<Vec3> pos;
  std::vector<SegmentSpec> segs;
  for (int i = 0; i < 200; ++i) {
    pos.emplace_back(u(rng), u(rng), u(rng));
    pos.emplace_back(u(rng), u(rng), u(rng));
    segs.push_back({2 * i, 2 * i + 1, 3.0});
  }
  const auto random = all_small(VesselNetwork(pos, {}, segs));
  RevPartition part(Box3{Vec3::Zero(), Vec3::Constant(300.0)}, 100.0);
  part.compute_statistics(random);
  VesselContent sum;
  for (const auto& rv : part.revs()) sum += rv.content;
  const VesselContent whole = clip_content(random, part.domain());
  double worst = 0.0;
  worst = std::max(worst, std::abs(sum.length_small / whole.length_small - 1.0));
  worst = std::max(worst, std::abs(sum.volume_small / whole.volume_small - 1.0));
  worst = std::max(worst, std::abs(sum.surface_small / whole.surface_small - 1.0));
  c.check(worst < 1e-9, fmt("clipping conservation %.2e (< 1e-9)", worst));
  return c.result();
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  int failed = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& run) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
  };
  report(1, "decoupled exactness", decoupled_exactness);
  report(2, "mass conservation", mass_conservation);
  report(3, "mortar partition of unity", mortar_partition_of_unity);
  report(4, "penalty behavior", penalty_behavior);
  report(5, "gap exactness", gap_exactness);
  report(6, "metric kernels", metric_kernels);
  report(7, "far-field insensitivity", far_field);
  const DenseRun dense = dense_case();
  report(8, "hybrid fidelity after calibration", [&] { return hybrid_fidelity(dense); });
  report(9, "calibration mechanics", [&] { return calibration_mechanics(dense); });
  report(10, "volume-fraction law consistency", vf_linear_consistency);
  report(11, "boundary condition pipeline", bc_pipeline);
  report(12, "REV machinery", rev_machinery);
  if (dense.ok && dense.auto_rev) {
    const auto& r = dense.auto_rev->report;
    std::printf("info  dense case with REV length from growth curves (%.1f um): R2_L %.4f, R2_IF %.4f, E_IF %.2f%%, "
                "E_v %.2f%%, S/V %.5f\n",
                dense.auto_rev_length, r.r2_large, r.r2_if, 100.0 * r.mean_e_if_rel, 100.0 * r.mean_e_v_rel,
                dense.auto_rev->params.surface_density);
  }
  std::printf("%d of 12 criteria passed in %.0f s\n", 12 - failed, seconds_since(t0));
  return failed == 0 ? 0 : 1;
}
