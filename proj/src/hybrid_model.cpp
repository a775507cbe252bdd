#include "vasoperf/hybrid_model.hpp"

#include "vasoperf/errors.hpp"
#include "vasoperf/fem.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

namespace vasoperf {

void HybridParams::validate(std::size_t n_elements) const {
  if (!(kv > 0.0)) throw ConfigError("homogenized permeability must be positive");
  if (!(surface_density >= 0.0)) throw ConfigError("surface density must be non-negative");
  if (!(penalty >= 0.0)) throw ConfigError("penalty parameter must be non-negative");
  if (!(smearing_radius >= 0.0)) throw ConfigError("smearing radius must be non-negative");
  if (!element_kv.empty()) {
    if (element_kv.size() != n_elements)
      throw ConfigError("per-element permeability has " + std::to_string(element_kv.size()) + " entries for " +
                        std::to_string(n_elements) + " elements");
    for (double k : element_kv)
      if (!(k >= 0.0) || !std::isfinite(k)) throw ConfigError("per-element permeability must be finite and non-negative");
  }
}

double homogenized_leak(double p_v, double p_if, double surface_density, const PhysicsParams& params) {
  return params.lp_homog * surface_density * (p_v - p_if - params.oncotic_shift());
}

namespace {

Box3 vascular_bounds(const TissueMesh& mesh) {
  Box3 b{Vec3::Constant(std::numeric_limits<double>::infinity()), Vec3::Constant(-std::numeric_limits<double>::infinity())};
  const auto& mask = mesh.vascular_node_mask();
  for (std::size_t i = 0; i < mesh.n_nodes(); ++i) {
    if (!mask[i]) continue;
    b.lo = b.lo.cwiseMin(mesh.nodes()[i]);
    b.hi = b.hi.cwiseMax(mesh.nodes()[i]);
  }
  return b;
}

// p^v restricted to Ω_v: selection matrix (all mesh nodes × Ω_v nodes)
SpMat selection(const DofMap& dofv, std::size_t n) {
  Triplets t;
  for (std::size_t i = 0; i < n; ++i)
    if (dofv.index[i] >= 0) t.emplace_back(static_cast<int>(i), dofv.index[i], 1.0);
  SpMat s(static_cast<long>(n), dofv.size);
  s.setFromTriplets(t.begin(), t.end());
  return s;
}

}  // namespace

HybridBoundaryConditions transfer_boundary_conditions(const VesselNetwork& net, const TissueMesh& mesh,
                                                      const HybridParams& params) {
  if (mesh.n_vascular_elements() == 0) throw ConfigError("mesh has no homogenized subdomain");
  const std::vector<bool> large = large_node_mask(net);
  HybridBoundaryConditions out;
  out.network_bcs.assign(net.n_nodes(), NodeBc{});
  std::vector<int> large_pressure;
  for (const auto& n : net.nodes()) {
    if (!large[static_cast<std::size_t>(n.id)]) continue;
    out.network_bcs[static_cast<std::size_t>(n.id)] = n.bc;
    if (n.bc.type == BcType::pressure) large_pressure.push_back(n.id);
  }

  const Box3 omega_v = vascular_bounds(mesh);
  const TipClasses tips = classify_tips(net, omega_v);
  std::vector<bool> hull(net.n_nodes(), false);
  for (int t : tips.hull) hull[static_cast<std::size_t>(t)] = true;

  const auto& boundary = mesh.vascular_boundary_nodes();
  std::vector<double> sum(boundary.size(), 0.0);
  std::vector<int> count(boundary.size(), 0);
  const double r2 = params.smearing_radius * params.smearing_radius;
  for (const auto& n : net.nodes()) {
    if (large[static_cast<std::size_t>(n.id)] || n.bc.type != BcType::pressure) continue;
    bool used = false;
    if (hull[static_cast<std::size_t>(n.id)]) {
      for (std::size_t k = 0; k < boundary.size(); ++k) {
        if ((mesh.node(boundary[k]) - n.position).squaredNorm() > r2) continue;
        sum[k] += n.bc.value;
        ++count[k];
        used = true;
      }
    }
    (used ? out.smeared_tips : out.dropped_tips).push_back(n.id);
  }

  const double e2 = params.exclusion() * params.exclusion();
  for (std::size_t k = 0; k < boundary.size(); ++k) {
    if (count[k] == 0) continue;
    bool excluded = false;
    for (int lp : large_pressure)
      if ((mesh.node(boundary[k]) - net.node(lp).position).squaredNorm() <= e2) excluded = true;
    if (excluded) {
      out.excluded_nodes.push_back(boundary[k]);
      continue;
    }
    out.vascular_nodes.push_back(boundary[k]);
    out.vascular_values.push_back(sum[k] / count[k]);
  }
  return out;
}

HybridSystem assemble_hybrid_system(const VesselNetwork& net, const TissueMesh& mesh, const PhysicsParams& physics,
                                    const HybridParams& params, const HybridBoundaryConditions& bcs,
                                    int gauss_points) {
  physics.validate();
  params.validate(mesh.n_elements());
  if (bcs.network_bcs.size() != net.n_nodes())
    throw ContractError("hybrid boundary conditions do not match the network");
  HybridSystem sys;
  sys.penalty = params.penalty;
  sys.dof1d = DofMap::from_mask(large_node_mask(net));
  sys.dofv = DofMap::from_mask(mesh.vascular_node_mask());
  sys.n1 = sys.dof1d.size;
  sys.n3 = static_cast<long>(mesh.n_nodes());
  sys.nv = sys.dofv.size;
  for (const auto& s : net.segments())
    if (net.is_large(s.id)) sys.large_segments.push_back(s.id);
  sys.segments = build_segments(net, sys.large_segments, mesh, gauss_points);

  const DofMap d3 = DofMap::identity(mesh.n_nodes());
  const double ratio = physics.density_ratio();
  const double shift = physics.oncotic_shift();

  // Λ_L network conductance
  Triplets kt;
  for (int sid : sys.large_segments) {
    const auto& s = net.segment(sid);
    const double g = segment_conductance(s);
    const int a = sys.dof1d[s.node_a], b = sys.dof1d[s.node_b];
    kt.emplace_back(a, a, g);
    kt.emplace_back(b, b, g);
    kt.emplace_back(a, b, -g);
    kt.emplace_back(b, a, -g);
  }
  SpMat kcond(sys.n1, sys.n1);
  kcond.setFromTriplets(kt.begin(), kt.end());

  const auto ex = assemble_line_exchange(
      sys.segments, net, mesh,
      [&](int s) { return 2.0 * std::numbers::pi * net.segment(s).radius * physics.lp_vessel; }, sys.dof1d, d3);
  sys.mortar = assemble_mortar(sys.segments, net, mesh, sys.dof1d, sys.dofv);

  // penalty blocks ε Dᵀκ⁻¹D, ε Dᵀκ⁻¹M, ε Mᵀκ⁻¹M
  Eigen::VectorXd inv_kappa(sys.n1);
  for (long j = 0; j < sys.n1; ++j) {
    if (!(sys.mortar.kappa[j] > 0.0)) throw GeometryError("Λ_L node without mortar support");
    inv_kappa[j] = 1.0 / sys.mortar.kappa[j];
  }
  const SpMat dt_k = SpMat(sys.mortar.d.transpose()) * inv_kappa.asDiagonal();
  const SpMat mt_k = SpMat(sys.mortar.m.transpose()) * inv_kappa.asDiagonal();
  const SpMat pen_dd = params.penalty * (dt_k * sys.mortar.d);
  const SpMat pen_dm = params.penalty * (dt_k * sys.mortar.m);
  const SpMat pen_mm = params.penalty * (mt_k * sys.mortar.m);
  const SpMat pen_md = SpMat(pen_dm.transpose());

  // homogenized Darcy and exchange on Ω_v
  const ElementCoefficient kv = [&](int e) {
    if (!mesh.element(e).vascular) return 0.0;
    return params.element_kv.empty() ? params.kv : params.element_kv[static_cast<std::size_t>(e)];
  };
  const double exch = physics.lp_homog * params.surface_density;
  const ElementCoefficient in_v = [&](int e) { return mesh.element(e).vascular ? 1.0 : 0.0; };
  const SpMat kvv = assemble_stiffness(mesh, sys.dofv, kv);
  const SpMat mass = assemble_mass(mesh, d3, in_v);
  const Eigen::VectorXd vol_load = assemble_load(mesh, d3, in_v);
  const SpMat sel = selection(sys.dofv, mesh.n_nodes());
  const SpMat mass_vv = SpMat(sel.transpose()) * mass * sel;
  const SpMat mass_lv = mass * sel;
  const SpMat mass_vl = SpMat(mass_lv.transpose());
  const SpMat kdarcy = assemble_stiffness(mesh, d3, [&](int) { return physics.k_if; });

  const SpMat k11 = (1.0 / ratio) * (kcond + pen_dd) + ex.b11;
  const SpMat k1l = -ex.b13;
  const SpMat k1v = -(1.0 / ratio) * pen_dm;
  const SpMat kl1 = -ex.b31;
  const SpMat kll = kdarcy + ex.b33 + exch * mass;
  const SpMat klv = -exch * mass_lv;
  const SpMat kv1 = -(1.0 / ratio) * pen_md;
  const SpMat kvl = -exch * mass_vl;
  const SpMat kvv_all = (1.0 / ratio) * (kvv + pen_mm) + exch * mass_vv;

  const long n = sys.n1 + sys.n3 + sys.nv;
  const long ol = sys.offset_if(), ov = sys.offset_v();
  sys.a = assemble_blocks(n, n,
                          {{&k11, 0, 0, 1.0}, {&k1l, 0, ol, 1.0}, {&k1v, 0, ov, 1.0},
                           {&kl1, ol, 0, 1.0}, {&kll, ol, ol, 1.0}, {&klv, ol, ov, 1.0},
                           {&kv1, ov, 0, 1.0}, {&kvl, ov, ol, 1.0}, {&kvv_all, ov, ov, 1.0}});
  sys.b = Eigen::VectorXd::Zero(n);
  sys.b.head(sys.n1) = shift * ex.load1;
  sys.b.segment(ol, sys.n3) = -shift * ex.load3 - exch * shift * vol_load;
  sys.b.tail(sys.nv) = exch * shift * (sel.transpose() * vol_load);

  sys.fixed.assign(static_cast<std::size_t>(n), false);
  sys.fixed_values = Eigen::VectorXd::Zero(n);
  for (const auto& node : net.nodes()) {
    const int j = sys.dof1d[node.id];
    if (j < 0) continue;
    const NodeBc& bc = bcs.network_bcs[static_cast<std::size_t>(node.id)];
    if (bc.type == BcType::pressure) {
      sys.fixed[static_cast<std::size_t>(j)] = true;
      sys.fixed_values[j] = bc.value;
    }
  }
  for (int id : mesh.outer_boundary_nodes()) {
    sys.fixed[static_cast<std::size_t>(ol + id)] = true;
    sys.fixed_values[ol + id] = physics.outer_pressure;
  }
  if (bcs.vascular_nodes.size() != bcs.vascular_values.size())
    throw ContractError("vascular boundary nodes and values differ in length");
  for (std::size_t k = 0; k < bcs.vascular_nodes.size(); ++k) {
    const int j = sys.dofv[bcs.vascular_nodes[k]];
    if (j < 0) throw ContractError("vascular boundary condition on a node outside the homogenized subdomain");
    sys.fixed[static_cast<std::size_t>(ov + j)] = true;
    sys.fixed_values[ov + j] = bcs.vascular_values[k];
  }
  return sys;
}

PenaltyCriterion penalty_criterion(const MortarOperators& ops, const Eigen::VectorXd& p1d, const Eigen::VectorXd& p3d) {
  const Eigen::VectorXd g = weighted_gap(ops, p1d, p3d);
  PenaltyCriterion c;
  double sum = 0.0;
  int used = 0;
  for (long j = 0; j < g.size(); ++j) {
    const double scaled = std::abs(g[j] / ops.kappa[j]);
    c.max_scaled_gap = std::max(c.max_scaled_gap, scaled);
    if (p1d[j] == 0.0) {
      ++c.n_skipped;
      continue;
    }
    sum += scaled / std::abs(p1d[j]);
    ++used;
  }
  c.delta = used ? sum / used : 0.0;
  return c;
}

HybridSolution solve_hybrid(const HybridSystem& sys, const VesselNetwork& net, const TissueMesh& mesh,
                            const PhysicsParams& physics, const HybridParams& params, const SolverOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  HybridSolution sol;
  Eigen::VectorXd x;
  try {
    x = solve_spd_dirichlet(sys.a, sys.b, sys.fixed, sys.fixed_values, opt, &sol.report);
  } catch (const SolverError& e) {
    throw SolverError(std::string(e.what()) + "; consider reducing the penalty parameter", e.residual_history());
  }
  const long ol = sys.offset_if();
  const Eigen::VectorXd p1 = x.head(sys.n1);
  const Eigen::VectorXd pv = x.tail(sys.nv);
  sol.penalty = sys.penalty;
  sol.p_if = x.segment(ol, sys.n3);
  sol.large_node.assign(net.n_nodes(), false);
  sol.p_vessel = Eigen::VectorXd::Zero(static_cast<long>(net.n_nodes()));
  sol.lambda = Eigen::VectorXd::Zero(static_cast<long>(net.n_nodes()));
  sol.gap = Eigen::VectorXd::Zero(static_cast<long>(net.n_nodes()));
  const Eigen::VectorXd g = weighted_gap(sys.mortar, p1, pv);
  Eigen::VectorXd lam = Eigen::VectorXd::Zero(g.size());
  if (sys.penalty > 0.0) lam = recover_multipliers(sys.mortar, sys.penalty, g);
  for (const auto& n : net.nodes()) {
    const int j = sys.dof1d[n.id];
    if (j < 0) continue;
    sol.large_node[static_cast<std::size_t>(n.id)] = true;
    sol.p_vessel[n.id] = p1[j];
    sol.lambda[n.id] = lam[j];
    sol.gap[n.id] = g[j];
  }
  sol.p_v = Eigen::VectorXd::Zero(sys.n3);
  for (long i = 0; i < sys.n3; ++i) {
    const int j = sys.dofv[static_cast<int>(i)];
    if (j >= 0) sol.p_v[i] = pv[j];
  }
  sol.exchange = sys.mortar.kappa.dot(lam);
  sol.criterion = penalty_criterion(sys.mortar, p1, pv);

  sol.leakage = segment_leakage(sys.segments, net, mesh, sol.p_vessel, sol.p_if, physics);
  double abs_sum = 0.0;
  for (int sid : sys.large_segments) {
    sol.total_leakage += sol.leakage[static_cast<std::size_t>(sid)];
    abs_sum += std::abs(sol.leakage[static_cast<std::size_t>(sid)]);
  }
  // ∫ leak over Ω_v with the element mass rule
  for (std::size_t e = 0; e < mesh.n_elements(); ++e) {
    const auto& el = mesh.element(static_cast<int>(e));
    if (!el.vascular) continue;
    for (const auto& qp : shape::volume_rule(el.kind, true)) {
      const double w = qp.weight * std::abs(mesh.jacobian(static_cast<int>(e), qp.xi).determinant());
      const double leak = homogenized_leak(mesh.interpolate_in(static_cast<int>(e), qp.xi, sol.p_v),
                                           mesh.interpolate_in(static_cast<int>(e), qp.xi, sol.p_if),
                                           params.surface_density, physics);
      sol.homogenized_leakage += w * leak;
      abs_sum += w * std::abs(leak);
    }
  }
  std::vector<long> rows;
  for (int id : mesh.outer_boundary_nodes()) rows.push_back(ol + id);
  sol.boundary_outflux = boundary_outflux(sys.a, sys.b, x, rows);
  const double total = sol.total_leakage + sol.homogenized_leakage;
  sol.mass_balance_error =
      abs_sum > 0.0 ? std::abs(total - sol.boundary_outflux) / abs_sum : std::abs(sol.boundary_outflux);
  sol.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return sol;
}

AutoPenaltyResult solve_hybrid_auto(const VesselNetwork& net, const TissueMesh& mesh, const PhysicsParams& physics,
                                    HybridParams params, const HybridBoundaryConditions& bcs,
                                    const SolverOptions& opt, int max_adjustments, double factor) {
  if (!(params.penalty > 0.0)) throw ConfigError("automatic penalty selection needs a positive starting value");
  AutoPenaltyResult out;
  for (int k = 0; k <= max_adjustments; ++k) {
    const HybridSystem sys = assemble_hybrid_system(net, mesh, physics, params, bcs);
    out.solution = solve_hybrid(sys, net, mesh, physics, params, opt);
    out.tried.push_back(params.penalty);
    if (out.solution.criterion.passed()) {
      out.converged = true;
      break;
    }
    params.penalty *= factor;
  }
  return out;
}

}  // namespace vasoperf
