#include "vasoperf/full_model.hpp"

#include "vasoperf/errors.hpp"
#include "vasoperf/fem.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

namespace vasoperf {

void PhysicsParams::validate() const {
  const double pos[] = {rho_blood, rho_if, k_if, pi_blood, pi_if, hematocrit};
  for (double v : pos)
    if (!(v > 0.0)) throw ConfigError("physics parameters must be positive");
  if (!(lp_vessel >= 0.0 && lp_homog >= 0.0)) throw ConfigError("wall conductivities must be non-negative");
  if (!(sigma >= 0.0 && sigma <= 1.0)) throw ConfigError("reflection coefficient must lie in [0, 1]");
  if (!(hematocrit < 1.0)) throw ConfigError("hematocrit must lie in (0, 1)");
}

double starling_flux_per_length(double p_vessel, double p_if, double radius, const PhysicsParams& params) {
  if (!(radius > 0.0)) throw DomainError("vessel radius must be positive");
  return 2.0 * std::numbers::pi * radius * params.lp_vessel * (p_vessel - p_if - params.oncotic_shift());
}

namespace {

SpMat network_stiffness(const VesselNetwork& net) {
  Triplets trip;
  for (const auto& s : net.segments()) {
    const double g = segment_conductance(s);
    trip.emplace_back(s.node_a, s.node_a, g);
    trip.emplace_back(s.node_b, s.node_b, g);
    trip.emplace_back(s.node_a, s.node_b, -g);
    trip.emplace_back(s.node_b, s.node_a, -g);
  }
  const auto n = static_cast<long>(net.n_nodes());
  SpMat k(n, n);
  k.setFromTriplets(trip.begin(), trip.end());
  return k;
}

void check_components_anchored(const VesselNetwork& net) {
  const Components comp = connected_components(net, [](int) { return true; });
  std::vector<bool> anchored(static_cast<std::size_t>(comp.count), false);
  for (const auto& n : net.nodes()) {
    const int c = comp.node_component[static_cast<std::size_t>(n.id)];
    if (c >= 0 && n.bc.type == BcType::pressure) anchored[static_cast<std::size_t>(c)] = true;
  }
  for (int c = 0; c < comp.count; ++c)
    if (!anchored[static_cast<std::size_t>(c)])
      throw SingularSystemError("network component " + std::to_string(c) + " has no pressure boundary condition");
}

}  // namespace

FullSystem assemble_full_system(const VesselNetwork& net, const TissueMesh& mesh, const PhysicsParams& params,
                                int gauss_points) {
  params.validate();
  check_components_anchored(net);
  FullSystem sys;
  sys.n1 = static_cast<long>(net.n_nodes());
  sys.n3 = static_cast<long>(mesh.n_nodes());
  std::vector<int> all(net.n_segments());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  sys.segments = build_segments(net, all, mesh, gauss_points);

  const DofMap d1 = DofMap::identity(net.n_nodes());
  const DofMap d3 = DofMap::identity(mesh.n_nodes());
  const auto ex = assemble_line_exchange(
      sys.segments, net, mesh,
      [&](int s) { return 2.0 * std::numbers::pi * net.segment(s).radius * params.lp_vessel; }, d1, d3);
  const SpMat kcond = network_stiffness(net);
  const SpMat kdarcy = assemble_stiffness(mesh, d3, [&](int) { return params.k_if; });
  const double ratio = params.density_ratio();
  const double shift = params.oncotic_shift();

  sys.k11 = kcond + ratio * ex.b11;
  sys.g13 = -ratio * ex.b13;
  sys.h31 = -ex.b31;
  sys.k33 = kdarcy + ex.b33;
  sys.f1 = ratio * shift * ex.load1;
  sys.f3 = -shift * ex.load3;

  const long n = sys.n1 + sys.n3;
  const SpMat k11s = (1.0 / ratio) * kcond + ex.b11;
  const SpMat g13s = -ex.b13;
  sys.a = assemble_blocks(n, n, {{&k11s, 0, 0, 1.0}, {&g13s, 0, sys.n1, 1.0}, {&sys.h31, sys.n1, 0, 1.0},
                                 {&sys.k33, sys.n1, sys.n1, 1.0}});
  sys.b.resize(n);
  sys.b << sys.f1 / ratio, sys.f3;

  sys.fixed.assign(static_cast<std::size_t>(n), false);
  sys.fixed_values = Eigen::VectorXd::Zero(n);
  for (const auto& node : net.nodes()) {
    if (node.bc.type == BcType::pressure) {
      sys.fixed[static_cast<std::size_t>(node.id)] = true;
      sys.fixed_values[node.id] = node.bc.value;
    } else if (net.degree(node.id) == 0) {
      sys.fixed[static_cast<std::size_t>(node.id)] = true;
    }
  }
  for (int id : mesh.outer_boundary_nodes()) {
    sys.fixed[static_cast<std::size_t>(sys.n1 + id)] = true;
    sys.fixed_values[sys.n1 + id] = params.outer_pressure;
  }
  return sys;
}

std::vector<double> segment_leakage(const std::vector<IntegrationSegment>& segs, const VesselNetwork& net,
                                    const TissueMesh& mesh, const Eigen::VectorXd& p_vessel_nodes,
                                    const Eigen::VectorXd& p_if, const PhysicsParams& params) {
  std::vector<double> leak(net.n_segments(), 0.0);
  const double shift = params.oncotic_shift();
  for (const auto& is : segs) {
    const auto& s = net.segment(is.owner);
    const double c = 2.0 * std::numbers::pi * s.radius * params.lp_vessel;
    for (const auto& gp : is.gauss) {
      const auto nh = hat_values(gp.xi);
      const double pv = nh[0] * p_vessel_nodes[s.node_a] + nh[1] * p_vessel_nodes[s.node_b];
      const double pl = mesh.interpolate_in(is.host, gp.host_xi, p_if);
      leak[static_cast<std::size_t>(is.owner)] += gp.weight * c * (pv - pl - shift);
    }
  }
  return leak;
}

double boundary_outflux(const SpMat& a, const Eigen::VectorXd& b, const Eigen::VectorXd& x,
                        const std::vector<long>& rows) {
  const Eigen::VectorXd r = a * x - b;
  double s = 0.0;
  for (long i : rows) s += r[i];
  return -s;
}

FullSolution solve_full(const FullSystem& sys, const VesselNetwork& net, const TissueMesh& mesh,
                        const PhysicsParams& params, const SolverOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  FullSolution sol;
  const Eigen::VectorXd x = solve_spd_dirichlet(sys.a, sys.b, sys.fixed, sys.fixed_values, opt, &sol.report);
  sol.p_vessel = x.head(sys.n1);
  sol.p_if = x.tail(sys.n3);
  sol.flow = segment_flows(net, std::vector<double>(sol.p_vessel.data(), sol.p_vessel.data() + sys.n1));
  sol.leakage = segment_leakage(sys.segments, net, mesh, sol.p_vessel, sol.p_if, params);
  double abs_sum = 0.0;
  for (double l : sol.leakage) {
    sol.total_leakage += l;
    abs_sum += std::abs(l);
  }
  std::vector<long> rows;
  for (int id : mesh.outer_boundary_nodes()) rows.push_back(sys.n1 + id);
  sol.boundary_outflux = boundary_outflux(sys.a, sys.b, x, rows);
  sol.mass_balance_error = abs_sum > 0.0 ? std::abs(sol.total_leakage - sol.boundary_outflux) / abs_sum
                                         : std::abs(sol.boundary_outflux);
  sol.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return sol;
}

}  // namespace vasoperf
