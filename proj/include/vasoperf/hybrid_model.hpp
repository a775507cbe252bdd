#pragma once

#include "vasoperf/coupling.hpp"
#include "vasoperf/full_model.hpp"
#include "vasoperf/linear_solver.hpp"
#include "vasoperf/mesh.hpp"
#include "vasoperf/network.hpp"

#include <vector>

namespace vasoperf {

struct HybridParams {
  double kv = 5.0;                  // homogenized permeability over viscosity [μm²/(Pa·s)]
  double surface_density = 0.01;   // lateral surface of homogenized vessels per volume [1/μm]
  double penalty = 100.0;           // ε [μm²/(Pa·s)]
  double smearing_radius = 200.0;   // μm
  double exclusion_radius = -1.0;   // μm; negative: same as the smearing radius
  // per-element kv, overrides the scalar when non-empty (size = mesh elements)
  std::vector<double> element_kv;

  double exclusion() const { return exclusion_radius < 0.0 ? smearing_radius : exclusion_radius; }
  void validate(std::size_t n_elements) const;
};

/// Homogenized Starling leak per tissue volume [1/s], positive into the IF.
double homogenized_leak(double p_v, double p_if, double surface_density, const PhysicsParams& params);

struct HybridBoundaryConditions {
  std::vector<NodeBc> network_bcs;  // per network node; only Λ_L nodes are used
  std::vector<int> vascular_nodes;  // mesh nodes on ∂Ω_v with a p^v Dirichlet value
  std::vector<double> vascular_values;
  std::vector<int> smeared_tips;    // Λ_S hull tips whose pressure was transferred
  std::vector<int> dropped_tips;    // Λ_S pressure tips away from ∂Ω_v
  std::vector<int> excluded_nodes;  // ∂Ω_v nodes left free near Λ_L pressure nodes
};

/// Λ_L pressure nodes keep their values. Pressures of Λ_S tips near ∂Ω_v are
/// averaged onto the ∂Ω_v nodes within the smearing radius; the remaining
/// Λ_S tip conditions are dropped and the other ∂Ω_v nodes stay no-flux.
HybridBoundaryConditions transfer_boundary_conditions(const VesselNetwork& net, const TissueMesh& mesh,
                                                      const HybridParams& params);

struct HybridSystem {
  // unknowns: [p̂ on Λ_L nodes | p^l on all mesh nodes | p^v on Ω_v nodes]
  DofMap dof1d;  // network node -> Λ_L index
  DofMap dofv;   // mesh node -> Ω_v index
  long n1 = 0;
  long n3 = 0;
  long nv = 0;
  double penalty = 0.0;
  SpMat a;  // blood rows scaled by ρ_blood/ρ_if, symmetric
  Eigen::VectorXd b;
  std::vector<bool> fixed;
  Eigen::VectorXd fixed_values;
  std::vector<int> large_segments;
  std::vector<IntegrationSegment> segments;
  MortarOperators mortar;
  long offset_if() const { return n1; }
  long offset_v() const { return n1 + n3; }
};

/// `net` carries the partition; network BCs and ∂Ω_v values come from `bcs`.
HybridSystem assemble_hybrid_system(const VesselNetwork& net, const TissueMesh& mesh, const PhysicsParams& physics,
                                    const HybridParams& params, const HybridBoundaryConditions& bcs,
                                    int gauss_points = 3);

struct PenaltyCriterion {
  double delta = 0.0;      // mean |κ⁻¹g| / |p̂| over Λ_L nodes
  double max_scaled_gap = 0.0;  // ‖κ⁻¹g‖∞ [Pa]
  int n_skipped = 0;       // nodes with p̂ = 0
  bool passed() const { return delta < 0.01; }
};

PenaltyCriterion penalty_criterion(const MortarOperators& ops, const Eigen::VectorXd& p1d, const Eigen::VectorXd& p3d);

struct HybridSolution {
  std::vector<bool> large_node;  // per network node
  Eigen::VectorXd p_vessel;      // per network node, 0 off Λ_L
  Eigen::VectorXd p_if;          // per mesh node
  Eigen::VectorXd p_v;           // per mesh node, 0 off Ω_v
  Eigen::VectorXd lambda;        // per network node [μm²/s], 0 off Λ_L
  Eigen::VectorXd gap;           // per network node, 0 off Λ_L
  std::vector<double> leakage;   // per segment, Λ_L only [μm³/s]
  double total_leakage = 0.0;    // Λ_L
  double homogenized_leakage = 0.0;  // ∫ leak over Ω_v [μm³/s]
  double exchange = 0.0;         // Σ κ λ, Λ_L → Ω_v [μm³/s]
  double boundary_outflux = 0.0;
  double mass_balance_error = 0.0;
  double penalty = 0.0;
  PenaltyCriterion criterion;
  SolveReport report;
  double seconds = 0.0;
};

HybridSolution solve_hybrid(const HybridSystem& sys, const VesselNetwork& net, const TissueMesh& mesh,
                            const PhysicsParams& physics, const HybridParams& params, const SolverOptions& opt = {});

struct AutoPenaltyResult {
  HybridSolution solution;
  std::vector<double> tried;  // ε per solve
  bool converged = false;
};

/// Multiply ε by `factor` and re-solve while δ ≥ 1%, at most `max_adjustments` times.
AutoPenaltyResult solve_hybrid_auto(const VesselNetwork& net, const TissueMesh& mesh, const PhysicsParams& physics,
                                    HybridParams params, const HybridBoundaryConditions& bcs,
                                    const SolverOptions& opt = {}, int max_adjustments = 4, double factor = 4.0);

}  // namespace vasoperf
