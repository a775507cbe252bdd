#pragma once

#include "vasoperf/coupling.hpp"
#include "vasoperf/linear_solver.hpp"
#include "vasoperf/mesh.hpp"
#include "vasoperf/network.hpp"

#include <cstdint>
#include <vector>

namespace vasoperf {

/// Material constants. Units: μm, Pa, s; densities in kg/m³.
struct PhysicsParams {
  double rho_blood = 1060.0;   // vessel and homogenized blood
  double rho_if = 1000.0;      // interstitial fluid
  double k_if = 0.12782;       // IF permeability over viscosity [μm²/(Pa·s)]
  double lp_vessel = 2.1e-5;   // wall hydraulic conductivity, resolved vessels [μm/(Pa·s)]
  double lp_homog = 2.1e-5;    // same, homogenized vessels [μm/(Pa·s)]
  double sigma = 0.82;         // reflection coefficient
  double pi_blood = 2666.4;    // oncotic pressure, plasma [Pa]
  double pi_if = 1999.8;       // oncotic pressure, IF [Pa]
  double hematocrit = 0.45;
  double outer_pressure = 0.0;  // IF pressure on ∂Ω [Pa]

  double oncotic_shift() const { return sigma * (pi_blood - pi_if); }
  double density_ratio() const { return rho_if / rho_blood; }
  void validate() const;
};

/// Starling leakage per unit vessel length [μm²/s], positive into the tissue.
double starling_flux_per_length(double p_vessel, double p_if, double radius, const PhysicsParams& params);

struct FullSystem {
  // unknowns: [p̂ on all network nodes | p^l on all mesh nodes]
  long n1 = 0;
  long n3 = 0;
  SpMat a;  // blood rows scaled by ρ_blood/ρ_if, symmetric
  Eigen::VectorXd b;
  std::vector<bool> fixed;
  Eigen::VectorXd fixed_values;
  // unscaled blocks
  SpMat k11, g13, h31, k33;
  Eigen::VectorXd f1, f3;
  std::vector<IntegrationSegment> segments;
};

FullSystem assemble_full_system(const VesselNetwork& net, const TissueMesh& mesh, const PhysicsParams& params,
                                int gauss_points = 3);

struct FullSolution {
  Eigen::VectorXd p_vessel;  // per network node
  Eigen::VectorXd p_if;      // per mesh node
  std::vector<double> flow;     // per segment from end pressures [μm³/s]
  std::vector<double> leakage;  // per segment, integrated Starling flux [μm³/s]
  double total_leakage = 0.0;
  double boundary_outflux = 0.0;
  double mass_balance_error = 0.0;  // relative
  SolveReport report;
  double seconds = 0.0;
};

FullSolution solve_full(const FullSystem& sys, const VesselNetwork& net, const TissueMesh& mesh,
                        const PhysicsParams& params, const SolverOptions& opt = {});

/// Leakage per 1D element integrated over the integration segments.
std::vector<double> segment_leakage(const std::vector<IntegrationSegment>& segs, const VesselNetwork& net,
                                    const TissueMesh& mesh, const Eigen::VectorXd& p_vessel_nodes,
                                    const Eigen::VectorXd& p_if, const PhysicsParams& params);

/// −Σ over Dirichlet rows of the unconstrained residual of the IF equations.
double boundary_outflux(const SpMat& a, const Eigen::VectorXd& b, const Eigen::VectorXd& x,
                        const std::vector<long>& rows);

// ---------------------------------------------------------------------------
// boundary condition pipeline

struct BcAssignmentConfig {
  double p_high = 5999.4;
  double p_low = 1999.8;
  double frac_pressure = 0.05;
  double frac_noflux = 0.33;
  double proximity_radius = 200.0;  // μm
  bool require_both_signs = true;
};

struct BcAssignment {
  VesselNetwork network;
  std::vector<int> pressure_tips;
  std::vector<int> noflux_tips;
  std::vector<int> unknown_tips;
};

BcAssignment assign_boundary_conditions(const VesselNetwork& net, const Box3& domain, std::uint64_t seed,
                                        const BcAssignmentConfig& cfg);

struct FlowTargets {
  double p_target = 3100.0;  // Pa
  double tau_target = 1.5;   // Pa
  double w_p = 1.0;
  double w_tau = 1.0;
  int max_sign_iterations = 50;
};

struct OptimizedBoundaries {
  VesselNetwork network;  // unknown tips now carry pressure BCs
  NetworkFlow flow;
  int sign_iterations = 0;
  bool signs_converged = true;
};

/// Tips with bc none are unknown; noflux tips and interior nodes conserve flow.
OptimizedBoundaries optimize_unknown_boundaries(const VesselNetwork& net, const FlowTargets& targets);

/// Objective of the constrained flow fit for given pressures and flow signs.
double flow_fit_objective(const VesselNetwork& net, const std::vector<double>& pressure,
                          const std::vector<int>& free_nodes, const std::vector<double>& signs,
                          const FlowTargets& targets);

}  // namespace vasoperf
