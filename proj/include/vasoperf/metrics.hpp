#pragma once

#include "vasoperf/full_model.hpp"
#include "vasoperf/hybrid_model.hpp"
#include "vasoperf/rev.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace vasoperf {

/// 1 − SSE/SST. ContractError for unequal or short inputs,
/// UndefinedMetricError when the reference has no variance.
double r2(const std::vector<double>& ref, const std::vector<double>& test);

/// Weighted mean of the four component scores (L, S, IF, small-vessel flow).
double r2_total(double r2_l, double r2_s, double r2_if, double r2_flow_small,
                const std::array<double, 4>& weights = {1.0, 1.0, 1.0, 1.0});

enum class VesselSelection : std::uint8_t { small, large, whole };

/// A segment crossing the center plane of a REV normal to `axis`. The plane
/// section is the REV box cross-section, closed on its lower edges and open on
/// its upper ones; a segment crosses when min ≤ c < max along the axis.
struct PlaneCrossing {
  int rev = 0;
  int axis = 0;
  int segment = 0;
  int sign = 0;  // sign of the segment direction along the axis
};

std::vector<PlaneCrossing> plane_crossings(const VesselNetwork& net, const RevPartition& revs,
                                           VesselSelection which);

using RevFlows = std::vector<std::array<double, 3>>;  // per REV, per axis [μm³/s]

/// Signed sum of segment flows over the crossings.
RevFlows discrete_plane_flows(const VesselNetwork& net, const RevPartition& revs, const std::vector<double>& flow,
                              VesselSelection which);

/// ∫ −k^v ∂p^v/∂x_j over each center plane section. Elements owning the plane
/// are those with lo ≤ c < hi along the normal.
RevFlows homogenized_plane_flows(const TissueMesh& mesh, const Eigen::VectorXd& p_v, const HybridParams& params,
                                 const RevPartition& revs);

/// Element permeability of the homogenized vessels (per-element override or scalar).
double element_kv(const HybridParams& params, int element);

/// (1/|box|) ∫_box f dV over the mesh; elements are clipped to the box.
double box_mean(const TissueMesh& mesh, const Eigen::VectorXd& field, const Box3& box, bool vascular_only);

struct RevError {
  int rev = 0;
  double p_if_full = 0.0;
  double p_if_hybrid = 0.0;
  double e_if_abs = 0.0;
  double e_if_rel = 0.0;
  bool has_small_nodes = false;
  double p_v_full = 0.0;    // nodal mean over small-vessel nodes
  double p_v_hybrid = 0.0;  // volume mean of the homogenized field
  double e_v_abs = 0.0;
  double e_v_rel = 0.0;
  std::array<double, 3> flow_small_full{};
  std::array<double, 3> flow_homogenized{};
  double transfer_full = 0.0;
  double transfer_hybrid = 0.0;
};

struct SmallPressureScore {
  double r2 = 0.0;
  int n_used = 0;
  int n_outside = 0;
};

/// Full-model pressures at small-vessel nodes against the homogenized field.
SmallPressureScore r2_small_pressures(const VesselNetwork& net, const TissueMesh& mesh, const FullSolution& full,
                                      const HybridSolution& hybrid);

/// Per-REV large-to-small transfer: ∫ λ over the large vessels in the REV
/// (hybrid) and connecting-segment flow leaving the large node (full); the
/// full value is booked to the REV holding the large node.
struct TransferComparison {
  std::vector<double> full;
  std::vector<double> hybrid;
  int n_connecting = 0;
};

TransferComparison compartment_transfer(const VesselNetwork& net, const RevPartition& revs, const FullSolution& full,
                                        const HybridSolution& hybrid);

struct ComparisonReport {
  double r2_large = 0.0;
  SmallPressureScore small;
  double r2_if = 0.0;
  double r2_flow_small = 0.0;
  double r2_tot = 0.0;
  std::optional<double> r2_flow_whole;
  std::optional<double> r2_transfer;
  std::array<double, 4> weights{1.0, 1.0, 1.0, 1.0};
  std::vector<RevError> revs;
  double mean_e_if_abs = 0.0;
  double mean_e_if_rel = 0.0;
  double mean_e_v_abs = 0.0;
  double mean_e_v_rel = 0.0;
  int n_revs_without_small_nodes = 0;
};

/// `net` carries the partition; `revs` spans Ω_v.
ComparisonReport compare_models(const VesselNetwork& net, const TissueMesh& mesh, const FullSolution& full,
                                const HybridSolution& hybrid, const HybridParams& params, const RevPartition& revs,
                                const std::array<double, 4>& weights = {1.0, 1.0, 1.0, 1.0});

/// Scalar metrics as a JSON object (undefined values as null).
std::string comparison_json(const ComparisonReport& report);
void write_comparison_json(const ComparisonReport& report, const std::filesystem::path& file);
void write_rev_errors_csv(const ComparisonReport& report, const std::filesystem::path& file);

}  // namespace vasoperf
