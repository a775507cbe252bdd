#pragma once

#include "vasoperf/linear_solver.hpp"
#include "vasoperf/mesh.hpp"
#include "vasoperf/network.hpp"

#include <filesystem>
#include <functional>
#include <vector>

namespace vasoperf {

struct SegmentGaussPoint {
  double xi = 0.0;      // 1D parameter in [-1, 1]
  double weight = 0.0;  // physical: includes the 1D Jacobian L/2
  Vec3 x = Vec3::Zero();
  Vec3 host_xi = Vec3::Zero();
};

/// Piece of a 1D element lying inside one 3D element.
struct IntegrationSegment {
  int owner = -1;  // 1D element (vessel segment) id
  int host = -1;   // 3D element id
  double xi_a = -1.0;
  double xi_b = 1.0;
  double length = 0.0;
  std::vector<SegmentGaussPoint> gauss;
};

/// Split the given 1D elements at 3D element boundaries. A sub-interval is
/// owned by the lowest-id element containing its midpoint.
std::vector<IntegrationSegment> build_segments(const VesselNetwork& net, const std::vector<int>& elements1d,
                                               const TissueMesh& mesh, int gauss_points = 3);

void write_segments_csv(const std::vector<IntegrationSegment>& segs, const std::filesystem::path& file);

/// Map from global node id to a compact unknown index (-1 for none).
struct DofMap {
  std::vector<int> index;
  int size = 0;

  static DofMap identity(std::size_t n);
  static DofMap from_mask(const std::vector<bool>& mask);
  int operator[](int global) const { return index[static_cast<std::size_t>(global)]; }
};

/// ∫_Λ c(s) φ_i ψ_j ds over the four pairings of 1D (hat) and 3D shape
/// functions.
struct LineExchangeBlocks {
  SpMat b11;  // 1D × 1D
  SpMat b13;  // 1D × 3D
  SpMat b31;  // 3D × 1D
  SpMat b33;  // 3D × 3D
  Eigen::VectorXd load1;  // ∫ c N̂_i
  Eigen::VectorXd load3;  // ∫ c N_i
};

using LineCoefficient = std::function<double(int segment)>;

LineExchangeBlocks assemble_line_exchange(const std::vector<IntegrationSegment>& segs, const VesselNetwork& net,
                                          const TissueMesh& mesh, const LineCoefficient& coef, const DofMap& dof1d,
                                          const DofMap& dof3d);

struct MortarOperators {
  SpMat d;                // n1 × n1
  SpMat m;                // n1 × n3
  Eigen::VectorXd kappa;  // n1
};

MortarOperators assemble_mortar(const std::vector<IntegrationSegment>& segs, const VesselNetwork& net,
                                const TissueMesh& mesh, const DofMap& dof1d, const DofMap& dof3d);

/// g = D p̂ − M p^v
Eigen::VectorXd weighted_gap(const MortarOperators& ops, const Eigen::VectorXd& p1d, const Eigen::VectorXd& p3d);

/// λ = ε κ⁻¹ g
Eigen::VectorXd recover_multipliers(const MortarOperators& ops, double eps, const Eigen::VectorXd& gap);

/// 1D linear hat functions of a segment at parameter ξ.
inline std::array<double, 2> hat_values(double xi) { return {0.5 * (1.0 - xi), 0.5 * (1.0 + xi)}; }

}  // namespace vasoperf
