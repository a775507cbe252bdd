#pragma once

#include "vasoperf/geometry.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace vasoperf {

enum class ElementKind : std::uint8_t { hex8, tet4 };

inline int nodes_per_element(ElementKind k) { return k == ElementKind::hex8 ? 8 : 4; }

struct Element {
  ElementKind kind = ElementKind::hex8;
  std::array<int, 8> nodes{};
  bool vascular = false;  // tagged Ω_v

  int n_nodes() const { return nodes_per_element(kind); }
};

using ShapeValues = std::array<double, 8>;
using ShapeGradients = Eigen::Matrix<double, 8, 3>;  // row l: dN_l/dξ

struct QuadPoint {
  Vec3 xi;
  double weight;
};

/// Reference elements: hex8 on [-1,1]³ with VTK node order, tet4 on the unit
/// simplex with N0 = 1 - ξ - η - ζ.
namespace shape {

ShapeValues values(ElementKind kind, const Vec3& xi);
ShapeGradients gradients(ElementKind kind, const Vec3& xi);
bool inside_reference(ElementKind kind, const Vec3& xi, double tol);
Vec3 clamp_reference(ElementKind kind, const Vec3& xi);
Vec3 reference_centroid(ElementKind kind);
/// Stiffness-grade rule (2×2×2 Gauss / 1-point) when `mass_grade` is false,
/// mass-grade (2×2×2 / 4-point) otherwise.
const std::vector<QuadPoint>& volume_rule(ElementKind kind, bool mass_grade);
/// Gauss–Legendre nodes and weights on [-1, 1].
std::vector<std::pair<double, double>> gauss_legendre(int n);

}  // namespace shape

struct PointLocation {
  int element = -1;
  Vec3 xi = Vec3::Zero();
};

/// Tensor-product axes of a structured box mesh.
struct GridInfo {
  std::array<std::vector<double>, 3> axes;
  Box3 inner;
  std::array<int, 3> inner_begin{};  // index of the first inner-box coordinate per axis
  std::array<int, 3> inner_cells{};
};

class TissueMesh {
 public:
  TissueMesh() = default;
  TissueMesh(std::vector<Vec3> nodes, std::vector<Element> elements);

  const std::vector<Vec3>& nodes() const { return nodes_; }
  const std::vector<Element>& elements() const { return elements_; }
  const Vec3& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  const Element& element(int e) const { return elements_[static_cast<std::size_t>(e)]; }
  std::size_t n_nodes() const { return nodes_.size(); }
  std::size_t n_elements() const { return elements_.size(); }

  /// Sorted node ids on the outer surface ∂Ω.
  const std::vector<int>& outer_boundary_nodes() const { return outer_nodes_; }
  /// Sorted node ids on ∂Ω_v.
  const std::vector<int>& vascular_boundary_nodes() const { return vascular_boundary_nodes_; }
  /// Nodes belonging to at least one Ω_v element.
  const std::vector<bool>& vascular_node_mask() const { return vascular_mask_; }
  std::size_t n_vascular_elements() const { return n_vascular_elements_; }

  Vec3 map(int e, const Vec3& xi) const;
  Eigen::Matrix3d jacobian(int e, const Vec3& xi) const;  // columns ∂x/∂ξ_k
  /// Reference coordinates of `x` in element `e` (Newton for hexahedra).
  /// Returns nullopt when the iteration fails or x lies outside by more
  /// than `tol` in reference units.
  std::optional<Vec3> inverse_map(int e, const Vec3& x, double tol = 1e-10) const;
  Box3 element_bounds(int e) const;
  double element_volume(int e) const;
  double element_size(int e) const;  // bounding-box diagonal
  Box3 bounds() const { return bounds_; }

  /// Elements whose bounding boxes overlap `query`, ascending ids.
  std::vector<int> candidate_elements(const Box3& query) const;
  /// Lowest-id element containing p.
  std::optional<PointLocation> locate(const Vec3& p) const;
  /// FE interpolation of a nodal field; DomainError if p is outside.
  double interpolate(const Eigen::VectorXd& field, const Vec3& p) const;
  double interpolate_in(int e, const Vec3& xi, const Eigen::VectorXd& field) const;
  /// Physical gradient of a nodal field inside element e.
  Vec3 gradient_in(int e, const Vec3& xi, const Eigen::VectorXd& field) const;

  const std::optional<GridInfo>& grid() const { return grid_; }
  void set_grid(GridInfo g) { grid_ = std::move(g); }

  double total_volume() const;
  double vascular_volume() const;

 private:
  void build_boundaries();
  void build_hash();
  std::uint64_t hash_key(int level, const Eigen::Vector3i& c) const;
  Eigen::Vector3i hash_cell(int level, const Vec3& p) const;

  std::vector<Vec3> nodes_;
  std::vector<Element> elements_;
  std::vector<int> outer_nodes_;
  std::vector<int> vascular_boundary_nodes_;
  std::vector<bool> vascular_mask_;
  std::size_t n_vascular_elements_ = 0;
  Box3 bounds_;
  std::optional<GridInfo> grid_;

  // multi-level uniform hash: level L has cell size base·2^L
  double hash_base_ = 1.0;
  int hash_levels_ = 0;
  std::vector<std::uint8_t> level_used_;
  std::unordered_map<std::uint64_t, std::vector<int>> hash_;
};

/// Structured hexahedral box: inner box (tagged Ω_v) with `resolution` cells
/// per axis, surrounded by a geometrically graded shell so that the outer box
/// is the inner box scaled by `enlargement` about its center.
TissueMesh build_box_mesh(const Box3& inner, const std::array<int, 3>& resolution, double enlargement, double grading);

/// Shell layer thicknesses for one side (exposed for tests).
std::vector<double> graded_layers(double first_size, double thickness, double grading);

void write_mesh_txt(const TissueMesh& mesh, const std::filesystem::path& file);
TissueMesh read_mesh_txt(const std::filesystem::path& file);

/// VTK legacy ASCII unstructured grid with nodal scalar fields.
void write_vtk(const TissueMesh& mesh, const std::filesystem::path& file,
               const std::vector<std::pair<std::string, Eigen::VectorXd>>& point_fields);

}  // namespace vasoperf
