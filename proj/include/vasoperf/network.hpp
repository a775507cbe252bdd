#pragma once

#include "vasoperf/geometry.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace vasoperf {

/// Plasma viscosity used by the in-vivo law [Pa·s].
inline constexpr double kPlasmaViscosity = 1.0e-3;
inline constexpr double kDefaultHematocrit = 0.45;

enum class BcType : std::uint8_t { none, pressure, noflux };

struct NodeBc {
  BcType type = BcType::none;
  double value = 0.0;  // Pa, meaningful for pressure only

  static NodeBc pressure(double p) { return {BcType::pressure, p}; }
  static NodeBc noflux() { return {BcType::noflux, 0.0}; }
  bool operator==(const NodeBc&) const = default;
};

struct VesselNode {
  int id = 0;
  Vec3 position = Vec3::Zero();
  NodeBc bc;
};

struct VesselSegment {
  int id = 0;
  int node_a = 0;
  int node_b = 0;
  double radius = 0.0;     // μm
  double viscosity = 0.0;  // Pa·s, derived from the diameter
  double length = 0.0;     // μm, derived from the node positions
};

enum class VesselClass : std::uint8_t { large, small };

/// Input record for a segment; viscosity and length are derived.
struct SegmentSpec {
  int node_a = 0;
  int node_b = 0;
  double radius = 0.0;
};

/// Immutable vessel graph. Node and segment ids equal their index.
class VesselNetwork {
 public:
  VesselNetwork() = default;
  VesselNetwork(std::vector<Vec3> positions, std::vector<NodeBc> bcs, const std::vector<SegmentSpec>& segments,
                double hematocrit = kDefaultHematocrit);

  const std::vector<VesselNode>& nodes() const { return nodes_; }
  const std::vector<VesselSegment>& segments() const { return segments_; }
  const VesselNode& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  const VesselSegment& segment(int i) const { return segments_[static_cast<std::size_t>(i)]; }
  std::size_t n_nodes() const { return nodes_.size(); }
  std::size_t n_segments() const { return segments_.size(); }
  double hematocrit() const { return hematocrit_; }

  const std::optional<std::vector<VesselClass>>& partition() const { return partition_; }
  bool is_large(int seg) const;

  /// Segment ids incident to each node.
  const std::vector<std::vector<int>>& incidence() const { return incidence_; }
  int degree(int node) const { return static_cast<int>(incidence_[static_cast<std::size_t>(node)].size()); }

  VesselNetwork with_bcs(std::vector<NodeBc> bcs) const;
  VesselNetwork with_partition(std::vector<VesselClass> partition) const;
  VesselNetwork without_partition() const;

  std::vector<Vec3> positions() const;
  std::vector<NodeBc> bcs() const;
  std::vector<SegmentSpec> segment_specs() const;

  /// Unit tangent from node_a to node_b.
  Vec3 tangent(int seg) const;

  /// Bounding box of the node positions.
  Box3 bounds() const;

 private:
  std::vector<VesselNode> nodes_;
  std::vector<VesselSegment> segments_;
  std::vector<std::vector<int>> incidence_;
  std::optional<std::vector<VesselClass>> partition_;
  double hematocrit_ = kDefaultHematocrit;
};

/// In-vivo blood viscosity [Pa·s] for a vessel of the given diameter [μm].
double viscosity_in_vivo(double diameter, double hematocrit = kDefaultHematocrit);

/// Relative in-vivo viscosity (dimensionless).
double relative_viscosity_in_vivo(double diameter, double hematocrit);

/// Hagen–Poiseuille conductance πR⁴/(8μL) [μm³/(Pa·s)].
double segment_conductance(const VesselSegment& s);

/// Connected components of the graph restricted to the segments for which
/// `keep(seg)` is true. Returns a component id per node (-1 for nodes with no
/// kept segment) and the component count.
struct Components {
  std::vector<int> node_component;
  int count = 0;
};
Components connected_components(const VesselNetwork& net, const std::function<bool(int)>& keep);

struct NetworkFlow {
  std::vector<double> pressure;  // per node [Pa]
  std::vector<double> flow;      // per segment, positive from node_a to node_b [μm³/s]
};

/// Kirchhoff solve without leakage. Pressure-BC nodes are Dirichlet, all
/// other nodes conserve flow.
NetworkFlow solve_network_poiseuille(const VesselNetwork& net);

/// Segment flows from nodal pressures.
std::vector<double> segment_flows(const VesselNetwork& net, const std::vector<double>& pressure);

struct PartitionResult {
  VesselNetwork network;
  int n_ranked_large = 0;  // segments above the flow threshold
  int n_demoted = 0;       // of those, moved to small by the length rule
};

PartitionResult partition_by_flow(const VesselNetwork& net, const std::vector<double>& flow, double keep_fraction,
                                  double min_component_length);

/// Nodes touched by at least one large segment.
std::vector<bool> large_node_mask(const VesselNetwork& net);

/// Segments with exactly one node in the large node set.
std::vector<int> connecting_segments(const VesselNetwork& net);

struct ConnectivityStats {
  double phi = 0.0;
  std::optional<double> cv_diameter;
  std::optional<double> cv_abs_flow;
  int n_connecting = 0;
};

ConnectivityStats connectivity_stats(const VesselNetwork& net, const std::vector<double>& flow);

struct NetworkStats {
  int n_segments = 0;
  int n_nodes = 0;
  double volume_fraction = 0.0;
  double surface_to_volume = 0.0;  // 1/μm
  double mean_diameter = 0.0;
  double std_diameter = 0.0;
  double mean_length = 0.0;
  double std_length = 0.0;
  int n_tips_hull = 0;
  int n_tips_interior = 0;
};

using HullPredicate = std::function<bool(const Vec3&)>;

NetworkStats network_stats(const VesselNetwork& net, double domain_volume, const HullPredicate& on_hull);

/// Box domain variant: hull = closer to the box boundary than one mean segment length.
NetworkStats network_stats(const VesselNetwork& net, const Box3& domain);

/// Degree-1 nodes.
std::vector<int> tip_nodes(const VesselNetwork& net);

/// Tips split into hull and interior by the box proxy.
struct TipClasses {
  std::vector<int> hull;
  std::vector<int> interior;
};
TipClasses classify_tips(const VesselNetwork& net, const Box3& domain);

// ---------------------------------------------------------------------------
// synthetic generators

enum class GeneratorKind : std::uint8_t { lattice, tree, two_scale };

struct GeneratorSpec {
  GeneratorKind kind = GeneratorKind::lattice;
  Box3 box;
  double max_segment_length = 30.0;

  // lattice and two-scale
  double pitch = 80.0;
  double radius = 4.0;
  // faces with half-pitch stubs, order x-, x+, y-, y+, z-, z+
  std::array<bool, 6> stub_faces{true, true, true, true, true, true};
  int interior_dead_ends = 0;
  double dead_end_length = 20.0;

  // two-scale
  double backbone_radius = 10.0;
  int backbone_lines = 1;  // per axis pair
  // probability of dropping a capillary edge at the center, falling
  // linearly to 0 at the boundary; 0 disables the gradient
  double center_sparsity = 0.0;

  // tree
  int n_roots = 4;
  int depth = 5;
  double root_radius = 12.0;
  double taper = 0.8;
  double branch_length = 120.0;
  double jitter = 0.35;
};

VesselNetwork generate_synthetic_network(const GeneratorSpec& spec, std::uint64_t seed);

/// Split every segment longer than `max_length` into equal pieces.
VesselNetwork subdivide(const VesselNetwork& net, double max_length);

// ---------------------------------------------------------------------------
// CSV I/O

void write_network_csv(const VesselNetwork& net, const std::filesystem::path& dir);
VesselNetwork read_network_csv(const std::filesystem::path& dir, double hematocrit = kDefaultHematocrit);

void write_partition_csv(const VesselNetwork& net, const std::filesystem::path& file);
std::vector<VesselClass> read_partition_csv(const std::filesystem::path& file, std::size_t n_segments);

/// VTK legacy ASCII polydata, one line per segment. Node fields go to
/// POINT_DATA, segment fields to CELL_DATA; radius and class (1 large, 0 small,
/// -1 unpartitioned) are always written.
using NamedField = std::pair<std::string, std::vector<double>>;
void write_network_vtk(const VesselNetwork& net, const std::filesystem::path& file,
                       const std::vector<NamedField>& node_fields = {},
                       const std::vector<NamedField>& segment_fields = {});

const char* to_string(BcType t);
BcType parse_bc_type(const std::string& s);

}  // namespace vasoperf
