#pragma once

#include "vasoperf/calibration.hpp"
#include "vasoperf/full_model.hpp"
#include "vasoperf/hybrid_model.hpp"
#include "vasoperf/network.hpp"
#include "vasoperf/rev.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace vasoperf {

struct NetworkConfig {
  std::optional<std::filesystem::path> import_dir;  // nodes.csv + segments.csv; generated when empty
  GeneratorSpec generator;
  std::uint64_t seed = 21;
};

struct MeshConfig {
  std::optional<std::filesystem::path> import_file;  // mesh.txt; generated when empty
  std::optional<Box3> box;  // Ω_v; the network bounding box when empty
  std::array<int, 3> resolution{14, 14, 14};
  double enlargement = 1.5;
  double grading = 1.3;
};

struct PartitionConfig {
  double keep_fraction = 0.10;
  double min_component_length = 150.0;  // μm
};

struct PenaltyPolicy {
  bool automatic = true;
  double value = 100.0;  // fixed ε, or the first trial when automatic [μm²/(Pa·s)]
  double factor = 4.0;
  int max_adjustments = 4;
};

struct RevConfig {
  std::optional<double> length;  // μm; selected from growth curves when empty
  GrowthOptions growth;
  RevSelection selection;
  std::uint64_t seed = 7;
};

enum class CalibrationChoice : std::uint8_t { none, scalar, vf_linear, both };

struct CalibrationConfig {
  CalibrationChoice mode = CalibrationChoice::scalar;
  bool fix_surface_density = false;
  double kv_init = 1.0;                 // μm²/(Pa·s)
  double surface_density_init = 0.01;   // 1/μm
  std::optional<double> alpha_init;     // vf-linear; from kv_init at the mean fraction when empty
  std::array<double, 2> kv_bounds{1e-3, 1e3};
  std::array<double, 2> surface_density_bounds{1e-4, 1.0};
  std::array<double, 2> alpha_bounds{1e-3, 1e6};
  std::array<double, 4> weights{1.0, 1.0, 1.0, 1.0};
  LmOptions lm;
};

struct ExperimentConfig {
  NetworkConfig network;
  MeshConfig mesh;
  PhysicsParams physics;
  BcAssignmentConfig boundary;
  FlowTargets targets;
  PartitionConfig partition;
  HybridParams hybrid;
  PenaltyPolicy penalty;
  SolverOptions solver{SolverMethod::cg};
  RevConfig rev;
  CalibrationConfig calibration;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::filesystem::path output = "experiment";
  int threads = 0;  // 0: hardware concurrency

  ExperimentConfig();
  /// ConfigError on any out-of-range value.
  void validate() const;
};

/// Parse TOML text; relative paths resolve against `base_dir`. Unknown keys
/// are rejected. The result is validated.
ExperimentConfig parse_config(const std::string& toml_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& file);

/// Calibration start from a TOML file with any of `kv`, `surface_density`
/// (scalar mode) and `alpha` (vf-linear mode) at the top level.
void apply_calibration_start(const std::filesystem::path& file, CalibrationConfig& c);

/// Every setting as sorted-key JSON; equal configs give equal text.
std::string canonical_config_json(const ExperimentConfig& cfg);
/// 16 hex digits of FNV-1a over the canonical JSON without output and threads.
std::string config_hash(const ExperimentConfig& cfg);

const char* to_string(CalibrationChoice c);

/// Mesh for a network: imported, or a graded box mesh around the configured
/// or bounding box.
TissueMesh make_mesh(const MeshConfig& cfg, const VesselNetwork& net);
/// "gen:NX,NY,NZ[:enlargement[:grading]]" or a mesh.txt path.
MeshConfig parse_mesh_spec(const std::string& spec, MeshConfig base = {});

/// VASOPERF_THREADS caps `requested` (0 means hardware concurrency); at least 1.
int effective_threads(int requested);

}  // namespace vasoperf
