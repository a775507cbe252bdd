#pragma once

#include "vasoperf/config.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace vasoperf {

// ---------------------------------------------------------------------------
// solution files (CSV at full double precision, plus VTK for viewing)

/// vessel_pressure.csv, tissue_pressure.csv, flows.csv, summary.json,
/// fields.vtk and network.vtk in `dir`.
void write_full_solution(const FullSolution& sol, const VesselNetwork& net, const TissueMesh& mesh,
                         const std::filesystem::path& dir);
FullSolution read_full_solution(const std::filesystem::path& dir, const VesselNetwork& net, const TissueMesh& mesh);

/// vessel.csv (Λ_L flag, p̂, λ, gap per node), tissue.csv (p^l, p^v per mesh
/// node), summary.json, fields.vtk and network.vtk in `dir`.
void write_hybrid_solution(const HybridSolution& sol, const VesselNetwork& net, const TissueMesh& mesh,
                           const std::filesystem::path& dir);
HybridSolution read_hybrid_solution(const std::filesystem::path& dir, const VesselNetwork& net,
                                    const TissueMesh& mesh);

// ---------------------------------------------------------------------------
// stages

struct PreparedNetwork {
  VesselNetwork network;  // with complete BCs
  bool assigned = false;  // BCs assigned here (false: imported with BCs)
  int n_pressure = 0;
  int n_noflux = 0;
  int n_optimized = 0;
  bool signs_converged = true;
};

/// Generate or import the network; tips without conditions are assigned and
/// optimized with `bc_seed`.
PreparedNetwork prepare_network(const ExperimentConfig& cfg, std::uint64_t bc_seed);
PreparedNetwork complete_boundary_conditions(const ExperimentConfig& cfg, VesselNetwork net, const Box3& domain,
                                             std::uint64_t bc_seed);

/// Ω_v: the inner box of a generated mesh, else the bounding box of the
/// vascular elements.
Box3 tumor_box(const TissueMesh& mesh);

struct RevStage {
  std::vector<GrowthCurve> curves;
  double length = 0.0;
  bool selected = false;  // from growth curves rather than configured
  double plateau_vf_small = 0.0;
  RevPartition partition;  // statistics filled
  std::optional<RadialProfile> profile;
};

RevStage analyze_revs(const ExperimentConfig& cfg, const VesselNetwork& partitioned, const Box3& domain);
void write_rev_stage(const RevStage& rev, const std::filesystem::path& dir);

struct PenaltyOutcome {
  HybridSolution solution;
  HybridParams params;  // with the ε used
  std::vector<double> tried;
  bool converged = true;
};

/// Fixed ε or the automatic adjustment, per the policy.
PenaltyOutcome solve_hybrid_with_policy(const VesselNetwork& net, const TissueMesh& mesh, const ExperimentConfig& cfg,
                                        HybridParams params);

struct CalibrationRun {
  CalibrationResult result;
  HybridSolution solution;  // at the optimum
};

/// Calibrate from the configured start and bounds; writes the trace,
/// result.json, comparison.json and rev_errors.csv to `dir`.
CalibrationRun run_calibration(const HybridCalibrationProblem& problem, const ExperimentConfig& cfg,
                               const std::filesystem::path& dir);

/// Σ small-vessel lateral surface inside Ω_v over |Ω_v| [1/μm].
double geometric_surface_density(const RevPartition& revs, const Box3& domain);

// ---------------------------------------------------------------------------
// experiments

using MetricMap = std::map<std::string, double>;

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string failed_stage;
  std::string error;
  MetricMap metrics;
};

/// All stages for one BC seed into `dir`. Failures are recorded in
/// status.json; the remaining stages are skipped.
SeedOutcome run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& dir);

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for one value
  double min = 0.0;
  double max = 0.0;
  int n = 0;
};

std::map<std::string, MetricSummary> aggregate_metrics(const std::vector<SeedOutcome>& outcomes);

struct PipelineResult {
  std::filesystem::path dir;
  std::string config_hash;
  std::vector<SeedOutcome> outcomes;
  int n_failed() const;
};

/// Seeds run concurrently (effective_threads); then config.json,
/// aggregate.json and aggregate.csv are written to cfg.output.
PipelineResult run_pipeline(const ExperimentConfig& cfg);

struct ScatterSummary {
  std::string name;
  int n_points = 0;
  double max_deviation = 0.0;  // max |test − reference|
};

struct ReportResult {
  std::vector<ScatterSummary> scatters;
  std::vector<std::string> gaps;  // missing inputs, per seed
};

/// Summary (report/summary.md) and scatter CSVs for an experiment directory.
/// Missing inputs are listed as gaps instead of failing.
ReportResult write_report(const std::filesystem::path& experiment_dir);

}  // namespace vasoperf
