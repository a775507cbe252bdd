#pragma once

#include "vasoperf/metrics.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace vasoperf {

struct LmOptions {
  double fd_relative_step = 1e-4;
  double fd_floor = 1e-12;  // absolute, native units
  int max_iterations = 40;
  double gradient_tolerance = 1e-9;   // ‖Jᵀr‖∞ with J taken in log θ
  double step_tolerance = 1e-6;       // ‖Δ log θ‖∞ of an accepted step
  double objective_tolerance = 1e-6;  // relative decrease of ‖r‖² of an accepted step
  double initial_damping = 1e-3;
  double damping_increase = 10.0;
  double damping_decrease = 0.5;
  double max_damping = 1e12;
};

struct LmIteration {
  int iteration = 0;
  std::vector<double> theta;  // trial point
  double cost = 0.0;          // ‖r‖² at the trial point
  double best_cost = 0.0;     // after the accept/reject decision
  bool accepted = false;
  double damping = 0.0;
  int evaluations = 0;        // cumulative
};

struct LmResult {
  std::vector<double> theta;
  double cost = 0.0;
  std::vector<LmIteration> trace;
  int evaluations = 0;
  int iterations = 0;
  bool converged = false;
  std::string reason;
};

/// Minimizes ‖r(θ)‖² by Levenberg–Marquardt in log-parameter space. The
/// initial iteration and every later one evaluate one point plus one forward
/// difference per parameter. Bounds are strictly positive; trial points are
/// clamped to them.
using ResidualFunction = std::function<Eigen::VectorXd(const std::vector<double>& theta)>;

LmResult least_squares(const ResidualFunction& residual, std::vector<double> theta0, const std::vector<double>& lower,
                       const std::vector<double>& upper, const LmOptions& opt = {});

enum class CalibrationMode : std::uint8_t { scalar, vf_linear };

/// Hybrid model evaluations against a fixed full-model reference. The
/// penalty is part of the problem and stays fixed while θ varies.
class HybridCalibrationProblem {
 public:
  HybridCalibrationProblem(const VesselNetwork& net, const TissueMesh& mesh, const PhysicsParams& physics,
                           const FullSolution& full, const RevPartition& revs, HybridParams base,
                           CalibrationMode mode, bool fix_surface_density = false,
                           std::array<double, 4> weights = {1.0, 1.0, 1.0, 1.0});

  CalibrationMode mode() const { return mode_; }
  std::size_t n_params() const;
  std::vector<std::string> param_names() const;
  std::vector<double> initial_theta() const;
  /// Parameters for a given θ (per-element kv for the volume-fraction law).
  HybridParams params_for(const std::vector<double>& theta) const;

  HybridSolution solve(const std::vector<double>& theta) const;
  ComparisonReport evaluate(const std::vector<double>& theta) const;
  double score(const std::vector<double>& theta) const { return evaluate(theta).r2_tot; }
  /// r_k = sqrt(w_k (1 − R²_k) / Σw) for L, S, IF and small-vessel flow, so
  /// that ‖r‖² = 1 − R²_tot.
  static Eigen::VectorXd report_residuals(const ComparisonReport& report);
  Eigen::VectorXd residuals(const std::vector<double>& theta) const { return report_residuals(evaluate(theta)); }

  /// Hybrid solves default to preconditioned CG: the repeated solves dominate
  /// the cost and the direct factorization fills in badly on 3D meshes.
  void set_solver_options(const SolverOptions& opt) { solver_ = opt; }
  const SolverOptions& solver_options() const { return solver_; }

  const HybridBoundaryConditions& boundary_conditions() const { return bcs_; }
  /// Small-vessel volume fraction of the REV holding each element centroid.
  const std::vector<double>& element_volume_fraction() const { return element_vf_; }

 private:
  const VesselNetwork& net_;
  const TissueMesh& mesh_;
  PhysicsParams physics_;
  const FullSolution& full_;
  const RevPartition& revs_;
  HybridParams base_;
  CalibrationMode mode_;
  bool fix_sv_;
  std::array<double, 4> weights_;
  HybridBoundaryConditions bcs_;
  std::vector<double> element_vf_;
  SolverOptions solver_{SolverMethod::cg};
};

struct CalibrationResult {
  LmResult lm;
  std::vector<std::string> names;
  HybridParams params;
  ComparisonReport report;
};

CalibrationResult calibrate(const HybridCalibrationProblem& problem, const std::vector<double>& theta0,
                            const std::vector<double>& lower, const std::vector<double>& upper,
                            const LmOptions& opt = {});

/// Per-REV absolute small-vessel plane flows against the small-vessel volume
/// fraction, three points per REV, with a least-squares line.
struct FlowFractionCorrelation {
  std::vector<double> volume_fraction;
  std::vector<double> abs_flow;
  LinearFit fit;
};

FlowFractionCorrelation flow_volume_fraction_correlation(const VesselNetwork& net, const RevPartition& revs,
                                                         const std::vector<double>& flow);

void write_calibration_trace_csv(const CalibrationResult& result, const std::filesystem::path& file);
void write_calibration_json(const CalibrationResult& result, const std::filesystem::path& file);

}  // namespace vasoperf
