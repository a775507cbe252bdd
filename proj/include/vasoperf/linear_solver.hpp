#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <cstdint>
#include <string>
#include <vector>

namespace vasoperf {

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;
using Triplets = std::vector<Triplet>;

enum class SolverMethod : std::uint8_t { automatic, direct, cg };

struct SolverOptions {
  SolverMethod method = SolverMethod::automatic;
  double tolerance = 1e-10;  // relative residual target
  int max_iterations = 50000;
  // automatic picks the direct path below this many unknowns
  long direct_limit = 300000;
};

struct SolveReport {
  std::string method;
  double relative_residual = 0.0;
  int iterations = 0;
  std::vector<double> history;
};

/// Solve A x = b for symmetric positive definite A (both triangles stored).
Eigen::VectorXd solve_spd(const SpMat& a, const Eigen::VectorXd& b, const SolverOptions& opt, SolveReport* report);

/// Solve with the unknowns flagged in `fixed` set to `fixed_values` by
/// elimination. The reduced matrix must be SPD. Returns the full vector.
Eigen::VectorXd solve_spd_dirichlet(const SpMat& a, const Eigen::VectorXd& b, const std::vector<bool>& fixed,
                                    const Eigen::VectorXd& fixed_values, const SolverOptions& opt,
                                    SolveReport* report);

double relative_residual(const SpMat& a, const Eigen::VectorXd& x, const Eigen::VectorXd& b);

}  // namespace vasoperf
