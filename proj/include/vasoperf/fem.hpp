#pragma once

#include "vasoperf/coupling.hpp"
#include "vasoperf/linear_solver.hpp"
#include "vasoperf/mesh.hpp"

#include <functional>

namespace vasoperf {

/// Per-element coefficient; elements with coefficient 0 are skipped.
using ElementCoefficient = std::function<double(int element)>;

/// ∫ c ∇N_i · ∇N_j
SpMat assemble_stiffness(const TissueMesh& mesh, const DofMap& dofs, const ElementCoefficient& coef);
/// ∫ c N_i N_j
SpMat assemble_mass(const TissueMesh& mesh, const DofMap& dofs, const ElementCoefficient& coef);
/// ∫ c N_i
Eigen::VectorXd assemble_load(const TissueMesh& mesh, const DofMap& dofs, const ElementCoefficient& coef);

/// Vertically stack/concatenate sparse blocks into one matrix.
struct BlockEntry {
  const SpMat* block;
  long row_offset;
  long col_offset;
  double scale;
};
SpMat assemble_blocks(long rows, long cols, const std::vector<BlockEntry>& blocks);

}  // namespace vasoperf
