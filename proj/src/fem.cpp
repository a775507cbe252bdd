#include "vasoperf/fem.hpp"

#include <Eigen/Dense>

namespace vasoperf {

namespace {

template <typename Kernel>
SpMat assemble_bilinear(const TissueMesh& mesh, const DofMap& dofs, const ElementCoefficient& coef, bool mass_grade,
                        Kernel kernel) {
  Triplets trip;
  for (std::size_t e = 0; e < mesh.n_elements(); ++e) {
    const int id = static_cast<int>(e);
    const double c = coef(id);
    if (c == 0.0) continue;
    const auto& el = mesh.element(id);
    const int nl = el.n_nodes();
    Eigen::Matrix<double, 8, 8> ke = Eigen::Matrix<double, 8, 8>::Zero();
    for (const auto& q : shape::volume_rule(el.kind, mass_grade)) kernel(id, el, q, c, ke);
    for (int a = 0; a < nl; ++a) {
      const int ra = dofs[el.nodes[static_cast<std::size_t>(a)]];
      if (ra < 0) continue;
      for (int b = 0; b < nl; ++b) {
        const int rb = dofs[el.nodes[static_cast<std::size_t>(b)]];
        if (rb >= 0) trip.emplace_back(ra, rb, ke(a, b));
      }
    }
  }
  SpMat m(dofs.size, dofs.size);
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

}  // namespace

SpMat assemble_stiffness(const TissueMesh& mesh, const DofMap& dofs, const ElementCoefficient& coef) {
  return assemble_bilinear(mesh, dofs, coef, false,
                           [&](int e, const Element& el, const QuadPoint& q, double c, Eigen::Matrix<double, 8, 8>& ke) {
                             const Eigen::Matrix3d j = mesh.jacobian(e, q.xi);
                             const double det = j.determinant();
                             const Eigen::Matrix3d jinv_t = j.inverse().transpose();
                             const auto g = shape::gradients(el.kind, q.xi);
                             const int nl = el.n_nodes();
                             Eigen::Matrix<double, 8, 3> gx = Eigen::Matrix<double, 8, 3>::Zero();
                             for (int l = 0; l < nl; ++l) gx.row(l) = (jinv_t * g.row(l).transpose()).transpose();
                             ke.topLeftCorner(nl, nl) += (c * q.weight * det) * gx.topRows(nl) * gx.topRows(nl).transpose();
                           });
}

SpMat assemble_mass(const TissueMesh& mesh, const DofMap& dofs, const ElementCoefficient& coef) {
  return assemble_bilinear(mesh, dofs, coef, true,
                           [&](int e, const Element& el, const QuadPoint& q, double c, Eigen::Matrix<double, 8, 8>& ke) {
                             const double det = mesh.jacobian(e, q.xi).determinant();
                             const auto n = shape::values(el.kind, q.xi);
                             const int nl = el.n_nodes();
                             for (int a = 0; a < nl; ++a)
                               for (int b = 0; b < nl; ++b)
                                 ke(a, b) += c * q.weight * det * n[static_cast<std::size_t>(a)] * n[static_cast<std::size_t>(b)];
                           });
}

Eigen::VectorXd assemble_load(const TissueMesh& mesh, const DofMap& dofs, const ElementCoefficient& coef) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(dofs.size);
  for (std::size_t e = 0; e < mesh.n_elements(); ++e) {
    const int id = static_cast<int>(e);
    const double c = coef(id);
    if (c == 0.0) continue;
    const auto& el = mesh.element(id);
    for (const auto& q : shape::volume_rule(el.kind, true)) {
      const double det = mesh.jacobian(id, q.xi).determinant();
      const auto n = shape::values(el.kind, q.xi);
      for (int a = 0; a < el.n_nodes(); ++a) {
        const int r = dofs[el.nodes[static_cast<std::size_t>(a)]];
        if (r >= 0) f[r] += c * q.weight * det * n[static_cast<std::size_t>(a)];
      }
    }
  }
  return f;
}

SpMat assemble_blocks(long rows, long cols, const std::vector<BlockEntry>& blocks) {
  Triplets trip;
  std::size_t nnz = 0;
  for (const auto& b : blocks) nnz += static_cast<std::size_t>(b.block->nonZeros());
  trip.reserve(nnz);
  for (const auto& b : blocks) {
    if (b.scale == 0.0) continue;
    for (long c = 0; c < b.block->outerSize(); ++c)
      for (SpMat::InnerIterator it(*b.block, c); it; ++it)
        trip.emplace_back(static_cast<int>(it.row() + b.row_offset), static_cast<int>(it.col() + b.col_offset),
                          b.scale * it.value());
  }
  SpMat m(rows, cols);
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

}  // namespace vasoperf
