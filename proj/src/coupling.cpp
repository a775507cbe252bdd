#include "vasoperf/coupling.hpp"

#include "vasoperf/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace vasoperf {

DofMap DofMap::identity(std::size_t n) {
  DofMap m;
  m.index.resize(n);
  for (std::size_t i = 0; i < n; ++i) m.index[i] = static_cast<int>(i);
  m.size = static_cast<int>(n);
  return m;
}

DofMap DofMap::from_mask(const std::vector<bool>& mask) {
  DofMap m;
  m.index.assign(mask.size(), -1);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) m.index[i] = m.size++;
  return m;
}

namespace {

bool is_axis_aligned_box(const TissueMesh& mesh, int e) {
  const auto& el = mesh.element(e);
  if (el.kind != ElementKind::hex8) return false;
  const Box3 b = mesh.element_bounds(e);
  const double tol = 1e-12 * b.extent().maxCoeff();
  static constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                        {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
  for (int l = 0; l < 8; ++l) {
    const Vec3& p = mesh.node(el.nodes[static_cast<std::size_t>(l)]);
    for (int k = 0; k < 3; ++k) {
      const double ref = kCorner[l][k] ? b.hi[k] : b.lo[k];
      if (std::abs(p[k] - ref) > tol) return false;
    }
  }
  return true;
}

// Parameter interval of a + t(b-a), t in [0,1], inside a convex element
// bounded by planes (tetrahedra, and hexahedra via face-averaged planes).
std::optional<std::pair<double, double>> clip_convex(const TissueMesh& mesh, int e, const Vec3& a, const Vec3& b) {
  const auto& el = mesh.element(e);
  static constexpr int kHexFaces[6][4] = {{0, 3, 2, 1}, {4, 5, 6, 7}, {0, 1, 5, 4},
                                          {1, 2, 6, 5}, {2, 3, 7, 6}, {3, 0, 4, 7}};
  static constexpr int kTetFaces[4][3] = {{0, 2, 1}, {0, 1, 3}, {1, 2, 3}, {0, 3, 2}};
  const bool hex = el.kind == ElementKind::hex8;
  Vec3 centroid = Vec3::Zero();
  for (int l = 0; l < el.n_nodes(); ++l) centroid += mesh.node(el.nodes[static_cast<std::size_t>(l)]);
  centroid /= el.n_nodes();
  double t0 = 0.0, t1 = 1.0;
  const Vec3 d = b - a;
  for (int f = 0; f < (hex ? 6 : 4); ++f) {
    const int nv = hex ? 4 : 3;
    Vec3 fc = Vec3::Zero();
    std::array<Vec3, 4> v;
    for (int k = 0; k < nv; ++k) {
      v[static_cast<std::size_t>(k)] = mesh.node(el.nodes[static_cast<std::size_t>(hex ? kHexFaces[f][k] : kTetFaces[f][k])]);
      fc += v[static_cast<std::size_t>(k)];
    }
    fc /= nv;
    Vec3 n = hex ? (v[2] - v[0]).cross(v[3] - v[1]) : (v[1] - v[0]).cross(v[2] - v[0]);
    if (n.dot(fc - centroid) < 0.0) n = -n;  // outward
    const double num = n.dot(fc - a);
    const double den = n.dot(d);
    if (den == 0.0) {
      if (num < 0.0) return std::nullopt;
      continue;
    }
    const double t = num / den;
    if (den > 0.0)
      t1 = std::min(t1, t);
    else
      t0 = std::max(t0, t);
    if (t0 >= t1) return std::nullopt;
  }
  return std::make_pair(t0, t1);
}

}  // namespace

std::vector<IntegrationSegment> build_segments(const VesselNetwork& net, const std::vector<int>& elements1d,
                                               const TissueMesh& mesh, int gauss_points) {
  if (gauss_points < 1) throw ConfigError("gauss_points must be at least 1");
  const auto gl = shape::gauss_legendre(gauss_points);
  std::vector<IntegrationSegment> out;
  std::vector<std::uint8_t> aligned(mesh.n_elements(), 2);  // 2 = unknown

  for (int sid : elements1d) {
    const auto& seg = net.segment(sid);
    const Vec3 a = net.node(seg.node_a).position;
    const Vec3 b = net.node(seg.node_b).position;
    Box3 bb{a.cwiseMin(b), a.cwiseMax(b)};
    const auto cands = mesh.candidate_elements(bb);

    std::vector<double> cuts{0.0, 1.0};
    for (int e : cands) {
      auto& al = aligned[static_cast<std::size_t>(e)];
      if (al == 2) al = is_axis_aligned_box(mesh, e) ? 1 : 0;
      const auto iv = al ? clip_segment(a, b, mesh.element_bounds(e)) : clip_convex(mesh, e, a, b);
      if (!iv) continue;
      cuts.push_back(iv->first);
      cuts.push_back(iv->second);
    }
    std::sort(cuts.begin(), cuts.end());
    std::vector<double> t;
    for (double c : cuts) {
      c = std::clamp(c, 0.0, 1.0);
      if (t.empty() || c - t.back() > 1e-12) t.push_back(c);
    }
    if (t.back() < 1.0) t.back() = 1.0;

    std::vector<std::pair<int, std::pair<double, double>>> pieces;
    for (std::size_t k = 0; k + 1 < t.size(); ++k) {
      const Vec3 mid = a + 0.5 * (t[k] + t[k + 1]) * (b - a);
      int host = -1;
      for (int e : cands)
        if (mesh.inverse_map(e, mid, 1e-9)) {
          host = e;
          break;
        }
      if (host < 0) {
        std::ostringstream os;
        os << "1D element " << sid << " leaves the 3D mesh near (" << mid.x() << ", " << mid.y() << ", " << mid.z()
           << ")";
        throw GeometryError(os.str());
      }
      if (!pieces.empty() && pieces.back().first == host)
        pieces.back().second.second = t[k + 1];
      else
        pieces.push_back({host, {t[k], t[k + 1]}});
    }

    for (const auto& [host, iv] : pieces) {
      IntegrationSegment is;
      is.owner = sid;
      is.host = host;
      is.xi_a = 2.0 * iv.first - 1.0;
      is.xi_b = 2.0 * iv.second - 1.0;
      is.length = (iv.second - iv.first) * seg.length;
      for (const auto& [g, w] : gl) {
        SegmentGaussPoint gp;
        gp.xi = 0.5 * (is.xi_a + is.xi_b) + 0.5 * (is.xi_b - is.xi_a) * g;
        gp.weight = w * 0.5 * (is.xi_b - is.xi_a) * 0.5 * seg.length;
        gp.x = a + 0.5 * (gp.xi + 1.0) * (b - a);
        auto hx = mesh.inverse_map(host, gp.x, 1e-6);
        if (!hx) throw GeometryError("Gauss point of 1D element " + std::to_string(sid) + " not inside host element " +
                                     std::to_string(host));
        gp.host_xi = shape::clamp_reference(mesh.element(host).kind, *hx);
        is.gauss.push_back(gp);
      }
      out.push_back(std::move(is));
    }
  }
  return out;
}

void write_segments_csv(const std::vector<IntegrationSegment>& segs, const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot write " + file.string());
  out << "elem1d,elem3d,xi_a,xi_b,length\n";
  out.precision(17);
  for (const auto& s : segs) out << s.owner << ',' << s.host << ',' << s.xi_a << ',' << s.xi_b << ',' << s.length << '\n';
}

LineExchangeBlocks assemble_line_exchange(const std::vector<IntegrationSegment>& segs, const VesselNetwork& net,
                                          const TissueMesh& mesh, const LineCoefficient& coef, const DofMap& dof1d,
                                          const DofMap& dof3d) {
  const int n1 = dof1d.size, n3 = dof3d.size;
  Triplets t11, t13, t33;
  LineExchangeBlocks out;
  out.load1 = Eigen::VectorXd::Zero(n1);
  out.load3 = Eigen::VectorXd::Zero(n3);
  for (const auto& is : segs) {
    const auto& seg = net.segment(is.owner);
    const double c = coef(is.owner);
    if (c == 0.0) continue;
    const std::array<int, 2> r1{dof1d[seg.node_a], dof1d[seg.node_b]};
    const auto& el = mesh.element(is.host);
    const int nl = el.n_nodes();
    std::array<int, 8> r3{};
    for (int l = 0; l < nl; ++l) r3[static_cast<std::size_t>(l)] = dof3d[el.nodes[static_cast<std::size_t>(l)]];
    for (const auto& gp : is.gauss) {
      const auto nh = hat_values(gp.xi);
      const auto n = shape::values(el.kind, gp.host_xi);
      const double w = c * gp.weight;
      for (int i = 0; i < 2; ++i) {
        if (r1[static_cast<std::size_t>(i)] < 0) continue;
        out.load1[r1[static_cast<std::size_t>(i)]] += w * nh[static_cast<std::size_t>(i)];
        for (int j = 0; j < 2; ++j)
          if (r1[static_cast<std::size_t>(j)] >= 0)
            t11.emplace_back(r1[static_cast<std::size_t>(i)], r1[static_cast<std::size_t>(j)],
                             w * nh[static_cast<std::size_t>(i)] * nh[static_cast<std::size_t>(j)]);
        for (int l = 0; l < nl; ++l)
          if (r3[static_cast<std::size_t>(l)] >= 0)
            t13.emplace_back(r1[static_cast<std::size_t>(i)], r3[static_cast<std::size_t>(l)],
                             w * nh[static_cast<std::size_t>(i)] * n[static_cast<std::size_t>(l)]);
      }
      for (int k = 0; k < nl; ++k) {
        if (r3[static_cast<std::size_t>(k)] < 0) continue;
        out.load3[r3[static_cast<std::size_t>(k)]] += w * n[static_cast<std::size_t>(k)];
        for (int l = 0; l < nl; ++l)
          if (r3[static_cast<std::size_t>(l)] >= 0)
            t33.emplace_back(r3[static_cast<std::size_t>(k)], r3[static_cast<std::size_t>(l)],
                             w * n[static_cast<std::size_t>(k)] * n[static_cast<std::size_t>(l)]);
      }
    }
  }
  out.b11.resize(n1, n1);
  out.b11.setFromTriplets(t11.begin(), t11.end());
  out.b13.resize(n1, n3);
  out.b13.setFromTriplets(t13.begin(), t13.end());
  out.b31 = out.b13.transpose();
  out.b33.resize(n3, n3);
  out.b33.setFromTriplets(t33.begin(), t33.end());
  return out;
}

MortarOperators assemble_mortar(const std::vector<IntegrationSegment>& segs, const VesselNetwork& net,
                                const TissueMesh& mesh, const DofMap& dof1d, const DofMap& dof3d) {
  for (const auto& is : segs) {
    const auto& el = mesh.element(is.host);
    for (int l = 0; l < el.n_nodes(); ++l)
      if (dof3d[el.nodes[static_cast<std::size_t>(l)]] < 0)
        throw GeometryError("1D element " + std::to_string(is.owner) + " lies in 3D element " + std::to_string(is.host) +
                            " outside the homogenized subdomain");
    const auto& seg = net.segment(is.owner);
    if (dof1d[seg.node_a] < 0 || dof1d[seg.node_b] < 0)
      throw ContractError("assemble_mortar: 1D element " + std::to_string(is.owner) + " has nodes without multiplier");
  }
  const auto blocks = assemble_line_exchange(segs, net, mesh, [](int) { return 1.0; }, dof1d, dof3d);
  MortarOperators ops;
  ops.d = blocks.b11;
  ops.m = blocks.b13;
  ops.kappa = blocks.load1;
  return ops;
}

Eigen::VectorXd weighted_gap(const MortarOperators& ops, const Eigen::VectorXd& p1d, const Eigen::VectorXd& p3d) {
  if (p1d.size() != ops.d.cols() || p3d.size() != ops.m.cols())
    throw ContractError("weighted_gap: pressure vector sizes do not match the mortar operators");
  return ops.d * p1d - ops.m * p3d;
}

Eigen::VectorXd recover_multipliers(const MortarOperators& ops, double eps, const Eigen::VectorXd& gap) {
  if (!(eps > 0.0)) throw ConfigError("penalty parameter must be positive");
  if (gap.size() != ops.kappa.size()) throw ContractError("recover_multipliers: gap size mismatch");
  Eigen::VectorXd lambda(gap.size());
  for (long j = 0; j < gap.size(); ++j) lambda[j] = ops.kappa[j] > 0.0 ? eps * gap[j] / ops.kappa[j] : 0.0;
  return lambda;
}

}  // namespace vasoperf
