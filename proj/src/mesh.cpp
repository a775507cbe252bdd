#include "vasoperf/mesh.hpp"

#include "vasoperf/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace vasoperf {

// ---------------------------------------------------------------------------
// shape functions

namespace shape {

namespace {
constexpr double kHexSign[8][3] = {{-1, -1, -1}, {1, -1, -1}, {1, 1, -1}, {-1, 1, -1},
                                   {-1, -1, 1},  {1, -1, 1},  {1, 1, 1},  {-1, 1, 1}};
}

ShapeValues values(ElementKind kind, const Vec3& xi) {
  ShapeValues n{};
  if (kind == ElementKind::hex8) {
    for (int l = 0; l < 8; ++l)
      n[static_cast<std::size_t>(l)] = 0.125 * (1.0 + kHexSign[l][0] * xi[0]) * (1.0 + kHexSign[l][1] * xi[1]) *
                                       (1.0 + kHexSign[l][2] * xi[2]);
  } else {
    n[0] = 1.0 - xi[0] - xi[1] - xi[2];
    n[1] = xi[0];
    n[2] = xi[1];
    n[3] = xi[2];
  }
  return n;
}

ShapeGradients gradients(ElementKind kind, const Vec3& xi) {
  ShapeGradients g = ShapeGradients::Zero();
  if (kind == ElementKind::hex8) {
    for (int l = 0; l < 8; ++l) {
      const double a = 1.0 + kHexSign[l][0] * xi[0];
      const double b = 1.0 + kHexSign[l][1] * xi[1];
      const double c = 1.0 + kHexSign[l][2] * xi[2];
      g(l, 0) = 0.125 * kHexSign[l][0] * b * c;
      g(l, 1) = 0.125 * a * kHexSign[l][1] * c;
      g(l, 2) = 0.125 * a * b * kHexSign[l][2];
    }
  } else {
    g.row(0) << -1.0, -1.0, -1.0;
    g.row(1) << 1.0, 0.0, 0.0;
    g.row(2) << 0.0, 1.0, 0.0;
    g.row(3) << 0.0, 0.0, 1.0;
  }
  return g;
}

bool inside_reference(ElementKind kind, const Vec3& xi, double tol) {
  if (kind == ElementKind::hex8) return (xi.array().abs() <= 1.0 + tol).all();
  return (xi.array() >= -tol).all() && xi.sum() <= 1.0 + tol;
}

Vec3 clamp_reference(ElementKind kind, const Vec3& xi) {
  if (kind == ElementKind::hex8) return xi.cwiseMax(-1.0).cwiseMin(1.0);
  Vec3 c = xi.cwiseMax(0.0);
  const double s = c.sum();
  if (s > 1.0) c /= s;
  return c;
}

Vec3 reference_centroid(ElementKind kind) {
  return kind == ElementKind::hex8 ? Vec3::Zero() : Vec3::Constant(0.25);
}

std::vector<std::pair<double, double>> gauss_legendre(int n) {
  if (n < 1) throw ContractError("gauss_legendre: order must be positive");
  std::vector<std::pair<double, double>> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    // Newton on the Legendre polynomial from the Chebyshev guess
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double dp = 1.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    out[static_cast<std::size_t>(i)] = {x, 2.0 / ((1.0 - x * x) * dp * dp)};
  }
  std::sort(out.begin(), out.end());
  return out;
}

const std::vector<QuadPoint>& volume_rule(ElementKind kind, bool mass_grade) {
  static const std::vector<QuadPoint> hex = [] {
    std::vector<QuadPoint> r;
    const auto g = gauss_legendre(2);
    for (const auto& c : g)
      for (const auto& b : g)
        for (const auto& a : g) r.push_back({Vec3(a.first, b.first, c.first), a.second * b.second * c.second});
    return r;
  }();
  static const std::vector<QuadPoint> tet1{{Vec3::Constant(0.25), 1.0 / 6.0}};
  static const std::vector<QuadPoint> tet4 = [] {
    const double a = 0.5854101966249685, b = 0.1381966011250105;
    return std::vector<QuadPoint>{{Vec3(b, b, b), 1.0 / 24.0},
                                  {Vec3(a, b, b), 1.0 / 24.0},
                                  {Vec3(b, a, b), 1.0 / 24.0},
                                  {Vec3(b, b, a), 1.0 / 24.0}};
  }();
  if (kind == ElementKind::hex8) return hex;
  return mass_grade ? tet4 : tet1;
}

}  // namespace shape

// ---------------------------------------------------------------------------
// mesh

TissueMesh::TissueMesh(std::vector<Vec3> nodes, std::vector<Element> elements)
    : nodes_(std::move(nodes)), elements_(std::move(elements)) {
  if (nodes_.empty() || elements_.empty()) throw ConfigError("mesh needs nodes and elements");
  const auto nn = static_cast<int>(nodes_.size());
  vascular_mask_.assign(nodes_.size(), false);
  for (std::size_t e = 0; e < elements_.size(); ++e) {
    const auto& el = elements_[e];
    for (int l = 0; l < el.n_nodes(); ++l) {
      const int id = el.nodes[static_cast<std::size_t>(l)];
      if (id < 0 || id >= nn) throw ConfigError("element " + std::to_string(e) + " references a missing node");
      if (el.vascular) vascular_mask_[static_cast<std::size_t>(id)] = true;
    }
    if (el.vascular) ++n_vascular_elements_;
    const auto& q = shape::volume_rule(el.kind, false);
    for (const auto& p : q)
      if (!(jacobian(static_cast<int>(e), p.xi).determinant() > 0.0))
        throw ConfigError("element " + std::to_string(e) + " has a non-positive Jacobian");
  }
  bounds_.lo = bounds_.hi = nodes_.front();
  for (const auto& p : nodes_) {
    bounds_.lo = bounds_.lo.cwiseMin(p);
    bounds_.hi = bounds_.hi.cwiseMax(p);
  }
  build_boundaries();
  build_hash();
}

void TissueMesh::build_boundaries() {
  static constexpr int kHexFaces[6][4] = {{0, 3, 2, 1}, {4, 5, 6, 7}, {0, 1, 5, 4},
                                          {1, 2, 6, 5}, {2, 3, 7, 6}, {3, 0, 4, 7}};
  static constexpr int kTetFaces[4][3] = {{0, 2, 1}, {0, 1, 3}, {1, 2, 3}, {0, 3, 2}};
  struct FaceInfo {
    int count = 0;
    int vascular = 0;
  };
  std::map<std::array<int, 4>, FaceInfo> faces;
  for (const auto& el : elements_) {
    const bool hex = el.kind == ElementKind::hex8;
    const int nf = hex ? 6 : 4;
    for (int f = 0; f < nf; ++f) {
      std::array<int, 4> key{-1, -1, -1, -1};
      for (int k = 0; k < (hex ? 4 : 3); ++k)
        key[static_cast<std::size_t>(k)] = el.nodes[static_cast<std::size_t>(hex ? kHexFaces[f][k] : kTetFaces[f][k])];
      std::sort(key.begin(), key.end());
      auto& info = faces[key];
      ++info.count;
      if (el.vascular) ++info.vascular;
    }
  }
  std::vector<bool> outer(nodes_.size(), false), vb(nodes_.size(), false);
  for (const auto& [key, info] : faces) {
    for (int id : key) {
      if (id < 0) continue;
      if (info.count == 1) outer[static_cast<std::size_t>(id)] = true;
      if (info.vascular == 1) vb[static_cast<std::size_t>(id)] = true;
    }
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (outer[i]) outer_nodes_.push_back(static_cast<int>(i));
    if (vb[i]) vascular_boundary_nodes_.push_back(static_cast<int>(i));
  }
}

std::uint64_t TissueMesh::hash_key(int level, const Eigen::Vector3i& c) const {
  constexpr std::uint64_t mask = (1u << 19) - 1;
  return (static_cast<std::uint64_t>(level) << 57) | ((static_cast<std::uint64_t>(c[0]) & mask) << 38) |
         ((static_cast<std::uint64_t>(c[1]) & mask) << 19) | (static_cast<std::uint64_t>(c[2]) & mask);
}

Eigen::Vector3i TissueMesh::hash_cell(int level, const Vec3& p) const {
  const double cell = std::ldexp(hash_base_, level);
  Eigen::Vector3i c;
  for (int k = 0; k < 3; ++k) c[k] = std::max(0, static_cast<int>(std::floor((p[k] - bounds_.lo[k]) / cell)));
  return c;
}

void TissueMesh::build_hash() {
  std::vector<double> sizes(elements_.size());
  for (std::size_t e = 0; e < elements_.size(); ++e) sizes[e] = element_bounds(static_cast<int>(e)).extent().maxCoeff();
  std::vector<double> sorted = sizes;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(sorted.size() / 2), sorted.end());
  hash_base_ = std::max(sorted[sorted.size() / 2], 1e-12 * std::max(1.0, bounds_.extent().maxCoeff()));
  hash_levels_ = 0;
  level_used_.assign(64, 0);
  for (std::size_t e = 0; e < elements_.size(); ++e) {
    int level = 0;
    while (std::ldexp(hash_base_, level) < sizes[e] && level < 56) ++level;
    level_used_[static_cast<std::size_t>(level)] = 1;
    hash_levels_ = std::max(hash_levels_, level + 1);
    const Box3 b = element_bounds(static_cast<int>(e));
    const Eigen::Vector3i c0 = hash_cell(level, b.lo), c1 = hash_cell(level, b.hi);
    for (int k = c0[2]; k <= c1[2]; ++k)
      for (int j = c0[1]; j <= c1[1]; ++j)
        for (int i = c0[0]; i <= c1[0]; ++i) hash_[hash_key(level, {i, j, k})].push_back(static_cast<int>(e));
  }
}

std::vector<int> TissueMesh::candidate_elements(const Box3& query) const {
  std::vector<int> out;
  for (int level = 0; level < hash_levels_; ++level) {
    if (!level_used_[static_cast<std::size_t>(level)]) continue;
    const Eigen::Vector3i c0 = hash_cell(level, query.lo), c1 = hash_cell(level, query.hi);
    for (int k = c0[2]; k <= c1[2]; ++k)
      for (int j = c0[1]; j <= c1[1]; ++j)
        for (int i = c0[0]; i <= c1[0]; ++i) {
          const auto it = hash_.find(hash_key(level, {i, j, k}));
          if (it == hash_.end()) continue;
          for (int e : it->second) {
            const Box3 b = element_bounds(e);
            if ((b.lo.array() <= query.hi.array()).all() && (b.hi.array() >= query.lo.array()).all()) out.push_back(e);
          }
        }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

Vec3 TissueMesh::map(int e, const Vec3& xi) const {
  const auto& el = element(e);
  const auto n = shape::values(el.kind, xi);
  Vec3 x = Vec3::Zero();
  for (int l = 0; l < el.n_nodes(); ++l) x += n[static_cast<std::size_t>(l)] * node(el.nodes[static_cast<std::size_t>(l)]);
  return x;
}

Eigen::Matrix3d TissueMesh::jacobian(int e, const Vec3& xi) const {
  const auto& el = element(e);
  const auto g = shape::gradients(el.kind, xi);
  Eigen::Matrix3d j = Eigen::Matrix3d::Zero();
  for (int l = 0; l < el.n_nodes(); ++l) j += node(el.nodes[static_cast<std::size_t>(l)]) * g.row(l);
  return j;
}

std::optional<Vec3> TissueMesh::inverse_map(int e, const Vec3& x, double tol) const {
  const auto& el = element(e);
  Vec3 xi = shape::reference_centroid(el.kind);
  const double h = element_size(e);
  if (el.kind == ElementKind::tet4) {
    xi = jacobian(e, xi).lu().solve(x - node(el.nodes[0]));
  } else {
    bool converged = false;
    for (int it = 0; it < 50; ++it) {
      const Vec3 r = map(e, xi) - x;
      const Vec3 d = jacobian(e, xi).lu().solve(r);
      xi -= d;
      if (!xi.allFinite() || xi.cwiseAbs().maxCoeff() > 10.0) return std::nullopt;
      if (d.cwiseAbs().maxCoeff() < 1e-15 || r.norm() < 1e-14 * h) {
        converged = true;
        break;
      }
    }
    if (!converged && (map(e, xi) - x).norm() > 1e-10 * h) return std::nullopt;
  }
  if (!shape::inside_reference(el.kind, xi, tol)) return std::nullopt;
  return xi;
}

Box3 TissueMesh::element_bounds(int e) const {
  const auto& el = element(e);
  Box3 b{node(el.nodes[0]), node(el.nodes[0])};
  for (int l = 1; l < el.n_nodes(); ++l) {
    const Vec3& p = node(el.nodes[static_cast<std::size_t>(l)]);
    b.lo = b.lo.cwiseMin(p);
    b.hi = b.hi.cwiseMax(p);
  }
  return b;
}

double TissueMesh::element_volume(int e) const {
  double v = 0.0;
  for (const auto& q : shape::volume_rule(element(e).kind, false)) v += q.weight * jacobian(e, q.xi).determinant();
  return v;
}

double TissueMesh::element_size(int e) const { return element_bounds(e).extent().norm(); }

std::optional<PointLocation> TissueMesh::locate(const Vec3& p) const {
  if (!bounds_.contains(p, 1e-12 * bounds_.extent().maxCoeff())) return std::nullopt;
  for (int e : candidate_elements(Box3{p, p})) {
    if (auto xi = inverse_map(e, p)) return PointLocation{e, shape::clamp_reference(element(e).kind, *xi)};
  }
  return std::nullopt;
}

double TissueMesh::interpolate_in(int e, const Vec3& xi, const Eigen::VectorXd& field) const {
  const auto& el = element(e);
  const auto n = shape::values(el.kind, xi);
  double v = 0.0;
  for (int l = 0; l < el.n_nodes(); ++l) v += n[static_cast<std::size_t>(l)] * field[el.nodes[static_cast<std::size_t>(l)]];
  return v;
}

Vec3 TissueMesh::gradient_in(int e, const Vec3& xi, const Eigen::VectorXd& field) const {
  const auto& el = element(e);
  const auto g = shape::gradients(el.kind, xi);
  Vec3 dref = Vec3::Zero();
  for (int l = 0; l < el.n_nodes(); ++l) dref += field[el.nodes[static_cast<std::size_t>(l)]] * g.row(l).transpose();
  return jacobian(e, xi).transpose().lu().solve(dref);
}

double TissueMesh::interpolate(const Eigen::VectorXd& field, const Vec3& p) const {
  if (field.size() != static_cast<long>(nodes_.size())) throw ContractError("interpolate: field size mismatch");
  const auto loc = locate(p);
  if (!loc) {
    std::ostringstream os;
    os << "point (" << p.x() << ", " << p.y() << ", " << p.z() << ") lies outside the mesh";
    throw DomainError(os.str());
  }
  return interpolate_in(loc->element, loc->xi, field);
}

double TissueMesh::total_volume() const {
  double v = 0.0;
  for (std::size_t e = 0; e < elements_.size(); ++e) v += element_volume(static_cast<int>(e));
  return v;
}

double TissueMesh::vascular_volume() const {
  double v = 0.0;
  for (std::size_t e = 0; e < elements_.size(); ++e)
    if (elements_[e].vascular) v += element_volume(static_cast<int>(e));
  return v;
}

// ---------------------------------------------------------------------------
// structured box

std::vector<double> graded_layers(double first_size, double thickness, double grading) {
  if (!(grading > 0.0)) throw ConfigError("mesh grading must be positive");
  std::vector<double> layers;
  if (thickness <= 0.0) return layers;
  double sum = 0.0, size = first_size;
  while (sum < thickness * (1.0 - 1e-12)) {
    size *= grading;
    layers.push_back(size);
    sum += size;
    if (layers.size() > 10000 || !(size > 1e-9 * first_size))
      throw ConfigError("mesh grading cannot fill the enlargement shell");
  }
  for (double& l : layers) l *= thickness / sum;
  return layers;
}

TissueMesh build_box_mesh(const Box3& inner, const std::array<int, 3>& resolution, double enlargement,
                          double grading) {
  if (!inner.valid()) throw ConfigError("inner box is degenerate");
  if (!(grading > 0.0)) throw ConfigError("mesh grading must be positive");
  if (!(enlargement >= 1.0)) throw ConfigError("enlargement factor must be at least 1");
  GridInfo grid;
  grid.inner = inner;
  for (int d = 0; d < 3; ++d) {
    const int n = resolution[static_cast<std::size_t>(d)];
    if (n < 2) throw ConfigError("mesh resolution must be at least 2 per axis");
    const double ext = inner.extent()[d];
    const double h = ext / n;
    const auto layers = graded_layers(h, 0.5 * (enlargement - 1.0) * ext, grading);
    auto& ax = grid.axes[static_cast<std::size_t>(d)];
    std::vector<double> lower;
    double x = inner.lo[d];
    for (double l : layers) lower.push_back(x -= l);
    ax.assign(lower.rbegin(), lower.rend());
    grid.inner_begin[static_cast<std::size_t>(d)] = static_cast<int>(ax.size());
    grid.inner_cells[static_cast<std::size_t>(d)] = n;
    for (int i = 0; i <= n; ++i) ax.push_back(i == n ? inner.hi[d] : inner.lo[d] + i * h);
    x = inner.hi[d];
    for (double l : layers) ax.push_back(x += l);
  }
  const auto& X = grid.axes[0];
  const auto& Y = grid.axes[1];
  const auto& Z = grid.axes[2];
  const int nx = static_cast<int>(X.size()), ny = static_cast<int>(Y.size()), nz = static_cast<int>(Z.size());
  std::vector<Vec3> nodes;
  nodes.reserve(static_cast<std::size_t>(nx) * ny * nz);
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) nodes.emplace_back(X[static_cast<std::size_t>(i)], Y[static_cast<std::size_t>(j)], Z[static_cast<std::size_t>(k)]);
  auto nid = [&](int i, int j, int k) { return (k * ny + j) * nx + i; };
  auto in_inner = [&](int d, int c) {
    const int b = grid.inner_begin[static_cast<std::size_t>(d)];
    return c >= b && c < b + grid.inner_cells[static_cast<std::size_t>(d)];
  };
  std::vector<Element> vasc, tissue;
  for (int k = 0; k + 1 < nz; ++k)
    for (int j = 0; j + 1 < ny; ++j)
      for (int i = 0; i + 1 < nx; ++i) {
        Element el;
        el.kind = ElementKind::hex8;
        el.nodes = {nid(i, j, k),         nid(i + 1, j, k),     nid(i + 1, j + 1, k),     nid(i, j + 1, k),
                    nid(i, j, k + 1),     nid(i + 1, j, k + 1), nid(i + 1, j + 1, k + 1), nid(i, j + 1, k + 1)};
        el.vascular = in_inner(0, i) && in_inner(1, j) && in_inner(2, k);
        (el.vascular ? vasc : tissue).push_back(el);
      }
  // Ω_v elements first so the lowest-id tie-break prefers them
  vasc.insert(vasc.end(), tissue.begin(), tissue.end());
  TissueMesh mesh(std::move(nodes), std::move(vasc));
  mesh.set_grid(std::move(grid));
  return mesh;
}

// ---------------------------------------------------------------------------
// I/O

void write_mesh_txt(const TissueMesh& mesh, const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot write " + file.string());
  char buf[96];
  out << mesh.n_nodes() << '\n';
  for (std::size_t i = 0; i < mesh.n_nodes(); ++i) {
    const Vec3& p = mesh.nodes()[i];
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g", p.x(), p.y(), p.z());
    out << i << ' ' << buf << '\n';
  }
  out << mesh.n_elements() << '\n';
  for (std::size_t e = 0; e < mesh.n_elements(); ++e) {
    const auto& el = mesh.elements()[e];
    out << e << ' ' << (el.kind == ElementKind::hex8 ? "hex8" : "tet4");
    for (int l = 0; l < el.n_nodes(); ++l) out << ' ' << el.nodes[static_cast<std::size_t>(l)];
    out << ' ' << (el.vascular ? 1 : 0) << '\n';
  }
}

TissueMesh read_mesh_txt(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open " + file.string());
  long nn = 0;
  if (!(in >> nn) || nn <= 0) throw ConfigError(file.string() + ": bad node count");
  std::vector<Vec3> nodes(static_cast<std::size_t>(nn));
  for (long i = 0; i < nn; ++i) {
    long id = 0;
    double x = 0, y = 0, z = 0;
    if (!(in >> id >> x >> y >> z) || id != i) throw ConfigError(file.string() + ": bad node line " + std::to_string(i));
    nodes[static_cast<std::size_t>(i)] = Vec3(x, y, z);
  }
  long ne = 0;
  if (!(in >> ne) || ne <= 0) throw ConfigError(file.string() + ": bad element count");
  std::vector<Element> elements(static_cast<std::size_t>(ne));
  for (long e = 0; e < ne; ++e) {
    long id = 0;
    std::string kind;
    if (!(in >> id >> kind) || id != e) throw ConfigError(file.string() + ": bad element line " + std::to_string(e));
    Element el;
    if (kind == "hex8")
      el.kind = ElementKind::hex8;
    else if (kind == "tet4")
      el.kind = ElementKind::tet4;
    else
      throw ConfigError(file.string() + ": unknown element kind '" + kind + "'");
    for (int l = 0; l < el.n_nodes(); ++l)
      if (!(in >> el.nodes[static_cast<std::size_t>(l)])) throw ConfigError(file.string() + ": truncated element " + std::to_string(e));
    int tag = 0;
    if (!(in >> tag) || (tag != 0 && tag != 1)) throw ConfigError(file.string() + ": element tag must be 0 or 1");
    el.vascular = tag == 1;
    elements[static_cast<std::size_t>(e)] = el;
  }
  return TissueMesh(std::move(nodes), std::move(elements));
}

void write_vtk(const TissueMesh& mesh, const std::filesystem::path& file,
               const std::vector<std::pair<std::string, Eigen::VectorXd>>& point_fields) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot write " + file.string());
  char buf[96];
  out << "# vtk DataFile Version 3.0\nvasoperf tissue mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  out << "POINTS " << mesh.n_nodes() << " double\n";
  for (const auto& p : mesh.nodes()) {
    std::snprintf(buf, sizeof buf, "%.10g %.10g %.10g\n", p.x(), p.y(), p.z());
    out << buf;
  }
  std::size_t size = 0;
  for (const auto& el : mesh.elements()) size += static_cast<std::size_t>(el.n_nodes()) + 1;
  out << "CELLS " << mesh.n_elements() << ' ' << size << '\n';
  for (const auto& el : mesh.elements()) {
    out << el.n_nodes();
    for (int l = 0; l < el.n_nodes(); ++l) out << ' ' << el.nodes[static_cast<std::size_t>(l)];
    out << '\n';
  }
  out << "CELL_TYPES " << mesh.n_elements() << '\n';
  for (const auto& el : mesh.elements()) out << (el.kind == ElementKind::hex8 ? 12 : 10) << '\n';
  out << "CELL_DATA " << mesh.n_elements() << "\nSCALARS vascular int 1\nLOOKUP_TABLE default\n";
  for (const auto& el : mesh.elements()) out << (el.vascular ? 1 : 0) << '\n';
  if (!point_fields.empty()) out << "POINT_DATA " << mesh.n_nodes() << '\n';
  for (const auto& [name, f] : point_fields) {
    if (f.size() != static_cast<long>(mesh.n_nodes())) throw ContractError("write_vtk: field '" + name + "' size mismatch");
    out << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
    for (long i = 0; i < f.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.10g\n", f[i]);
      out << buf;
    }
  }
}

}  // namespace vasoperf
