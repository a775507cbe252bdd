#include <doctest.h>

#include "vasoperf/errors.hpp"
#include "vasoperf/fem.hpp"
#include "vasoperf/mesh.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace vasoperf;

namespace {

// Unit cube split into six tetrahedra around the main diagonal, tiled n³ times.
TissueMesh kuhn_tet_mesh(int n, double h) {
  std::vector<Vec3> nodes;
  auto nid = [&](int i, int j, int k) { return (k * (n + 1) + j) * (n + 1) + i; };
  for (int k = 0; k <= n; ++k)
    for (int j = 0; j <= n; ++j)
      for (int i = 0; i <= n; ++i) nodes.emplace_back(i * h, j * h, k * h);
  static constexpr int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  std::vector<Element> els;
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        for (const auto& p : perms) {
          std::array<int, 3> c{i, j, k};
          Element e;
          e.kind = ElementKind::tet4;
          e.nodes[0] = nid(c[0], c[1], c[2]);
          for (int s = 0; s < 3; ++s) {
            ++c[static_cast<std::size_t>(p[s])];
            e.nodes[static_cast<std::size_t>(s + 1)] = nid(c[0], c[1], c[2]);
          }
          // orient positively
          const Vec3 a = nodes[static_cast<std::size_t>(e.nodes[1])] - nodes[static_cast<std::size_t>(e.nodes[0])];
          const Vec3 b = nodes[static_cast<std::size_t>(e.nodes[2])] - nodes[static_cast<std::size_t>(e.nodes[0])];
          const Vec3 d = nodes[static_cast<std::size_t>(e.nodes[3])] - nodes[static_cast<std::size_t>(e.nodes[0])];
          if (a.cross(b).dot(d) < 0) std::swap(e.nodes[1], e.nodes[2]);
          e.vascular = true;
          els.push_back(e);
        }
  return TissueMesh(std::move(nodes), std::move(els));
}

}  // namespace

TEST_CASE("shape functions: partition of unity and gradient consistency") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0), v(0.0, 1.0);
  for (auto kind : {ElementKind::hex8, ElementKind::tet4}) {
    for (int t = 0; t < 100; ++t) {
      Vec3 xi;
      if (kind == ElementKind::hex8) {
        xi = Vec3(u(rng), u(rng), u(rng));
      } else {
        xi = Vec3(v(rng), v(rng), v(rng));
        if (xi.sum() > 1.0) xi /= 1.5 * xi.sum();
      }
      const auto n = shape::values(kind, xi);
      double s = 0.0;
      for (int l = 0; l < nodes_per_element(kind); ++l) s += n[static_cast<std::size_t>(l)];
      CHECK(std::abs(s - 1.0) < 1e-12);
      const auto g = shape::gradients(kind, xi);
      const double h = 1e-6;
      for (int k = 0; k < 3; ++k) {
        Vec3 xp = xi, xm = xi;
        xp[k] += h;
        xm[k] -= h;
        const auto np = shape::values(kind, xp), nm = shape::values(kind, xm);
        for (int l = 0; l < nodes_per_element(kind); ++l) {
          const double fd = (np[static_cast<std::size_t>(l)] - nm[static_cast<std::size_t>(l)]) / (2 * h);
          CHECK(std::abs(fd - g(l, k)) <= 1e-6 * std::max(1.0, std::abs(g(l, k))));
        }
      }
    }
  }
}

TEST_CASE("Gauss-Legendre rules integrate polynomials exactly") {
  for (int n = 1; n <= 5; ++n) {
    const auto r = shape::gauss_legendre(n);
    for (int p = 0; p <= 2 * n - 1; ++p) {
      double s = 0.0;
      for (const auto& [x, w] : r) s += w * std::pow(x, p);
      const double exact = p % 2 ? 0.0 : 2.0 / (p + 1);
      CHECK(std::abs(s - exact) < 1e-14);
    }
  }
}

TEST_CASE("box mesh: enlargement 1 gives identical boundaries") {
  const Box3 inner{Vec3::Zero(), Vec3(300, 200, 100)};
  const auto m = build_box_mesh(inner, {3, 2, 2}, 1.0, 1.3);
  CHECK(m.outer_boundary_nodes() == m.vascular_boundary_nodes());
  CHECK(m.n_vascular_elements() == m.n_elements());
  CHECK(m.total_volume() == doctest::Approx(inner.volume()).epsilon(1e-12));
}

TEST_CASE("box mesh: graded shell volume and structure") {
  const Box3 inner{Vec3::Zero(), Vec3::Constant(100.0)};
  const auto m = build_box_mesh(inner, {10, 10, 10}, 8.0, 1.4);
  double vol = 0.0;
  for (std::size_t e = 0; e < m.n_elements(); ++e) {
    const double ve = m.element_volume(static_cast<int>(e));
    CHECK(ve > 0.0);
    vol += ve;
  }
  CHECK(std::abs(vol - std::pow(800.0, 3)) <= 1e-9 * std::pow(800.0, 3));
  CHECK(m.vascular_volume() == doctest::Approx(1e6).epsilon(1e-12));
  CHECK(m.n_vascular_elements() == 1000);
  for (std::size_t e = 0; e < 1000; ++e) CHECK(m.elements()[e].vascular);
  // ∂Ω_v is the inner box surface: 11³ − 9³ nodes
  CHECK(m.vascular_boundary_nodes().size() == 11 * 11 * 11 - 9 * 9 * 9);
  for (int id : m.vascular_boundary_nodes()) CHECK(inner.contains(m.node(id), 1e-9));
  for (int id : m.outer_boundary_nodes()) CHECK(m.bounds().distance_to_boundary(m.node(id)) < 1e-9);
  const auto layers = graded_layers(10.0, 350.0, 1.4);
  double s = 0.0;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    s += layers[k];
    if (k > 0) CHECK(layers[k] == doctest::Approx(1.4 * layers[k - 1]));
  }
  CHECK(s == doctest::Approx(350.0));
}

TEST_CASE("box mesh: invalid input") {
  const Box3 inner{Vec3::Zero(), Vec3::Constant(100.0)};
  CHECK_THROWS_AS(build_box_mesh(inner, {10, 10, 10}, 2.0, 0.0), ConfigError);
  CHECK_THROWS_AS(build_box_mesh(inner, {10, 10, 10}, 2.0, -1.0), ConfigError);
  CHECK_THROWS_AS(build_box_mesh(inner, {1, 10, 10}, 2.0, 1.2), ConfigError);
  CHECK_THROWS_AS(build_box_mesh(inner, {4, 4, 4}, 0.5, 1.2), ConfigError);
  // shrinking layers cannot fill a thick shell
  CHECK_THROWS_AS(build_box_mesh(inner, {4, 4, 4}, 20.0, 0.5), ConfigError);
}

TEST_CASE("point location and interpolation") {
  const Box3 inner{Vec3(-50, -50, -50), Vec3(50, 50, 50)};
  const auto m = build_box_mesh(inner, {5, 5, 5}, 3.0, 1.3);
  for (int e : {0, 17, 124, 300}) {
    if (e >= static_cast<int>(m.n_elements())) continue;
    const Vec3 c = m.map(e, Vec3::Zero());
    const auto loc = m.locate(c);
    REQUIRE(loc);
    CHECK(loc->element == e);
    CHECK(loc->xi.norm() < 1e-10);
  }
  CHECK_FALSE(m.locate(Vec3(1000, 0, 0)).has_value());

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-149.0, 149.0);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const Vec3 p(u(rng), u(rng), u(rng));
    const auto loc = m.locate(p);
    REQUIRE(loc);
    const double err = (m.map(loc->element, loc->xi) - p).norm() / m.element_size(loc->element);
    worst = std::max(worst, err);
  }
  CHECK(worst < 1e-8);

  Eigen::VectorXd cst = Eigen::VectorXd::Constant(static_cast<long>(m.n_nodes()), 4.25);
  Eigen::VectorXd xf(static_cast<long>(m.n_nodes()));
  for (std::size_t i = 0; i < m.n_nodes(); ++i) xf[static_cast<long>(i)] = m.nodes()[i].x();
  Eigen::VectorXd rnd = Eigen::VectorXd::Random(static_cast<long>(m.n_nodes()));
  for (int t = 0; t < 50; ++t) {
    const Vec3 p(u(rng), u(rng), u(rng));
    CHECK(m.interpolate(cst, p) == doctest::Approx(4.25).epsilon(1e-14));
    CHECK(std::abs(m.interpolate(xf, p) - p.x()) < 1e-10);
  }
  for (int id : {0, 33, 100}) CHECK(m.interpolate(rnd, m.node(id)) == doctest::Approx(rnd[id]).epsilon(1e-12));
  CHECK_THROWS_AS(m.interpolate(cst, Vec3(500, 0, 0)), DomainError);
}

TEST_CASE("tetrahedral mesh: interpolation, volume and text round trip") {
  const auto m = kuhn_tet_mesh(3, 10.0);
  CHECK(m.total_volume() == doctest::Approx(27000.0).epsilon(1e-12));
  Eigen::VectorXd f(static_cast<long>(m.n_nodes()));
  for (std::size_t i = 0; i < m.n_nodes(); ++i) f[static_cast<long>(i)] = 2.0 * m.nodes()[i].x() - m.nodes()[i].y() + 0.5 * m.nodes()[i].z();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 30.0);
  for (int t = 0; t < 200; ++t) {
    const Vec3 p(u(rng), u(rng), u(rng));
    CHECK(std::abs(m.interpolate(f, p) - (2.0 * p.x() - p.y() + 0.5 * p.z())) < 1e-10);
  }
  CHECK(m.outer_boundary_nodes().size() == 64 - 8);

  const auto file = std::filesystem::temp_directory_path() / "vasoperf_mesh_rt.txt";
  write_mesh_txt(m, file);
  const auto back = read_mesh_txt(file);
  REQUIRE(back.n_nodes() == m.n_nodes());
  REQUIRE(back.n_elements() == m.n_elements());
  for (std::size_t i = 0; i < m.n_nodes(); ++i) CHECK(back.nodes()[i] == m.nodes()[i]);
  for (std::size_t e = 0; e < m.n_elements(); ++e) CHECK(back.elements()[e].nodes == m.elements()[e].nodes);
  std::filesystem::remove(file);
}

TEST_CASE("manufactured linear Darcy solution is reproduced exactly") {
  const auto m = build_box_mesh(Box3{Vec3::Zero(), Vec3::Constant(90.0)}, {6, 6, 6}, 2.0, 1.5);
  const DofMap dofs = DofMap::identity(m.n_nodes());
  const SpMat k = assemble_stiffness(m, dofs, [](int) { return 0.12782; });
  const auto n = static_cast<long>(m.n_nodes());
  auto exact = [](const Vec3& p) { return 3.0 * p.x() + 2.0 * p.y() - p.z() + 5.0; };
  std::vector<bool> fixed(static_cast<std::size_t>(n), false);
  Eigen::VectorXd vals = Eigen::VectorXd::Zero(n);
  for (int id : m.outer_boundary_nodes()) {
    fixed[static_cast<std::size_t>(id)] = true;
    vals[id] = exact(m.node(id));
  }
  SolveReport rep;
  const Eigen::VectorXd x = solve_spd_dirichlet(k, Eigen::VectorXd::Zero(n), fixed, vals, {}, &rep);
  double err = 0.0;
  for (long i = 0; i < n; ++i) err = std::max(err, std::abs(x[i] - exact(m.node(static_cast<int>(i)))));
  CHECK(err < 1e-9);
  CHECK(rep.relative_residual <= 1e-10);

  // the iterative path meets the same contract
  SolverOptions cg;
  cg.method = SolverMethod::cg;
  const Eigen::VectorXd y = solve_spd_dirichlet(k, Eigen::VectorXd::Zero(n), fixed, vals, cg, &rep);
  CHECK(rep.relative_residual <= 1e-10);
  CHECK((x - y).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("mass and load assembly integrate exactly") {
  const auto m = build_box_mesh(Box3{Vec3::Zero(), Vec3(40, 50, 60)}, {2, 3, 4}, 1.5, 1.2);
  const DofMap dofs = DofMap::identity(m.n_nodes());
  const SpMat mm = assemble_mass(m, dofs, [](int) { return 2.0; });
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<long>(m.n_nodes()));
  CHECK(ones.dot(mm * ones) == doctest::Approx(2.0 * m.total_volume()).epsilon(1e-12));
  const Eigen::VectorXd f = assemble_load(m, dofs, [&](int e) { return m.element(e).vascular ? 1.0 : 0.0; });
  CHECK(f.sum() == doctest::Approx(40.0 * 50 * 60).epsilon(1e-12));
}

TEST_CASE("VTK export writes all points and cells") {
  const auto m = build_box_mesh(Box3{Vec3::Zero(), Vec3::Constant(10.0)}, {2, 2, 2}, 2.0, 1.0);
  const auto file = std::filesystem::temp_directory_path() / "vasoperf_test.vtk";
  Eigen::VectorXd f = Eigen::VectorXd::LinSpaced(static_cast<long>(m.n_nodes()), 0.0, 1.0);
  write_vtk(m, file, {{"p_if", f}});
  std::ifstream in(file);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(content.find("POINTS " + std::to_string(m.n_nodes())) != std::string::npos);
  CHECK(content.find("CELLS " + std::to_string(m.n_elements())) != std::string::npos);
  CHECK(content.find("SCALARS p_if double 1") != std::string::npos);
  std::filesystem::remove(file);
}
