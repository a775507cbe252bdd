#include "vasoperf/metrics.hpp"

#include "vasoperf/errors.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>

namespace vasoperf {

double r2(const std::vector<double>& ref, const std::vector<double>& test) {
  if (ref.size() != test.size()) throw ContractError("r2: reference and test sizes differ");
  if (ref.size() < 2) throw ContractError("r2 needs at least two values");
  double mean = 0.0;
  for (double v : ref) mean += v;
  mean /= static_cast<double>(ref.size());
  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    sse += (ref[i] - test[i]) * (ref[i] - test[i]);
    sst += (ref[i] - mean) * (ref[i] - mean);
  }
  if (!(sst > 0.0)) throw UndefinedMetricError("r2 undefined: reference values have zero variance");
  return 1.0 - sse / sst;
}

double r2_total(double r2_l, double r2_s, double r2_if, double r2_flow_small, const std::array<double, 4>& w) {
  const double sum = w[0] + w[1] + w[2] + w[3];
  if (!(sum > 0.0) || w[0] < 0.0 || w[1] < 0.0 || w[2] < 0.0 || w[3] < 0.0)
    throw ConfigError("R² weights must be non-negative with a positive sum");
  return (w[0] * r2_l + w[1] * r2_s + w[2] * r2_if + w[3] * r2_flow_small) / sum;
}

namespace {

bool selected(const VesselNetwork& net, int seg, VesselSelection which) {
  switch (which) {
    case VesselSelection::small: return !net.is_large(seg);
    case VesselSelection::large: return net.is_large(seg);
    case VesselSelection::whole: return true;
  }
  return false;
}

// Cell along `axis` with box.lo ≤ x < box.hi, -1 if none.
int half_open_cell(const RevPartition& revs, int axis, double x) {
  const int n = revs.counts()[static_cast<std::size_t>(axis)];
  const double lo = revs.domain().lo[axis];
  const double edge = revs.edge()[axis];
  auto cell_lo = [&](int k) { return lo + k * edge; };
  auto cell_hi = [&](int k) { return k == n - 1 ? revs.domain().hi[axis] : lo + (k + 1) * edge; };
  int k = std::clamp(static_cast<int>(std::floor((x - lo) / edge)), 0, n - 1);
  if (x < cell_lo(k)) --k;
  else if (x >= cell_hi(k)) ++k;
  if (k < 0 || k >= n || x < cell_lo(k) || x >= cell_hi(k)) return -1;
  return k;
}

int rev_index(const RevPartition& revs, const std::array<int, 3>& c) {
  return (c[2] * revs.counts()[1] + c[1]) * revs.counts()[0] + c[0];
}

// Center plane coordinate of layer k along axis.
double layer_center(const RevPartition& revs, int axis, int k) {
  std::array<int, 3> c{0, 0, 0};
  c[static_cast<std::size_t>(axis)] = k;
  return revs.rev(rev_index(revs, c)).box.center()[axis];
}

Vec3 affine_reference(const Box3& eb, const Vec3& x) {
  return (2.0 * (x - eb.lo).array() / eb.extent().array() - 1.0).matrix();
}

std::optional<PointLocation> locate_vascular(const TissueMesh& mesh, const Vec3& p) {
  const auto loc = mesh.locate(p);
  if (loc && mesh.element(loc->element).vascular) return loc;
  const double h = 1e-9 * (1.0 + p.cwiseAbs().maxCoeff());
  for (int e : mesh.candidate_elements(Box3{p - Vec3::Constant(h), p + Vec3::Constant(h)})) {
    if (!mesh.element(e).vascular) continue;
    const auto xi = mesh.inverse_map(e, p, 1e-9);
    if (xi) return PointLocation{e, *xi};
  }
  return std::nullopt;
}

}  // namespace

std::vector<PlaneCrossing> plane_crossings(const VesselNetwork& net, const RevPartition& revs,
                                           VesselSelection which) {
  std::vector<PlaneCrossing> out;
  for (const auto& s : net.segments()) {
    if (!selected(net, s.id, which)) continue;
    const Vec3& a = net.node(s.node_a).position;
    const Vec3& b = net.node(s.node_b).position;
    for (int j = 0; j < 3; ++j) {
      if (a[j] == b[j]) continue;
      const double lo = std::min(a[j], b[j]), hi = std::max(a[j], b[j]);
      const int j1 = (j + 1) % 3, j2 = (j + 2) % 3;
      for (int k = 0; k < revs.counts()[static_cast<std::size_t>(j)]; ++k) {
        const double c = layer_center(revs, j, k);
        if (!(lo <= c && c < hi)) continue;
        const double t = (c - a[j]) / (b[j] - a[j]);
        const Vec3 p = a + t * (b - a);
        const int k1 = half_open_cell(revs, j1, p[j1]);
        const int k2 = half_open_cell(revs, j2, p[j2]);
        if (k1 < 0 || k2 < 0) continue;
        std::array<int, 3> cell{};
        cell[static_cast<std::size_t>(j)] = k;
        cell[static_cast<std::size_t>(j1)] = k1;
        cell[static_cast<std::size_t>(j2)] = k2;
        out.push_back({rev_index(revs, cell), j, s.id, b[j] > a[j] ? 1 : -1});
      }
    }
  }
  return out;
}

RevFlows discrete_plane_flows(const VesselNetwork& net, const RevPartition& revs, const std::vector<double>& flow,
                              VesselSelection which) {
  if (flow.size() != net.n_segments()) throw ContractError("discrete_plane_flows: one flow per segment required");
  RevFlows q(revs.size(), {0.0, 0.0, 0.0});
  for (const auto& c : plane_crossings(net, revs, which))
    q[static_cast<std::size_t>(c.rev)][static_cast<std::size_t>(c.axis)] +=
        c.sign * flow[static_cast<std::size_t>(c.segment)];
  return q;
}

double element_kv(const HybridParams& params, int element) {
  return params.element_kv.empty() ? params.kv : params.element_kv[static_cast<std::size_t>(element)];
}

RevFlows homogenized_plane_flows(const TissueMesh& mesh, const Eigen::VectorXd& p_v, const HybridParams& params,
                                 const RevPartition& revs) {
  if (p_v.size() != static_cast<long>(mesh.n_nodes())) throw ContractError("homogenized_plane_flows: field size");
  const auto gl = shape::gauss_legendre(3);
  RevFlows q(revs.size(), {0.0, 0.0, 0.0});
  for (const auto& r : revs.revs()) {
    for (int j = 0; j < 3; ++j) {
      const int j1 = (j + 1) % 3, j2 = (j + 2) % 3;
      const double c = r.box.center()[j];
      Box3 section = r.box;
      section.lo[j] = section.hi[j] = c;
      double sum = 0.0;
      if (mesh.grid()) {
        for (int e : mesh.candidate_elements(section)) {
          if (!mesh.element(e).vascular) continue;
          const Box3 eb = mesh.element_bounds(e);
          if (!(eb.lo[j] <= c && c < eb.hi[j])) continue;
          const double u0 = std::max(eb.lo[j1], section.lo[j1]), u1 = std::min(eb.hi[j1], section.hi[j1]);
          const double v0 = std::max(eb.lo[j2], section.lo[j2]), v1 = std::min(eb.hi[j2], section.hi[j2]);
          if (!(u1 > u0 && v1 > v0)) continue;
          const double kv = element_kv(params, e);
          for (const auto& [xu, wu] : gl)
            for (const auto& [xv, wv] : gl) {
              Vec3 x;
              x[j] = c;
              x[j1] = 0.5 * (u0 + u1) + 0.5 * (u1 - u0) * xu;
              x[j2] = 0.5 * (v0 + v1) + 0.5 * (v1 - v0) * xv;
              const double w = 0.25 * (u1 - u0) * (v1 - v0) * wu * wv;
              sum -= kv * mesh.gradient_in(e, affine_reference(eb, x), p_v)[j] * w;
            }
        }
      } else {
        // unstructured meshes: midpoint sampling of the section
        constexpr int n = 24;
        const double du = (section.hi[j1] - section.lo[j1]) / n, dv = (section.hi[j2] - section.lo[j2]) / n;
        for (int a = 0; a < n; ++a)
          for (int b = 0; b < n; ++b) {
            Vec3 x;
            x[j] = c;
            x[j1] = section.lo[j1] + (a + 0.5) * du;
            x[j2] = section.lo[j2] + (b + 0.5) * dv;
            const auto loc = locate_vascular(mesh, x);
            if (!loc) continue;
            sum -= element_kv(params, loc->element) * mesh.gradient_in(loc->element, loc->xi, p_v)[j] * du * dv;
          }
      }
      q[static_cast<std::size_t>(r.id)][static_cast<std::size_t>(j)] = sum;
    }
  }
  return q;
}

double box_mean(const TissueMesh& mesh, const Eigen::VectorXd& field, const Box3& box, bool vascular_only) {
  if (!box.valid()) throw ContractError("box_mean: empty box");
  if (field.size() != static_cast<long>(mesh.n_nodes())) throw ContractError("box_mean: field size");
  double sum = 0.0;
  if (mesh.grid()) {
    const auto gl = shape::gauss_legendre(2);
    for (int e : mesh.candidate_elements(box)) {
      if (vascular_only && !mesh.element(e).vascular) continue;
      const Box3 eb = mesh.element_bounds(e);
      const auto clip = intersect(eb, box);
      if (!clip || !clip->valid()) continue;
      const Vec3 mid = clip->center(), half = 0.5 * clip->extent();
      const double jac = half.x() * half.y() * half.z();
      for (const auto& [a, wa] : gl)
        for (const auto& [b, wb] : gl)
          for (const auto& [c, wc] : gl) {
            const Vec3 x = mid + half.cwiseProduct(Vec3(a, b, c));
            sum += mesh.interpolate_in(e, affine_reference(eb, x), field) * wa * wb * wc * jac;
          }
    }
  } else {
    // unstructured meshes: 4³ sub-cells per element in reference space, kept by midpoint
    for (int e : mesh.candidate_elements(box)) {
      if (vascular_only && !mesh.element(e).vascular) continue;
      const Element& el = mesh.element(e);
      constexpr int n = 4;
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
          for (int c = 0; c < n; ++c) {
            Vec3 xi;
            double wref;
            if (el.kind == ElementKind::hex8) {
              xi = Vec3(-1.0 + (2 * a + 1.0) / n, -1.0 + (2 * b + 1.0) / n, -1.0 + (2 * c + 1.0) / n);
              wref = 8.0 / (n * n * n);
            } else {
              xi = Vec3((a + 0.5) / n, (b + 0.5) / n, (c + 0.5) / n);
              if (xi.sum() > 1.0) continue;
              wref = 1.0 / (n * n * n);
            }
            const Vec3 x = mesh.map(e, xi);
            if (!box.contains(x)) continue;
            sum += mesh.interpolate_in(e, xi, field) * wref * std::abs(mesh.jacobian(e, xi).determinant());
          }
    }
  }
  return sum / box.volume();
}

SmallPressureScore r2_small_pressures(const VesselNetwork& net, const TissueMesh& mesh, const FullSolution& full,
                                      const HybridSolution& hybrid) {
  const auto large = large_node_mask(net);
  SmallPressureScore out;
  std::vector<double> ref, test;
  for (const auto& n : net.nodes()) {
    if (large[static_cast<std::size_t>(n.id)] || net.degree(n.id) == 0) continue;
    const auto loc = locate_vascular(mesh, n.position);
    if (!loc) {
      ++out.n_outside;
      continue;
    }
    ref.push_back(full.p_vessel[n.id]);
    test.push_back(mesh.interpolate_in(loc->element, loc->xi, hybrid.p_v));
  }
  out.n_used = static_cast<int>(ref.size());
  if (out.n_used == 0) throw UndefinedMetricError("no small-vessel node lies inside the homogenized region");
  out.r2 = r2(ref, test);
  return out;
}

TransferComparison compartment_transfer(const VesselNetwork& net, const RevPartition& revs, const FullSolution& full,
                                        const HybridSolution& hybrid) {
  TransferComparison out;
  out.full.assign(revs.size(), 0.0);
  out.hybrid.assign(revs.size(), 0.0);
  for (const auto& s : net.segments()) {
    if (!net.is_large(s.id)) continue;
    const double la = hybrid.lambda[s.node_a], lb = hybrid.lambda[s.node_b];
    revs.for_each_piece(net.node(s.node_a).position, net.node(s.node_b).position, [&](int id, double t0, double t1) {
      out.hybrid[static_cast<std::size_t>(id)] +=
          s.length * ((t1 - t0) * la + 0.5 * (t1 * t1 - t0 * t0) * (lb - la));
    });
  }
  const auto large = large_node_mask(net);
  for (int sid : connecting_segments(net)) {
    const auto& s = net.segment(sid);
    const bool a_large = large[static_cast<std::size_t>(s.node_a)];
    const int node = a_large ? s.node_a : s.node_b;
    const double q = a_large ? full.flow[static_cast<std::size_t>(sid)] : -full.flow[static_cast<std::size_t>(sid)];
    const int id = revs.rev_of(net.node(node).position);
    if (id < 0) continue;
    out.full[static_cast<std::size_t>(id)] += q;
    ++out.n_connecting;
  }
  return out;
}

namespace {

std::vector<double> flatten(const RevFlows& q) {
  std::vector<double> v;
  v.reserve(3 * q.size());
  for (const auto& a : q) v.insert(v.end(), a.begin(), a.end());
  return v;
}

template <class F>
std::optional<double> optional_metric(F&& f) {
  try {
    return f();
  } catch (const UndefinedMetricError&) {
    return std::nullopt;
  }
}

}  // namespace

ComparisonReport compare_models(const VesselNetwork& net, const TissueMesh& mesh, const FullSolution& full,
                                const HybridSolution& hybrid, const HybridParams& params, const RevPartition& revs,
                                const std::array<double, 4>& weights) {
  if (revs.size() == 0) throw ContractError("comparison needs a non-empty REV partition");
  if (!net.partition()) throw ContractError("comparison needs a partitioned network");
  ComparisonReport rep;
  rep.weights = weights;

  std::vector<double> ref, test;
  for (const auto& n : net.nodes())
    if (hybrid.large_node[static_cast<std::size_t>(n.id)]) {
      ref.push_back(full.p_vessel[n.id]);
      test.push_back(hybrid.p_vessel[n.id]);
    }
  rep.r2_large = r2(ref, test);
  rep.small = r2_small_pressures(net, mesh, full, hybrid);
  rep.r2_if = r2(std::vector<double>(full.p_if.begin(), full.p_if.end()),
                 std::vector<double>(hybrid.p_if.begin(), hybrid.p_if.end()));

  const RevFlows q_small = discrete_plane_flows(net, revs, full.flow, VesselSelection::small);
  const RevFlows q_homog = homogenized_plane_flows(mesh, hybrid.p_v, params, revs);
  rep.r2_flow_small = r2(flatten(q_small), flatten(q_homog));
  rep.r2_tot = r2_total(rep.r2_large, rep.small.r2, rep.r2_if, rep.r2_flow_small, weights);

  const RevFlows q_whole = discrete_plane_flows(net, revs, full.flow, VesselSelection::whole);
  const std::vector<double> hybrid_flow =
      segment_flows(net, std::vector<double>(hybrid.p_vessel.begin(), hybrid.p_vessel.end()));
  RevFlows q_hybrid = discrete_plane_flows(net, revs, hybrid_flow, VesselSelection::large);
  for (std::size_t i = 0; i < q_hybrid.size(); ++i)
    for (int j = 0; j < 3; ++j) q_hybrid[i][static_cast<std::size_t>(j)] += q_homog[i][static_cast<std::size_t>(j)];
  rep.r2_flow_whole = optional_metric([&] { return r2(flatten(q_whole), flatten(q_hybrid)); });

  const TransferComparison tr = compartment_transfer(net, revs, full, hybrid);
  rep.r2_transfer = optional_metric([&]() -> double {
    if (tr.n_connecting == 0) throw UndefinedMetricError("no connecting segments");
    return r2(tr.full, tr.hybrid);
  });

  // small-node mean pressure per REV
  const auto large = large_node_mask(net);
  std::vector<double> small_sum(revs.size(), 0.0);
  std::vector<int> small_count(revs.size(), 0);
  for (const auto& n : net.nodes()) {
    if (large[static_cast<std::size_t>(n.id)] || net.degree(n.id) == 0) continue;
    const int id = revs.rev_of(n.position);
    if (id < 0) continue;
    small_sum[static_cast<std::size_t>(id)] += full.p_vessel[n.id];
    ++small_count[static_cast<std::size_t>(id)];
  }

  int n_v = 0;
  for (const auto& r : revs.revs()) {
    const auto i = static_cast<std::size_t>(r.id);
    RevError e;
    e.rev = r.id;
    e.p_if_full = box_mean(mesh, full.p_if, r.box, false);
    e.p_if_hybrid = box_mean(mesh, hybrid.p_if, r.box, false);
    e.e_if_abs = std::abs(e.p_if_full - e.p_if_hybrid);
    e.e_if_rel = e.e_if_abs == 0.0 ? 0.0 : e.e_if_abs / std::abs(e.p_if_full);
    e.p_v_hybrid = box_mean(mesh, hybrid.p_v, r.box, true);
    e.has_small_nodes = small_count[i] > 0;
    if (e.has_small_nodes) {
      e.p_v_full = small_sum[i] / small_count[i];
      e.e_v_abs = std::abs(e.p_v_full - e.p_v_hybrid);
      e.e_v_rel = e.e_v_abs == 0.0 ? 0.0 : e.e_v_abs / std::abs(e.p_v_full);
      rep.mean_e_v_abs += e.e_v_abs;
      rep.mean_e_v_rel += e.e_v_rel;
      ++n_v;
    } else {
      ++rep.n_revs_without_small_nodes;
    }
    rep.mean_e_if_abs += e.e_if_abs;
    rep.mean_e_if_rel += e.e_if_rel;
    e.flow_small_full = q_small[i];
    e.flow_homogenized = q_homog[i];
    e.transfer_full = tr.full[i];
    e.transfer_hybrid = tr.hybrid[i];
    rep.revs.push_back(e);
  }
  const auto n = static_cast<double>(revs.size());
  rep.mean_e_if_abs /= n;
  rep.mean_e_if_rel /= n;
  if (n_v > 0) {
    rep.mean_e_v_abs /= n_v;
    rep.mean_e_v_rel /= n_v;
  } else {
    rep.mean_e_v_abs = rep.mean_e_v_rel = std::numeric_limits<double>::quiet_NaN();
  }
  return rep;
}

std::string comparison_json(const ComparisonReport& rep) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json j;
  j["r2_large"] = rep.r2_large;
  j["r2_small"] = rep.small.r2;
  j["small_nodes_used"] = rep.small.n_used;
  j["small_nodes_outside"] = rep.small.n_outside;
  j["r2_if"] = rep.r2_if;
  j["r2_flow_small"] = rep.r2_flow_small;
  j["r2_tot"] = rep.r2_tot;
  j["r2_weights"] = rep.weights;
  j["r2_flow_whole"] = opt(rep.r2_flow_whole);
  j["r2_transfer"] = opt(rep.r2_transfer);
  j["mean_e_if_abs"] = num(rep.mean_e_if_abs);
  j["mean_e_if_rel"] = num(rep.mean_e_if_rel);
  j["mean_e_v_abs"] = num(rep.mean_e_v_abs);
  j["mean_e_v_rel"] = num(rep.mean_e_v_rel);
  j["n_revs"] = rep.revs.size();
  j["n_revs_without_small_nodes"] = rep.n_revs_without_small_nodes;
  return j.dump(2);
}

void write_comparison_json(const ComparisonReport& rep, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot write " + file.string());
  out << comparison_json(rep) << '\n';
}

void write_rev_errors_csv(const ComparisonReport& rep, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot write " + file.string());
  out.precision(17);
  out << "rev_id,p_if_full,p_if_hybrid,e_if_abs,e_if_rel,has_small_nodes,p_v_full,p_v_hybrid,e_v_abs,e_v_rel,"
         "qx_small_full,qy_small_full,qz_small_full,qx_homog,qy_homog,qz_homog,transfer_full,transfer_hybrid\n";
  for (const auto& e : rep.revs) {
    out << e.rev << ',' << e.p_if_full << ',' << e.p_if_hybrid << ',' << e.e_if_abs << ',' << e.e_if_rel << ','
        << (e.has_small_nodes ? 1 : 0) << ',' << e.p_v_full << ',' << e.p_v_hybrid << ',' << e.e_v_abs << ','
        << e.e_v_rel;
    for (double v : e.flow_small_full) out << ',' << v;
    for (double v : e.flow_homogenized) out << ',' << v;
    out << ',' << e.transfer_full << ',' << e.transfer_hybrid << '\n';
  }
}

}  // namespace vasoperf
