#include "vasoperf/network.hpp"

#include "vasoperf/errors.hpp"
#include "vasoperf/linear_solver.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace vasoperf {

namespace {

struct DisjointSets {
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent[static_cast<std::size_t>(a)] = b;
  }
  std::vector<int> parent;
};

}  // namespace

// ---------------------------------------------------------------------------

VesselNetwork::VesselNetwork(std::vector<Vec3> positions, std::vector<NodeBc> bcs,
                             const std::vector<SegmentSpec>& segments, double hematocrit)
    : hematocrit_(hematocrit) {
  if (bcs.empty()) bcs.resize(positions.size());
  if (bcs.size() != positions.size()) throw ContractError("VesselNetwork: one boundary condition per node required");
  nodes_.resize(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (!positions[i].allFinite()) throw ConfigError("VesselNetwork: node " + std::to_string(i) + " has non-finite position");
    nodes_[i] = VesselNode{static_cast<int>(i), positions[i], bcs[i]};
  }
  incidence_.assign(nodes_.size(), {});
  segments_.reserve(segments.size());
  for (std::size_t k = 0; k < segments.size(); ++k) {
    const auto& s = segments[k];
    const auto n = static_cast<int>(nodes_.size());
    if (s.node_a < 0 || s.node_a >= n || s.node_b < 0 || s.node_b >= n)
      throw ConfigError("VesselNetwork: segment " + std::to_string(k) + " references a missing node");
    if (s.node_a == s.node_b) throw ConfigError("VesselNetwork: segment " + std::to_string(k) + " is a self loop");
    if (!(s.radius > 0.0)) throw ConfigError("VesselNetwork: segment " + std::to_string(k) + " has non-positive radius");
    const double len = (nodes_[static_cast<std::size_t>(s.node_b)].position - nodes_[static_cast<std::size_t>(s.node_a)].position).norm();
    if (!(len > 0.0)) throw ConfigError("VesselNetwork: segment " + std::to_string(k) + " has zero length");
    VesselSegment seg;
    seg.id = static_cast<int>(k);
    seg.node_a = s.node_a;
    seg.node_b = s.node_b;
    seg.radius = s.radius;
    seg.viscosity = viscosity_in_vivo(2.0 * s.radius, hematocrit);
    seg.length = len;
    segments_.push_back(seg);
    incidence_[static_cast<std::size_t>(s.node_a)].push_back(seg.id);
    incidence_[static_cast<std::size_t>(s.node_b)].push_back(seg.id);
  }
}

bool VesselNetwork::is_large(int seg) const {
  if (!partition_) return true;
  return (*partition_)[static_cast<std::size_t>(seg)] == VesselClass::large;
}

VesselNetwork VesselNetwork::with_bcs(std::vector<NodeBc> bcs) const {
  if (bcs.size() != nodes_.size()) throw ContractError("with_bcs: one boundary condition per node required");
  VesselNetwork out = *this;
  for (std::size_t i = 0; i < bcs.size(); ++i) out.nodes_[i].bc = bcs[i];
  return out;
}

VesselNetwork VesselNetwork::with_partition(std::vector<VesselClass> partition) const {
  if (partition.size() != segments_.size()) throw ContractError("with_partition: one class per segment required");
  VesselNetwork out = *this;
  out.partition_ = std::move(partition);
  return out;
}

VesselNetwork VesselNetwork::without_partition() const {
  VesselNetwork out = *this;
  out.partition_.reset();
  return out;
}

std::vector<Vec3> VesselNetwork::positions() const {
  std::vector<Vec3> p;
  p.reserve(nodes_.size());
  for (const auto& n : nodes_) p.push_back(n.position);
  return p;
}

std::vector<NodeBc> VesselNetwork::bcs() const {
  std::vector<NodeBc> b;
  b.reserve(nodes_.size());
  for (const auto& n : nodes_) b.push_back(n.bc);
  return b;
}

std::vector<SegmentSpec> VesselNetwork::segment_specs() const {
  std::vector<SegmentSpec> s;
  s.reserve(segments_.size());
  for (const auto& seg : segments_) s.push_back({seg.node_a, seg.node_b, seg.radius});
  return s;
}

Vec3 VesselNetwork::tangent(int seg) const {
  const auto& s = segment(seg);
  return (node(s.node_b).position - node(s.node_a).position) / s.length;
}

Box3 VesselNetwork::bounds() const {
  Box3 b;
  if (nodes_.empty()) return b;
  b.lo = b.hi = nodes_.front().position;
  for (const auto& n : nodes_) {
    b.lo = b.lo.cwiseMin(n.position);
    b.hi = b.hi.cwiseMax(n.position);
  }
  return b;
}

// ---------------------------------------------------------------------------

double relative_viscosity_in_vivo(double d, double h) {
  if (!(d > 1.1)) {
    std::ostringstream os;
    os << "viscosity law undefined for diameter " << d << " um (must exceed 1.1 um)";
    throw DomainError(os.str());
  }
  if (!(h > 0.0 && h < 1.0)) throw DomainError("hematocrit must lie in (0, 1)");
  const double mu45 = 6.0 * std::exp(-0.085 * d) + 3.2 - 2.44 * std::exp(-0.06 * std::pow(d, 0.645));
  const double d12 = 1.0 / (1.0 + 1e-11 * std::pow(d, 12.0));
  const double c = (0.8 + std::exp(-0.075 * d)) * (-1.0 + d12) + d12;
  const double xi = d / (d - 1.1);
  const double xi2 = xi * xi;
  const double shape = (std::pow(1.0 - h, c) - 1.0) / (std::pow(1.0 - 0.45, c) - 1.0);
  return (1.0 + (mu45 - 1.0) * shape * xi2) * xi2;
}

double viscosity_in_vivo(double diameter, double hematocrit) {
  return kPlasmaViscosity * relative_viscosity_in_vivo(diameter, hematocrit);
}

double segment_conductance(const VesselSegment& s) {
  const double r2 = s.radius * s.radius;
  return std::numbers::pi * r2 * r2 / (8.0 * s.viscosity * s.length);
}

Components connected_components(const VesselNetwork& net, const std::function<bool(int)>& keep) {
  DisjointSets ds(net.n_nodes());
  std::vector<bool> touched(net.n_nodes(), false);
  for (const auto& s : net.segments()) {
    if (!keep(s.id)) continue;
    ds.unite(s.node_a, s.node_b);
    touched[static_cast<std::size_t>(s.node_a)] = touched[static_cast<std::size_t>(s.node_b)] = true;
  }
  Components c;
  c.node_component.assign(net.n_nodes(), -1);
  std::vector<int> root_label(net.n_nodes(), -1);
  for (std::size_t i = 0; i < net.n_nodes(); ++i) {
    if (!touched[i]) continue;
    const auto r = static_cast<std::size_t>(ds.find(static_cast<int>(i)));
    if (root_label[r] < 0) root_label[r] = c.count++;
    c.node_component[i] = root_label[r];
  }
  return c;
}

std::vector<double> segment_flows(const VesselNetwork& net, const std::vector<double>& p) {
  if (p.size() != net.n_nodes()) throw ContractError("segment_flows: pressure vector size mismatch");
  std::vector<double> q(net.n_segments());
  for (const auto& s : net.segments())
    q[static_cast<std::size_t>(s.id)] =
        segment_conductance(s) * (p[static_cast<std::size_t>(s.node_a)] - p[static_cast<std::size_t>(s.node_b)]);
  return q;
}

NetworkFlow solve_network_poiseuille(const VesselNetwork& net) {
  const auto n = static_cast<long>(net.n_nodes());
  const Components comp = connected_components(net, [](int) { return true; });
  std::vector<bool> anchored(static_cast<std::size_t>(comp.count), false);
  for (const auto& node : net.nodes()) {
    const int c = comp.node_component[static_cast<std::size_t>(node.id)];
    if (c >= 0 && node.bc.type == BcType::pressure) anchored[static_cast<std::size_t>(c)] = true;
  }
  for (int c = 0; c < comp.count; ++c) {
    if (anchored[static_cast<std::size_t>(c)]) continue;
    int first = -1;
    for (std::size_t i = 0; i < comp.node_component.size(); ++i)
      if (comp.node_component[i] == c) {
        first = static_cast<int>(i);
        break;
      }
    throw SingularSystemError("network component " + std::to_string(c) + " (containing node " + std::to_string(first) +
                              ") has no pressure boundary condition");
  }

  Triplets trip;
  trip.reserve(4 * net.n_segments() + net.n_nodes());
  for (const auto& s : net.segments()) {
    const double g = segment_conductance(s);
    trip.emplace_back(s.node_a, s.node_a, g);
    trip.emplace_back(s.node_b, s.node_b, g);
    trip.emplace_back(s.node_a, s.node_b, -g);
    trip.emplace_back(s.node_b, s.node_a, -g);
  }
  std::vector<bool> fixed(static_cast<std::size_t>(n), false);
  Eigen::VectorXd values = Eigen::VectorXd::Zero(n);
  for (const auto& node : net.nodes()) {
    if (node.bc.type == BcType::pressure) {
      fixed[static_cast<std::size_t>(node.id)] = true;
      values[node.id] = node.bc.value;
    } else if (comp.node_component[static_cast<std::size_t>(node.id)] < 0) {
      // isolated node without segments carries no unknown
      fixed[static_cast<std::size_t>(node.id)] = true;
    }
  }
  SpMat a(n, n);
  a.setFromTriplets(trip.begin(), trip.end());
  const Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  const Eigen::VectorXd x = solve_spd_dirichlet(a, b, fixed, values, SolverOptions{}, nullptr);
  NetworkFlow out;
  out.pressure.assign(x.data(), x.data() + n);
  out.flow = segment_flows(net, out.pressure);
  return out;
}

// ---------------------------------------------------------------------------

PartitionResult partition_by_flow(const VesselNetwork& net, const std::vector<double>& flow, double keep_fraction,
                                  double min_component_length) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ConfigError("keep_fraction must lie in (0, 1]");
  if (flow.size() != net.n_segments()) throw ContractError("partition_by_flow: flow vector size mismatch");
  const std::size_t n = net.n_segments();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const double fa = std::abs(flow[static_cast<std::size_t>(a)]);
    const double fb = std::abs(flow[static_cast<std::size_t>(b)]);
    if (fa != fb) return fa > fb;
    return a < b;
  });
  const auto count = static_cast<std::size_t>(
      std::min<double>(static_cast<double>(n), std::ceil(keep_fraction * static_cast<double>(n) - 1e-9)));
  std::vector<VesselClass> cls(n, VesselClass::small);
  for (std::size_t k = 0; k < count; ++k) cls[static_cast<std::size_t>(order[k])] = VesselClass::large;

  const Components comp =
      connected_components(net, [&](int s) { return cls[static_cast<std::size_t>(s)] == VesselClass::large; });
  std::vector<double> comp_len(static_cast<std::size_t>(comp.count), 0.0);
  for (const auto& s : net.segments())
    if (cls[static_cast<std::size_t>(s.id)] == VesselClass::large)
      comp_len[static_cast<std::size_t>(comp.node_component[static_cast<std::size_t>(s.node_a)])] += s.length;
  int demoted = 0;
  for (const auto& s : net.segments()) {
    if (cls[static_cast<std::size_t>(s.id)] != VesselClass::large) continue;
    const int c = comp.node_component[static_cast<std::size_t>(s.node_a)];
    if (comp_len[static_cast<std::size_t>(c)] < min_component_length) {
      cls[static_cast<std::size_t>(s.id)] = VesselClass::small;
      ++demoted;
    }
  }
  PartitionResult r{net.with_partition(std::move(cls)), static_cast<int>(count), demoted};
  return r;
}

std::vector<bool> large_node_mask(const VesselNetwork& net) {
  std::vector<bool> mask(net.n_nodes(), false);
  for (const auto& s : net.segments())
    if (net.is_large(s.id)) mask[static_cast<std::size_t>(s.node_a)] = mask[static_cast<std::size_t>(s.node_b)] = true;
  return mask;
}

std::vector<int> connecting_segments(const VesselNetwork& net) {
  std::vector<int> out;
  if (!net.partition()) return out;
  const auto mask = large_node_mask(net);
  for (const auto& s : net.segments()) {
    if (net.is_large(s.id)) continue;
    if (mask[static_cast<std::size_t>(s.node_a)] != mask[static_cast<std::size_t>(s.node_b)]) out.push_back(s.id);
  }
  return out;
}

namespace {

std::optional<double> coefficient_of_variation(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (mean == 0.0) return std::nullopt;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size())) / std::abs(mean);
}

}  // namespace

ConnectivityStats connectivity_stats(const VesselNetwork& net, const std::vector<double>& flow) {
  if (!net.partition()) throw ContractError("connectivity_stats: network has no partition");
  if (flow.size() != net.n_segments()) throw ContractError("connectivity_stats: flow vector size mismatch");
  const auto mask = large_node_mask(net);
  const auto conn = connecting_segments(net);
  std::vector<bool> linked(net.n_nodes(), false);
  std::vector<double> diam, absq;
  for (int id : conn) {
    const auto& s = net.segment(id);
    const int ln = mask[static_cast<std::size_t>(s.node_a)] ? s.node_a : s.node_b;
    linked[static_cast<std::size_t>(ln)] = true;
    diam.push_back(2.0 * s.radius);
    absq.push_back(std::abs(flow[static_cast<std::size_t>(id)]));
  }
  ConnectivityStats st;
  st.n_connecting = static_cast<int>(conn.size());
  const auto n_large = std::count(mask.begin(), mask.end(), true);
  const auto n_linked = std::count(linked.begin(), linked.end(), true);
  st.phi = n_large > 0 ? static_cast<double>(n_linked) / static_cast<double>(n_large) : 0.0;
  st.cv_diameter = coefficient_of_variation(diam);
  st.cv_abs_flow = coefficient_of_variation(absq);
  return st;
}

// ---------------------------------------------------------------------------

std::vector<int> tip_nodes(const VesselNetwork& net) {
  std::vector<int> tips;
  for (const auto& n : net.nodes())
    if (net.degree(n.id) == 1) tips.push_back(n.id);
  return tips;
}

namespace {

double mean_segment_length(const VesselNetwork& net) {
  if (net.n_segments() == 0) return 0.0;
  double s = 0.0;
  for (const auto& seg : net.segments()) s += seg.length;
  return s / static_cast<double>(net.n_segments());
}

HullPredicate box_hull(const VesselNetwork& net, const Box3& domain) {
  const double h = mean_segment_length(net);
  return [domain, h](const Vec3& p) { return domain.distance_to_boundary(p) < h; };
}

}  // namespace

TipClasses classify_tips(const VesselNetwork& net, const Box3& domain) {
  const auto on_hull = box_hull(net, domain);
  TipClasses t;
  for (int id : tip_nodes(net)) (on_hull(net.node(id).position) ? t.hull : t.interior).push_back(id);
  return t;
}

NetworkStats network_stats(const VesselNetwork& net, double domain_volume, const HullPredicate& on_hull) {
  if (!(domain_volume > 0.0)) throw ConfigError("network_stats: domain volume must be positive");
  NetworkStats st;
  st.n_segments = static_cast<int>(net.n_segments());
  st.n_nodes = static_cast<int>(net.n_nodes());
  if (net.n_segments() == 0) return st;
  double vol = 0.0, surf = 0.0, sd = 0.0, sd2 = 0.0, sl = 0.0, sl2 = 0.0;
  for (const auto& s : net.segments()) {
    vol += std::numbers::pi * s.radius * s.radius * s.length;
    surf += 2.0 * std::numbers::pi * s.radius * s.length;
    sd += 2.0 * s.radius;
    sd2 += 4.0 * s.radius * s.radius;
    sl += s.length;
    sl2 += s.length * s.length;
  }
  const auto n = static_cast<double>(net.n_segments());
  st.volume_fraction = vol / domain_volume;
  st.surface_to_volume = surf / domain_volume;
  st.mean_diameter = sd / n;
  st.std_diameter = std::sqrt(std::max(0.0, sd2 / n - st.mean_diameter * st.mean_diameter));
  st.mean_length = sl / n;
  st.std_length = std::sqrt(std::max(0.0, sl2 / n - st.mean_length * st.mean_length));
  for (int id : tip_nodes(net)) (on_hull(net.node(id).position) ? st.n_tips_hull : st.n_tips_interior)++;
  return st;
}

NetworkStats network_stats(const VesselNetwork& net, const Box3& domain) {
  return network_stats(net, domain.volume(), box_hull(net, domain));
}

}  // namespace vasoperf
