#include "vasoperf/errors.hpp"
#include "vasoperf/network.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace vasoperf {

namespace {

struct GraphBuilder {
  std::vector<Vec3> pos;
  std::vector<SegmentSpec> segs;
  std::vector<std::uint8_t> seg_kind;  // 0 capillary, 1 backbone, 2 stub / dead end

  int add_node(const Vec3& p) {
    pos.push_back(p);
    return static_cast<int>(pos.size()) - 1;
  }
  void add_segment(int a, int b, double r, std::uint8_t kind) {
    segs.push_back({a, b, r});
    seg_kind.push_back(kind);
  }
};

double uniform01(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

// Keep the connected component with the most segments and compact node ids.
GraphBuilder largest_component(const GraphBuilder& g) {
  VesselNetwork tmp(g.pos, {}, g.segs);
  const Components comp = connected_components(tmp, [](int) { return true; });
  std::vector<int> count(static_cast<std::size_t>(comp.count), 0);
  for (const auto& s : g.segs) ++count[static_cast<std::size_t>(comp.node_component[static_cast<std::size_t>(s.node_a)])];
  const int best = static_cast<int>(std::max_element(count.begin(), count.end()) - count.begin());
  GraphBuilder out;
  std::vector<int> remap(g.pos.size(), -1);
  for (std::size_t i = 0; i < g.pos.size(); ++i)
    if (comp.node_component[i] == best) remap[i] = out.add_node(g.pos[i]);
  for (std::size_t k = 0; k < g.segs.size(); ++k) {
    const auto& s = g.segs[k];
    if (remap[static_cast<std::size_t>(s.node_a)] < 0) continue;
    out.add_segment(remap[static_cast<std::size_t>(s.node_a)], remap[static_cast<std::size_t>(s.node_b)], s.radius,
                    g.seg_kind[k]);
  }
  return out;
}

VesselNetwork build_lattice(const GeneratorSpec& spec, std::mt19937_64& rng) {
  const Box3& box = spec.box;
  const Vec3 ext = box.extent();
  std::array<int, 3> n{};
  for (int d = 0; d < 3; ++d) {
    n[static_cast<std::size_t>(d)] = static_cast<int>(std::floor(ext[d] / spec.pitch + 1e-9));
    if (n[static_cast<std::size_t>(d)] < 1) throw ConfigError("lattice pitch exceeds the box extent");
  }
  if (!(spec.radius > 0.55)) throw ConfigError("lattice radius must exceed 0.55 um");
  const bool two_scale = spec.kind == GeneratorKind::two_scale;
  if (two_scale && !(spec.backbone_radius > 0.55)) throw ConfigError("backbone radius must exceed 0.55 um");
  if (two_scale && spec.backbone_lines < 1) throw ConfigError("backbone_lines must be at least 1");
  if (!(spec.center_sparsity >= 0.0 && spec.center_sparsity < 1.0)) throw ConfigError("center_sparsity must lie in [0, 1)");

  GraphBuilder g;
  auto id = [&](int i, int j, int k) { return (k * n[1] + j) * n[0] + i; };
  for (int k = 0; k < n[2]; ++k)
    for (int j = 0; j < n[1]; ++j)
      for (int i = 0; i < n[0]; ++i)
        g.add_node(box.lo + spec.pitch * Vec3(i + 0.5, j + 0.5, k + 0.5));

  // backbone line indices per axis
  std::array<std::vector<bool>, 3> on_line;
  for (int d = 0; d < 3; ++d) {
    auto& v = on_line[static_cast<std::size_t>(d)];
    v.assign(static_cast<std::size_t>(n[static_cast<std::size_t>(d)]), false);
    if (!two_scale) continue;
    const int m = std::min(spec.backbone_lines, n[static_cast<std::size_t>(d)]);
    for (int t = 0; t < m; ++t)
      v[static_cast<std::size_t>((2 * t + 1) * n[static_cast<std::size_t>(d)] / (2 * m))] = true;
  }
  // a line along axis d is a backbone line if both transverse indices are marked
  auto is_backbone_line = [&](int d, const std::array<int, 3>& ijk) {
    if (!two_scale) return false;
    const int d1 = (d + 1) % 3, d2 = (d + 2) % 3;
    return on_line[static_cast<std::size_t>(d1)][static_cast<std::size_t>(ijk[static_cast<std::size_t>(d1)])] &&
           on_line[static_cast<std::size_t>(d2)][static_cast<std::size_t>(ijk[static_cast<std::size_t>(d2)])];
  };

  const Vec3 c = box.center();
  for (int k = 0; k < n[2]; ++k)
    for (int j = 0; j < n[1]; ++j)
      for (int i = 0; i < n[0]; ++i) {
        const std::array<int, 3> ijk{i, j, k};
        for (int d = 0; d < 3; ++d) {
          std::array<int, 3> nb = ijk;
          ++nb[static_cast<std::size_t>(d)];
          if (nb[static_cast<std::size_t>(d)] >= n[static_cast<std::size_t>(d)]) continue;
          const int a = id(i, j, k), b = id(nb[0], nb[1], nb[2]);
          if (is_backbone_line(d, ijk)) {
            g.add_segment(a, b, spec.backbone_radius, 1);
            continue;
          }
          if (spec.center_sparsity > 0.0) {
            const Vec3 mid = 0.5 * (g.pos[static_cast<std::size_t>(a)] + g.pos[static_cast<std::size_t>(b)]);
            const double s = ((mid - c).cwiseAbs().array() / (0.5 * ext.array())).maxCoeff();
            if (uniform01(rng) < spec.center_sparsity * (1.0 - std::min(1.0, s))) continue;
          }
          g.add_segment(a, b, spec.radius, 0);
        }
      }

  // half-pitch stubs to the selected faces
  for (int f = 0; f < 6; ++f) {
    if (!spec.stub_faces[static_cast<std::size_t>(f)]) continue;
    const int d = f / 2;
    const bool upper = (f % 2) == 1;
    const int d1 = (d + 1) % 3, d2 = (d + 2) % 3;
    for (int u = 0; u < n[static_cast<std::size_t>(d2)]; ++u)
      for (int t = 0; t < n[static_cast<std::size_t>(d1)]; ++t) {
        std::array<int, 3> ijk{};
        ijk[static_cast<std::size_t>(d)] = upper ? n[static_cast<std::size_t>(d)] - 1 : 0;
        ijk[static_cast<std::size_t>(d1)] = t;
        ijk[static_cast<std::size_t>(d2)] = u;
        const int a = id(ijk[0], ijk[1], ijk[2]);
        Vec3 p = g.pos[static_cast<std::size_t>(a)];
        p[d] = upper ? box.hi[d] : box.lo[d];
        const int b = g.add_node(p);
        const bool bb = is_backbone_line(d, ijk);
        g.add_segment(a, b, bb ? spec.backbone_radius : spec.radius, bb ? 1 : 2);
      }
  }

  if (spec.interior_dead_ends > 0) {
    if (!(spec.dead_end_length > 0.0 && spec.dead_end_length < 0.5 * spec.pitch))
      throw ConfigError("dead_end_length must lie in (0, pitch/2)");
    std::vector<int> cand;
    for (int k = 1; k + 1 < n[2]; ++k)
      for (int j = 1; j + 1 < n[1]; ++j)
        for (int i = 1; i + 1 < n[0]; ++i) cand.push_back(id(i, j, k));
    if (static_cast<int>(cand.size()) < spec.interior_dead_ends)
      throw ConfigError("lattice has only " + std::to_string(cand.size()) + " interior nodes for " +
                        std::to_string(spec.interior_dead_ends) + " dead ends");
    std::shuffle(cand.begin(), cand.end(), rng);
    std::sort(cand.begin(), cand.begin() + spec.interior_dead_ends);
    const Vec3 dir = Vec3(1.0, 1.0, 1.0).normalized();
    for (int t = 0; t < spec.interior_dead_ends; ++t) {
      const int a = cand[static_cast<std::size_t>(t)];
      const int b = g.add_node(g.pos[static_cast<std::size_t>(a)] + spec.dead_end_length * dir);
      g.add_segment(a, b, spec.radius, 2);
    }
  }

  if (spec.center_sparsity > 0.0) g = largest_component(g);
  return VesselNetwork(g.pos, {}, g.segs);
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  for (;;) {
    Vec3 v(nd(rng), nd(rng), nd(rng));
    const double l = v.norm();
    if (l > 1e-12) return v / l;
  }
}

VesselNetwork build_tree(const GeneratorSpec& spec, std::mt19937_64& rng) {
  if (spec.n_roots < 1 || spec.depth < 1) throw ConfigError("tree needs n_roots >= 1 and depth >= 1");
  if (!(spec.taper > 0.0 && spec.taper <= 1.0)) throw ConfigError("taper must lie in (0, 1]");
  if (!(spec.branch_length > 0.0)) throw ConfigError("branch_length must be positive");
  if (!(spec.root_radius * std::pow(spec.taper, spec.depth - 1) > 0.55))
    throw ConfigError("tapered radius falls below the viscosity law's validity range");
  const Box3& box = spec.box;
  const Vec3 ext = box.extent();
  GraphBuilder g;

  struct Branch {
    int node;
    Vec3 dir;
    double radius;
    int level;
  };
  for (int r = 0; r < spec.n_roots; ++r) {
    const int face = static_cast<int>(uniform01(rng) * 6.0) % 6;
    const int d = face / 2;
    const bool upper = face % 2 == 1;
    Vec3 p;
    for (int k = 0; k < 3; ++k) p[k] = box.lo[k] + ext[k] * (0.1 + 0.8 * uniform01(rng));
    p[d] = upper ? box.hi[d] : box.lo[d];
    Vec3 dir = Vec3::Zero();
    dir[d] = upper ? -1.0 : 1.0;
    std::vector<Branch> stack{{g.add_node(p), dir, spec.root_radius, 0}};
    while (!stack.empty()) {
      const Branch b = stack.back();
      stack.pop_back();
      const Vec3 start = g.pos[static_cast<std::size_t>(b.node)];
      const double len = spec.branch_length * std::pow(0.85, b.level);
      Vec3 end = start + len * b.dir;
      if (!box.contains(end)) {
        const auto t = clip_segment(start, end, box);
        if (!t) continue;
        end = start + t->second * (end - start);
      }
      if ((end - start).norm() < 1.0) continue;
      const int e = g.add_node(end);
      g.add_segment(b.node, e, b.radius, 0);
      if (b.level + 1 >= spec.depth) continue;
      const Vec3 side = random_unit(rng);
      Vec3 perp = side - side.dot(b.dir) * b.dir;
      if (perp.norm() < 1e-6) perp = b.dir.unitOrthogonal();
      perp.normalize();
      for (int c = 0; c < 2; ++c) {
        Vec3 nd = b.dir + (c == 0 ? 0.6 : -0.6) * perp + spec.jitter * random_unit(rng);
        if (nd.norm() < 1e-6) nd = b.dir;
        stack.push_back({e, nd.normalized(), b.radius * spec.taper, b.level + 1});
      }
    }
  }
  return VesselNetwork(g.pos, {}, g.segs);
}

}  // namespace

VesselNetwork subdivide(const VesselNetwork& net, double max_length) {
  if (!(max_length > 0.0)) throw ConfigError("max segment length must be positive");
  std::vector<Vec3> pos = net.positions();
  std::vector<NodeBc> bcs = net.bcs();
  std::vector<SegmentSpec> segs;
  std::vector<VesselClass> cls;
  for (const auto& s : net.segments()) {
    const int pieces = std::max(1, static_cast<int>(std::ceil(s.length / max_length - 1e-9)));
    const Vec3 a = pos[static_cast<std::size_t>(s.node_a)];
    const Vec3 b = pos[static_cast<std::size_t>(s.node_b)];
    int prev = s.node_a;
    for (int k = 1; k <= pieces; ++k) {
      int next = s.node_b;
      if (k < pieces) {
        pos.push_back(a + (static_cast<double>(k) / pieces) * (b - a));
        bcs.emplace_back();
        next = static_cast<int>(pos.size()) - 1;
      }
      segs.push_back({prev, next, s.radius});
      if (net.partition()) cls.push_back((*net.partition())[static_cast<std::size_t>(s.id)]);
      prev = next;
    }
  }
  VesselNetwork out(std::move(pos), std::move(bcs), segs, net.hematocrit());
  if (net.partition()) out = out.with_partition(std::move(cls));
  return out;
}

VesselNetwork generate_synthetic_network(const GeneratorSpec& spec, std::uint64_t seed) {
  if (!spec.box.valid()) throw ConfigError("generator box is degenerate");
  if (!(spec.pitch > 0.0)) throw ConfigError("lattice pitch must be positive");
  std::mt19937_64 rng(seed);
  VesselNetwork raw;
  switch (spec.kind) {
    case GeneratorKind::lattice:
    case GeneratorKind::two_scale:
      raw = build_lattice(spec, rng);
      break;
    case GeneratorKind::tree:
      raw = build_tree(spec, rng);
      break;
  }
  return subdivide(raw, spec.max_segment_length);
}

}  // namespace vasoperf
