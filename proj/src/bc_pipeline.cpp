#include "vasoperf/errors.hpp"
#include "vasoperf/full_model.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace vasoperf {

namespace {

std::size_t fraction_count(double frac, std::size_t n) {
  return static_cast<std::size_t>(std::max(0.0, std::ceil(frac * static_cast<double>(n) - 1e-9)));
}

}  // namespace

BcAssignment assign_boundary_conditions(const VesselNetwork& net, const Box3& domain, std::uint64_t seed,
                                        const BcAssignmentConfig& cfg) {
  if (!(cfg.frac_pressure > 0.0 && cfg.frac_noflux >= 0.0 && cfg.frac_pressure + cfg.frac_noflux <= 1.0))
    throw ConfigError("boundary fractions must be positive and sum to at most 1");
  if (!(cfg.proximity_radius >= 0.0)) throw ConfigError("proximity radius must be non-negative");
  std::mt19937_64 rng(seed);
  const TipClasses tips = classify_tips(net, domain);
  const std::size_t n_tips = tips.hull.size() + tips.interior.size();
  const std::size_t n_p = fraction_count(cfg.frac_pressure, n_tips);
  const std::size_t n_nf = fraction_count(cfg.frac_noflux, n_tips);
  if (tips.hull.size() < n_p) {
    std::ostringstream os;
    os << "only " << tips.hull.size() << " hull tips for " << n_p << " pressure conditions; achievable fraction "
       << (n_tips ? static_cast<double>(tips.hull.size()) / static_cast<double>(n_tips) : 0.0);
    throw ConfigError(os.str());
  }
  if (cfg.require_both_signs && n_p < 2)
    throw ConfigError("both pressure levels requested but only one pressure condition is available");

  std::vector<int> hull = tips.hull;
  std::shuffle(hull.begin(), hull.end(), rng);
  std::vector<NodeBc> bcs(net.n_nodes());
  for (const auto& n : net.nodes()) bcs[static_cast<std::size_t>(n.id)] = NodeBc{};
  BcAssignment out;
  std::vector<int> high, low;
  std::vector<int> unused_hull;
  const double r2 = cfg.proximity_radius * cfg.proximity_radius;
  auto conflicts = [&](int node, const std::vector<int>& opposite) {
    const Vec3& p = net.node(node).position;
    for (int o : opposite)
      if (std::isinf(cfg.proximity_radius) || (net.node(o).position - p).squaredNorm() < r2) return true;
    return false;
  };
  std::bernoulli_distribution coin(0.5);
  for (std::size_t k = 0; k < hull.size(); ++k) {
    const int node = hull[k];
    if (out.pressure_tips.size() == n_p) {
      unused_hull.push_back(node);
      continue;
    }
    bool want_high = coin(rng);
    // reserve the last slot for a missing sign
    if (cfg.require_both_signs && out.pressure_tips.size() + 1 == n_p) {
      if (high.empty()) want_high = true;
      if (low.empty()) want_high = false;
    }
    const bool forced = cfg.require_both_signs && out.pressure_tips.size() + 1 == n_p && (high.empty() || low.empty());
    bool placed = false;
    for (int attempt = 0; attempt < (forced ? 1 : 2) && !placed; ++attempt) {
      const bool h = attempt == 0 ? want_high : !want_high;
      if (conflicts(node, h ? low : high)) continue;
      (h ? high : low).push_back(node);
      bcs[static_cast<std::size_t>(node)] = NodeBc::pressure(h ? cfg.p_high : cfg.p_low);
      out.pressure_tips.push_back(node);
      placed = true;
    }
    if (!placed) unused_hull.push_back(node);
  }
  if (out.pressure_tips.size() < n_p || (cfg.require_both_signs && (high.empty() || low.empty()))) {
    std::ostringstream os;
    os << "cannot place " << n_p << " pressure conditions with both levels separated by the proximity radius "
       << cfg.proximity_radius << " um";
    throw ConfigError(os.str());
  }

  std::vector<int> interior = tips.interior;
  std::shuffle(interior.begin(), interior.end(), rng);
  std::vector<int> pool = interior;
  pool.insert(pool.end(), unused_hull.begin(), unused_hull.end());
  for (std::size_t k = 0; k < pool.size(); ++k) {
    if (k < n_nf) {
      bcs[static_cast<std::size_t>(pool[k])] = NodeBc::noflux();
      out.noflux_tips.push_back(pool[k]);
    } else {
      out.unknown_tips.push_back(pool[k]);
    }
  }
  std::sort(out.pressure_tips.begin(), out.pressure_tips.end());
  std::sort(out.noflux_tips.begin(), out.noflux_tips.end());
  std::sort(out.unknown_tips.begin(), out.unknown_tips.end());
  out.network = net.with_bcs(std::move(bcs));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct FlowFitLayout {
  std::vector<int> free_nodes;     // unknown pressures
  std::vector<int> free_index;     // node -> column, -1 if fixed
  std::vector<int> constrained;    // nodes with a conservation constraint
};

FlowFitLayout make_layout(const VesselNetwork& net) {
  FlowFitLayout l;
  l.free_index.assign(net.n_nodes(), -1);
  for (const auto& n : net.nodes()) {
    if (n.bc.type == BcType::pressure || net.degree(n.id) == 0) continue;
    l.free_index[static_cast<std::size_t>(n.id)] = static_cast<int>(l.free_nodes.size());
    l.free_nodes.push_back(n.id);
    const bool unknown_tip = net.degree(n.id) == 1 && n.bc.type == BcType::none;
    if (!unknown_tip) l.constrained.push_back(n.id);
  }
  return l;
}

}  // namespace

double flow_fit_objective(const VesselNetwork& net, const std::vector<double>& pressure,
                          const std::vector<int>& free_nodes, const std::vector<double>& signs,
                          const FlowTargets& t) {
  double j = 0.0;
  for (int n : free_nodes) {
    const double d = pressure[static_cast<std::size_t>(n)] - t.p_target;
    j += t.w_p * d * d;
  }
  for (const auto& s : net.segments()) {
    const double tau = s.radius * (pressure[static_cast<std::size_t>(s.node_a)] - pressure[static_cast<std::size_t>(s.node_b)]) /
                       (2.0 * s.length);
    const double d = tau - t.tau_target * signs[static_cast<std::size_t>(s.id)];
    j += t.w_tau * d * d;
  }
  return j;
}

OptimizedBoundaries optimize_unknown_boundaries(const VesselNetwork& net, const FlowTargets& t) {
  if (!(t.w_p >= 0.0 && t.w_tau >= 0.0)) throw ConfigError("flow fit weights must be non-negative");
  const FlowFitLayout lay = make_layout(net);
  std::vector<int> unknown_tips;
  for (const auto& n : net.nodes())
    if (net.degree(n.id) == 1 && n.bc.type == BcType::none) unknown_tips.push_back(n.id);
  OptimizedBoundaries out;
  if (unknown_tips.empty()) {
    out.network = net;
    out.flow = solve_network_poiseuille(net);
    out.sign_iterations = 0;
    return out;
  }

  const auto nf = static_cast<long>(lay.free_nodes.size());
  const auto nc = static_cast<long>(lay.constrained.size());
  std::vector<double> fixed_p(net.n_nodes(), 0.0);
  for (const auto& n : net.nodes())
    if (n.bc.type == BcType::pressure) fixed_p[static_cast<std::size_t>(n.id)] = n.bc.value;

  // conservation rows: Σ g (p_i − p_j) = 0 at constrained nodes
  Triplets ct;
  Eigen::VectorXd d = Eigen::VectorXd::Zero(nc);
  for (long r = 0; r < nc; ++r) {
    const int i = lay.constrained[static_cast<std::size_t>(r)];
    for (int sid : net.incidence()[static_cast<std::size_t>(i)]) {
      const auto& s = net.segment(sid);
      const int j = s.node_a == i ? s.node_b : s.node_a;
      const double g = segment_conductance(s);
      ct.emplace_back(static_cast<int>(r), lay.free_index[static_cast<std::size_t>(i)], g);
      const int cj = lay.free_index[static_cast<std::size_t>(j)];
      if (cj >= 0)
        ct.emplace_back(static_cast<int>(r), cj, -g);
      else
        d[r] += g * fixed_p[static_cast<std::size_t>(j)];
    }
  }

  std::vector<double> signs(net.n_segments(), 0.0);
  std::vector<double> pressure(net.n_nodes(), 0.0);
  double w_tau = 0.0;  // first pass without shear targets fixes the flow directions
  int iter = 0;
  bool converged = false;
  for (; iter <= t.max_sign_iterations; ++iter) {
    Triplets kt = ct;
    // shift constraint rows below the Hessian block
    for (auto& tr : kt) tr = Triplet(static_cast<int>(tr.row() + nf), tr.col(), tr.value());
    for (const auto& tr : ct) kt.emplace_back(tr.col(), static_cast<int>(tr.row() + nf), tr.value());
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nf + nc);
    for (long c = 0; c < nf; ++c) {
      kt.emplace_back(static_cast<int>(c), static_cast<int>(c), t.w_p);
      rhs[c] += t.w_p * t.p_target;
    }
    if (w_tau > 0.0) {
      for (const auto& s : net.segments()) {
        const double alpha = s.radius / (2.0 * s.length);
        const int ca = lay.free_index[static_cast<std::size_t>(s.node_a)];
        const int cb = lay.free_index[static_cast<std::size_t>(s.node_b)];
        // τ = α (p_a − p_b) = α (u_a − u_b) + α (fixed_a − fixed_b)
        const double fixed_part = alpha * ((ca < 0 ? fixed_p[static_cast<std::size_t>(s.node_a)] : 0.0) -
                                           (cb < 0 ? fixed_p[static_cast<std::size_t>(s.node_b)] : 0.0));
        const double target = t.tau_target * signs[static_cast<std::size_t>(s.id)] - fixed_part;
        const int cols[2] = {ca, cb};
        const double coef[2] = {alpha, -alpha};
        for (int u = 0; u < 2; ++u) {
          if (cols[u] < 0) continue;
          rhs[cols[u]] += w_tau * coef[u] * target;
          for (int v = 0; v < 2; ++v)
            if (cols[v] >= 0) kt.emplace_back(cols[u], cols[v], w_tau * coef[u] * coef[v]);
        }
      }
    }
    rhs.tail(nc) = d;
    SpMat kkt(nf + nc, nf + nc);
    kkt.setFromTriplets(kt.begin(), kt.end());
    kkt.makeCompressed();
    Eigen::SparseLU<SpMat> lu;
    lu.compute(kkt);
    if (lu.info() != Eigen::Success)
      throw SingularSystemError("flow fit KKT system is singular; adjust the pressure/shear weights");
    const Eigen::VectorXd sol = lu.solve(rhs);
    if (lu.info() != Eigen::Success || !sol.allFinite())
      throw SingularSystemError("flow fit KKT system is singular; adjust the pressure/shear weights");
    for (const auto& n : net.nodes()) {
      const int c = lay.free_index[static_cast<std::size_t>(n.id)];
      pressure[static_cast<std::size_t>(n.id)] = c >= 0 ? sol[c] : fixed_p[static_cast<std::size_t>(n.id)];
    }
    const auto q = segment_flows(net, pressure);
    std::vector<double> new_signs(q.size());
    for (std::size_t k = 0; k < q.size(); ++k) new_signs[k] = q[k] < 0.0 ? -1.0 : 1.0;
    if (t.w_tau == 0.0) {
      converged = true;
      break;
    }
    if (w_tau > 0.0 && new_signs == signs) {
      converged = true;
      break;
    }
    signs = new_signs;
    w_tau = t.w_tau;
  }
  std::vector<NodeBc> bcs = net.bcs();
  for (int tip : unknown_tips) bcs[static_cast<std::size_t>(tip)] = NodeBc::pressure(pressure[static_cast<std::size_t>(tip)]);
  out.network = net.with_bcs(std::move(bcs));
  out.flow.pressure = pressure;
  out.flow.flow = segment_flows(net, pressure);
  out.sign_iterations = iter;
  out.signs_converged = converged;
  return out;
}

}  // namespace vasoperf
