#include "vasoperf/pipeline.hpp"

#include "vasoperf/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace vasoperf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ofstream open_out(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot write " + file.string());
  out.precision(17);
  return out;
}

void write_json(const json& j, const fs::path& file) { open_out(file) << j.dump(2) << '\n'; }

json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed JSON in " + file.string() + ": " + e.what());
  }
}

// NaN and infinities become null
json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name, const fs::path& file) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ConfigError(file.string() + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

Csv read_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read " + file.string());
  Csv csv;
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> f;
    std::stringstream ss(l);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    if (!l.empty() && l.back() == ',') f.emplace_back();
    return f;
  };
  if (!std::getline(in, line)) throw ConfigError(file.string() + " is empty");
  csv.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split(line);
    if (f.size() != csv.header.size()) throw ConfigError(file.string() + ": ragged row");
    csv.rows.push_back(std::move(f));
  }
  return csv;
}

double to_double(const std::string& s, const fs::path& file) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw ConfigError(file.string() + ": bad number '" + s + "'");
  return v;
}

std::vector<double> column_values(const Csv& csv, const std::string& name, const fs::path& file) {
  const std::size_t c = csv.column(name, file);
  std::vector<double> v;
  v.reserve(csv.rows.size());
  for (const auto& r : csv.rows) v.push_back(to_double(r[c], file));
  return v;
}

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<long>(v.size()));
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

void check_size(std::size_t got, std::size_t want, const fs::path& file) {
  if (got != want)
    throw ConfigError(file.string() + ": " + std::to_string(got) + " rows, expected " + std::to_string(want));
}

json solve_report_json(const SolveReport& r) {
  return {{"method", r.method}, {"relative_residual", number(r.relative_residual)}, {"iterations", r.iterations}};
}

json fit_json(const LinearFit& f) {
  return {{"slope", number(f.slope)}, {"intercept", number(f.intercept)}, {"r2", number(f.r2)}};
}

json stats_json(const NetworkStats& s) {
  return {{"n_segments", s.n_segments},
          {"n_nodes", s.n_nodes},
          {"volume_fraction", number(s.volume_fraction)},
          {"surface_to_volume", number(s.surface_to_volume)},
          {"mean_diameter", number(s.mean_diameter)},
          {"std_diameter", number(s.std_diameter)},
          {"mean_length", number(s.mean_length)},
          {"std_length", number(s.std_length)},
          {"n_tips_hull", s.n_tips_hull},
          {"n_tips_interior", s.n_tips_interior}};
}

}  // namespace

// ---------------------------------------------------------------------------
// solution files

void write_full_solution(const FullSolution& sol, const VesselNetwork& net, const TissueMesh& mesh,
                         const fs::path& dir) {
  {
    auto out = open_out(dir / "vessel_pressure.csv");
    out << "node,p\n";
    for (long i = 0; i < sol.p_vessel.size(); ++i) out << i << ',' << sol.p_vessel[i] << '\n';
  }
  {
    auto out = open_out(dir / "tissue_pressure.csv");
    out << "node,p_if\n";
    for (long i = 0; i < sol.p_if.size(); ++i) out << i << ',' << sol.p_if[i] << '\n';
  }
  {
    auto out = open_out(dir / "flows.csv");
    out << "segment,Q,leakage\n";
    for (std::size_t s = 0; s < sol.flow.size(); ++s) out << s << ',' << sol.flow[s] << ',' << sol.leakage[s] << '\n';
  }
  write_json({{"total_leakage", number(sol.total_leakage)},
              {"boundary_outflux", number(sol.boundary_outflux)},
              {"mass_balance_error", number(sol.mass_balance_error)},
              {"solver", solve_report_json(sol.report)},
              {"seconds", sol.seconds}},
             dir / "summary.json");
  write_vtk(mesh, dir / "fields.vtk", {{"p_if", sol.p_if}});
  write_network_vtk(net, dir / "network.vtk", {{"p_vessel", to_std(sol.p_vessel)}},
                    {{"flow", sol.flow}, {"leakage", sol.leakage}});
}

FullSolution read_full_solution(const fs::path& dir, const VesselNetwork& net, const TissueMesh& mesh) {
  FullSolution sol;
  const auto vp = read_csv(dir / "vessel_pressure.csv");
  check_size(vp.rows.size(), net.n_nodes(), dir / "vessel_pressure.csv");
  sol.p_vessel = to_eigen(column_values(vp, "p", dir / "vessel_pressure.csv"));
  const auto tp = read_csv(dir / "tissue_pressure.csv");
  check_size(tp.rows.size(), mesh.n_nodes(), dir / "tissue_pressure.csv");
  sol.p_if = to_eigen(column_values(tp, "p_if", dir / "tissue_pressure.csv"));
  const auto fl = read_csv(dir / "flows.csv");
  check_size(fl.rows.size(), net.n_segments(), dir / "flows.csv");
  sol.flow = column_values(fl, "Q", dir / "flows.csv");
  sol.leakage = column_values(fl, "leakage", dir / "flows.csv");
  const json s = read_json(dir / "summary.json");
  sol.total_leakage = s.value("total_leakage", 0.0);
  sol.boundary_outflux = s.value("boundary_outflux", 0.0);
  sol.mass_balance_error = s["mass_balance_error"].is_number() ? s["mass_balance_error"].get<double>() : NAN;
  return sol;
}

void write_hybrid_solution(const HybridSolution& sol, const VesselNetwork& net, const TissueMesh& mesh,
                           const fs::path& dir) {
  {
    auto out = open_out(dir / "vessel.csv");
    out << "node,large,p,lambda,gap\n";
    for (long i = 0; i < sol.p_vessel.size(); ++i)
      out << i << ',' << (sol.large_node[static_cast<std::size_t>(i)] ? 1 : 0) << ',' << sol.p_vessel[i] << ','
          << sol.lambda[i] << ',' << sol.gap[i] << '\n';
  }
  {
    auto out = open_out(dir / "tissue.csv");
    out << "node,p_if,p_v\n";
    for (long i = 0; i < sol.p_if.size(); ++i) out << i << ',' << sol.p_if[i] << ',' << sol.p_v[i] << '\n';
  }
  write_json({{"penalty", sol.penalty},
              {"delta", number(sol.criterion.delta)},
              {"max_scaled_gap", number(sol.criterion.max_scaled_gap)},
              {"penalty_criterion_passed", sol.criterion.passed()},
              {"total_leakage", number(sol.total_leakage)},
              {"homogenized_leakage", number(sol.homogenized_leakage)},
              {"exchange", number(sol.exchange)},
              {"boundary_outflux", number(sol.boundary_outflux)},
              {"mass_balance_error", number(sol.mass_balance_error)},
              {"solver", solve_report_json(sol.report)},
              {"seconds", sol.seconds}},
             dir / "summary.json");
  write_vtk(mesh, dir / "fields.vtk", {{"p_if", sol.p_if}, {"p_v", sol.p_v}});
  std::vector<double> large(net.n_nodes());
  for (std::size_t i = 0; i < large.size(); ++i) large[i] = sol.large_node[i] ? 1.0 : 0.0;
  write_network_vtk(net, dir / "network.vtk",
                    {{"p_vessel", to_std(sol.p_vessel)}, {"lambda", to_std(sol.lambda)}, {"large_node", large}});
}

HybridSolution read_hybrid_solution(const fs::path& dir, const VesselNetwork& net, const TissueMesh& mesh) {
  HybridSolution sol;
  const auto v = read_csv(dir / "vessel.csv");
  check_size(v.rows.size(), net.n_nodes(), dir / "vessel.csv");
  for (double f : column_values(v, "large", dir / "vessel.csv")) sol.large_node.push_back(f != 0.0);
  sol.p_vessel = to_eigen(column_values(v, "p", dir / "vessel.csv"));
  sol.lambda = to_eigen(column_values(v, "lambda", dir / "vessel.csv"));
  sol.gap = to_eigen(column_values(v, "gap", dir / "vessel.csv"));
  const auto t = read_csv(dir / "tissue.csv");
  check_size(t.rows.size(), mesh.n_nodes(), dir / "tissue.csv");
  sol.p_if = to_eigen(column_values(t, "p_if", dir / "tissue.csv"));
  sol.p_v = to_eigen(column_values(t, "p_v", dir / "tissue.csv"));
  const json s = read_json(dir / "summary.json");
  sol.penalty = s.value("penalty", 0.0);
  if (s["delta"].is_number()) sol.criterion.delta = s["delta"].get<double>();
  if (s["exchange"].is_number()) sol.exchange = s["exchange"].get<double>();
  return sol;
}

// ---------------------------------------------------------------------------
// stages

PreparedNetwork complete_boundary_conditions(const ExperimentConfig& cfg, VesselNetwork net, const Box3& domain,
                                             std::uint64_t bc_seed) {
  PreparedNetwork out;
  const bool has_bcs =
      std::any_of(net.nodes().begin(), net.nodes().end(), [](const VesselNode& n) { return n.bc.type != BcType::none; });
  if (has_bcs) {
    for (const auto& n : net.nodes()) {
      out.n_pressure += n.bc.type == BcType::pressure;
      out.n_noflux += n.bc.type == BcType::noflux;
    }
    out.network = std::move(net);
    return out;
  }
  const BcAssignment a = assign_boundary_conditions(net, domain, bc_seed, cfg.boundary);
  const OptimizedBoundaries o = optimize_unknown_boundaries(a.network, cfg.targets);
  out.network = o.network;
  out.assigned = true;
  out.n_pressure = static_cast<int>(a.pressure_tips.size());
  out.n_noflux = static_cast<int>(a.noflux_tips.size());
  out.n_optimized = static_cast<int>(a.unknown_tips.size());
  out.signs_converged = o.signs_converged;
  return out;
}

PreparedNetwork prepare_network(const ExperimentConfig& cfg, std::uint64_t bc_seed) {
  if (cfg.network.import_dir) {
    VesselNetwork net = read_network_csv(*cfg.network.import_dir, cfg.physics.hematocrit);
    Box3 box;
    if (cfg.mesh.box) {
      box = *cfg.mesh.box;
    } else {
      box.lo = box.hi = net.nodes().at(0).position;
      for (const auto& n : net.nodes()) {
        box.lo = box.lo.cwiseMin(n.position);
        box.hi = box.hi.cwiseMax(n.position);
      }
    }
    return complete_boundary_conditions(cfg, std::move(net), box, bc_seed);
  }
  VesselNetwork net = generate_synthetic_network(cfg.network.generator, cfg.network.seed);
  return complete_boundary_conditions(cfg, std::move(net), cfg.network.generator.box, bc_seed);
}

Box3 tumor_box(const TissueMesh& mesh) {
  if (mesh.grid()) return mesh.grid()->inner;
  Box3 b;
  bool first = true;
  for (const auto& el : mesh.elements()) {
    if (!el.vascular) continue;
    for (int l = 0; l < el.n_nodes(); ++l) {
      const Vec3& p = mesh.nodes()[static_cast<std::size_t>(el.nodes[static_cast<std::size_t>(l)])];
      if (first) {
        b.lo = b.hi = p;
        first = false;
      }
      b.lo = b.lo.cwiseMin(p);
      b.hi = b.hi.cwiseMax(p);
    }
  }
  if (first) throw GeometryError("mesh has no vascular elements");
  return b;
}

RevStage analyze_revs(const ExperimentConfig& cfg, const VesselNetwork& partitioned, const Box3& domain) {
  RevStage r;
  r.curves = grow_probe_cubes(partitioned, domain, cfg.rev.seed, cfg.rev.growth);
  if (cfg.rev.length) {
    r.length = *cfg.rev.length;
  } else {
    r.length = select_rev_length(r.curves, cfg.rev.selection);
    r.selected = true;
  }
  r.plateau_vf_small = plateau_volume_fraction(r.curves, r.length);
  r.partition = RevPartition(domain, r.length);
  r.partition.compute_statistics(partitioned);
  if (r.partition.size() >= 2) r.profile = radial_profile(r.partition);
  return r;
}

void write_rev_stage(const RevStage& rev, const fs::path& dir) {
  fs::create_directories(dir);
  write_growth_curves_csv(rev.curves, dir / "growth_curves.csv");
  write_rev_stats_csv(rev.partition, dir / "rev_stats.csv");
  json j = {{"length", rev.length},
            {"selected", rev.selected},
            {"counts", rev.partition.counts()},
            {"n_revs", rev.partition.size()},
            {"plateau_vf_small", number(rev.plateau_vf_small)}};
  if (rev.profile) {
    auto out = open_out(dir / "radial_profile.csv");
    out << "rev_id,r_tilde,vf_large,vf_small,vf_total\n";
    for (std::size_t i = 0; i < rev.profile->r_tilde.size(); ++i)
      out << i << ',' << rev.profile->r_tilde[i] << ',' << rev.profile->vf_large[i] << ','
          << rev.profile->vf_small[i] << ',' << rev.profile->vf_total[i] << '\n';
    j["radial_fit"] = {{"large", fit_json(rev.profile->fit_large)},
                       {"small", fit_json(rev.profile->fit_small)},
                       {"total", fit_json(rev.profile->fit_total)}};
  }
  write_json(j, dir / "rev.json");
}

PenaltyOutcome solve_hybrid_with_policy(const VesselNetwork& net, const TissueMesh& mesh, const ExperimentConfig& cfg,
                                        HybridParams params) {
  PenaltyOutcome out;
  params.penalty = cfg.penalty.value;
  const HybridBoundaryConditions bcs = transfer_boundary_conditions(net, mesh, params);
  if (cfg.penalty.automatic) {
    AutoPenaltyResult a = solve_hybrid_auto(net, mesh, cfg.physics, params, bcs, cfg.solver,
                                            cfg.penalty.max_adjustments, cfg.penalty.factor);
    params.penalty = a.tried.back();
    out.solution = std::move(a.solution);
    out.tried = std::move(a.tried);
    out.converged = a.converged;
  } else {
    const HybridSystem sys = assemble_hybrid_system(net, mesh, cfg.physics, params, bcs);
    out.solution = solve_hybrid(sys, net, mesh, cfg.physics, params, cfg.solver);
    out.tried = {params.penalty};
    out.converged = out.solution.criterion.passed();
  }
  out.params = params;
  return out;
}

double geometric_surface_density(const RevPartition& revs, const Box3& domain) {
  double surface = 0.0;
  for (const auto& r : revs.revs()) surface += r.content.surface_small;
  return surface / domain.volume();
}

// ---------------------------------------------------------------------------
// one seed

namespace {

void add_report_metrics(MetricMap& m, const std::string& prefix, const ComparisonReport& r) {
  m[prefix + "r2_large"] = r.r2_large;
  m[prefix + "r2_small"] = r.small.r2;
  m[prefix + "r2_if"] = r.r2_if;
  m[prefix + "r2_flow_small"] = r.r2_flow_small;
  m[prefix + "r2_tot"] = r.r2_tot;
  if (r.r2_flow_whole) m[prefix + "r2_flow_whole"] = *r.r2_flow_whole;
  if (r.r2_transfer) m[prefix + "r2_transfer"] = *r.r2_transfer;
  m[prefix + "e_if_rel"] = r.mean_e_if_rel;
  m[prefix + "e_if_abs"] = r.mean_e_if_abs;
  if (std::isfinite(r.mean_e_v_rel)) {
    m[prefix + "e_v_rel"] = r.mean_e_v_rel;
    m[prefix + "e_v_abs"] = r.mean_e_v_abs;
  }
}

void write_metrics(const MetricMap& m, const fs::path& file) {
  json j = json::object();
  for (const auto& [k, v] : m) j[k] = number(v);
  write_json(j, file);
}

}  // namespace

CalibrationRun run_calibration(const HybridCalibrationProblem& problem, const ExperimentConfig& cfg,
                               const fs::path& dir) {
  const CalibrationConfig& c = cfg.calibration;
  std::vector<double> th0, lo, hi;
  if (problem.mode() == CalibrationMode::vf_linear) {
    th0 = {c.alpha_init ? *c.alpha_init : std::clamp(problem.initial_theta()[0], c.alpha_bounds[0], c.alpha_bounds[1])};
    lo = {c.alpha_bounds[0]};
    hi = {c.alpha_bounds[1]};
  } else {
    th0 = {c.kv_init};
    lo = {c.kv_bounds[0]};
    hi = {c.kv_bounds[1]};
    if (problem.n_params() == 2) {
      th0.push_back(c.surface_density_init);
      lo.push_back(c.surface_density_bounds[0]);
      hi.push_back(c.surface_density_bounds[1]);
    }
  }
  CalibrationRun run;
  run.result = calibrate(problem, th0, lo, hi, c.lm);
  run.solution = problem.solve(run.result.lm.theta);
  fs::create_directories(dir);
  write_calibration_trace_csv(run.result, dir / "calibration_trace.csv");
  write_calibration_json(run.result, dir / "result.json");
  write_comparison_json(run.result.report, dir / "comparison.json");
  write_rev_errors_csv(run.result.report, dir / "rev_errors.csv");
  return run;
}

SeedOutcome run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& dir) {
  SeedOutcome o;
  o.seed = seed;
  fs::create_directories(dir);
  std::vector<std::string> done;
  std::string stage;
  MetricMap& m = o.metrics;
  auto status = [&] {
    write_json({{"seed", seed},
                {"ok", o.ok},
                {"completed_stages", done},
                {"failed_stage", o.failed_stage.empty() ? json(nullptr) : json(o.failed_stage)},
                {"error", o.error.empty() ? json(nullptr) : json(o.error)}},
               dir / "status.json");
  };
  try {
    stage = "network";
    const PreparedNetwork prepared = prepare_network(cfg, seed);
    const VesselNetwork& net = prepared.network;
    write_network_csv(net, dir / "network");
    done.push_back(stage);

    stage = "mesh";
    const TissueMesh mesh = make_mesh(cfg.mesh, net);
    const Box3 domain = tumor_box(mesh);
    const NetworkStats stats = network_stats(net, domain);
    done.push_back(stage);

    stage = "full";
    const FullSolution full = solve_full(assemble_full_system(net, mesh, cfg.physics), net, mesh, cfg.physics);
    write_full_solution(full, net, mesh, dir / "full");
    m["full.mass_balance_error"] = full.mass_balance_error;
    m["full.total_leakage"] = full.total_leakage;
    done.push_back(stage);

    stage = "partition";
    const PartitionResult part =
        partition_by_flow(net, full.flow, cfg.partition.keep_fraction, cfg.partition.min_component_length);
    const VesselNetwork& pnet = part.network;
    write_partition_csv(pnet, dir / "partition.csv");
    const ConnectivityStats conn = connectivity_stats(pnet, full.flow);
    int n_large = 0;
    for (std::size_t s = 0; s < pnet.n_segments(); ++s) n_large += pnet.is_large(static_cast<int>(s));
    m["network.n_segments"] = stats.n_segments;
    m["network.n_large"] = n_large;
    m["network.volume_fraction"] = stats.volume_fraction;
    m["network.surface_to_volume"] = stats.surface_to_volume;
    m["connectivity.phi"] = conn.phi;
    if (conn.cv_diameter) m["connectivity.cv_diameter"] = *conn.cv_diameter;
    if (conn.cv_abs_flow) m["connectivity.cv_abs_flow"] = *conn.cv_abs_flow;
    write_json({{"config_hash", config_hash(cfg)},
                {"seed", seed},
                {"stats", stats_json(stats)},
                {"boundary", {{"assigned", prepared.assigned},
                              {"n_pressure", prepared.n_pressure},
                              {"n_noflux", prepared.n_noflux},
                              {"n_optimized", prepared.n_optimized},
                              {"signs_converged", prepared.signs_converged}}},
                {"partition", {{"keep_fraction", cfg.partition.keep_fraction},
                               {"n_large", n_large},
                               {"n_ranked_large", part.n_ranked_large},
                               {"n_demoted", part.n_demoted}}},
                {"connectivity", {{"phi", number(conn.phi)},
                                  {"cv_diameter", conn.cv_diameter ? number(*conn.cv_diameter) : json(nullptr)},
                                  {"cv_abs_flow", conn.cv_abs_flow ? number(*conn.cv_abs_flow) : json(nullptr)},
                                  {"n_connecting", conn.n_connecting}}}},
               dir / "network.json");
    write_network_vtk(pnet, dir / "network.vtk");
    done.push_back(stage);

    stage = "rev";
    const RevStage rev = analyze_revs(cfg, pnet, domain);
    write_rev_stage(rev, dir / "rev");
    const double geo_sv = geometric_surface_density(rev.partition, domain);
    m["rev.length"] = rev.length;
    m["rev.n_revs"] = static_cast<double>(rev.partition.size());
    m["rev.plateau_vf_small"] = rev.plateau_vf_small;
    m["geometric_surface_density"] = geo_sv;
    if (rev.profile) {
      m["radial.slope_small"] = rev.profile->fit_small.slope;
      m["radial.r2_small"] = rev.profile->fit_small.r2;
      m["radial.slope_large"] = rev.profile->fit_large.slope;
      m["radial.r2_large"] = rev.profile->fit_large.r2;
    }
    const FlowFractionCorrelation ff = flow_volume_fraction_correlation(pnet, rev.partition, full.flow);
    {
      auto out = open_out(dir / "rev" / "flow_fraction.csv");
      out << "vf_small,abs_flow\n";
      for (std::size_t i = 0; i < ff.abs_flow.size(); ++i)
        out << ff.volume_fraction[i] << ',' << ff.abs_flow[i] << '\n';
    }
    m["flow_fraction.slope"] = ff.fit.slope;
    m["flow_fraction.r2"] = ff.fit.r2;
    done.push_back(stage);

    stage = "hybrid";
    HybridParams initial = cfg.hybrid;
    initial.kv = cfg.calibration.kv_init;
    initial.surface_density = cfg.calibration.surface_density_init;
    const PenaltyOutcome hyb = solve_hybrid_with_policy(pnet, mesh, cfg, initial);
    write_hybrid_solution(hyb.solution, pnet, mesh, dir / "hybrid");
    const ComparisonReport initial_report =
        compare_models(pnet, mesh, full, hyb.solution, hyb.params, rev.partition, cfg.calibration.weights);
    write_comparison_json(initial_report, dir / "hybrid" / "comparison.json");
    write_rev_errors_csv(initial_report, dir / "hybrid" / "rev_errors.csv");
    m["hybrid.penalty"] = hyb.params.penalty;
    m["hybrid.delta"] = hyb.solution.criterion.delta;
    m["hybrid.penalty_adjustments"] = static_cast<double>(hyb.tried.size() - 1);
    add_report_metrics(m, "initial.", initial_report);
    done.push_back(stage);

    const auto mode = cfg.calibration.mode;
    if (mode == CalibrationChoice::scalar || mode == CalibrationChoice::both) {
      stage = "calibration";
      HybridCalibrationProblem problem(pnet, mesh, cfg.physics, full, rev.partition, hyb.params,
                                       CalibrationMode::scalar, cfg.calibration.fix_surface_density,
                                       cfg.calibration.weights);
      problem.set_solver_options(cfg.solver);
      const CalibrationRun run = run_calibration(problem, cfg, dir / "calibration");
      write_hybrid_solution(run.solution, pnet, mesh, dir / "calibration" / "hybrid");
      add_report_metrics(m, "scalar.", run.result.report);
      m["scalar.kv"] = run.result.params.kv;
      m["scalar.surface_density"] = run.result.params.surface_density;
      m["scalar.surface_density_rel_error"] = std::abs(run.result.params.surface_density - geo_sv) / geo_sv;
      m["scalar.iterations"] = run.result.lm.iterations;
      m["scalar.evaluations"] = run.result.lm.evaluations;
      m["scalar.converged"] = run.result.lm.converged ? 1.0 : 0.0;
      done.push_back(stage);
    }
    if (mode == CalibrationChoice::vf_linear || mode == CalibrationChoice::both) {
      stage = "calibration_vf";
      HybridCalibrationProblem problem(pnet, mesh, cfg.physics, full, rev.partition, hyb.params,
                                       CalibrationMode::vf_linear, true, cfg.calibration.weights);
      problem.set_solver_options(cfg.solver);
      const CalibrationRun run = run_calibration(problem, cfg, dir / "calibration_vf");
      write_hybrid_solution(run.solution, pnet, mesh, dir / "calibration_vf" / "hybrid");
      add_report_metrics(m, "vf_linear.", run.result.report);
      m["vf_linear.alpha"] = run.result.lm.theta[0];
      m["vf_linear.iterations"] = run.result.lm.iterations;
      m["vf_linear.evaluations"] = run.result.lm.evaluations;
      m["vf_linear.converged"] = run.result.lm.converged ? 1.0 : 0.0;
      done.push_back(stage);
    }
    o.ok = true;
  } catch (const std::exception& e) {
    o.ok = false;
    o.failed_stage = stage;
    o.error = e.what();
  }
  write_metrics(m, dir / "metrics.json");
  status();
  return o;
}

// ---------------------------------------------------------------------------
// experiments

int PipelineResult::n_failed() const {
  return static_cast<int>(std::count_if(outcomes.begin(), outcomes.end(), [](const SeedOutcome& o) { return !o.ok; }));
}

std::map<std::string, MetricSummary> aggregate_metrics(const std::vector<SeedOutcome>& outcomes) {
  std::map<std::string, std::vector<double>> values;
  for (const auto& o : outcomes) {
    if (!o.ok) continue;
    for (const auto& [k, v] : o.metrics)
      if (std::isfinite(v)) values[k].push_back(v);
  }
  std::map<std::string, MetricSummary> out;
  for (const auto& [k, v] : values) {
    MetricSummary s;
    s.n = static_cast<int>(v.size());
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / s.n;
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = s.n > 1 ? std::sqrt(ss / (s.n - 1)) : 0.0;
    s.min = *std::min_element(v.begin(), v.end());
    s.max = *std::max_element(v.begin(), v.end());
    out[k] = s;
  }
  return out;
}

PipelineResult run_pipeline(const ExperimentConfig& cfg) {
  cfg.validate();
  PipelineResult res;
  res.dir = cfg.output;
  res.config_hash = config_hash(cfg);
  fs::create_directories(res.dir);
  {
    auto out = open_out(res.dir / "config.json");
    out << json::parse(canonical_config_json(cfg)).dump(2) << '\n';
  }

  res.outcomes.resize(cfg.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cfg.seeds.size(); i = next++)
      res.outcomes[i] = run_seed(cfg, cfg.seeds[i], res.dir / ("seed_" + std::to_string(cfg.seeds[i])));
  };
  const int n_threads = std::min<int>(effective_threads(cfg.threads), static_cast<int>(cfg.seeds.size()));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  const auto agg = aggregate_metrics(res.outcomes);
  json j;
  j["config_hash"] = res.config_hash;
  j["seeds"] = cfg.seeds;
  j["n_ok"] = static_cast<int>(res.outcomes.size()) - res.n_failed();
  j["failed"] = json::array();
  for (const auto& o : res.outcomes)
    if (!o.ok) j["failed"].push_back({{"seed", o.seed}, {"stage", o.failed_stage}, {"error", o.error}});
  j["metrics"] = json::object();
  for (const auto& [k, s] : agg)
    j["metrics"][k] = {{"mean", number(s.mean)}, {"stddev", number(s.stddev)}, {"min", number(s.min)},
                       {"max", number(s.max)}, {"n", s.n}};
  write_json(j, res.dir / "aggregate.json");

  // one row per successful seed, one column per metric
  std::set<std::string> keys;
  for (const auto& o : res.outcomes)
    if (o.ok)
      for (const auto& [k, v] : o.metrics) keys.insert(k);
  auto out = open_out(res.dir / "aggregate.csv");
  out << "seed";
  for (const auto& k : keys) out << ',' << k;
  out << '\n';
  for (const auto& o : res.outcomes) {
    if (!o.ok) continue;
    out << o.seed;
    for (const auto& k : keys) {
      out << ',';
      const auto it = o.metrics.find(k);
      if (it != o.metrics.end() && std::isfinite(it->second)) out << it->second;
    }
    out << '\n';
  }
  return res;
}

// ---------------------------------------------------------------------------
// report

namespace {

struct ScatterWriter {
  ScatterSummary summary;
  std::ofstream out;

  ScatterWriter(const fs::path& file, const std::string& name, const std::string& key_columns) : out(open_out(file)) {
    summary.name = name;
    out << "seed," << key_columns << ",reference,test\n";
  }
  void add(std::uint64_t seed, const std::string& key, double ref, double test) {
    out << seed << ',' << key << ',' << ref << ',' << test << '\n';
    ++summary.n_points;
    summary.max_deviation = std::max(summary.max_deviation, std::abs(test - ref));
  }
};

// the calibrated hybrid when present, else the initial one
fs::path best_hybrid_stage(const fs::path& seed_dir) {
  for (const char* s : {"calibration", "calibration_vf"})
    if (fs::exists(seed_dir / s / "rev_errors.csv")) return seed_dir / s;
  return seed_dir / "hybrid";
}

}  // namespace

ReportResult write_report(const fs::path& experiment_dir) {
  if (!fs::is_directory(experiment_dir)) throw ConfigError("no experiment directory " + experiment_dir.string());
  const fs::path rdir = experiment_dir / "report";
  fs::create_directories(rdir);
  ReportResult rep;

  std::vector<std::pair<std::uint64_t, fs::path>> seeds;
  for (const auto& e : fs::directory_iterator(experiment_dir)) {
    const std::string name = e.path().filename().string();
    if (!e.is_directory() || name.rfind("seed_", 0) != 0) continue;
    char* end = nullptr;
    const auto id = std::strtoull(name.c_str() + 5, &end, 10);
    if (*end != '\0') continue;
    seeds.emplace_back(id, e.path());
  }
  std::sort(seeds.begin(), seeds.end());
  if (seeds.empty()) rep.gaps.push_back("no seed directories");

  ScatterWriter large(rdir / "scatter_large_pressure.csv", "large vessel pressure", "node");
  ScatterWriter pif(rdir / "scatter_if_pressure.csv", "REV mean IF pressure", "rev");
  ScatterWriter pv(rdir / "scatter_vessel_pressure.csv", "REV mean small-vessel pressure", "rev");
  ScatterWriter flow(rdir / "scatter_flow_small.csv", "REV small-vessel plane flow", "rev_axis");
  auto growth = open_out(rdir / "growth_curves.csv");
  growth << "seed,curve,step,cx,cy,cz,l,vf_small,sv_small\n";
  auto radial = open_out(rdir / "radial_profile.csv");
  radial << "seed,rev_id,r_tilde,vf_large,vf_small,vf_total\n";
  auto ff = open_out(rdir / "flow_fraction.csv");
  ff << "seed,vf_small,abs_flow\n";

  auto copy_rows = [&](std::ofstream& out, std::uint64_t seed, const fs::path& file) {
    if (!fs::exists(file)) {
      rep.gaps.push_back("seed " + std::to_string(seed) + ": missing " + fs::relative(file, experiment_dir).string());
      return;
    }
    std::ifstream in(file);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line))
      if (!line.empty()) out << seed << ',' << line << '\n';
  };
  auto gap = [&](std::uint64_t seed, const std::string& what) {
    rep.gaps.push_back("seed " + std::to_string(seed) + ": " + what);
  };

  for (const auto& [seed, dir] : seeds) {
    const fs::path stage = best_hybrid_stage(dir);
    try {
      const auto full = read_csv(dir / "full" / "vessel_pressure.csv");
      // the initial hybrid solution sits directly in hybrid/, calibrated ones in a subdirectory
      const fs::path vfile = stage.filename() == "hybrid" ? stage / "vessel.csv" : stage / "hybrid" / "vessel.csv";
      const auto hyb = read_csv(vfile);
      const auto pf = column_values(full, "p", dir / "full" / "vessel_pressure.csv");
      const auto ph = column_values(hyb, "p", vfile);
      const auto is_large = column_values(hyb, "large", vfile);
      if (pf.size() != ph.size()) throw ConfigError("node counts differ");
      for (std::size_t i = 0; i < pf.size(); ++i)
        if (is_large[i] != 0.0) large.add(seed, std::to_string(i), pf[i], ph[i]);
    } catch (const std::exception& e) {
      gap(seed, std::string("large vessel pressures unavailable (") + e.what() + ")");
    }
    try {
      const fs::path file = stage / "rev_errors.csv";
      const auto csv = read_csv(file);
      const auto ids = column_values(csv, "rev_id", file);
      const auto a = column_values(csv, "p_if_full", file), b = column_values(csv, "p_if_hybrid", file);
      const auto has = column_values(csv, "has_small_nodes", file);
      const auto c = column_values(csv, "p_v_full", file), d = column_values(csv, "p_v_hybrid", file);
      const char* axes[3] = {"x", "y", "z"};
      std::array<std::vector<double>, 3> qf, qh;
      for (int k = 0; k < 3; ++k) {
        qf[static_cast<std::size_t>(k)] = column_values(csv, std::string("q") + axes[k] + "_small_full", file);
        qh[static_cast<std::size_t>(k)] = column_values(csv, std::string("q") + axes[k] + "_homog", file);
      }
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const std::string id = std::to_string(static_cast<long>(ids[i]));
        pif.add(seed, id, a[i], b[i]);
        if (has[i] != 0.0) pv.add(seed, id, c[i], d[i]);
        for (int k = 0; k < 3; ++k)
          flow.add(seed, id + axes[k], qf[static_cast<std::size_t>(k)][i], qh[static_cast<std::size_t>(k)][i]);
      }
    } catch (const std::exception& e) {
      gap(seed, std::string("REV comparison unavailable (") + e.what() + ")");
    }
    copy_rows(growth, seed, dir / "rev" / "growth_curves.csv");
    copy_rows(radial, seed, dir / "rev" / "radial_profile.csv");
    copy_rows(ff, seed, dir / "rev" / "flow_fraction.csv");
    if (fs::exists(dir / "status.json")) {
      const json st = read_json(dir / "status.json");
      if (!st.value("ok", false))
        gap(seed, "failed at stage " + st["failed_stage"].dump() + ": " + st["error"].dump());
    } else {
      gap(seed, "missing status.json");
    }
  }
  rep.scatters = {large.summary, pif.summary, pv.summary, flow.summary};
  large.out.close();
  pif.out.close();
  pv.out.close();
  flow.out.close();

  auto md = open_out(rdir / "summary.md");
  md.precision(6);
  md << "# Experiment report\n\n";
  if (fs::exists(experiment_dir / "aggregate.json")) {
    const json agg = read_json(experiment_dir / "aggregate.json");
    md << "Config hash `" << agg.value("config_hash", std::string("?")) << "`, " << agg.value("n_ok", 0)
       << " successful seed(s).\n\n";
    md << "| metric | mean | stddev | n |\n|---|---|---|---|\n";
    for (const auto& [k, v] : agg["metrics"].items()) {
      md << "| " << k << " | ";
      v["mean"].is_number() ? md << v["mean"].get<double>() : md << "n/a";
      md << " | ";
      v["stddev"].is_number() ? md << v["stddev"].get<double>() : md << "n/a";
      md << " | " << v.value("n", 0) << " |\n";
    }
    md << '\n';
  } else {
    rep.gaps.push_back("missing aggregate.json");
  }
  md << "## Scatter data (reference = full model, test = hybrid model)\n\n";
  md << "| file | points | max deviation |\n|---|---|---|\n";
  const char* files[4] = {"scatter_large_pressure.csv", "scatter_if_pressure.csv", "scatter_vessel_pressure.csv",
                          "scatter_flow_small.csv"};
  for (std::size_t i = 0; i < rep.scatters.size(); ++i)
    md << "| " << files[i] << " | " << rep.scatters[i].n_points << " | " << rep.scatters[i].max_deviation << " |\n";
  md << "\nAlso: growth_curves.csv, radial_profile.csv, flow_fraction.csv.\n";
  if (!rep.gaps.empty()) {
    md << "\n## Gaps\n\n";
    for (const auto& g : rep.gaps) md << "- " << g << '\n';
  }
  return rep;
}

}  // namespace vasoperf
