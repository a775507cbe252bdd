// Command-line front end. Exit codes: 0 success, 2 bad input or
// configuration, 3 numerical failure.

#include "vasoperf/errors.hpp"
#include "vasoperf/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

using namespace vasoperf;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

ExperimentConfig load_profile(const std::string& file) {
  return file.empty() ? ExperimentConfig{} : load_config(file);
}

double parse_number(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw ConfigError(what + ": expected a number, got '" + s + "'");
  return v;
}

std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string x; std::getline(ss, x, ',');) out.push_back(parse_number(x, what));
  return out;
}

void write_json_file(const json& j, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

json read_json_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
}

VesselNetwork load_partitioned(const std::string& network_dir, const std::string& partition_file,
                               const ExperimentConfig& cfg) {
  VesselNetwork net = read_network_csv(network_dir, cfg.physics.hematocrit);
  if (partition_file.empty()) return net;
  return net.with_partition(read_partition_csv(partition_file, net.n_segments()));
}

void apply_penalty(const std::string& penalty, ExperimentConfig& cfg) {
  if (penalty.empty()) return;
  if (penalty == "auto") {
    cfg.penalty.automatic = true;
  } else {
    cfg.penalty.automatic = false;
    cfg.penalty.value = parse_number(penalty, "--penalty");
  }
}

json params_json(const HybridParams& p) {
  return {{"kv", p.kv},
          {"surface_density", p.surface_density},
          {"penalty", p.penalty},
          {"smearing_radius", p.smearing_radius},
          {"exclusion_radius", p.exclusion()}};
}

HybridParams params_from_json(const json& j, HybridParams p) {
  p.kv = j.at("kv").get<double>();
  p.surface_density = j.at("surface_density").get<double>();
  p.penalty = j.at("penalty").get<double>();
  p.smearing_radius = j.at("smearing_radius").get<double>();
  p.exclusion_radius = j.at("exclusion_radius").get<double>();
  return p;
}

RevPartition rev_partition(const ExperimentConfig& cfg, const VesselNetwork& net, const Box3& domain,
                           const std::string& length) {
  ExperimentConfig c = cfg;
  if (!length.empty() && length != "auto") c.rev.length = parse_number(length, "--rev-length");
  if (length == "auto") c.rev.length.reset();
  if (c.rev.length) {
    RevPartition revs(domain, *c.rev.length);
    revs.compute_statistics(net);
    return revs;
  }
  return analyze_revs(c, net, domain).partition;
}

void print_report(const ComparisonReport& r) {
  std::printf("R2: large %.4f  small %.4f  IF %.4f  small flow %.4f  total %.4f\n", r.r2_large, r.small.r2, r.r2_if,
              r.r2_flow_small, r.r2_tot);
  std::printf("mean relative error: IF %.4f  small-vessel pressure %.4f\n", r.mean_e_if_rel, r.mean_e_v_rel);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vascular perfusion models: full and hybrid 1D-3D solves, REV analysis, calibration"};
  app.require_subcommand(1);
  std::string config_file;
  app.add_option("--config", config_file, "TOML experiment profile")->check(CLI::ExistingFile);

  // generate
  auto* gen = app.add_subcommand("generate", "synthetic network with boundary conditions");
  std::optional<std::uint64_t> gen_seed;
  std::uint64_t bc_seed = 1;
  std::string gen_out;
  bool gen_no_bc = false;
  gen->add_option("--seed", gen_seed, "network seed (default: profile)");
  gen->add_option("--bc-seed", bc_seed, "boundary condition seed");
  gen->add_flag("--no-bc", gen_no_bc, "leave tips without conditions");
  gen->add_option("--out", gen_out, "output directory")->required();

  // solve-full
  auto* full_cmd = app.add_subcommand("solve-full", "fully resolved 1D-3D model");
  std::string net_dir, mesh_spec, params_file, out_dir;
  std::uint64_t seed = 1;
  full_cmd->add_option("--network", net_dir, "directory with nodes.csv and segments.csv")->required();
  full_cmd->add_option("--mesh", mesh_spec, "mesh.txt or gen:NX[,NY,NZ][:E[:G]]");
  full_cmd->add_option("--params", params_file, "TOML profile with the physics")->check(CLI::ExistingFile);
  full_cmd->add_option("--seed", seed, "boundary condition seed for tips without conditions");
  full_cmd->add_option("--out", out_dir, "output directory")->required();
  bool dump_segments = false;
  full_cmd->add_flag("--dump-segments", dump_segments, "also write the 1D-3D integration segments (segments.csv)");

  // partition
  auto* part_cmd = app.add_subcommand("partition", "split segments into large and small by flow");
  std::string flows_file, part_out;
  std::optional<double> keep, min_length;
  part_cmd->add_option("--network", net_dir)->required();
  part_cmd->add_option("--flows", flows_file, "flows.csv of a full solve")->required();
  part_cmd->add_option("--keep", keep, "fraction of segments ranked large");
  part_cmd->add_option("--min-length", min_length, "minimum large component length [um]");
  part_cmd->add_option("--out", part_out, "partition.csv")->required();

  // solve-hybrid
  auto* hyb_cmd = app.add_subcommand("solve-hybrid", "hybrid discrete-homogenized model");
  std::string partition_file, penalty;
  std::optional<double> kv, surface_density;
  hyb_cmd->add_option("--network", net_dir)->required();
  hyb_cmd->add_option("--partition", partition_file, "partition.csv")->required();
  hyb_cmd->add_option("--mesh", mesh_spec);
  hyb_cmd->add_option("--params", params_file)->check(CLI::ExistingFile);
  hyb_cmd->add_option("--penalty", penalty, "value or auto");
  hyb_cmd->add_option("--kv", kv, "homogenized permeability over viscosity [um^2/(Pa s)]");
  hyb_cmd->add_option("--surface-density", surface_density, "homogenized surface per volume [1/um]");
  hyb_cmd->add_option("--out", out_dir)->required();

  // compare
  auto* cmp_cmd = app.add_subcommand("compare", "REV-averaged comparison of a full and a hybrid solution");
  std::string full_dir, hybrid_dir, rev_length;
  cmp_cmd->add_option("--network", net_dir)->required();
  cmp_cmd->add_option("--partition", partition_file)->required();
  cmp_cmd->add_option("--mesh", mesh_spec);
  cmp_cmd->add_option("--params", params_file)->check(CLI::ExistingFile);
  cmp_cmd->add_option("--full", full_dir, "solve-full output")->required();
  cmp_cmd->add_option("--hybrid", hybrid_dir, "solve-hybrid output")->required();
  cmp_cmd->add_option("--rev-length", rev_length, "value [um] or auto");
  cmp_cmd->add_option("--out", out_dir)->required();

  // rev
  auto* rev_cmd = app.add_subcommand("rev", "growth curves, REV length and per-REV statistics");
  std::optional<std::uint64_t> rev_seed;
  rev_cmd->add_option("--network", net_dir)->required();
  rev_cmd->add_option("--partition", partition_file)->required();
  rev_cmd->add_option("--mesh", mesh_spec);
  rev_cmd->add_option("--length", rev_length, "value [um] or auto");
  rev_cmd->add_option("--seed", rev_seed, "probe center seed");
  rev_cmd->add_option("--out", out_dir)->required();

  // calibrate
  auto* cal_cmd = app.add_subcommand("calibrate", "fit the homogenized parameters to a full solution");
  std::string case_dir, params_init, mode = "scalar";
  cal_cmd->add_option("--case", case_dir, "directory with network/, partition.csv and full/")->required();
  cal_cmd->add_option("--mesh", mesh_spec);
  cal_cmd->add_option("--params-init", params_init,
                      "TOML with kv, surface_density or alpha; or inline kv,surface_density / alpha");
  cal_cmd->add_option("--mode", mode)->check(CLI::IsMember({"scalar", "vf-linear"}));
  cal_cmd->add_option("--rev-length", rev_length, "value [um] or auto");
  cal_cmd->add_option("--penalty", penalty, "value or auto (chosen at the start point)");
  cal_cmd->add_option("--out", out_dir)->required();

  // pipeline
  auto* pipe_cmd = app.add_subcommand("pipeline", "every stage for every seed, then aggregates");
  std::vector<std::uint64_t> seeds;
  std::optional<int> threads;
  pipe_cmd->add_option("--out", out_dir, "experiment directory (default: profile)");
  pipe_cmd->add_option("--seeds", seeds, "boundary condition seeds")->delimiter(',');
  pipe_cmd->add_option("--threads", threads, "worker threads; 0 uses all cores");

  // report
  auto* rep_cmd = app.add_subcommand("report", "summary and scatter data for an experiment directory");
  std::string experiment_dir;
  rep_cmd->add_option("--experiment", experiment_dir)->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    ExperimentConfig cfg = load_profile(params_file.empty() ? config_file : params_file);
    if (!mesh_spec.empty()) cfg.mesh = parse_mesh_spec(mesh_spec, cfg.mesh);

    if (*gen) {
      if (gen_seed) cfg.network.seed = *gen_seed;
      VesselNetwork net = generate_synthetic_network(cfg.network.generator, cfg.network.seed);
      json info = {{"network_seed", cfg.network.seed}, {"n_segments", net.n_segments()}, {"n_nodes", net.n_nodes()}};
      if (!gen_no_bc) {
        const PreparedNetwork p = complete_boundary_conditions(cfg, std::move(net), cfg.network.generator.box, bc_seed);
        net = p.network;
        info["bc_seed"] = bc_seed;
        info["n_pressure"] = p.n_pressure;
        info["n_noflux"] = p.n_noflux;
        info["n_optimized"] = p.n_optimized;
        info["signs_converged"] = p.signs_converged;
      }
      write_network_csv(net, gen_out);
      write_network_vtk(net, fs::path(gen_out) / "network.vtk");
      write_json_file(info, fs::path(gen_out) / "bc.json");
      std::printf("%zu segments, %zu nodes -> %s\n", net.n_segments(), net.n_nodes(), gen_out.c_str());
    } else if (*full_cmd) {
      VesselNetwork raw = read_network_csv(net_dir, cfg.physics.hematocrit);
      const TissueMesh mesh = make_mesh(cfg.mesh, raw);
      const PreparedNetwork p = complete_boundary_conditions(cfg, std::move(raw), tumor_box(mesh), seed);
      const FullSystem sys = assemble_full_system(p.network, mesh, cfg.physics);
      const FullSolution sol = solve_full(sys, p.network, mesh, cfg.physics);
      if (dump_segments) write_segments_csv(sys.segments, fs::path(out_dir) / "segments.csv");
      write_network_csv(p.network, fs::path(out_dir) / "network");
      write_full_solution(sol, p.network, mesh, out_dir);
      std::printf("total leakage %.6g um^3/s, mass balance error %.3g, %.2f s\n", sol.total_leakage,
                  sol.mass_balance_error, sol.seconds);
    } else if (*part_cmd) {
      const VesselNetwork net = read_network_csv(net_dir, cfg.physics.hematocrit);
      const FullSolution flows = [&] {
        // only the flows are needed; read them without a mesh
        std::ifstream in(flows_file);
        if (!in) throw ConfigError("cannot read " + flows_file);
        FullSolution s;
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          std::stringstream ss(line);
          std::string id, q;
          std::getline(ss, id, ',');
          std::getline(ss, q, ',');
          s.flow.push_back(parse_number(q, flows_file));
        }
        if (s.flow.size() != net.n_segments()) throw ConfigError(flows_file + ": segment count differs");
        return s;
      }();
      const PartitionResult r = partition_by_flow(net, flows.flow, keep.value_or(cfg.partition.keep_fraction),
                                                  min_length.value_or(cfg.partition.min_component_length));
      write_partition_csv(r.network, part_out);
      const ConnectivityStats c = connectivity_stats(r.network, flows.flow);
      std::printf("%d ranked large, %d demoted, phi %.4f\n", r.n_ranked_large, r.n_demoted, c.phi);
    } else if (*hyb_cmd) {
      apply_penalty(penalty, cfg);
      const VesselNetwork net = load_partitioned(net_dir, partition_file, cfg);
      const TissueMesh mesh = make_mesh(cfg.mesh, net);
      HybridParams hp = cfg.hybrid;
      if (kv) hp.kv = *kv;
      if (surface_density) hp.surface_density = *surface_density;
      const PenaltyOutcome o = solve_hybrid_with_policy(net, mesh, cfg, hp);
      write_hybrid_solution(o.solution, net, mesh, out_dir);
      write_json_file(params_json(o.params), fs::path(out_dir) / "params.json");
      std::printf("penalty %.6g (%zu tried), delta %.3g, %.2f s\n", o.params.penalty, o.tried.size(),
                  o.solution.criterion.delta, o.solution.seconds);
      if (!o.converged) std::fprintf(stderr, "warning: penalty criterion not met\n");
    } else if (*cmp_cmd) {
      const VesselNetwork net = load_partitioned(net_dir, partition_file, cfg);
      const TissueMesh mesh = make_mesh(cfg.mesh, net);
      const FullSolution full = read_full_solution(full_dir, net, mesh);
      const HybridSolution hyb = read_hybrid_solution(hybrid_dir, net, mesh);
      HybridParams hp = cfg.hybrid;
      if (fs::exists(fs::path(hybrid_dir) / "params.json"))
        hp = params_from_json(read_json_file(fs::path(hybrid_dir) / "params.json"), hp);
      const RevPartition revs = rev_partition(cfg, net, tumor_box(mesh), rev_length);
      const ComparisonReport r = compare_models(net, mesh, full, hyb, hp, revs, cfg.calibration.weights);
      fs::create_directories(out_dir);
      write_comparison_json(r, fs::path(out_dir) / "comparison.json");
      write_rev_errors_csv(r, fs::path(out_dir) / "rev_errors.csv");
      print_report(r);
    } else if (*rev_cmd) {
      if (rev_seed) cfg.rev.seed = *rev_seed;
      if (rev_length == "auto") cfg.rev.length.reset();
      else if (!rev_length.empty()) cfg.rev.length = parse_number(rev_length, "--length");
      const VesselNetwork net = load_partitioned(net_dir, partition_file, cfg);
      const TissueMesh mesh = make_mesh(cfg.mesh, net);
      const RevStage rev = analyze_revs(cfg, net, tumor_box(mesh));
      write_rev_stage(rev, out_dir);
      const auto& n = rev.partition.counts();
      std::printf("REV length %.4g um (%s), %d x %d x %d REVs, plateau small-vessel fraction %.4g\n", rev.length,
                  rev.selected ? "selected" : "configured", n[0], n[1], n[2], rev.plateau_vf_small);
    } else if (*cal_cmd) {
      apply_penalty(penalty, cfg);
      const fs::path cdir = case_dir;
      const VesselNetwork net = load_partitioned((cdir / "network").string(), (cdir / "partition.csv").string(), cfg);
      const TissueMesh mesh = make_mesh(cfg.mesh, net);
      const FullSolution full = read_full_solution(cdir / "full", net, mesh);
      const RevPartition revs = rev_partition(cfg, net, tumor_box(mesh), rev_length);
      const bool vf = mode == "vf-linear";
      if (!params_init.empty() && fs::is_regular_file(params_init)) {
        apply_calibration_start(params_init, cfg.calibration);
      } else if (!params_init.empty()) {
        const auto v = parse_list(params_init, "--params-init");
        if (vf) {
          if (v.size() != 1) throw ConfigError("--params-init takes alpha in vf-linear mode");
          cfg.calibration.alpha_init = v[0];
        } else {
          if (v.empty() || v.size() > 2) throw ConfigError("--params-init takes kv[,surface_density]");
          cfg.calibration.kv_init = v[0];
          if (v.size() == 2) cfg.calibration.surface_density_init = v[1];
        }
      }
      HybridParams start = cfg.hybrid;
      start.kv = cfg.calibration.kv_init;
      start.surface_density = cfg.calibration.surface_density_init;
      // ε is chosen once at the start point and then held
      const PenaltyOutcome initial = solve_hybrid_with_policy(net, mesh, cfg, start);
      HybridCalibrationProblem problem(net, mesh, cfg.physics, full, revs, initial.params,
                                       vf ? CalibrationMode::vf_linear : CalibrationMode::scalar,
                                       vf || cfg.calibration.fix_surface_density, cfg.calibration.weights);
      problem.set_solver_options(cfg.solver);
      const CalibrationRun run = run_calibration(problem, cfg, out_dir);
      write_hybrid_solution(run.solution, net, mesh, fs::path(out_dir) / "hybrid");
      std::printf("theta");
      for (double t : run.result.lm.theta) std::printf(" %.6g", t);
      std::printf(" after %d iterations, %d evaluations (%s)\n", run.result.lm.iterations,
                  run.result.lm.evaluations, run.result.lm.reason.c_str());
      print_report(run.result.report);
    } else if (*pipe_cmd) {
      if (config_file.empty()) throw ConfigError("pipeline needs --config");
      if (!out_dir.empty()) cfg.output = out_dir;
      if (!seeds.empty()) cfg.seeds = seeds;
      if (threads) cfg.threads = *threads;
      const PipelineResult res = run_pipeline(cfg);
      std::printf("config %s: %zu seeds, %d failed -> %s\n", res.config_hash.c_str(), res.outcomes.size(),
                  res.n_failed(), res.dir.string().c_str());
      for (const auto& o : res.outcomes)
        if (!o.ok)
          std::fprintf(stderr, "seed %llu failed in %s: %s\n", static_cast<unsigned long long>(o.seed),
                       o.failed_stage.c_str(), o.error.c_str());
      if (res.n_failed() > 0) return kExitNumeric;
    } else if (*rep_cmd) {
      const ReportResult r = write_report(experiment_dir);
      for (const auto& s : r.scatters)
        std::printf("%-32s %6d points, max deviation %.4g\n", s.name.c_str(), s.n_points, s.max_deviation);
      for (const auto& g : r.gaps) std::fprintf(stderr, "gap: %s\n", g.c_str());
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kExitConfig;
  } catch (const ContractError& e) {
    std::fprintf(stderr, "inconsistent input: %s\n", e.what());
    return kExitConfig;
  } catch (const Error& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  }
  return 0;
}
