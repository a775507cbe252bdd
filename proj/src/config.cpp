#include "vasoperf/config.hpp"

#include "vasoperf/errors.hpp"

#include <json.hpp>
#include <toml.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace vasoperf {

ExperimentConfig::ExperimentConfig() {
  GeneratorSpec& g = network.generator;
  g.kind = GeneratorKind::two_scale;
  g.box = Box3{Vec3::Zero(), Vec3::Constant(280.0)};
  g.pitch = 40.0;
  g.radius = 3.0;
  g.backbone_radius = 9.0;
  g.max_segment_length = 1000.0;
  boundary.proximity_radius = 100.0;
  hybrid.kv = 1.0;
  hybrid.surface_density = 0.01;
  hybrid.penalty = 100.0;
  hybrid.smearing_radius = 20.0;
}

namespace {

[[noreturn]] void reject(const std::string& what) { throw ConfigError("config: " + what); }

void require(bool ok, const std::string& what) {
  if (!ok) reject(what);
}

bool finite_positive(double v) { return std::isfinite(v) && v > 0.0; }

// one TOML table; every key read is recorded so leftovers can be reported
class Section {
 public:
  Section(const toml::table* t, std::string name) : t_(t), name_(std::move(name)) {}

  template <class T>
  void get(const char* key, T& out) {
    const toml::node* n = find(key);
    if (!n) return;
    if constexpr (std::is_same_v<T, bool>) {
      auto v = n->value<bool>();
      require(v.has_value(), where(key) + " must be a boolean");
      out = *v;
    } else if constexpr (std::is_same_v<T, std::string>) {
      auto v = n->value<std::string>();
      require(v.has_value(), where(key) + " must be a string");
      out = *v;
    } else if constexpr (std::is_integral_v<T>) {
      auto v = n->value<std::int64_t>();
      require(v.has_value(), where(key) + " must be an integer");
      if constexpr (std::is_unsigned_v<T>) require(*v >= 0, where(key) + " must be non-negative");
      out = static_cast<T>(*v);
    } else {
      auto v = n->value<double>();  // integers convert
      require(v.has_value(), where(key) + " must be a number");
      out = *v;
    }
  }

  template <class T, std::size_t N>
  void get(const char* key, std::array<T, N>& out) {
    const toml::node* n = find(key);
    if (!n) return;
    const toml::array* a = n->as_array();
    require(a && a->size() == N, where(key) + " must be an array of " + std::to_string(N));
    for (std::size_t i = 0; i < N; ++i) {
      if constexpr (std::is_same_v<T, bool>) {
        auto v = (*a)[i].value<bool>();
        require(v.has_value(), where(key) + " must hold booleans");
        out[i] = *v;
      } else if constexpr (std::is_integral_v<T>) {
        auto v = (*a)[i].value<std::int64_t>();
        require(v.has_value(), where(key) + " must hold integers");
        out[i] = static_cast<T>(*v);
      } else {
        auto v = (*a)[i].value<double>();
        require(v.has_value(), where(key) + " must hold numbers");
        out[i] = *v;
      }
    }
  }

  void get(const char* key, Vec3& out) {
    std::array<double, 3> a{out.x(), out.y(), out.z()};
    get(key, a);
    out = Vec3(a[0], a[1], a[2]);
  }

  // a number, or the string "auto" (returns false)
  bool number_or_auto(const char* key, double& out, bool& present) {
    const toml::node* n = find(key);
    present = n != nullptr;
    if (!n) return false;
    if (auto s = n->value<std::string>()) {
      require(*s == "auto", where(key) + " must be a number or \"auto\"");
      return false;
    }
    auto v = n->value<double>();
    require(v.has_value(), where(key) + " must be a number or \"auto\"");
    out = *v;
    return true;
  }

  bool has(const char* key) const { return t_ && t_->contains(key); }
  void allow(const char* key) { used_.insert(key); }

  void finish() const {
    if (!t_) return;
    for (const auto& [k, v] : *t_) {
      const std::string key(k.str());
      if (!used_.count(key)) reject("unknown key " + (name_.empty() ? key : name_ + "." + key));
    }
  }

 private:
  const toml::node* find(const char* key) {
    used_.insert(key);
    return t_ ? t_->get(key) : nullptr;
  }
  std::string where(const char* key) const { return name_.empty() ? key : name_ + "." + key; }

  const toml::table* t_;
  std::string name_;
  std::set<std::string> used_;
};

GeneratorKind parse_kind(const std::string& s) {
  if (s == "lattice") return GeneratorKind::lattice;
  if (s == "tree") return GeneratorKind::tree;
  if (s == "two_scale") return GeneratorKind::two_scale;
  reject("network.kind must be lattice, tree or two_scale (got '" + s + "')");
}

const char* kind_name(GeneratorKind k) {
  switch (k) {
    case GeneratorKind::lattice:
      return "lattice";
    case GeneratorKind::tree:
      return "tree";
    case GeneratorKind::two_scale:
      return "two_scale";
  }
  return "lattice";
}

SolverMethod parse_solver(const std::string& s) {
  if (s == "automatic") return SolverMethod::automatic;
  if (s == "direct") return SolverMethod::direct;
  if (s == "cg") return SolverMethod::cg;
  reject("hybrid.solver must be automatic, direct or cg (got '" + s + "')");
}

const char* solver_name(SolverMethod m) {
  switch (m) {
    case SolverMethod::automatic:
      return "automatic";
    case SolverMethod::direct:
      return "direct";
    case SolverMethod::cg:
      return "cg";
  }
  return "automatic";
}

CalibrationChoice parse_choice(const std::string& s) {
  if (s == "none") return CalibrationChoice::none;
  if (s == "scalar") return CalibrationChoice::scalar;
  if (s == "vf_linear" || s == "vf-linear") return CalibrationChoice::vf_linear;
  if (s == "both") return CalibrationChoice::both;
  reject("calibration.mode must be none, scalar, vf_linear or both (got '" + s + "')");
}

std::filesystem::path resolve(const std::string& p, const std::filesystem::path& base) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

const char* to_string(CalibrationChoice c) {
  switch (c) {
    case CalibrationChoice::none:
      return "none";
    case CalibrationChoice::scalar:
      return "scalar";
    case CalibrationChoice::vf_linear:
      return "vf_linear";
    case CalibrationChoice::both:
      return "both";
  }
  return "none";
}

void ExperimentConfig::validate() const {
  const GeneratorSpec& g = network.generator;
  if (!network.import_dir) {
    require((g.box.extent().array() > 0.0).all(), "network box must have positive extent");
    require(finite_positive(g.max_segment_length), "network.max_segment_length must be positive");
    require(finite_positive(g.pitch) && finite_positive(g.radius), "network.pitch and network.radius must be positive");
    require(2.0 * g.radius < g.pitch, "network.radius must be below half the pitch");
    require(finite_positive(g.backbone_radius), "network.backbone_radius must be positive");
    require(g.backbone_lines >= 1, "network.backbone_lines must be at least 1");
    require(g.center_sparsity >= 0.0 && g.center_sparsity < 1.0, "network.center_sparsity must lie in [0, 1)");
    require(g.interior_dead_ends >= 0, "network.interior_dead_ends must be non-negative");
    require(g.n_roots >= 1 && g.depth >= 1, "network.n_roots and network.depth must be at least 1");
    require(finite_positive(g.root_radius) && finite_positive(g.branch_length), "tree radii and lengths must be positive");
    require(g.taper > 0.0 && g.taper <= 1.0, "network.taper must lie in (0, 1]");
  }
  if (!mesh.import_file) {
    for (int r : mesh.resolution) require(r >= 1, "mesh.resolution entries must be at least 1");
    require(mesh.enlargement > 1.0, "mesh.enlargement must exceed 1");
    require(mesh.grading >= 1.0, "mesh.grading must be at least 1");
    if (mesh.box) require((mesh.box->extent().array() > 0.0).all(), "mesh box must have positive extent");
  }
  try {
    physics.validate();
  } catch (const Error& e) {
    reject(e.what());
  }
  require(boundary.p_high > boundary.p_low, "boundary.p_high must exceed boundary.p_low");
  require(boundary.frac_pressure > 0.0 && boundary.frac_noflux >= 0.0 &&
              boundary.frac_pressure + boundary.frac_noflux <= 1.0,
          "boundary fractions must be non-negative with a positive pressure share and sum at most 1");
  require(finite_positive(boundary.proximity_radius), "boundary.proximity_radius must be positive");
  require(targets.w_p >= 0.0 && targets.w_tau >= 0.0 && targets.w_p + targets.w_tau > 0.0,
          "boundary target weights must be non-negative and not both zero");
  require(targets.max_sign_iterations >= 1, "boundary.max_sign_iterations must be at least 1");
  require(partition.keep_fraction > 0.0 && partition.keep_fraction < 1.0,
          "partition.keep_fraction must lie in (0, 1)");
  require(partition.min_component_length >= 0.0, "partition.min_component_length must be non-negative");
  require(finite_positive(hybrid.kv), "hybrid.kv must be positive");
  require(finite_positive(hybrid.surface_density), "hybrid.surface_density must be positive");
  require(finite_positive(hybrid.smearing_radius), "hybrid.smearing_radius must be positive");
  require(finite_positive(penalty.value), "hybrid.penalty must be positive");
  require(penalty.factor > 1.0 && penalty.max_adjustments >= 0, "hybrid penalty adjustment settings are invalid");
  require(finite_positive(solver.tolerance), "hybrid.solver_tolerance must be positive");
  if (rev.length) require(finite_positive(*rev.length), "rev.length must be positive");
  require(rev.growth.n_centers >= 3 && rev.growth.max_steps >= 2, "rev growth needs at least 3 centers and 2 steps");
  require(rev.growth.initial_fraction > 0.0 && rev.growth.initial_fraction < 1.0,
          "rev.initial_fraction must lie in (0, 1)");
  require(rev.selection.window >= 1 && rev.selection.tolerance > 0.0 && rev.selection.fraction > 0.0 &&
              rev.selection.fraction <= 1.0,
          "rev selection settings are invalid");
  const auto& c = calibration;
  auto bounds_ok = [](const std::array<double, 2>& b) { return b[0] > 0.0 && b[1] > b[0] && std::isfinite(b[1]); };
  require(bounds_ok(c.kv_bounds) && bounds_ok(c.surface_density_bounds) && bounds_ok(c.alpha_bounds),
          "calibration bounds must be positive and ordered");
  require(c.kv_init >= c.kv_bounds[0] && c.kv_init <= c.kv_bounds[1], "calibration.kv_init outside its bounds");
  require(c.surface_density_init >= c.surface_density_bounds[0] &&
              c.surface_density_init <= c.surface_density_bounds[1],
          "calibration.surface_density_init outside its bounds");
  if (c.alpha_init)
    require(*c.alpha_init >= c.alpha_bounds[0] && *c.alpha_init <= c.alpha_bounds[1],
            "calibration.alpha_init outside its bounds");
  require(std::all_of(c.weights.begin(), c.weights.end(), [](double w) { return w >= 0.0 && std::isfinite(w); }) &&
              c.weights[0] + c.weights[1] + c.weights[2] + c.weights[3] > 0.0,
          "calibration.weights must be non-negative and not all zero");
  require(c.lm.max_iterations >= 1 && c.lm.fd_relative_step > 0.0 && c.lm.initial_damping > 0.0,
          "calibration LM settings are invalid");
  require(!seeds.empty(), "seeds must not be empty");
  require(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(), "seeds must be distinct");
  require(threads >= 0, "threads must be non-negative");
}

ExperimentConfig parse_config(const std::string& toml_text, const std::filesystem::path& base_dir) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "TOML parse error at line " << e.source().begin.line << ": " << e.description();
    reject(os.str());
  }
  ExperimentConfig cfg;
  auto table = [&](const char* name) -> const toml::table* {
    const toml::node* n = root.get(name);
    if (!n) return nullptr;
    require(n->is_table(), std::string(name) + " must be a table");
    return n->as_table();
  };

  Section top(&root, "");
  for (const char* name : {"network", "mesh", "physics", "boundary", "partition", "hybrid", "rev", "calibration"})
    top.allow(name);
  {
    std::string out = cfg.output.string();
    top.get("output", out);
    cfg.output = resolve(out, base_dir);
    top.get("threads", cfg.threads);
    top.allow("seeds");
    if (const toml::node* n = root.get("seeds")) {
      const toml::array* a = n->as_array();
      require(a != nullptr, "seeds must be an array of integers");
      cfg.seeds.clear();
      for (const auto& e : *a) {
        auto v = e.value<std::int64_t>();
        require(v.has_value() && *v >= 0, "seeds must be non-negative integers");
        cfg.seeds.push_back(static_cast<std::uint64_t>(*v));
      }
    }
  }
  {
    Section s(table("network"), "network");
    GeneratorSpec& g = cfg.network.generator;
    std::string source = "generate";
    s.get("source", source);
    if (source != "generate") cfg.network.import_dir = resolve(source, base_dir);
    std::string kind = kind_name(g.kind);
    s.get("kind", kind);
    g.kind = parse_kind(kind);
    s.get("seed", cfg.network.seed);
    s.get("box_min", g.box.lo);
    s.get("box_max", g.box.hi);
    s.get("max_segment_length", g.max_segment_length);
    s.get("pitch", g.pitch);
    s.get("radius", g.radius);
    s.get("stub_faces", g.stub_faces);
    s.get("interior_dead_ends", g.interior_dead_ends);
    s.get("dead_end_length", g.dead_end_length);
    s.get("backbone_radius", g.backbone_radius);
    s.get("backbone_lines", g.backbone_lines);
    s.get("center_sparsity", g.center_sparsity);
    s.get("n_roots", g.n_roots);
    s.get("depth", g.depth);
    s.get("root_radius", g.root_radius);
    s.get("taper", g.taper);
    s.get("branch_length", g.branch_length);
    s.get("jitter", g.jitter);
    s.finish();
  }
  {
    Section s(table("mesh"), "mesh");
    std::string source = "generate";
    s.get("source", source);
    if (source != "generate") cfg.mesh.import_file = resolve(source, base_dir);
    if (s.has("box_min") || s.has("box_max")) {
      Box3 b = cfg.network.generator.box;
      s.get("box_min", b.lo);
      s.get("box_max", b.hi);
      cfg.mesh.box = b;
    }
    s.get("resolution", cfg.mesh.resolution);
    s.get("enlargement", cfg.mesh.enlargement);
    s.get("grading", cfg.mesh.grading);
    s.finish();
  }
  {
    Section s(table("physics"), "physics");
    PhysicsParams& p = cfg.physics;
    s.get("rho_blood", p.rho_blood);
    s.get("rho_if", p.rho_if);
    s.get("k_if", p.k_if);
    s.get("lp_vessel", p.lp_vessel);
    s.get("lp_homogenized", p.lp_homog);
    s.get("sigma", p.sigma);
    s.get("pi_blood", p.pi_blood);
    s.get("pi_if", p.pi_if);
    s.get("hematocrit", p.hematocrit);
    s.get("outer_pressure", p.outer_pressure);
    s.finish();
  }
  {
    Section s(table("boundary"), "boundary");
    BcAssignmentConfig& b = cfg.boundary;
    s.get("p_high", b.p_high);
    s.get("p_low", b.p_low);
    s.get("frac_pressure", b.frac_pressure);
    s.get("frac_noflux", b.frac_noflux);
    s.get("proximity_radius", b.proximity_radius);
    s.get("require_both_signs", b.require_both_signs);
    s.get("p_target", cfg.targets.p_target);
    s.get("tau_target", cfg.targets.tau_target);
    s.get("w_p", cfg.targets.w_p);
    s.get("w_tau", cfg.targets.w_tau);
    s.get("max_sign_iterations", cfg.targets.max_sign_iterations);
    s.finish();
  }
  {
    Section s(table("partition"), "partition");
    s.get("keep_fraction", cfg.partition.keep_fraction);
    s.get("min_component_length", cfg.partition.min_component_length);
    s.finish();
  }
  {
    Section s(table("hybrid"), "hybrid");
    HybridParams& h = cfg.hybrid;
    s.get("kv", h.kv);
    s.get("surface_density", h.surface_density);
    s.get("smearing_radius", h.smearing_radius);
    s.get("exclusion_radius", h.exclusion_radius);
    bool present = false;
    const bool fixed = s.number_or_auto("penalty", cfg.penalty.value, present);
    if (present) cfg.penalty.automatic = !fixed;
    s.get("penalty_initial", cfg.penalty.value);
    s.get("penalty_factor", cfg.penalty.factor);
    s.get("penalty_max_adjustments", cfg.penalty.max_adjustments);
    std::string solver = solver_name(cfg.solver.method);
    s.get("solver", solver);
    cfg.solver.method = parse_solver(solver);
    s.get("solver_tolerance", cfg.solver.tolerance);
    s.get("solver_max_iterations", cfg.solver.max_iterations);
    h.penalty = cfg.penalty.value;
    s.finish();
  }
  {
    Section s(table("rev"), "rev");
    double l = 0.0;
    bool present = false;
    if (s.number_or_auto("length", l, present)) cfg.rev.length = l;
    s.get("n_centers", cfg.rev.growth.n_centers);
    s.get("max_steps", cfg.rev.growth.max_steps);
    s.get("initial_fraction", cfg.rev.growth.initial_fraction);
    s.get("window", cfg.rev.selection.window);
    s.get("tolerance", cfg.rev.selection.tolerance);
    s.get("stable_fraction", cfg.rev.selection.fraction);
    s.get("seed", cfg.rev.seed);
    s.finish();
  }
  {
    Section s(table("calibration"), "calibration");
    CalibrationConfig& c = cfg.calibration;
    std::string mode = to_string(c.mode);
    s.get("mode", mode);
    c.mode = parse_choice(mode);
    s.get("fix_surface_density", c.fix_surface_density);
    s.get("kv_init", c.kv_init);
    s.get("surface_density_init", c.surface_density_init);
    double a = 0.0;
    bool present = false;
    if (s.number_or_auto("alpha_init", a, present)) c.alpha_init = a;
    s.get("kv_bounds", c.kv_bounds);
    s.get("surface_density_bounds", c.surface_density_bounds);
    s.get("alpha_bounds", c.alpha_bounds);
    s.get("weights", c.weights);
    s.get("max_iterations", c.lm.max_iterations);
    s.get("fd_relative_step", c.lm.fd_relative_step);
    s.get("gradient_tolerance", c.lm.gradient_tolerance);
    s.get("step_tolerance", c.lm.step_tolerance);
    s.get("objective_tolerance", c.lm.objective_tolerance);
    s.get("initial_damping", c.lm.initial_damping);
    s.finish();
  }
  top.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), file.parent_path());
}

void apply_calibration_start(const std::filesystem::path& file, CalibrationConfig& c) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  toml::table root;
  try {
    root = toml::parse(ss.str());
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << file.string() << ": TOML parse error at line " << e.source().begin.line << ": " << e.description();
    reject(os.str());
  }
  Section s(&root, "");
  s.get("kv", c.kv_init);
  s.get("surface_density", c.surface_density_init);
  if (s.has("alpha")) {
    double a = 0.0;
    s.get("alpha", a);
    c.alpha_init = a;
  }
  s.finish();
  require(c.kv_init > 0.0 && c.surface_density_init > 0.0 && (!c.alpha_init || *c.alpha_init > 0.0),
          file.string() + ": initial parameters must be positive");
}

std::string canonical_config_json(const ExperimentConfig& c) {
  using nlohmann::json;
  auto vec = [](const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); };
  const GeneratorSpec& g = c.network.generator;
  json j;
  j["network"] = {{"source", c.network.import_dir ? c.network.import_dir->string() : "generate"},
                  {"kind", kind_name(g.kind)},
                  {"seed", c.network.seed},
                  {"box_min", vec(g.box.lo)},
                  {"box_max", vec(g.box.hi)},
                  {"max_segment_length", g.max_segment_length},
                  {"pitch", g.pitch},
                  {"radius", g.radius},
                  {"stub_faces", g.stub_faces},
                  {"interior_dead_ends", g.interior_dead_ends},
                  {"dead_end_length", g.dead_end_length},
                  {"backbone_radius", g.backbone_radius},
                  {"backbone_lines", g.backbone_lines},
                  {"center_sparsity", g.center_sparsity},
                  {"n_roots", g.n_roots},
                  {"depth", g.depth},
                  {"root_radius", g.root_radius},
                  {"taper", g.taper},
                  {"branch_length", g.branch_length},
                  {"jitter", g.jitter}};
  j["mesh"] = {{"source", c.mesh.import_file ? c.mesh.import_file->string() : "generate"},
               {"box_min", c.mesh.box ? vec(c.mesh.box->lo) : json(nullptr)},
               {"box_max", c.mesh.box ? vec(c.mesh.box->hi) : json(nullptr)},
               {"resolution", c.mesh.resolution},
               {"enlargement", c.mesh.enlargement},
               {"grading", c.mesh.grading}};
  const PhysicsParams& p = c.physics;
  j["physics"] = {{"rho_blood", p.rho_blood}, {"rho_if", p.rho_if},         {"k_if", p.k_if},
                  {"lp_vessel", p.lp_vessel}, {"lp_homogenized", p.lp_homog}, {"sigma", p.sigma},
                  {"pi_blood", p.pi_blood},   {"pi_if", p.pi_if},           {"hematocrit", p.hematocrit},
                  {"outer_pressure", p.outer_pressure}};
  j["boundary"] = {{"p_high", c.boundary.p_high},
                   {"p_low", c.boundary.p_low},
                   {"frac_pressure", c.boundary.frac_pressure},
                   {"frac_noflux", c.boundary.frac_noflux},
                   {"proximity_radius", c.boundary.proximity_radius},
                   {"require_both_signs", c.boundary.require_both_signs},
                   {"p_target", c.targets.p_target},
                   {"tau_target", c.targets.tau_target},
                   {"w_p", c.targets.w_p},
                   {"w_tau", c.targets.w_tau},
                   {"max_sign_iterations", c.targets.max_sign_iterations}};
  j["partition"] = {{"keep_fraction", c.partition.keep_fraction},
                    {"min_component_length", c.partition.min_component_length}};
  j["hybrid"] = {{"kv", c.hybrid.kv},
                 {"surface_density", c.hybrid.surface_density},
                 {"smearing_radius", c.hybrid.smearing_radius},
                 {"exclusion_radius", c.hybrid.exclusion_radius},
                 {"penalty", c.penalty.automatic ? json("auto") : json(c.penalty.value)},
                 {"penalty_initial", c.penalty.value},
                 {"penalty_factor", c.penalty.factor},
                 {"penalty_max_adjustments", c.penalty.max_adjustments},
                 {"solver", solver_name(c.solver.method)},
                 {"solver_tolerance", c.solver.tolerance},
                 {"solver_max_iterations", c.solver.max_iterations}};
  j["rev"] = {{"length", c.rev.length ? json(*c.rev.length) : json("auto")},
              {"n_centers", c.rev.growth.n_centers},
              {"max_steps", c.rev.growth.max_steps},
              {"initial_fraction", c.rev.growth.initial_fraction},
              {"window", c.rev.selection.window},
              {"tolerance", c.rev.selection.tolerance},
              {"stable_fraction", c.rev.selection.fraction},
              {"seed", c.rev.seed}};
  const CalibrationConfig& k = c.calibration;
  j["calibration"] = {{"mode", to_string(k.mode)},
                      {"fix_surface_density", k.fix_surface_density},
                      {"kv_init", k.kv_init},
                      {"surface_density_init", k.surface_density_init},
                      {"alpha_init", k.alpha_init ? json(*k.alpha_init) : json("auto")},
                      {"kv_bounds", k.kv_bounds},
                      {"surface_density_bounds", k.surface_density_bounds},
                      {"alpha_bounds", k.alpha_bounds},
                      {"weights", k.weights},
                      {"max_iterations", k.lm.max_iterations},
                      {"fd_relative_step", k.lm.fd_relative_step},
                      {"gradient_tolerance", k.lm.gradient_tolerance},
                      {"step_tolerance", k.lm.step_tolerance},
                      {"objective_tolerance", k.lm.objective_tolerance},
                      {"initial_damping", k.lm.initial_damping}};
  j["seeds"] = c.seeds;
  j["output"] = c.output.string();
  j["threads"] = c.threads;
  return j.dump();
}

std::string config_hash(const ExperimentConfig& cfg) {
  // where results go and how many threads compute them do not change them
  nlohmann::json j = nlohmann::json::parse(canonical_config_json(cfg));
  j.erase("output");
  j.erase("threads");
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

MeshConfig parse_mesh_spec(const std::string& spec, MeshConfig base) {
  if (spec.rfind("gen:", 0) != 0) {
    base.import_file = spec;
    return base;
  }
  base.import_file.reset();
  std::vector<std::string> parts;
  std::stringstream ss(spec.substr(4));
  for (std::string part; std::getline(ss, part, ':');) parts.push_back(part);
  auto number = [&](const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0') throw ConfigError("bad mesh string '" + spec + "'");
    return v;
  };
  if (parts.empty() || parts.size() > 3) throw ConfigError("bad mesh string '" + spec + "'");
  std::vector<int> res;
  std::stringstream rs(parts[0]);
  for (std::string r; std::getline(rs, r, ',');) res.push_back(static_cast<int>(number(r)));
  if (res.size() == 1) res.assign(3, res[0]);
  if (res.size() != 3 || std::any_of(res.begin(), res.end(), [](int r) { return r < 1; }))
    throw ConfigError("bad mesh resolution in '" + spec + "'");
  base.resolution = {res[0], res[1], res[2]};
  if (parts.size() > 1) base.enlargement = number(parts[1]);
  if (parts.size() > 2) base.grading = number(parts[2]);
  if (!(base.enlargement > 1.0) || !(base.grading >= 1.0)) throw ConfigError("bad mesh grading in '" + spec + "'");
  return base;
}

TissueMesh make_mesh(const MeshConfig& cfg, const VesselNetwork& net) {
  if (cfg.import_file) return read_mesh_txt(*cfg.import_file);
  Box3 box;
  if (cfg.box) {
    box = *cfg.box;
  } else {
    if (net.n_nodes() == 0) throw ConfigError("cannot size a mesh around an empty network");
    box.lo = box.hi = net.nodes().front().position;
    for (const auto& n : net.nodes()) {
      box.lo = box.lo.cwiseMin(n.position);
      box.hi = box.hi.cwiseMax(n.position);
    }
    if (!(box.extent().array() > 0.0).all()) throw ConfigError("network bounding box is flat; set mesh.box_min/box_max");
  }
  return build_box_mesh(box, cfg.resolution, cfg.enlargement, cfg.grading);
}

int effective_threads(int requested) {
  int n = requested > 0 ? requested : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("VASOPERF_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || cap < 1) throw ConfigError("VASOPERF_THREADS must be a positive integer");
    n = std::min<int>(n, static_cast<int>(cap));
  }
  return std::max(1, n);
}

}  // namespace vasoperf
