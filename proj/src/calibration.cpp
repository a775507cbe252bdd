#include "vasoperf/calibration.hpp"

#include "vasoperf/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace vasoperf {

namespace {

std::string format_theta(const std::vector<double>& theta) {
  std::ostringstream s;
  s.precision(10);
  s << '[';
  for (std::size_t i = 0; i < theta.size(); ++i) s << (i ? ", " : "") << theta[i];
  s << ']';
  return s.str();
}

}  // namespace

LmResult least_squares(const ResidualFunction& residual, std::vector<double> theta0, const std::vector<double>& lower,
                       const std::vector<double>& upper, const LmOptions& opt) {
  const std::size_t n = theta0.size();
  if (n == 0) throw ContractError("calibration needs at least one parameter");
  if (lower.size() != n || upper.size() != n) throw ContractError("calibration bounds must match the parameters");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(lower[i] > 0.0) || !(upper[i] > lower[i])) throw ConfigError("calibration bounds must be positive and ordered");
    if (!(theta0[i] >= lower[i] && theta0[i] <= upper[i]))
      throw ConfigError("initial parameters outside their bounds: " + format_theta(theta0));
  }
  if (!(opt.fd_relative_step > 0.0) || opt.max_iterations < 1 || !(opt.initial_damping > 0.0))
    throw ConfigError("invalid calibration options");

  LmResult res;
  auto eval = [&](const std::vector<double>& th) {
    ++res.evaluations;
    Eigen::VectorXd r = residual(th);
    if (!r.allFinite()) throw DomainError("non-finite residual at parameters " + format_theta(th));
    return r;
  };
  // forward differences in log space, backward at the upper bound
  auto jacobian = [&](const std::vector<double>& th, const Eigen::VectorXd& r) {
    Eigen::MatrixXd j(r.size(), static_cast<long>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const double h = std::max(opt.fd_relative_step * th[i], opt.fd_floor);
      std::vector<double> tp = th;
      tp[i] = th[i] + h <= upper[i] ? th[i] + h : th[i] - h;
      const Eigen::VectorXd rp = eval(tp);
      if (rp.size() != r.size()) throw ContractError("residual length changed between evaluations");
      j.col(static_cast<long>(i)) = (rp - r) / (std::log(tp[i]) - std::log(th[i]));
    }
    return j;
  };

  std::vector<double> theta = std::move(theta0);
  Eigen::VectorXd r = eval(theta);
  Eigen::MatrixXd jac = jacobian(theta, r);
  double cost = r.squaredNorm();
  double mu = opt.initial_damping;
  res.trace.push_back({0, theta, cost, cost, true, mu, res.evaluations});

  for (int it = 1; it <= opt.max_iterations; ++it) {
    const Eigen::VectorXd g = jac.transpose() * r;
    if (g.cwiseAbs().maxCoeff() < opt.gradient_tolerance) {
      res.converged = true;
      res.reason = "gradient tolerance";
      break;
    }
    // parameters on a bound with the descent direction pointing out are held
    std::vector<long> free;
    for (std::size_t i = 0; i < n; ++i) {
      const long k = static_cast<long>(i);
      const bool out = (theta[i] <= lower[i] && g[k] > 0.0) || (theta[i] >= upper[i] && g[k] < 0.0);
      if (!out) free.push_back(k);
    }
    if (free.empty()) {
      res.converged = true;
      res.reason = "bound reached";
      break;
    }
    const auto nf = static_cast<long>(free.size());
    Eigen::MatrixXd jf(jac.rows(), nf);
    Eigen::VectorXd gf(nf);
    for (long k = 0; k < nf; ++k) {
      jf.col(k) = jac.col(free[static_cast<std::size_t>(k)]);
      gf[k] = g[free[static_cast<std::size_t>(k)]];
    }
    if (gf.cwiseAbs().maxCoeff() < opt.gradient_tolerance) {
      res.converged = true;
      res.reason = "gradient tolerance";
      break;
    }
    // Marquardt scaling of the damping by the diagonal of JᵀJ
    Eigen::MatrixXd a = jf.transpose() * jf;
    const Eigen::VectorXd d = a.diagonal().cwiseMax(1e-12 * std::max(1.0, a.diagonal().maxCoeff()));
    a.diagonal() += mu * d;
    const Eigen::VectorXd sf = a.ldlt().solve(-gf);
    Eigen::VectorXd step = Eigen::VectorXd::Zero(static_cast<long>(n));
    for (long k = 0; k < nf; ++k) step[free[static_cast<std::size_t>(k)]] = sf[k];
    std::vector<double> trial(n);
    double moved = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double u = std::clamp(std::log(theta[i]) + step[static_cast<long>(i)], std::log(lower[i]),
                                  std::log(upper[i]));
      trial[i] = u <= std::log(lower[i]) ? lower[i] : u >= std::log(upper[i]) ? upper[i] : std::exp(u);
      moved = std::max(moved, std::abs(u - std::log(theta[i])));
    }
    const Eigen::VectorXd rt = eval(trial);
    const Eigen::MatrixXd jt = jacobian(trial, rt);
    const double ct = rt.squaredNorm();
    res.iterations = it;
    if (ct < cost) {
      const double decrease = (cost - ct) / std::max(cost, 1e-300);
      theta = trial;
      r = rt;
      jac = jt;
      cost = ct;
      mu = std::max(mu * opt.damping_decrease, 1e-300);
      res.trace.push_back({it, trial, ct, cost, true, mu, res.evaluations});
      if (moved < opt.step_tolerance) {
        res.converged = true;
        res.reason = "step tolerance";
        break;
      }
      if (decrease < opt.objective_tolerance) {
        res.converged = true;
        res.reason = "objective tolerance";
        break;
      }
    } else {
      mu *= opt.damping_increase;
      res.trace.push_back({it, trial, ct, cost, false, mu, res.evaluations});
      if (moved == 0.0 || mu > opt.max_damping) {
        res.converged = true;
        res.reason = moved == 0.0 ? "bound reached" : "damping limit";
        break;
      }
    }
  }
  if (!res.converged) res.reason = "maximum iterations";
  res.theta = theta;
  res.cost = cost;
  return res;
}

HybridCalibrationProblem::HybridCalibrationProblem(const VesselNetwork& net, const TissueMesh& mesh,
                                                   const PhysicsParams& physics, const FullSolution& full,
                                                   const RevPartition& revs, HybridParams base, CalibrationMode mode,
                                                   bool fix_surface_density, std::array<double, 4> weights)
    : net_(net),
      mesh_(mesh),
      physics_(physics),
      full_(full),
      revs_(revs),
      base_(std::move(base)),
      mode_(mode),
      fix_sv_(fix_surface_density || mode == CalibrationMode::vf_linear),
      weights_(weights) {
  if (!net.partition()) throw ContractError("calibration needs a partitioned network");
  if (!(base_.penalty > 0.0)) throw ConfigError("calibration needs a positive penalty");
  base_.element_kv.clear();
  bcs_ = transfer_boundary_conditions(net, mesh, base_);
  element_vf_.assign(mesh.n_elements(), 0.0);
  bool any = false;
  for (std::size_t e = 0; e < mesh.n_elements(); ++e) {
    const Element& el = mesh.element(static_cast<int>(e));
    if (!el.vascular) continue;
    const int id = revs.rev_of(mesh.map(static_cast<int>(e), shape::reference_centroid(el.kind)));
    if (id < 0) continue;
    element_vf_[e] = revs.rev(id).vf_small;
    any = any || element_vf_[e] > 0.0;
  }
  if (mode == CalibrationMode::vf_linear && !any)
    throw DomainError("volume-fraction permeability is degenerate: no REV holds small vessels");
}

std::size_t HybridCalibrationProblem::n_params() const { return mode_ == CalibrationMode::scalar && !fix_sv_ ? 2 : 1; }

std::vector<std::string> HybridCalibrationProblem::param_names() const {
  if (mode_ == CalibrationMode::vf_linear) return {"alpha"};
  if (fix_sv_) return {"kv"};
  return {"kv", "surface_density"};
}

std::vector<double> HybridCalibrationProblem::initial_theta() const {
  if (mode_ == CalibrationMode::scalar) {
    if (fix_sv_) return {base_.kv};
    return {base_.kv, base_.surface_density};
  }
  // α giving the scalar kv at the mean fraction of the vascular elements
  double sum = 0.0;
  int n = 0;
  for (std::size_t e = 0; e < element_vf_.size(); ++e)
    if (mesh_.element(static_cast<int>(e)).vascular) {
      sum += element_vf_[e];
      ++n;
    }
  return {base_.kv * n / sum};
}

HybridParams HybridCalibrationProblem::params_for(const std::vector<double>& theta) const {
  if (theta.size() != n_params()) throw ContractError("calibration parameter count mismatch");
  for (double t : theta)
    if (!(t > 0.0)) throw DomainError("calibration parameters must stay positive: " + format_theta(theta));
  HybridParams p = base_;
  if (mode_ == CalibrationMode::scalar) {
    p.kv = theta[0];
    if (!fix_sv_) p.surface_density = theta[1];
  } else {
    p.element_kv.resize(element_vf_.size());
    for (std::size_t e = 0; e < element_vf_.size(); ++e) p.element_kv[e] = theta[0] * element_vf_[e];
  }
  return p;
}

HybridSolution HybridCalibrationProblem::solve(const std::vector<double>& theta) const {
  const HybridParams p = params_for(theta);
  try {
    const HybridSystem sys = assemble_hybrid_system(net_, mesh_, physics_, p, bcs_);
    return solve_hybrid(sys, net_, mesh_, physics_, p, solver_);
  } catch (const SolverError& e) {
    throw SolverError(std::string(e.what()) + " at parameters " + format_theta(theta), e.residual_history());
  } catch (const Error& e) {
    throw Error(std::string(e.what()) + " at parameters " + format_theta(theta));
  }
}

Eigen::VectorXd HybridCalibrationProblem::report_residuals(const ComparisonReport& report) {
  const auto& w = report.weights;
  const double sum = w[0] + w[1] + w[2] + w[3];
  const std::array<double, 4> r2{report.r2_large, report.small.r2, report.r2_if, report.r2_flow_small};
  Eigen::VectorXd r(4);
  for (int k = 0; k < 4; ++k) r[k] = std::sqrt(std::max(0.0, w[k] * (1.0 - r2[k]) / sum));
  return r;
}

ComparisonReport HybridCalibrationProblem::evaluate(const std::vector<double>& theta) const {
  const HybridSolution sol = solve(theta);
  return compare_models(net_, mesh_, full_, sol, params_for(theta), revs_, weights_);
}

CalibrationResult calibrate(const HybridCalibrationProblem& problem, const std::vector<double>& theta0,
                            const std::vector<double>& lower, const std::vector<double>& upper, const LmOptions& opt) {
  CalibrationResult out;
  out.names = problem.param_names();
  out.lm = least_squares([&](const std::vector<double>& th) { return problem.residuals(th); }, theta0, lower, upper,
                         opt);
  out.params = problem.params_for(out.lm.theta);
  out.report = problem.evaluate(out.lm.theta);
  return out;
}

FlowFractionCorrelation flow_volume_fraction_correlation(const VesselNetwork& net, const RevPartition& revs,
                                                         const std::vector<double>& flow) {
  if (revs.size() < 2) throw ContractError("flow-fraction correlation needs at least two REVs");
  const RevFlows q = discrete_plane_flows(net, revs, flow, VesselSelection::small);
  FlowFractionCorrelation c;
  for (const auto& r : revs.revs())
    for (double v : q[static_cast<std::size_t>(r.id)]) {
      c.volume_fraction.push_back(r.vf_small);
      c.abs_flow.push_back(std::abs(v));
    }
  c.fit = fit_line(c.volume_fraction, c.abs_flow);
  return c;
}

void write_calibration_trace_csv(const CalibrationResult& result, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot write " + file.string());
  out.precision(17);
  out << "iteration,evaluations,accepted,damping,r2_tot,best_r2_tot";
  for (const auto& n : result.names) out << ',' << n;
  out << '\n';
  for (const auto& t : result.lm.trace) {
    out << t.iteration << ',' << t.evaluations << ',' << (t.accepted ? 1 : 0) << ',' << t.damping << ',' << 1.0 - t.cost
        << ',' << 1.0 - t.best_cost;
    for (double v : t.theta) out << ',' << v;
    out << '\n';
  }
}

void write_calibration_json(const CalibrationResult& result, const std::filesystem::path& file) {
  nlohmann::json j;
  for (std::size_t i = 0; i < result.names.size(); ++i) j["theta"][result.names[i]] = result.lm.theta[i];
  j["r2_tot"] = result.report.r2_tot;
  j["converged"] = result.lm.converged;
  j["reason"] = result.lm.reason;
  j["iterations"] = result.lm.iterations;
  j["evaluations"] = result.lm.evaluations;
  j["penalty"] = result.params.penalty;
  j["metrics"] = nlohmann::json::parse(comparison_json(result.report));
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

}  // namespace vasoperf
