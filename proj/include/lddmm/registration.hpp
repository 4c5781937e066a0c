#pragma once

#include <chrono>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lddmm/errors.hpp"
#include "lddmm/flow.hpp"
#include "lddmm/optimize.hpp"
#include "lddmm/ot_losses.hpp"

namespace lddmm {

enum class SolverKind { gdm, shooting };

inline std::string to_string(SolverKind s) { return s == SolverKind::gdm ? "gdm" : "shooting"; }

inline SolverKind parse_solver_kind(const std::string& name) {
  if (name == "gdm") return SolverKind::gdm;
  if (name == "shooting") return SolverKind::shooting;
  throw ConfigError("unknown solver '" + name + "' (expected gdm or shooting)");
}

struct RegistrationSettings {
  FlowConfig flow;
  LossConfig loss;
  SolverKind solver = SolverKind::shooting;
  OptimizerConfig optimizer;
  /// Seed each Sinkhorn solve with the potentials of the previous evaluation.
  bool warm_start = true;
  /// Largest endpoint displacement of the first L-BFGS trial, in the linearized
  /// flow. Used when optimizer.initial_step is 0.
  double first_step_displacement = 0.05;

  void validate() const {
    flow.validate();
    loss.validate();
    optimizer.validate();
    if (!(first_step_displacement > 0.0)) throw ConfigError("first_step_displacement must be positive");
  }
};

struct RegistrationResult {
  TrajectoryBundle bundle;
  std::vector<double> loss_trace;
  double final_fidelity = 0.0;
  double final_kinetic = 0.0;
  double lambda = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  OptimizerStatus status = OptimizerStatus::max_iter;
  SolverKind solver = SolverKind::shooting;
  Eigen::VectorXd parameters;  // flattened a[0..τ] (gdm) or a0 (shooting)
  double wall_time_s = 0.0;

  double objective() const { return final_fidelity + lambda * final_kinetic; }

  /// Initial momentum a(0) regardless of the solver.
  Points initial_momentum() const { return bundle.a.front(); }
};

/// Numeric abort inside a registration; carries every objective value evaluated so far.
class RegistrationAborted : public NumericError {
 public:
  RegistrationAborted(const std::string& what, std::vector<double> partial)
      : NumericError(what), partial_trace(std::move(partial)) {}
  std::vector<double> partial_trace;
};

/// Number of optimization variables for a solver.
inline Index parameter_count(SolverKind solver, Index n, Index d, int tau) {
  return solver == SolverKind::gdm ? n * d * (tau + 1) : n * d;
}

/// Lifts an initial momentum a(0) to solver parameters: shooting uses it as is,
/// GDM repeats it over every time slice.
inline Eigen::VectorXd parameters_from_initial_momentum(SolverKind solver, const Points& a0, int tau) {
  if (solver == SolverKind::shooting) return flatten_points(a0);
  MomentumField a;
  a.a.assign(static_cast<std::size_t>(tau + 1), a0);
  return a.flatten();
}

/// Minimizes Λ(φ(source), target) + λ·kinetic over the momenta.
/// Both optimizers see the Euclidean gradient of the discrete objective.
inline RegistrationResult register_clouds(const Points& source, const Points& target, const RegistrationSettings& cfg,
                                          const Eigen::VectorXd* initial = nullptr) {
  cfg.validate();
  if (source.cols() != target.cols()) throw ConfigError("source and target dimensions differ");
  const auto start = std::chrono::steady_clock::now();
  const Index n = source.rows();
  const Index d = source.cols();
  const int tau = cfg.flow.tau;
  const Index count = parameter_count(cfg.solver, n, d, tau);
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(count);
  if (initial != nullptr) {
    if (initial->size() != count) throw ConfigError("initial momentum has the wrong size for this solver");
    x0 = *initial;
  }

  FidelityLoss loss(cfg.loss, target, cfg.warm_start);
  std::vector<double> evaluated;
  RegistrationResult out;
  out.lambda = cfg.flow.lambda;
  out.solver = cfg.solver;

  // `displacement(g)` is the sup norm of the linearized endpoint motion along g.
  auto run = [&](auto& objective, auto&& displacement) {
    Objective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
      const double v = objective(x, g);
      evaluated.push_back(v);
      return v;
    };
    try {
      OptimizerConfig opt_cfg = cfg.optimizer;
      if (opt_cfg.kind == OptimizerKind::lbfgs && opt_cfg.initial_step == 0.0) {
        Eigen::VectorXd g0;
        f(x0, &g0);
        const double moved = displacement(g0);
        if (moved > 0.0 && std::isfinite(moved)) {
          opt_cfg.initial_step = cfg.first_step_displacement * g0.norm() / moved;
        }
      }
      return minimize(f, x0, opt_cfg);
    } catch (const NumericError& e) {
      throw RegistrationAborted(e.what(), evaluated);
    }
  };

  OptimizerResult opt;
  if (cfg.solver == SolverKind::gdm) {
    GdmObjective objective(loss, source, cfg.flow);
    opt = run(objective, [&](const Eigen::VectorXd& g) {
      const TrajectoryBundle bundle = integrate_trajectories(objective.unpack(x0), source, cfg.flow.kernel);
      const MomentumField dir = objective.unpack(g);
      Points moved = Points::Zero(n, d);
      for (int t = 0; t < tau; ++t) {
        const auto s = static_cast<std::size_t>(t);
        moved += cfg.flow.step() * velocity_field(bundle.z[s], bundle.z[s], dir.a[s], cfg.flow.kernel);
      }
      return moved.cwiseAbs().maxCoeff();
    });
    const MomentumField a = objective.unpack(opt.x);
    out.bundle = integrate_trajectories(a, source, cfg.flow.kernel);
    out.final_kinetic = path_kinetic_energy(out.bundle);
  } else {
    ShootingObjective objective(loss, source, cfg.flow);
    opt = run(objective, [&](const Eigen::VectorXd& g) {
      return velocity_field(source, source, objective.unpack(g), cfg.flow.kernel).cwiseAbs().maxCoeff();
    });
    const Points a0 = objective.unpack(opt.x);
    out.bundle = shoot(a0, source, cfg.flow.kernel, tau);
    out.final_kinetic = quadratic_energy(a0, source, cfg.flow.kernel);
  }
  const LossEvaluation final_eval = loss.evaluate(out.bundle.endpoint(), false);
  out.final_fidelity = final_eval.value;
  out.loss_trace = std::move(opt.trace);
  out.iterations = opt.iterations;
  out.evaluations = opt.evaluations;
  out.status = opt.status;
  out.converged = final_eval.converged && opt.status != OptimizerStatus::line_search_failure;
  out.parameters = std::move(opt.x);
  out.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace lddmm
