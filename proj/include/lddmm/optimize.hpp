#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lddmm/errors.hpp"

namespace lddmm {

enum class OptimizerKind { fixed_step_gd, lbfgs };

inline std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::lbfgs ? "lbfgs" : "fixed_step_gd";
}

inline OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "lbfgs" || name == "l-bfgs") return OptimizerKind::lbfgs;
  if (name == "fixed_step_gd" || name == "gd") return OptimizerKind::fixed_step_gd;
  throw ConfigError("unknown optimizer '" + name + "' (expected fixed_step_gd or lbfgs)");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::lbfgs;
  double step = 1e-1;  // fixed_step_gd only
  int max_iter = 300;
  int memory = 10;
  double grad_tol = 1e-10;  // sup norm
  double armijo_c1 = 1e-4;
  double shrink = 0.5;
  int max_trials = 40;
  /// Length of the first L-BFGS trial step along −g; 0 selects 1/‖g‖.
  double initial_step = 0.0;

  void validate() const {
    if (!(step > 0.0) || !std::isfinite(step)) throw ConfigError("optimizer step must be positive");
    if (max_iter < 1) throw ConfigError("optimizer max_iter must be at least 1");
    if (memory < 1) throw ConfigError("optimizer memory must be at least 1");
    if (!(grad_tol >= 0.0)) throw ConfigError("optimizer grad_tol must be non-negative");
    if (!(armijo_c1 > 0.0 && armijo_c1 < 1.0)) throw ConfigError("armijo_c1 must be in (0, 1)");
    if (!(shrink > 0.0 && shrink < 1.0)) throw ConfigError("line-search shrink must be in (0, 1)");
    if (max_trials < 1) throw ConfigError("line-search max_trials must be at least 1");
    if (!(initial_step >= 0.0) || !std::isfinite(initial_step)) throw ConfigError("initial_step must be non-negative");
  }
};

enum class OptimizerStatus { max_iter, grad_tol, line_search_failure };

inline std::string to_string(OptimizerStatus s) {
  switch (s) {
    case OptimizerStatus::max_iter: return "max_iter";
    case OptimizerStatus::grad_tol: return "grad_tol";
    case OptimizerStatus::line_search_failure: return "line_search_failure";
  }
  return "unknown";
}

struct OptimizerResult {
  Eigen::VectorXd x;
  std::vector<double> trace;  // objective at x0 and after every accepted step
  OptimizerStatus status = OptimizerStatus::max_iter;
  int iterations = 0;
  int evaluations = 0;
};

/// f(x, grad) returns the objective and, when grad is non-null, writes its gradient.
using Objective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

namespace detail {

inline void check_evaluation(double value, const Eigen::VectorXd* grad, int iteration) {
  if (!std::isfinite(value)) {
    throw NumericError("objective is not finite at iteration " + std::to_string(iteration));
  }
  if (grad != nullptr && !grad->allFinite()) {
    throw NumericError("gradient is not finite at iteration " + std::to_string(iteration));
  }
}

inline double sup_norm(const Eigen::VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

inline OptimizerResult gradient_descent(const Objective& f, Eigen::VectorXd x, const OptimizerConfig& cfg) {
  OptimizerResult out;
  Eigen::VectorXd g;
  double value = f(x, &g);
  ++out.evaluations;
  check_evaluation(value, &g, 0);
  out.trace.push_back(value);
  for (int it = 1; it <= cfg.max_iter; ++it) {
    if (sup_norm(g) <= cfg.grad_tol) {
      out.status = OptimizerStatus::grad_tol;
      break;
    }
    x -= cfg.step * g;
    value = f(x, &g);
    ++out.evaluations;
    check_evaluation(value, &g, it);
    out.trace.push_back(value);
    out.iterations = it;
  }
  out.x = std::move(x);
  return out;
}

inline OptimizerResult lbfgs(const Objective& f, Eigen::VectorXd x, const OptimizerConfig& cfg) {
  OptimizerResult out;
  Eigen::VectorXd g;
  double value = f(x, &g);
  ++out.evaluations;
  check_evaluation(value, &g, 0);
  out.trace.push_back(value);

  std::deque<Eigen::VectorXd> s_hist;
  std::deque<Eigen::VectorXd> y_hist;
  std::deque<double> rho_hist;
  std::vector<double> alpha(static_cast<std::size_t>(cfg.memory));
  Eigen::VectorXd g_next;
  bool reset_tried = false;

  for (int it = 1; it <= cfg.max_iter; ++it) {
    if (sup_norm(g) <= cfg.grad_tol) {
      out.status = OptimizerStatus::grad_tol;
      break;
    }
    // Two-loop recursion.
    Eigen::VectorXd dir = -g;
    const std::size_t m = s_hist.size();
    for (std::size_t k = m; k-- > 0;) {
      alpha[k] = rho_hist[k] * s_hist[k].dot(dir);
      dir -= alpha[k] * y_hist[k];
    }
    if (m > 0) dir *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t k = 0; k < m; ++k) {
      const double beta = rho_hist[k] * y_hist[k].dot(dir);
      dir += (alpha[k] - beta) * s_hist[k];
    }
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      dir = -g;
      slope = -g.squaredNorm();
    }
    // Without curvature information the first trial has a fixed length.
    double step = 1.0;
    if (m == 0) step = (cfg.initial_step > 0.0 ? cfg.initial_step : 1.0) / std::max(dir.norm(), 1e-300);

    bool accepted = false;
    Eigen::VectorXd x_trial;
    double trial_value = value;
    std::string non_finite;  // set while the latest trial overflowed
    for (int trial = 0; trial < cfg.max_trials; ++trial) {
      x_trial = x + step * dir;
      ++out.evaluations;
      // A trial that overflows or whose Sinkhorn solve stalls was simply too long:
      // reject it and backtrack. Only accepted iterates must be finite.
      try {
        trial_value = f(x_trial, &g_next);
        check_evaluation(trial_value, &g_next, it);
        non_finite.clear();
      } catch (const ConvergenceError&) {
        non_finite.clear();
        step *= cfg.shrink;
        continue;
      } catch (const NumericError& e) {
        non_finite = e.what();
        step *= cfg.shrink;
        continue;
      }
      if (trial_value <= value + cfg.armijo_c1 * step * slope) {
        accepted = true;
        break;
      }
      step *= cfg.shrink;
    }
    if (!accepted && !non_finite.empty()) {
      throw NumericError(non_finite + " (line search at iteration " + std::to_string(it) + ")");
    }
    if (!accepted) {
      if (m > 0 && !reset_tried) {
        // Retry once from steepest descent with an empty memory.
        s_hist.clear();
        y_hist.clear();
        rho_hist.clear();
        reset_tried = true;
        --it;
        continue;
      }
      out.status = OptimizerStatus::line_search_failure;
      break;
    }
    reset_tried = false;
    Eigen::VectorXd s = x_trial - x;
    Eigen::VectorXd y = g_next - g;
    const double sy = s.dot(y);
    if (sy > 0.0) {
      if (static_cast<int>(s_hist.size()) == cfg.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
    }
    x = std::move(x_trial);
    g.swap(g_next);
    value = trial_value;
    out.trace.push_back(value);
    out.iterations = it;
  }
  out.x = std::move(x);
  return out;
}

}  // namespace detail

/// Minimizes f from x0. fixed_step_gd runs x ← x − step·g; lbfgs uses the two-loop
/// recursion with Armijo backtracking and skips pairs with s·y ≤ 0. A trial point
/// that is non-finite or fails to converge is backtracked from; a non-finite
/// accepted iterate, or a line search that ends on one, throws NumericError.
inline OptimizerResult minimize(const Objective& f, const Eigen::VectorXd& x0, const OptimizerConfig& cfg) {
  cfg.validate();
  return cfg.kind == OptimizerKind::lbfgs ? detail::lbfgs(f, x0, cfg) : detail::gradient_descent(f, x0, cfg);
}

}  // namespace lddmm
