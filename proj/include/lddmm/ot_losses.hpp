#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lddmm/detail/pairwise.hpp"
#include "lddmm/detail/parallel.hpp"
#include "lddmm/errors.hpp"
#include "lddmm/point_cloud.hpp"

// Data-fidelity losses between uniform empirical measures with the squared
// Euclidean ground cost C(x, y) = ‖x − y‖²: entropic transport cost T_ε,
// debiased Sinkhorn divergence S_ε and squared Gaussian MMD. Gradients are taken
// with respect to the source positions.

namespace lddmm {

enum class LossKind { sinkhorn_divergence, entropic_cost, mmd_sq };

inline std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::sinkhorn_divergence: return "sinkhorn_divergence";
    case LossKind::entropic_cost: return "entropic_cost";
    case LossKind::mmd_sq: return "mmd_sq";
  }
  return "unknown";
}

inline LossKind parse_loss_kind(const std::string& name) {
  if (name == "sinkhorn_divergence" || name == "sinkhorn" || name == "sd") return LossKind::sinkhorn_divergence;
  if (name == "entropic_cost" || name == "entropic" || name == "rot") return LossKind::entropic_cost;
  if (name == "mmd_sq" || name == "mmd") return LossKind::mmd_sq;
  throw ConfigError("unknown loss kind '" + name + "' (expected sinkhorn_divergence, entropic_cost or mmd_sq)");
}

/// Stopping rule and seeding of a Sinkhorn solve.
struct SinkhornOptions {
  double tol = 1e-6;
  int max_iter = 10000;
  /// Ratio r ∈ (0, 1) of an ε-annealing warm-up (ε_k = diam²·r^k down to ε, a few
  /// sweeps per level) used to seed the iteration at the target ε. 0 disables it.
  /// Only the starting point changes; the fixed point and stopping rule do not.
  double eps_scaling = 0.5;
  /// Seed for the second potential (skips the warm-up when present).
  const Eigen::VectorXd* initial = nullptr;
  /// Adaptive overrelaxation of the alternating updates (same fixed point).
  bool overrelaxation = true;
};

struct LossConfig {
  LossKind kind = LossKind::sinkhorn_divergence;
  double epsilon = 1e-2;  // entropic regularization (OT kinds)
  double theta = 0.5;     // MMD bandwidth
  double sinkhorn_tol = 1e-6;
  int sinkhorn_max_iter = 10000;
  double eps_scaling = 0.5;  // ε-annealing warm-up ratio for cold starts; 0 disables

  SinkhornOptions sinkhorn_options(const Eigen::VectorXd* initial = nullptr) const {
    SinkhornOptions opt;
    opt.tol = sinkhorn_tol;
    opt.max_iter = sinkhorn_max_iter;
    opt.eps_scaling = eps_scaling;
    opt.initial = initial;
    return opt;
  }

  bool is_transport() const { return kind != LossKind::mmd_sq; }

  void validate() const {
    if (is_transport() && !(epsilon > 0.0 && std::isfinite(epsilon))) {
      throw ConfigError("loss epsilon must be positive, got " + std::to_string(epsilon));
    }
    if (kind == LossKind::mmd_sq && !(theta > 0.0 && std::isfinite(theta))) {
      throw ConfigError("loss theta must be positive, got " + std::to_string(theta));
    }
    if (!(sinkhorn_tol > 0.0)) throw ConfigError("sinkhorn_tol must be positive");
    if (sinkhorn_max_iter < 1) throw ConfigError("sinkhorn_max_iter must be at least 1");
    if (eps_scaling < 0.0 || eps_scaling >= 1.0) throw ConfigError("eps_scaling must be in [0, 1)");
  }
};

/// Optimal dual pair of an entropic transport problem, evaluated on the support points.
struct DualPotentials {
  Eigen::VectorXd f;  // at source points
  Eigen::VectorXd g;  // at target points
  double epsilon = 0.0;
  int iterations = 0;
  int warmup_sweeps = 0;  // ε-annealing sweeps before the target ε
  bool converged = false;
  double residual = 0.0;  // sup-norm of the last update
};

namespace detail {

// out_i = −ε · log( (1/m) Σ_j exp((h_j − ‖x_i − y_j‖²)/ε) )
inline void soft_c_transform(const Points& x, const ColumnPoints& y, const Eigen::VectorXd& h, double eps,
                             Eigen::VectorXd& out) {
  const Index m = y.rows();
  const double log_m = std::log(static_cast<double>(m));
  const double inv_eps = 1.0 / eps;
  out.resize(x.rows());
  parallel_for(x.rows(), [&](Index lo, Index hi) {
    Eigen::ArrayXd row(m);
    for (Index i = lo; i < hi; ++i) {
      squared_distances(x.row(i).data(), y, row);
      row = (h.array() - row) * inv_eps;
      out[i] = -eps * (log_sum_exp_inplace(row) - log_m);
    }
  });
}

inline void check_potentials_finite(const Eigen::VectorXd& v, int iteration) {
  if (!v.allFinite()) {
    throw NumericError("Sinkhorn produced non-finite potentials at iteration " + std::to_string(iteration));
  }
}

inline void check_clouds(const Points& source, const Points& target, double eps) {
  if (source.rows() < 1 || target.rows() < 1) throw ConfigError("Sinkhorn: empty point cloud");
  if (source.cols() != target.cols()) throw ConfigError("Sinkhorn: dimension mismatch");
  if (!(eps > 0.0) || !std::isfinite(eps)) throw ConfigError("Sinkhorn: epsilon must be positive");
}

inline void check_options(const SinkhornOptions& opt) {
  if (!(opt.tol > 0.0)) throw ConfigError("Sinkhorn: tol must be positive");
  if (opt.max_iter < 1) throw ConfigError("Sinkhorn: max_iter must be at least 1");
  if (opt.eps_scaling < 0.0 || opt.eps_scaling >= 1.0) throw ConfigError("Sinkhorn: eps_scaling must be in [0, 1)");
}

// Adaptive overrelaxation f ← (1−ω)f + ω·T(g) for the alternating sweeps.
//
// Runs plain sweeps first and reads the linear convergence rate ρ off the
// residual ratios, then switches to ω = 2/(1 + √(1 − ρ)) (optimal for two-cyclic
// iterations). While relaxed, ρ is re-estimated from the observed rate λ through
// ρ = (λ + ω − 1)²/(λω²). A residual blow-up reverts to plain sweeps and halves
// the admissible excess ω − 1 before probing again; after kMaxFailures blow-ups
// relaxation stays off.
class Overrelaxation {
 public:
  enum class Event { none, engaged, diverged };

  explicit Overrelaxation(bool enabled) : enabled_(enabled) {}

  double omega() const { return omega_; }
  bool used() const { return used_; }

  void abort() {
    omega_ = 1.0;
    previous_ = 0.0;
    count_ = 0;
    cap_ = 1.0 + 0.5 * (cap_ - 1.0);
    if (++failures_ >= kMaxFailures) enabled_ = false;
  }

  Event observe(double residual) {
    if (!enabled_) return Event::none;
    ++count_;
    if (omega_ == 1.0) {
      if (previous_ > 0.0 && count_ >= kProbe) {
        const double rho = residual / previous_;
        if (rho > 0.5 && rho < 1.0) {
          omega_ = optimal(rho);
          used_ = true;
          reference_ = residual;
          window_start_ = residual;
          window_ = 0;
          previous_ = residual;
          return Event::engaged;
        }
      }
      previous_ = residual;
      return Event::none;
    }
    if (residual > kBlowup * reference_) {
      abort();
      return Event::diverged;
    }
    reference_ = std::min(reference_, residual);
    if (++window_ == kWindow) {
      const double lambda = std::pow(residual / window_start_, 1.0 / kWindow);
      if (lambda > omega_ - 1.0 + 1e-3 && lambda < 1.0) {
        const double rho = std::min(0.999999, (lambda + omega_ - 1.0) * (lambda + omega_ - 1.0) / (lambda * omega_ * omega_));
        omega_ = std::max(omega_, optimal(rho));
      }
      window_ = 0;
      window_start_ = residual;
    }
    previous_ = residual;
    return Event::none;
  }

 private:
  static constexpr int kProbe = 12;
  static constexpr int kWindow = 24;
  static constexpr double kBlowup = 10.0;
  static constexpr double kMaxOmega = 1.95;
  static constexpr int kMaxFailures = 4;

  double optimal(double rho) const { return std::min(cap_, 2.0 / (1.0 + std::sqrt(1.0 - rho))); }

  bool enabled_;
  bool used_ = false;
  double omega_ = 1.0;
  double cap_ = kMaxOmega;
  int failures_ = 0;
  double previous_ = 0.0;
  double reference_ = 0.0;
  double window_start_ = 0.0;
  int window_ = 0;
  int count_ = 0;
};

// Per-level budget of the ε-annealing warm-up.
inline constexpr int kAnnealSweeps = 20;
inline constexpr double kAnnealAccuracy = 1e-2;

// Squared diagonal of the joint bounding box.
inline double squared_diameter(const Points& a, const Points& b) {
  const Eigen::RowVectorXd lo = a.colwise().minCoeff().cwiseMin(b.colwise().minCoeff());
  const Eigen::RowVectorXd hi = a.colwise().maxCoeff().cwiseMax(b.colwise().maxCoeff());
  return (hi - lo).squaredNorm();
}

// ε levels of the warm-up, strictly above the target ε, in decreasing order.
inline std::vector<double> annealing_levels(double diam_sq, double eps, double ratio) {
  std::vector<double> levels;
  if (ratio <= 0.0) return levels;
  for (double level = diam_sq; level > eps && levels.size() < 200; level *= ratio) levels.push_back(level);
  return levels;
}

// (1/(n·m)) Σ_j exp((f_i + g_j − C_ij)/ε) · 2(x_i − y_j), row by row.
inline Points transport_gradient(const Points& x, const Points& y, const Eigen::VectorXd& f,
                                 const Eigen::VectorXd& g, double eps) {
  const Index n = x.rows();
  const Index m = y.rows();
  const Index d = x.cols();
  const ColumnPoints cols = to_columns(y);
  const double inv_eps = 1.0 / eps;
  const double scale = 2.0 / (static_cast<double>(n) * static_cast<double>(m));
  Points grad(n, d);
  parallel_for(n, [&](Index lo, Index hi) {
    Eigen::ArrayXd row(m);
    for (Index i = lo; i < hi; ++i) {
      squared_distances(x.row(i).data(), cols, row);
      row = clamped_exp((f[i] + g.array() - row) * inv_eps);
      const double mass = row.sum();
      const Eigen::RowVectorXd pulled = row.matrix().transpose() * y;
      grad.row(i) = scale * (mass * x.row(i) - pulled);
    }
  });
  return grad;
}

// Σ_j exp(−‖x_i − y_j‖²/(2θ²)) (x_i − y_j) for every i, plus the total kernel sum.
inline std::pair<Points, double> gaussian_pull(const Points& x, const Points& y, double theta) {
  const Index n = x.rows();
  const Index m = y.rows();
  const ColumnPoints cols = to_columns(y);
  const double inv2t2 = 1.0 / (2.0 * theta * theta);
  Points out(n, x.cols());
  Eigen::VectorXd row_sums(n);
  parallel_for(n, [&](Index lo, Index hi) {
    Eigen::ArrayXd row(m);
    for (Index i = lo; i < hi; ++i) {
      gaussian_row(x.row(i).data(), cols, inv2t2, 1.0, row);
      const double mass = row.sum();
      const Eigen::RowVectorXd pulled = row.matrix().transpose() * y;
      out.row(i) = mass * x.row(i) - pulled;
      row_sums[i] = mass;
    }
  });
  return {std::move(out), row_sums.sum()};
}

inline double gaussian_mean(const Points& x, const Points& y, double theta) {
  return gaussian_pull(x, y, theta).second / (static_cast<double>(x.rows()) * static_cast<double>(y.rows()));
}

}  // namespace detail

/// Symmetric fixed point f = −ε·logmeanexp((f − C)/ε) of the self problem T_ε(α, α),
/// reached by the damped update f ← ½f + ½(−ε·logmeanexp). Returned with g = f.
inline DualPotentials symmetric_potential(const Points& points, double epsilon, const SinkhornOptions& opt) {
  detail::check_clouds(points, points, epsilon);
  detail::check_options(opt);
  const detail::ColumnPoints cols = detail::to_columns(points);
  DualPotentials pot;
  pot.epsilon = epsilon;
  pot.f = Eigen::VectorXd::Zero(points.rows());
  Eigen::VectorXd next;
  if (opt.initial != nullptr && opt.initial->size() == points.rows()) {
    pot.f = *opt.initial;
  } else {
    for (double level : detail::annealing_levels(detail::squared_diameter(points, points), epsilon, opt.eps_scaling)) {
      detail::soft_c_transform(points, cols, pot.f, level, next);
      pot.f = 0.5 * (pot.f + next);
      detail::check_potentials_finite(pot.f, 0);
    }
  }
  for (int it = 1; it <= opt.max_iter; ++it) {
    detail::soft_c_transform(points, cols, pot.f, epsilon, next);
    detail::check_potentials_finite(next, it);
    const double residual = (next - pot.f).lpNorm<Eigen::Infinity>();
    pot.iterations = it;
    pot.residual = residual;
    if (residual < opt.tol) {
      pot.f = next;
      pot.converged = true;
      break;
    }
    pot.f = 0.5 * (pot.f + next);
  }
  pot.g = pot.f;
  return pot;
}

inline DualPotentials symmetric_potential(const Points& points, double epsilon, double tol = 1e-6,
                                          int max_iter = 10000) {
  SinkhornOptions opt;
  opt.tol = tol;
  opt.max_iter = max_iter;
  return symmetric_potential(points, epsilon, opt);
}

/// Log-domain Sinkhorn between uniform measures on `source` and `target`.
///
/// Alternates f ← −ε·logmeanexp_j((g_j − C_ij)/ε) and g ← −ε·logmeanexp_i((f_i − C_ij)/ε)
/// until the sup-norm change of both potentials drops below `tol`. The returned pair is
/// gauge-fixed so that mean(f) = mean(g). `iterations` counts updates at the target ε.
///
/// Identical supports are handed to `symmetric_potential`: its fixed point with g = f
/// is the gauge-fixed cross solution, and the alternating sweeps crawl there when
/// the plan is close to the identity.
inline DualPotentials sinkhorn_potentials(const Points& source, const Points& target, double epsilon,
                                          const SinkhornOptions& opt) {
  detail::check_clouds(source, target, epsilon);
  detail::check_options(opt);
  if (source.rows() == target.rows() && source == target) return symmetric_potential(source, epsilon, opt);
  const detail::ColumnPoints src_cols = detail::to_columns(source);
  const detail::ColumnPoints tgt_cols = detail::to_columns(target);

  DualPotentials pot;
  pot.epsilon = epsilon;
  pot.f = Eigen::VectorXd::Zero(source.rows());
  pot.g = Eigen::VectorXd::Zero(target.rows());
  Eigen::VectorXd f_next;
  Eigen::VectorXd g_next;
  if (opt.initial != nullptr && opt.initial->size() == target.rows()) {
    pot.g = *opt.initial;
  } else {
    for (double level : detail::annealing_levels(detail::squared_diameter(source, target), epsilon, opt.eps_scaling)) {
      // A few sweeps per level, until the update is small relative to the level.
      for (int k = 0; k < detail::kAnnealSweeps; ++k) {
        detail::soft_c_transform(source, tgt_cols, pot.g, level, f_next);
        detail::soft_c_transform(target, src_cols, f_next, level, g_next);
        detail::check_potentials_finite(g_next, 0);
        const double change = std::max((f_next - pot.f).lpNorm<Eigen::Infinity>(),
                                       (g_next - pot.g).lpNorm<Eigen::Infinity>());
        pot.f.swap(f_next);
        pot.g.swap(g_next);
        ++pot.warmup_sweeps;
        if (change < detail::kAnnealAccuracy * level) break;
      }
    }
  }
  detail::Overrelaxation relax(opt.overrelaxation);
  Eigen::VectorXd f_saved;
  Eigen::VectorXd g_saved;
  for (int it = 1; it <= opt.max_iter; ++it) {
    const double w = relax.omega();
    detail::soft_c_transform(source, tgt_cols, pot.g, epsilon, f_next);
    if (w != 1.0) f_next = (1.0 - w) * pot.f + w * f_next;
    detail::soft_c_transform(target, src_cols, f_next, epsilon, g_next);
    if (w != 1.0) g_next = (1.0 - w) * pot.g + w * g_next;
    const double residual = std::max((f_next - pot.f).lpNorm<Eigen::Infinity>(),
                                     (g_next - pot.g).lpNorm<Eigen::Infinity>());
    if (!std::isfinite(residual) && w != 1.0) {
      // Overrelaxation diverged: restart plainly from the last safe state.
      relax.abort();
      pot.f = f_saved;
      pot.g = g_saved;
      continue;
    }
    detail::check_potentials_finite(f_next, it);
    detail::check_potentials_finite(g_next, it);
    pot.f.swap(f_next);
    pot.g.swap(g_next);
    pot.iterations = it;
    pot.residual = residual;
    if (residual < opt.tol) {
      pot.converged = true;
      break;
    }
    switch (relax.observe(residual)) {
      case detail::Overrelaxation::Event::engaged:
        f_saved = pot.f;
        g_saved = pot.g;
        break;
      case detail::Overrelaxation::Event::diverged:
        pot.f = f_saved;
        pot.g = g_saved;
        break;
      case detail::Overrelaxation::Event::none: break;
    }
  }
  if (relax.used()) {
    // Restore exact second-marginal feasibility after relaxed sweeps.
    detail::soft_c_transform(target, src_cols, pot.f, epsilon, pot.g);
  }
  const double gauge = 0.5 * (pot.f.mean() - pot.g.mean());
  pot.f.array() -= gauge;
  pot.g.array() += gauge;
  return pot;
}

inline DualPotentials sinkhorn_potentials(const Points& source, const Points& target, double epsilon,
                                          double tol = 1e-6, int max_iter = 10000) {
  SinkhornOptions opt;
  opt.tol = tol;
  opt.max_iter = max_iter;
  return sinkhorn_potentials(source, target, epsilon, opt);
}

/// (α ⊗ β)(h^{f,g}) = mean(f) + mean(g) − ε·mean_ij exp((f_i + g_j − C_ij)/ε) + ε.
inline double global_potential_mean(const DualPotentials& pot, const Points& source, const Points& target) {
  const Index m = target.rows();
  const detail::ColumnPoints cols = detail::to_columns(target);
  const double inv_eps = 1.0 / pot.epsilon;
  Eigen::VectorXd row_mass(source.rows());
  detail::parallel_for(source.rows(), [&](Index lo, Index hi) {
    Eigen::ArrayXd row(m);
    for (Index i = lo; i < hi; ++i) {
      detail::squared_distances(source.row(i).data(), cols, row);
      row_mass[i] = detail::clamped_exp((pot.f[i] + pot.g.array() - row) * inv_eps).sum();
    }
  });
  const double gamma_mean = row_mass.sum() / (static_cast<double>(source.rows()) * static_cast<double>(m));
  return pot.f.mean() + pot.g.mean() - pot.epsilon * gamma_mean + pot.epsilon;
}

/// Dual value at exact optimality, where the coupling integrates to one.
inline double dual_value(const DualPotentials& pot) { return pot.f.mean() + pot.g.mean(); }

/// Entropy-regularized transport cost T_ε(α, β).
inline double entropic_cost(const Points& source, const Points& target, double epsilon, double tol = 1e-6,
                            int max_iter = 10000) {
  return dual_value(sinkhorn_potentials(source, target, epsilon, tol, max_iter));
}

/// Self cost T_ε(α, α) from the symmetric potential.
inline double self_entropic_cost(const Points& points, double epsilon, double tol = 1e-6, int max_iter = 10000) {
  return dual_value(symmetric_potential(points, epsilon, tol, max_iter));
}

/// Debiased S_ε(α, β) = T_ε(α, β) − ½T_ε(α, α) − ½T_ε(β, β).
inline double sinkhorn_divergence(const Points& source, const Points& target, double epsilon, double tol = 1e-6,
                                  int max_iter = 10000) {
  return entropic_cost(source, target, epsilon, tol, max_iter) -
         0.5 * self_entropic_cost(source, epsilon, tol, max_iter) -
         0.5 * self_entropic_cost(target, epsilon, tol, max_iter);
}

/// Squared MMD with the unnormalized kernel exp(−‖u − v‖²/(2θ²)).
inline double mmd_sq(const Points& source, const Points& target, double theta) {
  if (!(theta > 0.0)) throw ConfigError("mmd_sq: theta must be positive");
  if (source.cols() != target.cols()) throw ConfigError("mmd_sq: dimension mismatch");
  return detail::gaussian_mean(source, source, theta) + detail::gaussian_mean(target, target, theta) -
         2.0 * detail::gaussian_mean(source, target, theta);
}

/// ∇_x T_ε(α, β) from converged potentials of the (source, target) problem.
inline Points entropic_cost_gradient(const Points& source, const Points& target, const DualPotentials& pot) {
  if (!pot.converged) throw ConvergenceError("refusing gradient: Sinkhorn potentials did not converge");
  return detail::transport_gradient(source, target, pot.f, pot.g, pot.epsilon);
}

/// ∇_x S_ε(α, β) = ∇_x T_ε(α, β) − ½∇_x T_ε(α, α).
inline Points sinkhorn_divergence_gradient(const Points& source, const Points& target, const DualPotentials& cross,
                                           const DualPotentials& self) {
  if (!cross.converged || !self.converged) {
    throw ConvergenceError("refusing gradient: Sinkhorn potentials did not converge");
  }
  // Moving x_i changes both marginals of the self problem; the two contributions
  // cancel the ½ in front of T_ε(α, α).
  return detail::transport_gradient(source, target, cross.f, cross.g, cross.epsilon) -
         detail::transport_gradient(source, source, self.f, self.f, self.epsilon);
}

inline Points mmd_sq_gradient(const Points& source, const Points& target, double theta) {
  const double n = static_cast<double>(source.rows());
  const double m = static_cast<double>(target.rows());
  const double inv_t2 = 1.0 / (theta * theta);
  const Points self_pull = detail::gaussian_pull(source, source, theta).first;
  const Points cross_pull = detail::gaussian_pull(source, target, theta).first;
  return (-2.0 * inv_t2 / (n * n)) * self_pull + (2.0 * inv_t2 / (n * m)) * cross_pull;
}

/// Loss value and (optionally) gradient with respect to the source points.
struct LossEvaluation {
  double value = 0.0;
  Points gradient;
  bool converged = true;
  int sinkhorn_iterations = 0;
};

/// Data-fidelity loss bound to a fixed target measure.
///
/// Caches the target-only terms (T_ε(β, β) or the MMD target mean). With
/// `warm_start` enabled each Sinkhorn solve is seeded with the previous
/// potentials; it still iterates to the configured tolerance.
class FidelityLoss {
 public:
  FidelityLoss(LossConfig cfg, Points target, bool warm_start = false)
      : cfg_(cfg), target_(std::move(target)), warm_start_(warm_start) {
    cfg_.validate();
    if (target_.rows() < 1) throw ConfigError("fidelity loss: empty target");
    switch (cfg_.kind) {
      case LossKind::sinkhorn_divergence: {
        const DualPotentials self = symmetric_potential(target_, cfg_.epsilon, cfg_.sinkhorn_options());
        target_term_ = dual_value(self);
        target_converged_ = self.converged;
        break;
      }
      case LossKind::mmd_sq: target_term_ = detail::gaussian_mean(target_, target_, cfg_.theta); break;
      case LossKind::entropic_cost: target_term_ = 0.0; break;
    }
  }

  const LossConfig& config() const noexcept { return cfg_; }
  const Points& target() const noexcept { return target_; }

  LossEvaluation evaluate(const Points& source, bool with_gradient) {
    if (source.cols() != target_.cols()) throw ConfigError("fidelity loss: dimension mismatch");
    LossEvaluation out;
    switch (cfg_.kind) {
      case LossKind::mmd_sq: {
        out.value = detail::gaussian_mean(source, source, cfg_.theta) + target_term_ -
                    2.0 * detail::gaussian_mean(source, target_, cfg_.theta);
        if (with_gradient) out.gradient = mmd_sq_gradient(source, target_, cfg_.theta);
        break;
      }
      case LossKind::entropic_cost: {
        DualPotentials cross = solve_cross(source);
        out.value = dual_value(cross);
        out.converged = cross.converged;
        out.sinkhorn_iterations = cross.iterations;
        if (with_gradient) out.gradient = entropic_cost_gradient(source, target_, cross);
        break;
      }
      case LossKind::sinkhorn_divergence: {
        DualPotentials cross = solve_cross(source);
        DualPotentials self = solve_self(source);
        out.value = dual_value(cross) - 0.5 * dual_value(self) - 0.5 * target_term_;
        out.converged = cross.converged && self.converged && target_converged_;
        out.sinkhorn_iterations = cross.iterations + self.iterations;
        if (with_gradient) out.gradient = sinkhorn_divergence_gradient(source, target_, cross, self);
        break;
      }
    }
    if (!std::isfinite(out.value)) throw NumericError("fidelity loss evaluated to a non-finite value");
    return out;
  }

  double value(const Points& source) { return evaluate(source, false).value; }

 private:
  DualPotentials solve_cross(const Points& source) {
    const Eigen::VectorXd* seed = (warm_start_ && last_g_) ? &*last_g_ : nullptr;
    DualPotentials pot;
    if (seed != nullptr) {
      // At small ε a seed from a distant configuration crawls; give it the sweeps
      // of the last cold solve, then start over with annealing.
      SinkhornOptions opt = cfg_.sinkhorn_options(seed);
      opt.max_iter = std::min(opt.max_iter, cold_sweeps_);
      pot = sinkhorn_potentials(source, target_, cfg_.epsilon, opt);
    }
    if (!pot.converged) {
      pot = sinkhorn_potentials(source, target_, cfg_.epsilon, cfg_.sinkhorn_options());
      cold_sweeps_ = std::max(1, pot.warmup_sweeps + pot.iterations);
    }
    if (warm_start_) last_g_ = pot.g;
    return pot;
  }

  DualPotentials solve_self(const Points& source) {
    const Eigen::VectorXd* seed = (warm_start_ && last_self_) ? &*last_self_ : nullptr;
    DualPotentials pot = symmetric_potential(source, cfg_.epsilon, cfg_.sinkhorn_options(seed));
    if (seed != nullptr && !pot.converged) pot = symmetric_potential(source, cfg_.epsilon, cfg_.sinkhorn_options());
    if (warm_start_) last_self_ = pot.f;
    return pot;
  }

  LossConfig cfg_;
  Points target_;
  bool warm_start_ = false;
  int cold_sweeps_ = 1;
  double target_term_ = 0.0;
  bool target_converged_ = true;
  std::optional<Eigen::VectorXd> last_g_;
  std::optional<Eigen::VectorXd> last_self_;
};

/// Loss value for a one-off evaluation.
inline double loss_value(const LossConfig& cfg, const Points& source, const Points& target) {
  FidelityLoss loss(cfg, target);
  return loss.value(source);
}

/// n×d gradient of the loss with respect to the source points.
inline Points loss_gradient_points(const LossConfig& cfg, const Points& source, const Points& target) {
  FidelityLoss loss(cfg, target);
  return loss.evaluate(source, true).gradient;
}

}  // namespace lddmm
