#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lddmm/detail/pairwise.hpp"
#include "lddmm/detail/parallel.hpp"
#include "lddmm/errors.hpp"
#include "lddmm/kernels.hpp"
#include "lddmm/ot_losses.hpp"
#include "lddmm/point_cloud.hpp"

// Discrete LDDMM on point clouds. Time runs over the grid t/τ, t = 0..τ, with
// explicit Euler steps of size h = 1/τ and left-endpoint velocities
//
//   z[t+1]_i = z[t]_i + h Σ_j K(z[t]_i, z[t]_j) a[t]_j.
//
// Two parameterizations of the momentum are supported: a free time-dependent
// field a[0..τ] (GDM, gradient descent on momenta) and geodesic shooting from a[0].

namespace lddmm {

/// Time discretization and regularization shared by both solvers.
struct FlowConfig {
  KernelConfig kernel;
  int tau = 16;
  double lambda = 1e-8;

  void validate() const {
    kernel.validate();
    if (tau < 1) throw ConfigError("tau must be at least 1, got " + std::to_string(tau));
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be non-negative");
  }
  double step() const { return 1.0 / static_cast<double>(tau); }
};

/// a[t], t = 0..τ, each n×d.
struct MomentumField {
  std::vector<Points> a;

  static MomentumField zeros(int tau, Index n, Index d) {
    MomentumField out;
    out.a.assign(static_cast<std::size_t>(tau + 1), Points::Zero(n, d));
    return out;
  }

  int tau() const { return static_cast<int>(a.size()) - 1; }
  Index size() const { return a.empty() ? 0 : a.front().rows(); }
  Index dim() const { return a.empty() ? 0 : a.front().cols(); }

  void validate(Index n, Index d) const {
    if (a.size() < 2) throw ConfigError("momentum field needs at least two time slices");
    for (std::size_t t = 0; t < a.size(); ++t) {
      if (a[t].rows() != n || a[t].cols() != d) {
        throw ConfigError("momentum slice " + std::to_string(t) + " has shape " + std::to_string(a[t].rows()) + "x" +
                          std::to_string(a[t].cols()) + ", expected " + std::to_string(n) + "x" +
                          std::to_string(d));
      }
      if (!a[t].allFinite()) throw NumericError("momentum slice " + std::to_string(t) + " is not finite");
    }
  }

  Eigen::VectorXd flatten() const {
    const Index block = size() * dim();
    Eigen::VectorXd out(block * static_cast<Index>(a.size()));
    for (std::size_t t = 0; t < a.size(); ++t) {
      out.segment(static_cast<Index>(t) * block, block) = Eigen::Map<const Eigen::VectorXd>(a[t].data(), block);
    }
    return out;
  }

  static MomentumField unflatten(const Eigen::VectorXd& x, int tau, Index n, Index d) {
    const Index block = n * d;
    if (x.size() != block * (tau + 1)) throw ConfigError("momentum vector has the wrong length");
    MomentumField out;
    out.a.reserve(static_cast<std::size_t>(tau + 1));
    for (int t = 0; t <= tau; ++t) {
      out.a.emplace_back(Eigen::Map<const Points>(x.data() + t * block, n, d));
    }
    return out;
  }
};

inline Eigen::VectorXd flatten_points(const Points& p) { return Eigen::Map<const Eigen::VectorXd>(p.data(), p.size()); }

inline Points unflatten_points(const Eigen::VectorXd& x, Index n, Index d) {
  if (x.size() != n * d) throw ConfigError("point vector has the wrong length");
  return Eigen::Map<const Points>(x.data(), n, d);
}

/// Control trajectories z[0..τ] with the momenta a[0..τ] that generated them.
/// a[τ] is carried for completeness but never moves anything.
struct TrajectoryBundle {
  std::vector<Points> z;
  std::vector<Points> a;
  KernelConfig kernel;

  int tau() const { return static_cast<int>(z.size()) - 1; }
  const Points& sources() const { return z.front(); }
  const Points& endpoint() const { return z.back(); }
  Index size() const { return z.empty() ? 0 : z.front().rows(); }
  Index dim() const { return z.empty() ? 0 : z.front().cols(); }

  void validate() const {
    if (z.size() < 2 || z.size() != a.size()) throw ConfigError("trajectory bundle needs tau+1 frames of z and a");
    for (std::size_t t = 0; t < z.size(); ++t) {
      if (z[t].rows() != size() || z[t].cols() != dim() || a[t].rows() != size() || a[t].cols() != dim()) {
        throw ConfigError("trajectory bundle frame " + std::to_string(t) + " has inconsistent shape");
      }
    }
    kernel.validate();
  }
};

namespace detail {

inline void check_finite_step(const Points& p, const char* what, int t) {
  if (!p.allFinite()) {
    throw NumericError(std::string(what) + " became non-finite at time step " + std::to_string(t));
  }
}

// One Hamiltonian Euler step of the momenta:
// a'_k = a_k + (h/σ²) Σ_j (a_k·a_j) K(z_k, z_j) (z_k − z_j).
inline Points momentum_step(const Points& z, const Points& a, const KernelConfig& cfg, double h) {
  const Index n = z.rows();
  const Index d = z.cols();
  const ColumnPoints zc = to_columns(z);
  const ColumnPoints ac = to_columns(a);
  const double scale = cfg.normalization();
  const double inv2s2 = cfg.inv_two_sigma_sq();
  const double coef = h * cfg.inv_sigma_sq();
  Points out(n, d);
  parallel_for(n, [&](Index lo, Index hi) {
    Eigen::ArrayXd k(n);
    Eigen::ArrayXd w(n);
    for (Index i = lo; i < hi; ++i) {
      gaussian_row(z.row(i).data(), zc, inv2s2, scale, k);
      w.setZero();
      for (Index c = 0; c < d; ++c) w += ac.col(c).array() * a(i, c);
      w *= k;
      const double total = w.sum();
      for (Index c = 0; c < d; ++c) {
        out(i, c) = a(i, c) + coef * (total * z(i, c) - (w * zc.col(c).array()).sum());
      }
    }
  });
  return out;
}

// Backward step of the time-dependent (GDM) costate:
// P_k = P'_k − (h/σ²) Σ_j K_kj (z_k − z_j) [P'_k·a_j + P'_j·a_k + 2λ a_k·a_j].
inline Points gdm_costate_step(const Points& z, const Points& a, const Points& next, const KernelConfig& cfg, double h,
                               double lambda) {
  const Index n = z.rows();
  const Index d = z.cols();
  const ColumnPoints zc = to_columns(z);
  const ColumnPoints ac = to_columns(a);
  const ColumnPoints pc = to_columns(next);
  const double scale = cfg.normalization();
  const double inv2s2 = cfg.inv_two_sigma_sq();
  const double coef = h * cfg.inv_sigma_sq();
  Points out(n, d);
  parallel_for(n, [&](Index lo, Index hi) {
    Eigen::ArrayXd k(n);
    Eigen::ArrayXd w(n);
    for (Index i = lo; i < hi; ++i) {
      gaussian_row(z.row(i).data(), zc, inv2s2, scale, k);
      w.setZero();
      for (Index c = 0; c < d; ++c) {
        w += ac.col(c).array() * (next(i, c) + 2.0 * lambda * a(i, c)) + pc.col(c).array() * a(i, c);
      }
      w *= k;
      const double total = w.sum();
      for (Index c = 0; c < d; ++c) {
        out(i, c) = next(i, c) - coef * (total * z(i, c) - (w * zc.col(c).array()).sum());
      }
    }
  });
  return out;
}

// Backward step of the shooting adjoint. (zbar, abar) are the cosensitivities of
// (z[t+1], a[t+1]); returns those of (z[t], a[t]).
inline std::pair<Points, Points> shooting_adjoint_step(const Points& z, const Points& a, const Points& zbar,
                                                       const Points& abar, const KernelConfig& cfg, double h) {
  const Index n = z.rows();
  const Index d = z.cols();
  const ColumnPoints zc = to_columns(z);
  const ColumnPoints ac = to_columns(a);
  const ColumnPoints zbc = to_columns(zbar);
  const ColumnPoints abc = to_columns(abar);
  const double scale = cfg.normalization();
  const double inv2s2 = cfg.inv_two_sigma_sq();
  const double inv_s2 = cfg.inv_sigma_sq();
  const double coef = h * inv_s2;
  Points out_z(n, d);
  Points out_a(n, d);
  parallel_for(n, [&](Index lo, Index hi) {
    Eigen::ArrayXd k(n);
    Eigen::ArrayXd aa(n);    // a_k·a_j
    Eigen::ArrayXd mixed(n); // Z'_k·a_j + Z'_j·a_k
    Eigen::ArrayXd br(n);    // (A'_k − A'_j)·(z_k − z_j)
    Eigen::ArrayXd w(n);
    for (Index i = lo; i < hi; ++i) {
      gaussian_row(z.row(i).data(), zc, inv2s2, scale, k);
      aa.setZero();
      mixed.setZero();
      br.setZero();
      for (Index c = 0; c < d; ++c) {
        aa += ac.col(c).array() * a(i, c);
        mixed += ac.col(c).array() * zbar(i, c) + zbc.col(c).array() * a(i, c);
        br += (abar(i, c) - abc.col(c).array()) * (z(i, c) - zc.col(c).array());
      }
      const Eigen::ArrayXd s = aa * k;
      // Position cosensitivity: flow term, then the momentum-update term
      // Σ_j s_kj [B_kj − (B_kj·r_kj) r_kj/σ²] expanded as weighted sums.
      w = k * mixed + s * br * inv_s2;
      const double w_total = w.sum();
      const double s_total = s.sum();
      for (Index c = 0; c < d; ++c) {
        const double flow_and_curv = w_total * z(i, c) - (w * zc.col(c).array()).sum();
        const double spread = s_total * abar(i, c) - (s * abc.col(c).array()).sum();
        out_z(i, c) = zbar(i, c) - coef * flow_and_curv + coef * spread;
      }
      const Eigen::ArrayXd kb = k * br;
      for (Index c = 0; c < d; ++c) {
        out_a(i, c) = abar(i, c) + h * (k * zbc.col(c).array()).sum() + coef * (kb * ac.col(c).array()).sum();
      }
    }
  });
  return {std::move(out_z), std::move(out_a)};
}

}  // namespace detail

/// Explicit Euler integration of the control trajectories for a given momentum field.
inline TrajectoryBundle integrate_trajectories(const MomentumField& a, const Points& sources, const KernelConfig& cfg) {
  cfg.validate();
  a.validate(sources.rows(), sources.cols());
  const int tau = a.tau();
  const double h = 1.0 / static_cast<double>(tau);
  TrajectoryBundle out;
  out.kernel = cfg;
  out.a = a.a;
  out.z.reserve(static_cast<std::size_t>(tau + 1));
  out.z.push_back(sources);
  for (int t = 0; t < tau; ++t) {
    const Points& z = out.z.back();
    Points next = z + h * velocity_field(z, z, a.a[static_cast<std::size_t>(t)], cfg);
    detail::check_finite_step(next, "trajectory", t + 1);
    out.z.push_back(std::move(next));
  }
  return out;
}

/// h Σ_{t<τ} Σ_ij a[t]_i·K(z[t]_i, z[t]_j) a[t]_j, the left-endpoint discretization of ∫‖v_t‖²_V dt.
inline double path_kinetic_energy(const TrajectoryBundle& bundle) {
  const int tau = bundle.tau();
  double total = 0.0;
  for (int t = 0; t < tau; ++t) {
    const auto s = static_cast<std::size_t>(t);
    total += quadratic_energy(bundle.a[s], bundle.z[s], bundle.kernel);
  }
  return total / static_cast<double>(tau);
}

/// Geodesic shooting: Euler integration of the Hamiltonian system started at (sources, a0).
inline TrajectoryBundle shoot(const Points& a0, const Points& sources, const KernelConfig& cfg, int tau) {
  cfg.validate();
  if (tau < 1) throw ConfigError("tau must be at least 1");
  if (a0.rows() != sources.rows() || a0.cols() != sources.cols()) throw ConfigError("shoot: momentum shape mismatch");
  if (!a0.allFinite()) throw NumericError("shoot: initial momentum is not finite");
  const double h = 1.0 / static_cast<double>(tau);
  TrajectoryBundle out;
  out.kernel = cfg;
  out.z.reserve(static_cast<std::size_t>(tau + 1));
  out.a.reserve(static_cast<std::size_t>(tau + 1));
  out.z.push_back(sources);
  out.a.push_back(a0);
  for (int t = 0; t < tau; ++t) {
    const Points& z = out.z.back();
    const Points& a = out.a.back();
    Points z_next = z + h * velocity_field(z, z, a, cfg);
    Points a_next = detail::momentum_step(z, a, cfg, h);
    detail::check_finite_step(z_next, "shooting trajectory", t + 1);
    detail::check_finite_step(a_next, "shooting momentum", t + 1);
    out.z.push_back(std::move(z_next));
    out.a.push_back(std::move(a_next));
  }
  return out;
}

/// Objective value split into its two terms.
struct EnergyParts {
  double fidelity = 0.0;
  double kinetic = 0.0;
  double total(double lambda) const { return fidelity + lambda * kinetic; }
};

/// Time-dependent (GDM) objective over the flattened momentum field.
///
/// The Euclidean gradient is the exact discrete adjoint of the Euler scheme. The
/// `kernel_preconditioned` direction drops the h·K(z[t]) factor in front of each
/// slice, giving the RKHS-gradient form 2λa[t] − p[t+1] with costate p = −P.
class GdmObjective {
 public:
  enum class Direction { euclidean, kernel_preconditioned };

  GdmObjective(FidelityLoss& loss, Points sources, FlowConfig flow, Direction dir = Direction::euclidean)
      : loss_(loss), sources_(std::move(sources)), flow_(flow), dir_(dir) {
    flow_.validate();
    if (sources_.cols() != loss_.target().cols()) throw ConfigError("source and target dimensions differ");
  }

  Index parameter_count() const { return sources_.size() * (flow_.tau + 1); }
  const Points& sources() const { return sources_; }
  const FlowConfig& flow() const { return flow_; }

  MomentumField unpack(const Eigen::VectorXd& x) const {
    return MomentumField::unflatten(x, flow_.tau, sources_.rows(), sources_.cols());
  }

  EnergyParts parts(const MomentumField& a) {
    const TrajectoryBundle bundle = integrate_trajectories(a, sources_, flow_.kernel);
    return {loss_.evaluate(bundle.endpoint(), false).value, path_kinetic_energy(bundle)};
  }

  double operator()(const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    const MomentumField a = unpack(x);
    const TrajectoryBundle bundle = integrate_trajectories(a, sources_, flow_.kernel);
    const LossEvaluation fid = loss_.evaluate(bundle.endpoint(), grad != nullptr);
    last_ = {fid.value, path_kinetic_energy(bundle)};
    if (grad != nullptr) *grad = gradient(bundle, fid.gradient).flatten();
    return last_.total(flow_.lambda);
  }

  /// Gradient slices for a bundle given ∇Λ at its endpoint.
  MomentumField gradient(const TrajectoryBundle& bundle, const Points& terminal) const {
    const int tau = flow_.tau;
    const double h = flow_.step();
    const double lambda = flow_.lambda;
    MomentumField out = MomentumField::zeros(tau, sources_.rows(), sources_.cols());
    Points costate = terminal;
    for (int t = tau - 1; t >= 0; --t) {
      const auto s = static_cast<std::size_t>(t);
      const Points field = costate + 2.0 * lambda * bundle.a[s];
      if (dir_ == Direction::euclidean) {
        out.a[s] = h * velocity_field(bundle.z[s], bundle.z[s], field, flow_.kernel);
      } else {
        out.a[s] = field;
      }
      if (t > 0) {
        costate = detail::gdm_costate_step(bundle.z[s], bundle.a[s], costate, flow_.kernel, h, lambda);
        detail::check_finite_step(costate, "costate", t);
      }
    }
    return out;
  }

  const EnergyParts& last() const { return last_; }

 private:
  FidelityLoss& loss_;
  Points sources_;
  FlowConfig flow_;
  Direction dir_;
  EnergyParts last_;
};

/// Shooting objective over the flattened initial momentum a0:
/// Λ(z[τ], target) + λ Σ_ij a0_i·K(x_i, x_j) a0_j.
class ShootingObjective {
 public:
  ShootingObjective(FidelityLoss& loss, Points sources, FlowConfig flow)
      : loss_(loss), sources_(std::move(sources)), flow_(flow) {
    flow_.validate();
    if (sources_.cols() != loss_.target().cols()) throw ConfigError("source and target dimensions differ");
  }

  Index parameter_count() const { return sources_.size(); }
  const Points& sources() const { return sources_; }
  const FlowConfig& flow() const { return flow_; }

  Points unpack(const Eigen::VectorXd& x) const { return unflatten_points(x, sources_.rows(), sources_.cols()); }

  EnergyParts parts(const Points& a0) {
    const TrajectoryBundle bundle = shoot(a0, sources_, flow_.kernel, flow_.tau);
    return {loss_.evaluate(bundle.endpoint(), false).value, quadratic_energy(a0, sources_, flow_.kernel)};
  }

  double operator()(const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    const Points a0 = unpack(x);
    const TrajectoryBundle bundle = shoot(a0, sources_, flow_.kernel, flow_.tau);
    const LossEvaluation fid = loss_.evaluate(bundle.endpoint(), grad != nullptr);
    const Points ka = velocity_field(sources_, sources_, a0, flow_.kernel);
    last_ = {fid.value, (ka.array() * a0.array()).sum()};
    if (grad != nullptr) *grad = flatten_points(gradient(bundle, fid.gradient, &ka));
    return last_.total(flow_.lambda);
  }

  /// Reverse sweep seeded with ∇Λ at z[τ] (zero cosensitivity for a[τ]).
  Points gradient(const TrajectoryBundle& bundle, const Points& terminal, const Points* kernel_a0 = nullptr) const {
    const double h = flow_.step();
    Points zbar = terminal;
    Points abar = Points::Zero(terminal.rows(), terminal.cols());
    for (int t = flow_.tau - 1; t >= 0; --t) {
      const auto s = static_cast<std::size_t>(t);
      auto [zb, ab] = detail::shooting_adjoint_step(bundle.z[s], bundle.a[s], zbar, abar, flow_.kernel, h);
      detail::check_finite_step(ab, "shooting adjoint", t);
      zbar = std::move(zb);
      abar = std::move(ab);
    }
    if (flow_.lambda != 0.0) {
      const Points ka = kernel_a0 ? *kernel_a0 : velocity_field(sources_, sources_, bundle.a.front(), flow_.kernel);
      abar += 2.0 * flow_.lambda * ka;
    }
    return abar;
  }

  const EnergyParts& last() const { return last_; }

 private:
  FidelityLoss& loss_;
  Points sources_;
  FlowConfig flow_;
  EnergyParts last_;
};

inline double energy_gdm(const MomentumField& a, const Points& sources, FidelityLoss& loss, const FlowConfig& flow) {
  GdmObjective obj(loss, sources, flow);
  return obj.parts(a).total(flow.lambda);
}

inline double energy_gdm(const MomentumField& a, const Points& sources, const Points& target, const LossConfig& loss,
                         const FlowConfig& flow) {
  FidelityLoss fidelity(loss, target);
  return energy_gdm(a, sources, fidelity, flow);
}

inline MomentumField grad_gdm(const MomentumField& a, const Points& sources, const Points& target,
                              const LossConfig& loss, const FlowConfig& flow,
                              GdmObjective::Direction dir = GdmObjective::Direction::euclidean) {
  FidelityLoss fidelity(loss, target);
  GdmObjective obj(fidelity, sources, flow, dir);
  Eigen::VectorXd g;
  obj(a.flatten(), &g);
  return obj.unpack(g);
}

inline double energy_shooting(const Points& a0, const Points& sources, FidelityLoss& loss, const FlowConfig& flow) {
  ShootingObjective obj(loss, sources, flow);
  return obj.parts(a0).total(flow.lambda);
}

inline double energy_shooting(const Points& a0, const Points& sources, const Points& target, const LossConfig& loss,
                              const FlowConfig& flow) {
  FidelityLoss fidelity(loss, target);
  return energy_shooting(a0, sources, fidelity, flow);
}

inline Points grad_shooting(const Points& a0, const Points& sources, const Points& target, const LossConfig& loss,
                            const FlowConfig& flow) {
  FidelityLoss fidelity(loss, target);
  ShootingObjective obj(fidelity, sources, flow);
  Eigen::VectorXd g;
  obj(flatten_points(a0), &g);
  return obj.unpack(g);
}

/// Pushes new points through the first t velocity fields of the bundle, updating
/// the points between steps: x ← x + h Σ_j K(x, z[s]_j) a[s]_j for s = 0..t−1.
inline Points apply_deformation(const Points& points, const TrajectoryBundle& bundle, int t) {
  bundle.validate();
  if (t < 0 || t > bundle.tau()) {
    throw ConfigError("time index " + std::to_string(t) + " outside [0, " + std::to_string(bundle.tau()) + "]");
  }
  if (points.cols() != bundle.dim()) throw ConfigError("apply_deformation: dimension mismatch");
  const double h = 1.0 / static_cast<double>(bundle.tau());
  Points x = points;
  for (int s = 0; s < t; ++s) {
    const auto i = static_cast<std::size_t>(s);
    x += h * velocity_field(x, bundle.z[i], bundle.a[i], bundle.kernel);
    detail::check_finite_step(x, "deformed points", s + 1);
  }
  return x;
}

/// All frames x(0..τ) of a deformed cloud.
inline std::vector<Points> deformation_frames(const Points& points, const TrajectoryBundle& bundle) {
  bundle.validate();
  if (points.cols() != bundle.dim()) throw ConfigError("deformation_frames: dimension mismatch");
  const double h = 1.0 / static_cast<double>(bundle.tau());
  std::vector<Points> frames;
  frames.reserve(static_cast<std::size_t>(bundle.tau() + 1));
  frames.push_back(points);
  for (int s = 0; s < bundle.tau(); ++s) {
    const auto i = static_cast<std::size_t>(s);
    Points next = frames.back() + h * velocity_field(frames.back(), bundle.z[i], bundle.a[i], bundle.kernel);
    detail::check_finite_step(next, "deformed points", s + 1);
    frames.push_back(std::move(next));
  }
  return frames;
}

/// Approximate inverse of the full deformation: steps backwards through the
/// velocity fields. Each step takes the explicit predictor y = x − h v_s(x); with a
/// finite `tol` it is then refined by the fixed point y ← x − h v_s(y) until the
/// update is below tol (at most 100 sweeps). tol = ∞ keeps the explicit variant,
/// whose round-trip error is first order in 1/τ.
inline Points invert_deformation(const Points& points, const TrajectoryBundle& bundle,
                                 double tol = std::numeric_limits<double>::infinity()) {
  bundle.validate();
  if (points.cols() != bundle.dim()) throw ConfigError("invert_deformation: dimension mismatch");
  const double h = 1.0 / static_cast<double>(bundle.tau());
  Points x = points;
  for (int s = bundle.tau() - 1; s >= 0; --s) {
    const auto i = static_cast<std::size_t>(s);
    Points y = x - h * velocity_field(x, bundle.z[i], bundle.a[i], bundle.kernel);
    if (std::isfinite(tol)) {
      for (int sweep = 0; sweep < 100; ++sweep) {
        Points next = x - h * velocity_field(y, bundle.z[i], bundle.a[i], bundle.kernel);
        const double change = (next - y).cwiseAbs().maxCoeff();
        y = std::move(next);
        if (change < tol) break;
      }
    }
    detail::check_finite_step(y, "inverted points", s);
    x = std::move(y);
  }
  return x;
}

}  // namespace lddmm
