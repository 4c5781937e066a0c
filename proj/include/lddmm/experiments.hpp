#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "lddmm/config.hpp"
#include "lddmm/datasets.hpp"
#include "lddmm/detail/parallel.hpp"
#include "lddmm/flow.hpp"
#include "lddmm/io.hpp"
#include "lddmm/ot_losses.hpp"
#include "lddmm/registration.hpp"

namespace lddmm {

/// sqrt(mean ‖x_i − x̄‖²)
inline double radius_of_gyration(const Points& p) {
  const Eigen::RowVectorXd c = p.colwise().mean();
  return std::sqrt((p.rowwise() - c).rowwise().squaredNorm().mean());
}

/// Largest pairwise distance (exact, O(n²)).
inline double cloud_diameter(const Points& p) {
  const detail::ColumnPoints cols = detail::to_columns(p);
  Eigen::VectorXd best = Eigen::VectorXd::Zero(p.rows());
  detail::parallel_for(p.rows(), [&](Index lo, Index hi) {
    Eigen::ArrayXd row(p.rows());
    for (Index i = lo; i < hi; ++i) {
      detail::squared_distances(p.row(i).data(), cols, row);
      best[i] = row.maxCoeff();
    }
  });
  return std::sqrt(best.maxCoeff());
}

/// Deterministic per-stream seeds (splitmix64 finalizer over the inputs).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(mix(base) ^ a) ^ b) ^ c);
}

inline void save_trace(const std::vector<double>& trace, const fs::path& path) {
  std::string out = "iteration,objective\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    out += std::to_string(i);
    out.push_back(',');
    detail::write_double(out, trace[i]);
    out.push_back('\n');
  }
  detail::write_file(path, out);
}

// ---------------------------------------------------------------- register

struct RegistrationRun {
  RegistrationResult result;
  Points source, target;
  std::optional<Points> test_source, test_target;
  double train_fidelity_initial = 0.0;
  double train_fidelity_final = 0.0;
  std::optional<double> test_fidelity_initial;
  std::optional<double> test_fidelity_final;
  Points deformed_test;  // test source at t = τ (empty without a test set)
  json manifest;
};

struct Clouds {
  Points source, target;
  std::optional<Points> test_source, test_target;
};

inline Clouds materialize_clouds(const RegistrationConfig& cfg) {
  Clouds c;
  c.source = materialize(cfg.source, cfg.role_seed(0)).points();
  c.target = materialize(cfg.target, cfg.role_seed(1)).points();
  if (cfg.test_source) {
    c.test_source = materialize(*cfg.test_source, cfg.role_seed(2)).points();
    c.test_target = materialize(*cfg.test_target, cfg.role_seed(3)).points();
  }
  if (c.source.cols() != c.target.cols()) throw ConfigError("source and target have different dimensions");
  return c;
}

inline json loss_manifest(const LossConfig& c) {
  json j;
  j["kind"] = to_string(c.kind);
  if (c.is_transport()) {
    j["epsilon"] = c.epsilon;
    j["sinkhorn_tol"] = c.sinkhorn_tol;
  } else {
    j["theta"] = c.theta;
  }
  return j;
}

/// Trains on (source, target), deforms the held-out clouds and, when `out_dir` is
/// non-empty, writes:
///   manifest.json, trace.csv, target.csv, frame_<t>.csv (deformed test source, or
///   the training trajectories without a test set), bundle/ (training trajectories).
inline RegistrationRun run_registration(const RegistrationConfig& cfg, const fs::path& out_dir = {},
                                        const Eigen::VectorXd* initial = nullptr) {
  set_thread_count(cfg.threads);
  Clouds clouds = materialize_clouds(cfg);
  RegistrationRun run;
  run.source = std::move(clouds.source);
  run.target = std::move(clouds.target);
  run.test_source = std::move(clouds.test_source);
  run.test_target = std::move(clouds.test_target);
  const LossConfig& loss = cfg.settings.loss;
  const auto start = std::chrono::steady_clock::now();

  if (!out_dir.empty()) ensure_directory(out_dir);
  try {
    run.result = register_clouds(run.source, run.target, cfg.settings, initial);
  } catch (const RegistrationAborted& e) {
    if (!out_dir.empty()) save_trace(e.partial_trace, out_dir / "trace.csv");
    throw;
  }
  // From a = 0 the first trace entry is already the initial fidelity.
  run.train_fidelity_initial =
      initial == nullptr ? run.result.loss_trace.front() : loss_value(loss, run.source, run.target);
  run.train_fidelity_final = run.result.final_fidelity;
  std::vector<Points> frames;
  if (run.test_source) {
    frames = deformation_frames(*run.test_source, run.result.bundle);
    run.deformed_test = frames.back();
    run.test_fidelity_initial = loss_value(loss, *run.test_source, *run.test_target);
    run.test_fidelity_final = loss_value(loss, run.deformed_test, *run.test_target);
  } else {
    frames = run.result.bundle.z;
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  json& m = run.manifest;
  m["name"] = cfg.name;
  m["n"] = run.source.rows();
  m["d"] = run.source.cols();
  m["tau"] = cfg.settings.flow.tau;
  m["sigma"] = cfg.settings.flow.kernel.sigma;
  m["lambda"] = cfg.settings.flow.lambda;
  m["loss"] = loss_manifest(loss);
  m["optimizer"] = {{"kind", to_string(cfg.settings.optimizer.kind)},
                    {"iters", run.result.iterations},
                    {"max_iter", cfg.settings.optimizer.max_iter},
                    {"step", cfg.settings.optimizer.step}};
  m["solver"] = to_string(cfg.settings.solver);
  m["seed"] = cfg.seed;
  m["final_loss"] = run.result.objective();
  m["final_fidelity"] = run.result.final_fidelity;
  m["final_kinetic"] = run.result.final_kinetic;
  m["train_fidelity_initial"] = run.train_fidelity_initial;
  m["train_fidelity_final"] = run.train_fidelity_final;
  if (run.test_source) {
    m["m"] = run.test_source->rows();
    m["test_fidelity_initial"] = *run.test_fidelity_initial;
    m["test_fidelity_final"] = *run.test_fidelity_final;
  }
  m["status"] = to_string(run.result.status);
  m["converged"] = run.result.converged;
  m["evaluations"] = run.result.evaluations;
  m["wall_time_s"] = wall;

  if (!out_dir.empty()) {
    json bundle_manifest = m;
    save_trajectory(run.result.bundle, out_dir / "bundle", bundle_manifest);
    save_frames(frames, out_dir);
    save_csv(run.test_target ? *run.test_target : run.target, out_dir / "target.csv");
    save_trace(run.result.loss_trace, out_dir / "trace.csv");
    write_json(m, out_dir / "manifest.json");
  }
  return run;
}

// ---------------------------------------------------------------- warmstart

struct WarmstartCell {
  std::string loss_label;
  std::string init_label;
  double final_loss = 0.0;
  double growth_vs_zero = 0.0;  // (v − v_zero)/v_zero
};

struct WarmstartTable {
  std::vector<std::string> losses;
  std::vector<std::string> inits;
  std::vector<WarmstartCell> cells;  // row-major: losses × inits

  const WarmstartCell& at(std::size_t row, std::size_t col) const { return cells.at(row * inits.size() + col); }
};

inline std::string loss_label(const LossConfig& c) {
  std::string out = to_string(c.kind);
  std::string num(32, '\0');
  const double v = c.is_transport() ? c.epsilon : c.theta;
  const auto res = std::to_chars(num.data(), num.data() + num.size(), v);
  num.resize(static_cast<std::size_t>(res.ptr - num.data()));
  return out + (c.is_transport() ? "(eps=" : "(theta=") + num + ")";
}

struct PriorRun {
  std::string label;
  LossConfig loss;
  Points a0;
};

inline PriorRun load_prior_run(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw IoError("missing prior run: " + (dir / "manifest.json").string());
  const json m = read_json(dir / "manifest.json");
  PriorRun run;
  run.label = dir.filename().string();
  if (run.label.empty()) run.label = dir.parent_path().filename().string();
  try {
    run.loss.kind = parse_loss_kind(m.at("loss").at("kind").get<std::string>());
    if (run.loss.is_transport()) {
      run.loss.epsilon = m.at("loss").at("epsilon").get<double>();
    } else {
      run.loss.theta = m.at("loss").at("theta").get<double>();
    }
  } catch (const json::exception& e) {
    throw ParseError(dir.string() + "/manifest.json: " + e.what());
  }
  run.a0 = load_csv(momentum_path(dir / "bundle", 0));
  return run;
}

/// Rows: the prior runs' losses. Columns: zero initialization, then each prior run's a(0).
/// Every cell re-optimizes the row loss with the base settings from that init.
inline WarmstartTable run_warmstart(const WarmstartConfig& cfg, const fs::path& out_dir = {}) {
  std::vector<PriorRun> prior;
  for (const auto& dir : cfg.runs) prior.push_back(load_prior_run(dir));
  WarmstartTable table;
  table.inits.push_back("zero");
  for (const auto& p : prior) table.inits.push_back(p.label);
  set_thread_count(cfg.base.threads);
  const Clouds clouds = materialize_clouds(cfg.base);
  const int tau = cfg.base.settings.flow.tau;
  for (const auto& row : prior) {
    table.losses.push_back(loss_label(row.loss));
    // Row loss with the base solver knobs (tolerances, annealing).
    RegistrationSettings settings = cfg.base.settings;
    settings.loss.kind = row.loss.kind;
    settings.loss.epsilon = row.loss.epsilon;
    settings.loss.theta = row.loss.theta;
    double zero_value = 0.0;
    for (std::size_t col = 0; col < table.inits.size(); ++col) {
      std::optional<Eigen::VectorXd> init;
      if (col > 0) {
        const Points& a0 = prior[col - 1].a0;
        if (a0.rows() != clouds.source.rows() || a0.cols() != clouds.source.cols()) {
          throw ConfigError("prior run '" + prior[col - 1].label + "' has a momentum of the wrong shape");
        }
        init = parameters_from_initial_momentum(settings.solver, a0, tau);
      }
      const RegistrationResult r = register_clouds(clouds.source, clouds.target, settings, init ? &*init : nullptr);
      WarmstartCell cell;
      cell.loss_label = table.losses.back();
      cell.init_label = table.inits[col];
      cell.final_loss = r.objective();
      if (col == 0) zero_value = cell.final_loss;
      cell.growth_vs_zero = zero_value != 0.0 ? (cell.final_loss - zero_value) / zero_value : 0.0;
      table.cells.push_back(cell);
    }
  }
  if (!out_dir.empty()) {
    ensure_directory(out_dir);
    std::string longform = "loss,init,final_loss,growth_vs_zero\n";
    for (const auto& c : table.cells) {
      longform += c.loss_label + "," + c.init_label + ",";
      detail::write_double(longform, c.final_loss);
      longform.push_back(',');
      detail::write_double(longform, c.growth_vs_zero);
      longform.push_back('\n');
    }
    detail::write_file(out_dir / "warmstart.csv", longform);
    std::string grid = "loss";
    for (const auto& init : table.inits) grid += "," + init;
    grid.push_back('\n');
    for (std::size_t r = 0; r < table.losses.size(); ++r) {
      grid += table.losses[r];
      for (std::size_t c = 0; c < table.inits.size(); ++c) {
        grid.push_back(',');
        detail::write_double(grid, table.at(r, c).final_loss);
      }
      grid.push_back('\n');
    }
    detail::write_file(out_dir / "table.csv", grid);
  }
  return table;
}

// ---------------------------------------------------------------- rate

struct RateReport {
  std::vector<Index> sizes;
  std::vector<double> mean_errors;
  std::vector<double> std_errors;     // replicate standard deviation
  std::vector<double> half_widths;    // 95% normal half-width of the mean
  int replicates = 0;
  double slope = 0.0;
  double intercept = 0.0;
  double s_ref = 0.0;
  double reference_error = 0.0;       // mean_err(n_max)·sqrt(n_max / N_ref)
  Index reference_size = 0;
  double epsilon = 0.0;
};

/// Least-squares line through (log x, log y): returns (slope, intercept).
inline std::pair<double, double> fit_loglog(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("log-log fit needs at least two points");
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw NumericError("log-log fit needs positive values");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(y[i]) - my);
  }
  if (sxx == 0.0) throw ConfigError("log-log fit needs distinct sizes");
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

/// Raw (unnormalized) blob populations: α = source mixture, β = target mixture, or
/// β = α with `same_measure`. Population values are replaced by S_ε on reference
/// samples of size N_ref.
inline RateReport run_rate(const RateConfig& cfg, const fs::path& out_dir = {}) {
  cfg.validate();
  const BlobSide side_b = cfg.same_measure ? BlobSide::source : BlobSide::target;
  SinkhornOptions opt;
  opt.tol = cfg.sinkhorn_tol;
  auto divergence = [&](const Points& a, const Points& b) {
    const double cross = dual_value(sinkhorn_potentials(a, b, cfg.epsilon, opt));
    const double self_a = dual_value(symmetric_potential(a, cfg.epsilon, opt));
    const double self_b = dual_value(symmetric_potential(b, cfg.epsilon, opt));
    return cross - 0.5 * self_a - 0.5 * self_b;
  };
  RateReport rep;
  rep.epsilon = cfg.epsilon;
  rep.replicates = cfg.replicates;
  rep.reference_size = cfg.reference_size;
  {
    const Points ref_a = sample_blobs_2d_raw(cfg.reference_size, BlobSide::source, derive_seed(cfg.seed, 1)).points();
    const Points ref_b = sample_blobs_2d_raw(cfg.reference_size, side_b, derive_seed(cfg.seed, 2)).points();
    rep.s_ref = divergence(ref_a, ref_b);
  }
  for (std::size_t k = 0; k < cfg.sizes.size(); ++k) {
    const Index n = cfg.sizes[k];
    std::vector<double> errs(static_cast<std::size_t>(cfg.replicates));
    for (int r = 0; r < cfg.replicates; ++r) {
      const auto rr = static_cast<std::uint64_t>(r);
      const Points a = sample_blobs_2d_raw(n, BlobSide::source, derive_seed(cfg.seed, 3, static_cast<std::uint64_t>(n), rr)).points();
      const Points b = sample_blobs_2d_raw(n, side_b, derive_seed(cfg.seed, 4, static_cast<std::uint64_t>(n), rr)).points();
      errs[static_cast<std::size_t>(r)] = std::abs(divergence(a, b) - rep.s_ref);
    }
    const double mean = std::accumulate(errs.begin(), errs.end(), 0.0) / static_cast<double>(errs.size());
    double var = 0.0;
    for (double e : errs) var += (e - mean) * (e - mean);
    var /= static_cast<double>(errs.size() - 1);
    rep.sizes.push_back(n);
    rep.mean_errors.push_back(mean);
    rep.std_errors.push_back(std::sqrt(var));
    rep.half_widths.push_back(1.96 * std::sqrt(var / static_cast<double>(errs.size())));
  }
  std::vector<double> xs(rep.sizes.begin(), rep.sizes.end());
  std::tie(rep.slope, rep.intercept) = fit_loglog(xs, rep.mean_errors);
  const auto n_max = static_cast<double>(rep.sizes.back());
  rep.reference_error = rep.mean_errors.back() * std::sqrt(n_max / static_cast<double>(cfg.reference_size));

  if (!out_dir.empty()) {
    ensure_directory(out_dir);
    std::string csv = "n,mean_abs_error,std_error,half_width,replicates\n";
    for (std::size_t k = 0; k < rep.sizes.size(); ++k) {
      csv += std::to_string(rep.sizes[k]) + ",";
      detail::write_double(csv, rep.mean_errors[k]);
      csv.push_back(',');
      detail::write_double(csv, rep.std_errors[k]);
      csv.push_back(',');
      detail::write_double(csv, rep.half_widths[k]);
      csv += "," + std::to_string(rep.replicates) + "\n";
    }
    detail::write_file(out_dir / "rate.csv", csv);
    json m;
    m["epsilon"] = rep.epsilon;
    m["slope"] = rep.slope;
    m["intercept"] = rep.intercept;
    m["s_ref"] = rep.s_ref;
    m["reference_size"] = rep.reference_size;
    m["reference_error"] = rep.reference_error;
    m["replicates"] = rep.replicates;
    m["same_measure"] = cfg.same_measure;
    m["seed"] = cfg.seed;
    write_json(m, out_dir / "rate.json");
  }
  return rep;
}

// ---------------------------------------------------------------- invert-check

struct InversionReport {
  double max_error = 0.0;
  double diameter = 0.0;
  double relative_error() const { return diameter > 0.0 ? max_error / diameter : max_error; }
};

/// Forward through the whole bundle, then back; error relative to the cloud diameter.
inline InversionReport inversion_check(const Points& points, const TrajectoryBundle& bundle,
                                       double tol = std::numeric_limits<double>::infinity()) {
  const Points forward = apply_deformation(points, bundle, bundle.tau());
  const Points back = invert_deformation(forward, bundle, tol);
  InversionReport rep;
  rep.max_error = (back - points).rowwise().norm().maxCoeff();
  rep.diameter = cloud_diameter(points);
  return rep;
}

}  // namespace lddmm
