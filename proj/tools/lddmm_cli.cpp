// lddmm: point-cloud registration driver.
//
//   lddmm register     --config configs/blobs_2d.json --out runs/blobs
//   lddmm warmstart    --config configs/warmstart_2d.json --out runs/warmstart
//   lddmm rate         --config configs/rate.json --out runs/rate
//   lddmm sample       --generator blobs --side target --n 1000 --seed 3 --out target.csv
//   lddmm apply        --bundle runs/blobs/bundle --input cloud.csv --out runs/applied
//   lddmm invert-check --bundle runs/blobs/bundle
//
// Exit codes: 0 success, 1 I/O or parse failure, 2 configuration error, 3 numeric abort.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lddmm/lddmm.hpp"

namespace {

using namespace lddmm;

struct RegisterOverrides {
  std::string config;
  std::string out;
  std::string source, target, test_source, test_target;
  std::optional<double> sigma, lambda, epsilon, theta, step;
  std::optional<int> tau, iters;
  std::optional<std::string> solver, loss, optimizer;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
};

RegistrationConfig build_registration_config(const RegisterOverrides& o) {
  RegistrationConfig cfg;
  if (!o.config.empty()) {
    cfg = load_registration_config(o.config);
  } else if (o.source.empty() || o.target.empty()) {
    throw ConfigError("register needs --config or both --source and --target");
  }
  auto file_spec = [](const std::string& p) {
    CloudSpec s;
    s.kind = CloudSpec::Kind::file;
    s.path = p;
    return s;
  };
  if (!o.source.empty()) cfg.source = file_spec(o.source);
  if (!o.target.empty()) cfg.target = file_spec(o.target);
  if (!o.test_source.empty()) cfg.test_source = file_spec(o.test_source);
  if (!o.test_target.empty()) cfg.test_target = file_spec(o.test_target);
  if (cfg.test_source.has_value() != cfg.test_target.has_value()) {
    throw ConfigError("--test-source and --test-target must be given together");
  }
  RegistrationSettings& s = cfg.settings;
  if (o.sigma) s.flow.kernel.sigma = *o.sigma;
  if (o.lambda) s.flow.lambda = *o.lambda;
  if (o.tau) s.flow.tau = *o.tau;
  if (o.solver) s.solver = parse_solver_kind(*o.solver);
  if (o.loss) s.loss.kind = parse_loss_kind(*o.loss);
  if (o.epsilon) s.loss.epsilon = *o.epsilon;
  if (o.theta) s.loss.theta = *o.theta;
  if (o.optimizer) s.optimizer.kind = parse_optimizer_kind(*o.optimizer);
  if (o.iters) s.optimizer.max_iter = *o.iters;
  if (o.step) s.optimizer.step = *o.step;
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  s.validate();
  return cfg;
}

json load_config_json(const std::string& path) {
  try {
    return read_json(path);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
}

int cmd_register(const RegisterOverrides& o) {
  const RegistrationConfig cfg = build_registration_config(o);
  const RegistrationRun run = run_registration(cfg, o.out);
  std::printf("%s: %s, %d iterations, objective %.6g\n", cfg.name.c_str(), to_string(run.result.status).c_str(),
              run.result.iterations, run.result.objective());
  std::printf("train fidelity %.6g -> %.6g\n", run.train_fidelity_initial, run.train_fidelity_final);
  if (run.test_fidelity_initial) {
    std::printf("test fidelity  %.6g -> %.6g\n", *run.test_fidelity_initial, *run.test_fidelity_final);
  }
  std::printf("wall time %.1f s\n", run.manifest.at("wall_time_s").get<double>());
  return 0;
}

int cmd_warmstart(const std::string& config, const std::string& out) {
  const WarmstartConfig cfg = parse_warmstart_config(load_config_json(config), fs::path(config).parent_path());
  const WarmstartTable table = run_warmstart(cfg, out);
  std::printf("%-36s", "loss \\ init");
  for (const auto& init : table.inits) std::printf(" %22s", init.c_str());
  std::printf("\n");
  for (std::size_t r = 0; r < table.losses.size(); ++r) {
    std::printf("%-36s", table.losses[r].c_str());
    for (std::size_t c = 0; c < table.inits.size(); ++c) {
      const auto& cell = table.at(r, c);
      std::printf(" %12.4e (%+7.1f%%)", cell.final_loss, 100.0 * cell.growth_vs_zero);
    }
    std::printf("\n");
  }
  return 0;
}

struct RateOverrides {
  std::string config;
  std::string out;
  std::optional<double> epsilon;
  std::optional<int> replicates;
  std::optional<Index> reference_size;
  std::optional<std::uint64_t> seed;
  bool same_measure = false;
};

int cmd_rate(const RateOverrides& o) {
  RateConfig cfg;
  if (!o.config.empty()) cfg = parse_rate_config(load_config_json(o.config));
  if (o.epsilon) cfg.epsilon = *o.epsilon;
  if (o.replicates) cfg.replicates = *o.replicates;
  if (o.reference_size) cfg.reference_size = *o.reference_size;
  if (o.seed) cfg.seed = *o.seed;
  if (o.same_measure) cfg.same_measure = true;
  const RateReport rep = run_rate(cfg, o.out);
  std::printf("%8s %14s %14s\n", "n", "mean |err|", "95% half-w");
  for (std::size_t k = 0; k < rep.sizes.size(); ++k) {
    std::printf("%8lld %14.6e %14.6e\n", static_cast<long long>(rep.sizes[k]), rep.mean_errors[k], rep.half_widths[k]);
  }
  std::printf("slope %.4f, S_ref %.6e (N_ref %lld, reference error ~%.2e)\n", rep.slope, rep.s_ref,
              static_cast<long long>(rep.reference_size), rep.reference_error);
  return 0;
}

struct SampleOptions {
  std::string config;
  std::string out;
  std::string generator = "blobs";
  std::string side = "source";
  std::string mesh;
  long long n = 1000;
  std::uint64_t seed = 0;
};

int cmd_sample(const SampleOptions& o) {
  CloudSpec spec;
  if (!o.config.empty()) {
    spec = parse_cloud_spec(load_config_json(o.config), "sample", fs::path(o.config).parent_path());
  } else {
    json j{{"generator", o.generator}, {"n", o.n}, {"seed", o.seed}};
    if (o.generator == "blobs") j["side"] = o.side;
    if (!o.mesh.empty()) j["mesh"] = o.mesh;
    spec = parse_cloud_spec(j, "sample");
  }
  const PointCloud cloud = materialize(spec, o.seed);
  const fs::path out(o.out);
  if (out.has_parent_path()) ensure_directory(out.parent_path());
  save_point_cloud(cloud, out);
  std::printf("wrote %lld x %lld points to %s\n", static_cast<long long>(cloud.size()),
              static_cast<long long>(cloud.dim()), out.string().c_str());
  return 0;
}

int cmd_apply(const std::string& bundle_dir, const std::string& input, const std::string& out,
              std::optional<int> time) {
  const TrajectoryBundle bundle = load_trajectory(bundle_dir);
  const Points points = load_point_cloud(input).points();
  if (time) {
    if (*time < 0 || *time > bundle.tau()) throw ConfigError("--time must lie in [0, tau]");
    const fs::path path(out);
    if (path.has_parent_path()) ensure_directory(path.parent_path());
    save_csv(apply_deformation(points, bundle, *time), path);
    std::printf("wrote frame %d to %s\n", *time, path.string().c_str());
  } else {
    ensure_directory(out);
    save_frames(deformation_frames(points, bundle), out);
    std::printf("wrote %d frames to %s\n", bundle.tau() + 1, out.c_str());
  }
  return 0;
}

int cmd_invert_check(const std::string& bundle_dir, const std::string& input, double tol, const std::string& out) {
  const TrajectoryBundle bundle = load_trajectory(bundle_dir);
  const Points points = input.empty() ? bundle.sources() : load_point_cloud(input).points();
  const InversionReport rep = inversion_check(points, bundle, tol);
  std::printf("round-trip max error %.3e, diameter %.4f, relative %.3e\n", rep.max_error, rep.diameter,
              rep.relative_error());
  if (!out.empty()) {
    write_json({{"max_error", rep.max_error}, {"diameter", rep.diameter}, {"relative_error", rep.relative_error()}},
               out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LDDMM point-cloud registration with entropic transport and kernel losses"};
  app.require_subcommand(1);

  RegisterOverrides reg;
  auto* c_reg = app.add_subcommand("register", "Register source onto target and deform the held-out clouds");
  c_reg->add_option("--config", reg.config, "JSON registration config")->check(CLI::ExistingFile);
  c_reg->add_option("--out", reg.out, "Artifact directory")->required();
  c_reg->add_option("--source", reg.source, "Source cloud file (overrides config)");
  c_reg->add_option("--target", reg.target, "Target cloud file (overrides config)");
  c_reg->add_option("--test-source", reg.test_source, "Held-out source cloud file");
  c_reg->add_option("--test-target", reg.test_target, "Held-out target cloud file");
  c_reg->add_option("--sigma", reg.sigma, "Kernel bandwidth");
  c_reg->add_option("--lambda", reg.lambda, "Kinetic-energy weight");
  c_reg->add_option("--tau", reg.tau, "Number of time steps");
  c_reg->add_option("--solver", reg.solver, "gdm or shooting");
  c_reg->add_option("--loss", reg.loss, "sinkhorn_divergence, entropic_cost or mmd_sq");
  c_reg->add_option("--epsilon", reg.epsilon, "Entropic regularization");
  c_reg->add_option("--theta", reg.theta, "MMD bandwidth");
  c_reg->add_option("--optimizer", reg.optimizer, "lbfgs or fixed_step_gd");
  c_reg->add_option("--iters", reg.iters, "Optimizer iterations");
  c_reg->add_option("--step", reg.step, "Gradient-descent step");
  c_reg->add_option("--seed", reg.seed, "Generator seed");
  c_reg->add_option("--threads", reg.threads, "Worker threads (0 = hardware)");

  std::string ws_config;
  std::string ws_out;
  auto* c_ws = app.add_subcommand("warmstart", "Re-optimize every loss from every prior solution");
  c_ws->add_option("--config", ws_config, "JSON warm-start config")->required()->check(CLI::ExistingFile);
  c_ws->add_option("--out", ws_out, "Artifact directory");

  RateOverrides rate;
  auto* c_rate = app.add_subcommand("rate", "Monte-Carlo sample-complexity study of the Sinkhorn divergence");
  c_rate->add_option("--config", rate.config, "JSON rate config")->check(CLI::ExistingFile);
  c_rate->add_option("--out", rate.out, "Artifact directory");
  c_rate->add_option("--epsilon", rate.epsilon, "Entropic regularization");
  c_rate->add_option("--replicates", rate.replicates, "Replicates per sample size");
  c_rate->add_option("--reference-size", rate.reference_size, "Size of the reference samples");
  c_rate->add_option("--seed", rate.seed, "Seed");
  c_rate->add_flag("--same-measure", rate.same_measure, "Sample both clouds from the source mixture");

  SampleOptions smp;
  auto* c_smp = app.add_subcommand("sample", "Materialize a generated cloud to CSV");
  c_smp->add_option("--config", smp.config, "JSON cloud spec")->check(CLI::ExistingFile);
  c_smp->add_option("--generator", smp.generator, "blobs, sphere or mesh");
  c_smp->add_option("--side", smp.side, "Blob side: source or target");
  c_smp->add_option("--mesh", smp.mesh, "PLY mesh for the mesh generator");
  c_smp->add_option("--n", smp.n, "Number of points");
  c_smp->add_option("--seed", smp.seed, "Seed");
  c_smp->add_option("--out", smp.out, "Output CSV")->required();

  std::string bundle_dir;
  std::string input;
  std::string out;
  std::optional<int> time;
  auto* c_apply = app.add_subcommand("apply", "Deform a cloud with a saved trajectory bundle");
  c_apply->add_option("--bundle", bundle_dir, "Bundle directory")->required();
  c_apply->add_option("--input", input, "Cloud to deform")->required();
  c_apply->add_option("--out", out, "Frame directory, or output CSV with --time")->required();
  c_apply->add_option("--time", time, "Single time index");

  double tol = std::numeric_limits<double>::infinity();
  std::string inv_out;
  auto* c_inv = app.add_subcommand("invert-check", "Forward-then-inverse round-trip error of a saved bundle");
  c_inv->add_option("--bundle", bundle_dir, "Bundle directory")->required();
  c_inv->add_option("--input", input, "Cloud to round-trip (default: the bundle sources)");
  c_inv->add_option("--tol", tol, "Fixed-point refinement tolerance");
  c_inv->add_option("--out", inv_out, "JSON report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*c_reg) return cmd_register(reg);
    if (*c_ws) return cmd_warmstart(ws_config, ws_out);
    if (*c_rate) return cmd_rate(rate);
    if (*c_smp) return cmd_sample(smp);
    if (*c_apply) return cmd_apply(bundle_dir, input, out, time);
    if (*c_inv) return cmd_invert_check(bundle_dir, input, tol, inv_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
