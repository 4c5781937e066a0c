#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lddmm/datasets.hpp"
#include "lddmm/errors.hpp"
#include "lddmm/io.hpp"
#include "lddmm/registration.hpp"

// JSON experiment configuration. Relative paths inside a config file are resolved
// against the directory containing that file.

namespace lddmm {

using json = nlohmann::json;

/// Where a point cloud comes from: a file or one of the seeded generators.
struct CloudSpec {
  enum class Kind { file, blobs, sphere, mesh };
  Kind kind = Kind::blobs;
  fs::path path;               // file / mesh
  CloudFormat format = CloudFormat::automatic;
  BlobSide side = BlobSide::source;
  Index n = 0;                 // generators
  std::optional<std::uint64_t> seed;
  bool normalize = false;      // file kind; mesh samples are always normalized
};

inline std::string to_string(CloudSpec::Kind k) {
  switch (k) {
    case CloudSpec::Kind::file: return "file";
    case CloudSpec::Kind::blobs: return "blobs";
    case CloudSpec::Kind::sphere: return "sphere";
    case CloudSpec::Kind::mesh: return "mesh";
  }
  return "unknown";
}

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <class T>
T require(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing required key '" + key + "'");
  return get_or<T>(j, key, T{}, where);
}

inline fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

}  // namespace detail

inline CloudSpec parse_cloud_spec(const json& j, const std::string& where, const fs::path& base = {}) {
  if (j.is_string()) {
    CloudSpec spec;
    spec.kind = CloudSpec::Kind::file;
    spec.path = detail::resolve(j.get<std::string>(), base);
    return spec;
  }
  detail::check_keys(j, {"generator", "path", "format", "side", "n", "seed", "normalize", "mesh"}, where);
  CloudSpec spec;
  const std::string gen = detail::get_or<std::string>(j, "generator", j.contains("path") ? "file" : "", where);
  if (gen == "file") {
    spec.kind = CloudSpec::Kind::file;
    spec.path = detail::resolve(detail::require<std::string>(j, "path", where), base);
    spec.format = parse_cloud_format(detail::get_or<std::string>(j, "format", "auto", where));
    spec.normalize = detail::get_or<bool>(j, "normalize", false, where);
    return spec;
  }
  if (gen == "blobs") {
    spec.kind = CloudSpec::Kind::blobs;
    spec.side = parse_blob_side(detail::get_or<std::string>(j, "side", "source", where));
  } else if (gen == "sphere") {
    spec.kind = CloudSpec::Kind::sphere;
  } else if (gen == "mesh") {
    spec.kind = CloudSpec::Kind::mesh;
    if (!j.contains("mesh")) throw ConfigError(where + ": mesh generator needs a 'mesh' file");
    spec.path = detail::resolve(detail::require<std::string>(j, "mesh", where), base);
  } else {
    throw ConfigError(where + ": unknown generator '" + gen + "' (expected file, blobs, sphere or mesh)");
  }
  const auto n = detail::require<long long>(j, "n", where);
  if (n < 1) throw ConfigError(where + ".n must be at least 1");
  spec.n = static_cast<Index>(n);
  if (j.contains("seed")) spec.seed = detail::get_or<std::uint64_t>(j, "seed", 0, where);
  return spec;
}

inline json to_json(const CloudSpec& s) {
  json j;
  j["generator"] = to_string(s.kind);
  if (s.kind == CloudSpec::Kind::file) {
    j["path"] = s.path.string();
    j["normalize"] = s.normalize;
  } else {
    j["n"] = s.n;
    if (s.seed) j["seed"] = *s.seed;
    if (s.kind == CloudSpec::Kind::blobs) j["side"] = s.side == BlobSide::source ? "source" : "target";
    if (s.kind == CloudSpec::Kind::mesh) j["mesh"] = s.path.string();
  }
  return j;
}

/// Builds the cloud. Generators without an explicit seed use `default_seed`.
inline PointCloud materialize(const CloudSpec& spec, std::uint64_t default_seed) {
  const std::uint64_t seed = spec.seed.value_or(default_seed);
  switch (spec.kind) {
    case CloudSpec::Kind::file: {
      PointCloud cloud = load_point_cloud(spec.path, spec.format);
      return spec.normalize ? normalize(cloud).cloud : cloud;
    }
    case CloudSpec::Kind::blobs: return sample_blobs_2d(spec.n, spec.side, seed);
    case CloudSpec::Kind::sphere: return sample_sphere(spec.n, seed);
    case CloudSpec::Kind::mesh: {
      if (spec.path.empty()) throw ConfigError("mesh generator needs a mesh file");
      return normalize(sample_mesh_surface(load_mesh(spec.path), spec.n, seed)).cloud;
    }
  }
  throw ConfigError("unknown cloud kind");
}

inline LossConfig parse_loss_config(const json& j, const std::string& where = "loss") {
  detail::check_keys(j, {"kind", "epsilon", "theta", "sinkhorn_tol", "sinkhorn_max_iter", "eps_scaling"}, where);
  LossConfig cfg;
  cfg.kind = parse_loss_kind(detail::get_or<std::string>(j, "kind", "sinkhorn_divergence", where));
  cfg.epsilon = detail::get_or<double>(j, "epsilon", cfg.epsilon, where);
  cfg.theta = detail::get_or<double>(j, "theta", cfg.theta, where);
  cfg.sinkhorn_tol = detail::get_or<double>(j, "sinkhorn_tol", cfg.sinkhorn_tol, where);
  cfg.sinkhorn_max_iter = detail::get_or<int>(j, "sinkhorn_max_iter", cfg.sinkhorn_max_iter, where);
  cfg.eps_scaling = detail::get_or<double>(j, "eps_scaling", cfg.eps_scaling, where);
  cfg.validate();
  return cfg;
}

inline json to_json(const LossConfig& c) {
  json j;
  j["kind"] = to_string(c.kind);
  if (c.is_transport()) {
    j["epsilon"] = c.epsilon;
    j["sinkhorn_tol"] = c.sinkhorn_tol;
    j["sinkhorn_max_iter"] = c.sinkhorn_max_iter;
    j["eps_scaling"] = c.eps_scaling;
  } else {
    j["theta"] = c.theta;
  }
  return j;
}

inline OptimizerConfig parse_optimizer_config(const json& j, const std::string& where = "optimizer") {
  detail::check_keys(j, {"kind", "step", "max_iter", "memory", "grad_tol", "initial_step"}, where);
  OptimizerConfig cfg;
  cfg.kind = parse_optimizer_kind(detail::get_or<std::string>(j, "kind", "lbfgs", where));
  cfg.step = detail::get_or<double>(j, "step", cfg.step, where);
  cfg.max_iter = detail::get_or<int>(j, "max_iter", cfg.max_iter, where);
  cfg.memory = detail::get_or<int>(j, "memory", cfg.memory, where);
  cfg.grad_tol = detail::get_or<double>(j, "grad_tol", cfg.grad_tol, where);
  cfg.initial_step = detail::get_or<double>(j, "initial_step", cfg.initial_step, where);
  cfg.validate();
  return cfg;
}

inline json to_json(const OptimizerConfig& c) {
  json j;
  j["kind"] = to_string(c.kind);
  j["max_iter"] = c.max_iter;
  j["step"] = c.step;
  j["memory"] = c.memory;
  j["grad_tol"] = c.grad_tol;
  j["initial_step"] = c.initial_step;
  return j;
}

struct RegistrationConfig {
  std::string name = "registration";
  CloudSpec source;
  CloudSpec target;
  std::optional<CloudSpec> test_source;
  std::optional<CloudSpec> test_target;
  RegistrationSettings settings;
  std::uint64_t seed = 0;
  unsigned threads = 0;

  // Default generator seeds per role, derived from the run seed.
  std::uint64_t role_seed(int role) const { return seed * 4 + static_cast<std::uint64_t>(role); }
};

inline RegistrationConfig parse_registration_config(const json& j, const fs::path& base = {}) {
  detail::check_keys(j,
                     {"name", "source", "target", "test_source", "test_target", "loss", "sigma", "lambda", "tau",
                      "solver", "optimizer", "seed", "threads", "warm_start", "first_step_displacement", "comment"},
                     "config");
  RegistrationConfig cfg;
  cfg.name = detail::get_or<std::string>(j, "name", cfg.name, "config");
  if (!j.contains("source") || !j.contains("target")) throw ConfigError("config: 'source' and 'target' are required");
  cfg.source = parse_cloud_spec(j.at("source"), "source", base);
  cfg.target = parse_cloud_spec(j.at("target"), "target", base);
  if (j.contains("test_source")) cfg.test_source = parse_cloud_spec(j.at("test_source"), "test_source", base);
  if (j.contains("test_target")) cfg.test_target = parse_cloud_spec(j.at("test_target"), "test_target", base);
  if (cfg.test_source.has_value() != cfg.test_target.has_value()) {
    throw ConfigError("config: test_source and test_target must be given together");
  }
  RegistrationSettings& s = cfg.settings;
  if (j.contains("loss")) s.loss = parse_loss_config(j.at("loss"));
  s.flow.kernel.sigma = detail::get_or<double>(j, "sigma", s.flow.kernel.sigma, "config");
  s.flow.lambda = detail::get_or<double>(j, "lambda", s.flow.lambda, "config");
  s.flow.tau = detail::get_or<int>(j, "tau", s.flow.tau, "config");
  s.solver = parse_solver_kind(detail::get_or<std::string>(j, "solver", "shooting", "config"));
  if (j.contains("optimizer")) s.optimizer = parse_optimizer_config(j.at("optimizer"));
  s.warm_start = detail::get_or<bool>(j, "warm_start", s.warm_start, "config");
  s.first_step_displacement = detail::get_or<double>(j, "first_step_displacement", s.first_step_displacement, "config");
  cfg.seed = detail::get_or<std::uint64_t>(j, "seed", 0, "config");
  const int threads = detail::get_or<int>(j, "threads", 0, "config");
  if (threads < 0) throw ConfigError("config.threads must be non-negative");
  cfg.threads = static_cast<unsigned>(threads);
  s.validate();
  return cfg;
}

inline RegistrationConfig load_registration_config(const fs::path& path) {
  json j;
  try {
    j = read_json(path);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  return parse_registration_config(j, path.parent_path());
}

inline json to_json(const RegistrationConfig& c) {
  json j;
  j["name"] = c.name;
  j["source"] = to_json(c.source);
  j["target"] = to_json(c.target);
  if (c.test_source) j["test_source"] = to_json(*c.test_source);
  if (c.test_target) j["test_target"] = to_json(*c.test_target);
  j["loss"] = to_json(c.settings.loss);
  j["sigma"] = c.settings.flow.kernel.sigma;
  j["lambda"] = c.settings.flow.lambda;
  j["tau"] = c.settings.flow.tau;
  j["solver"] = to_string(c.settings.solver);
  j["optimizer"] = to_json(c.settings.optimizer);
  j["seed"] = c.seed;
  j["warm_start"] = c.settings.warm_start;
  j["first_step_displacement"] = c.settings.first_step_displacement;
  j["threads"] = c.threads;
  return j;
}

/// Monte-Carlo rate study of |S_ε(α_n, β_n) − S_ref|.
struct RateConfig {
  double epsilon = 0.5;
  std::vector<Index> sizes{32, 64, 128, 256, 512, 1024};
  int replicates = 20;
  Index reference_size = 100000;
  bool same_measure = false;  // β = α
  std::uint64_t seed = 0;
  double sinkhorn_tol = 1e-6;

  void validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("rate.epsilon must be positive");
    if (sizes.size() < 4) throw ConfigError("rate.sizes needs at least 4 sample sizes");
    for (Index n : sizes) {
      if (n < 1) throw ConfigError("rate.sizes must be positive");
    }
    if (replicates < 10) throw ConfigError("rate.replicates must be at least 10");
    if (reference_size < 1) throw ConfigError("rate.reference_size must be positive");
    if (!(sinkhorn_tol > 0.0)) throw ConfigError("rate.sinkhorn_tol must be positive");
  }
};

inline RateConfig parse_rate_config(const json& j) {
  detail::check_keys(j, {"epsilon", "sizes", "replicates", "reference_size", "same_measure", "seed", "sinkhorn_tol",
                         "comment"},
                     "rate");
  RateConfig cfg;
  cfg.epsilon = detail::get_or<double>(j, "epsilon", cfg.epsilon, "rate");
  if (j.contains("sizes")) cfg.sizes = detail::get_or<std::vector<Index>>(j, "sizes", {}, "rate");
  cfg.replicates = detail::get_or<int>(j, "replicates", cfg.replicates, "rate");
  cfg.reference_size = detail::get_or<Index>(j, "reference_size", cfg.reference_size, "rate");
  cfg.same_measure = detail::get_or<bool>(j, "same_measure", cfg.same_measure, "rate");
  cfg.seed = detail::get_or<std::uint64_t>(j, "seed", cfg.seed, "rate");
  cfg.sinkhorn_tol = detail::get_or<double>(j, "sinkhorn_tol", cfg.sinkhorn_tol, "rate");
  cfg.validate();
  return cfg;
}

/// Re-optimization grid: every prior run's a(0) (plus zero) as initialization for
/// every prior run's loss.
struct WarmstartConfig {
  RegistrationConfig base;
  std::vector<fs::path> runs;
};

inline WarmstartConfig parse_warmstart_config(const json& j, const fs::path& base = {}) {
  detail::check_keys(j, {"base", "runs", "comment"}, "warmstart");
  WarmstartConfig cfg;
  if (!j.contains("base")) throw ConfigError("warmstart: missing 'base' registration config");
  cfg.base = parse_registration_config(j.at("base"), base);
  for (const auto& r : detail::require<std::vector<std::string>>(j, "runs", "warmstart")) {
    cfg.runs.push_back(detail::resolve(r, base));
  }
  if (cfg.runs.empty()) throw ConfigError("warmstart: 'runs' is empty");
  return cfg;
}

}  // namespace lddmm
