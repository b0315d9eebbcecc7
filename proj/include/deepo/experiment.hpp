#pragma once

// Experiment configuration (JSON) and the end-to-end pipeline used by the CLI:
// build plant, collect data, set up the cost, run the iteration, summarize.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "deepo/io.hpp"
#include "deepo/lqt.hpp"
#include "deepo/opt.hpp"
#include "deepo/param.hpp"
#include "deepo/plant.hpp"

namespace deepo {

/// Invalid or inconsistent experiment configuration.
class ConfigError : public Error {
public:
  using Error::Error;
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int config = 2;
inline constexpr int numerical = 3;
inline constexpr int acceptance = 4;
}  // namespace exit_code

/// Default configuration: the 4-state benchmark with T = 10 noiseless samples,
/// Q = I, R = I, eta = 0.02, 5000 iterations from K = 0, l = 0. The setpoint
/// (all ones) and the cost noise covariance (W = I) are choices of this
/// project and can be overridden.
inline nlohmann::json default_config_json() {
  using nlohmann::json;
  return json{
      {"system", {{"mode", "paper"}, {"n", 4}, {"m", 2}, {"seed", 0}, {"target_rho", 0.8}}},
      {"data", {{"t_len", 10}, {"seed", 0}, {"noise_on", false}, {"w_scale", 0.0}}},
      {"cost",
       {{"q", "identity"}, {"r", "identity"}, {"delta", "ones"}, {"w_cov", "scaled_identity"},
        {"w_scale", 1.0}}},
      {"optimizer",
       {{"eta", 0.02}, {"max_iters", 5000}, {"grad_tol", 1e-10}, {"record_every", 1},
        {"backtracking", false}}},
      {"init", {{"k", "zero"}, {"l", "zero"}}},
      {"output", {{"trace_path", "trace.csv"}, {"format", "csv"}}},
  };
}

namespace detail {

/// Recursively overlays `patch` onto `base`; keys absent from `base` are errors.
inline void merge_strict(nlohmann::json& base, const nlohmann::json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config: " + (path.empty() ? "root" : path) + " must be an object");
  for (const auto& item : patch.items()) {
    const std::string key_path = path.empty() ? item.key() : path + "." + item.key();
    if (!base.contains(item.key())) throw ConfigError("config: unknown key " + key_path);
    nlohmann::json& slot = base[item.key()];
    if (slot.is_object()) {
      merge_strict(slot, item.value(), key_path);
    } else {
      slot = item.value();
    }
  }
}

}  // namespace detail

/// Parses an override value: JSON when it parses, otherwise a plain string.
inline nlohmann::json parse_override_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    return text;
  }
}

/// Sets a dotted path such as "optimizer.eta"; the path must already exist.
inline void apply_override(nlohmann::json& cfg, const std::string& dotted, const nlohmann::json& value) {
  nlohmann::json* node = &cfg;
  std::istringstream ss(dotted);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("config: empty override path");
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) {
      throw ConfigError("config: unknown key " + dotted);
    }
    node = &(*node)[parts[i]];
  }
  if (node->is_object()) throw ConfigError("config: " + dotted + " is a section, not a field");
  *node = value;
}

struct ExperimentConfig {
  struct System {
    std::string mode = "paper";
    Eigen::Index n = 4;
    Eigen::Index m = 2;
    std::uint64_t seed = 0;
    double target_rho = 0.8;
  } system;
  struct Data {
    Eigen::Index t_len = 10;
    std::uint64_t seed = 0;
    bool noise_on = false;
    double w_scale = 0.0;
  } data;
  CostParams cost;
  StepConfig optimizer;
  GainPolicy init;
  struct Output {
    std::string trace_path = "trace.csv";
    std::string format = "csv";
  } output;

  /// Fully resolved configuration with every matrix spelled out.
  nlohmann::json resolved;
};

namespace detail {

template <class T>
T get_field(const nlohmann::json& j, const char* key, const std::string& section) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: " + section + "." + key + " has the wrong type");
  }
}

inline Matrix square_or_identity(const nlohmann::json& j, Eigen::Index dim, const std::string& name) {
  if (j.is_string()) {
    if (j.get<std::string>() != "identity") throw ConfigError("config: " + name + " must be \"identity\" or a matrix");
    return Matrix::Identity(dim, dim);
  }
  try {
    return io::matrix_from_json(j, dim, dim, name);
  } catch (const InputError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

}  // namespace detail

/// Validates and resolves a configuration (defaults already merged in).
inline ExperimentConfig resolve_config(const nlohmann::json& cfg) {
  using detail::get_field;
  ExperimentConfig out;
  const auto& sys = cfg.at("system");
  out.system.mode = get_field<std::string>(sys, "mode", "system");
  if (out.system.mode != "paper" && out.system.mode != "random") {
    throw ConfigError("config: system.mode must be \"paper\" or \"random\"");
  }
  out.system.n = get_field<long>(sys, "n", "system");
  out.system.m = get_field<long>(sys, "m", "system");
  out.system.seed = get_field<std::uint64_t>(sys, "seed", "system");
  out.system.target_rho = get_field<double>(sys, "target_rho", "system");
  if (out.system.mode == "paper" && (out.system.n != 4 || out.system.m != 2)) {
    throw ConfigError("config: the benchmark system has n = 4, m = 2");
  }
  if (out.system.n < 1 || out.system.m < 1) throw ConfigError("config: n and m must be positive");
  if (!(out.system.target_rho > 0.0 && out.system.target_rho < 1.0)) {
    throw ConfigError("config: system.target_rho must lie in (0, 1)");
  }
  const Eigen::Index n = out.system.n;
  const Eigen::Index m = out.system.m;

  const auto& data = cfg.at("data");
  out.data.t_len = get_field<long>(data, "t_len", "data");
  out.data.seed = get_field<std::uint64_t>(data, "seed", "data");
  out.data.noise_on = get_field<bool>(data, "noise_on", "data");
  out.data.w_scale = get_field<double>(data, "w_scale", "data");
  if (out.data.t_len < n + m) throw ConfigError("config: data.t_len must be at least n + m");
  if (out.data.w_scale < 0.0) throw ConfigError("config: data.w_scale must be nonnegative");

  const auto& cost = cfg.at("cost");
  out.cost.q_mat = detail::square_or_identity(cost.at("q"), n, "cost.q");
  out.cost.r_mat = detail::square_or_identity(cost.at("r"), m, "cost.r");
  const auto& delta = cost.at("delta");
  if (delta.is_string()) {
    if (delta.get<std::string>() != "ones") throw ConfigError("config: cost.delta must be \"ones\" or a vector");
    out.cost.delta = Vector::Ones(n);
  } else {
    try {
      out.cost.delta = io::vector_from_json(delta, n, "cost.delta");
    } catch (const InputError& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
  const double cost_w_scale = get_field<double>(cost, "w_scale", "cost");
  const auto& w = cost.at("w_cov");
  if (w.is_string()) {
    const auto s = w.get<std::string>();
    if (s == "zero") {
      out.cost.w_cov = Matrix::Zero(n, n);
    } else if (s == "scaled_identity") {
      if (cost_w_scale < 0.0) throw ConfigError("config: cost.w_scale must be nonnegative");
      out.cost.w_cov = cost_w_scale * Matrix::Identity(n, n);
    } else {
      throw ConfigError("config: cost.w_cov must be \"zero\", \"scaled_identity\" or a matrix");
    }
  } else {
    try {
      out.cost.w_cov = io::matrix_from_json(w, n, n, "cost.w_cov");
    } catch (const InputError& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
  try {
    out.cost.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  const auto& opt = cfg.at("optimizer");
  out.optimizer.eta = get_field<double>(opt, "eta", "optimizer");
  out.optimizer.max_iters = get_field<long>(opt, "max_iters", "optimizer");
  out.optimizer.grad_tol = get_field<double>(opt, "grad_tol", "optimizer");
  out.optimizer.record_every = get_field<long>(opt, "record_every", "optimizer");
  out.optimizer.backtracking = get_field<bool>(opt, "backtracking", "optimizer");
  if (!(out.optimizer.eta > 0.0)) throw ConfigError("config: optimizer.eta must be positive");
  if (out.optimizer.max_iters < 0) throw ConfigError("config: optimizer.max_iters must be >= 0");
  if (out.optimizer.record_every < 1) throw ConfigError("config: optimizer.record_every must be >= 1");

  const auto& init = cfg.at("init");
  try {
    out.init.k_gain = init.at("k").is_string() && init.at("k").get<std::string>() == "zero"
                          ? Matrix::Zero(m, n)
                          : io::matrix_from_json(init.at("k"), m, n, "init.k");
    out.init.l_ff = init.at("l").is_string() && init.at("l").get<std::string>() == "zero"
                        ? Vector::Zero(m)
                        : io::vector_from_json(init.at("l"), m, "init.l");
  } catch (const InputError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  const auto& output = cfg.at("output");
  out.output.trace_path = get_field<std::string>(output, "trace_path", "output");
  out.output.format = get_field<std::string>(output, "format", "output");
  if (out.output.format != "csv" && out.output.format != "json") {
    throw ConfigError("config: output.format must be \"csv\" or \"json\"");
  }

  out.resolved = cfg;
  out.resolved["cost"]["q"] = io::matrix_to_json(out.cost.q_mat);
  out.resolved["cost"]["r"] = io::matrix_to_json(out.cost.r_mat);
  out.resolved["cost"]["delta"] = io::vector_to_json(out.cost.delta);
  out.resolved["cost"]["w_cov"] = io::matrix_to_json(out.cost.w_cov);
  out.resolved["init"]["k"] = io::matrix_to_json(out.init.k_gain);
  out.resolved["init"]["l"] = io::vector_to_json(out.init.l_ff);
  return out;
}

/// Defaults, then an optional user document, then dotted overrides in order.
inline ExperimentConfig load_config(const std::optional<nlohmann::json>& user,
                                    const std::vector<std::pair<std::string, nlohmann::json>>& overrides) {
  nlohmann::json cfg = default_config_json();
  if (user) detail::merge_strict(cfg, *user, "");
  for (const auto& [path, value] : overrides) apply_override(cfg, path, value);
  return resolve_config(cfg);
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

inline LinearSystem build_system(const ExperimentConfig& cfg) {
  LinearSystem sys = cfg.system.mode == "paper"
                         ? benchmark_system()
                         : generate_system(cfg.system.n, cfg.system.m, cfg.system.seed,
                                           cfg.system.target_rho);
  sys.w_cov = cfg.data.w_scale * Matrix::Identity(sys.n(), sys.n());
  return sys;
}

inline OfflineDataset build_dataset(const ExperimentConfig& cfg, const LinearSystem& sys) {
  return collect_data(sys, cfg.data.t_len, cfg.data.seed, cfg.data.noise_on);
}

/// Loads a dataset from a .json file or a directory of per-matrix CSV files.
inline OfflineDataset load_dataset(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) return io::load_dataset_csv(path);
  std::ifstream is(path);
  if (!is) throw InputError("cannot read " + path.string());
  return io::dataset_from_json(nlohmann::json::parse(is));
}

struct RunSummary {
  double final_cost_gap = 0.0;
  double final_policy_error = 0.0;
  std::optional<RateFit> fit;
  std::string fit_error;
  bool monotone = true;  // cost gap never rose by more than kCostGapSlack
};

inline RunSummary summarize(const IterateTrace& trace, double burn_in_frac = 0.05) {
  RunSummary s;
  if (!trace.records.empty()) {
    s.final_cost_gap = trace.records.back().cost_gap;
    s.final_policy_error = trace.records.back().policy_error;
  }
  for (std::size_t i = 1; i < trace.records.size(); ++i) {
    if (trace.records[i].cost_gap > trace.records[i - 1].cost_gap + kCostGapSlack) s.monotone = false;
  }
  try {
    s.fit = fit_convergence_rate(trace, burn_in_frac);
  } catch (const FitError& e) {
    s.fit_error = e.what();
  }
  return s;
}

/// Writes the trace in the configured format plus a "<trace>.config.json" echo.
inline void write_trace_outputs(const ExperimentConfig& cfg, const IterateTrace& trace,
                                const std::filesystem::path& trace_path) {
  if (trace_path.has_parent_path()) std::filesystem::create_directories(trace_path.parent_path());
  {
    std::ofstream os(trace_path);
    if (!os) throw InputError("cannot write " + trace_path.string());
    if (cfg.output.format == "csv") {
      io::write_trace_csv(os, trace);
    } else {
      os << io::trace_to_json(trace).dump(2) << '\n';
    }
  }
  std::ofstream side(trace_path.string() + ".config.json");
  if (!side) throw InputError("cannot write config sidecar for " + trace_path.string());
  side << cfg.resolved.dump(2) << '\n';
}

}  // namespace deepo
