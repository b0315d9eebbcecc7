// deepo: command-line harness for data-enabled policy optimization on the
// setpoint tracking problem.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "deepo/deepo.hpp"
#include "deepo/experiment.hpp"

namespace {

using deepo::Matrix;
using deepo::Vector;
using json = nlohmann::json;

/// Options shared by every subcommand that builds an experiment.
struct CommonOptions {
  std::string config_path;
  std::string dataset_path;
  std::optional<double> eta;
  std::optional<long> iters;
  std::optional<std::string> out;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "Experiment configuration (JSON)");
    app->add_option("--dataset", dataset_path, "Dataset file (.json) or directory of CSV files");
    app->add_option("--eta", eta, "Shortcut for --optimizer.eta");
    app->add_option("--iters", iters, "Shortcut for --optimizer.max_iters");
    app->add_option("--out", out, "Shortcut for --output.trace_path");
    app->allow_extras();
  }

  deepo::ExperimentConfig load(const CLI::App* app) const {
    std::vector<std::pair<std::string, json>> overrides;
    const std::vector<std::string> extras = app->remaining();
    for (std::size_t i = 0; i < extras.size(); ++i) {
      std::string arg = extras[i];
      if (arg.rfind("--", 0) != 0) throw deepo::ConfigError("unexpected argument " + arg);
      arg = arg.substr(2);
      std::string value;
      if (const auto eq = arg.find('='); eq != std::string::npos) {
        value = arg.substr(eq + 1);
        arg = arg.substr(0, eq);
      } else {
        if (i + 1 >= extras.size()) throw deepo::ConfigError("missing value for --" + arg);
        value = extras[++i];
      }
      overrides.emplace_back(arg, deepo::parse_override_value(value));
    }
    if (eta) overrides.emplace_back("optimizer.eta", *eta);
    if (iters) overrides.emplace_back("optimizer.max_iters", *iters);
    if (out) overrides.emplace_back("output.trace_path", *out);
    std::optional<json> user;
    if (!config_path.empty()) user = deepo::read_json_file(config_path);
    return deepo::load_config(user, overrides);
  }

  deepo::OfflineDataset dataset(const deepo::ExperimentConfig& cfg, const deepo::LinearSystem& sys) const {
    if (!dataset_path.empty()) return deepo::load_dataset(dataset_path);
    return deepo::build_dataset(cfg, sys);
  }
};

void print_json(const json& j) { std::cout << j.dump(2) << '\n'; }

json summary_json(const deepo::IterateTrace& trace, const deepo::RunSummary& s) {
  json j{{"status", deepo::to_string(trace.status)},
         {"iterations", trace.iterations},
         {"records", trace.records.size()},
         {"optimal_cost", trace.reference.cost},
         {"final_cost_gap", s.final_cost_gap},
         {"final_policy_error", s.final_policy_error},
         {"cost_increases", trace.cost_increases},
         {"monotone", s.monotone}};
  if (s.fit) {
    j["rate"] = s.fit->rate;
    j["r_squared"] = s.fit->r_squared;
  } else {
    j["rate"] = nullptr;
    j["r_squared"] = nullptr;
    j["fit_error"] = s.fit_error;
  }
  if (trace.failed_iteration) j["failed_iteration"] = *trace.failed_iteration;
  if (!trace.message.empty()) j["message"] = trace.message;
  if (trace.true_optimal_cost) j["true_optimal_cost"] = *trace.true_optimal_cost;
  return j;
}

struct PreparedRun {
  deepo::ExperimentConfig cfg;
  deepo::LinearSystem sys;
  deepo::OfflineDataset ds;
  deepo::DataMatrices dm;
};

PreparedRun prepare(const CommonOptions& opts, const CLI::App* app) {
  PreparedRun p;
  p.cfg = opts.load(app);
  p.sys = deepo::build_system(p.cfg);
  p.ds = opts.dataset(p.cfg, p.sys);
  if (p.ds.n() != p.cfg.system.n || p.ds.m() != p.cfg.system.m) {
    throw deepo::ConfigError("dataset dimensions do not match the configured system");
  }
  p.dm = deepo::build_data_matrices(p.ds);
  return p;
}

/// Runs the configured iteration and writes trace + config echo.
deepo::IterateTrace execute(const PreparedRun& p, const std::string& trace_path) {
  const deepo::CovariancePolicy xi0 = deepo::lift_policy(p.cfg.init, p.dm);
  deepo::IterateTrace trace = deepo::run_deepo(xi0, p.dm, p.cfg.cost, p.cfg.optimizer);
  try {
    const auto opt = deepo::indirect_optimal(p.sys.a, p.sys.b, p.cfg.cost);
    trace.true_optimal_cost = deepo::evaluate_theta(opt.policy(), p.sys.a, p.sys.b, p.cfg.cost).cost;
  } catch (const deepo::Error&) {
    // true-plant optimum is informational only
  }
  deepo::write_trace_outputs(p.cfg, trace, trace_path);
  return trace;
}

int cmd_reproduce(const CommonOptions& opts, const CLI::App* app) {
  const PreparedRun p = prepare(opts, app);
  const auto t0 = std::chrono::steady_clock::now();
  const deepo::IterateTrace trace = execute(p, p.cfg.output.trace_path);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const deepo::RunSummary s = deepo::summarize(trace);
  json j = summary_json(trace, s);
  j["seconds"] = seconds;
  j["trace_path"] = p.cfg.output.trace_path;
  print_json(j);
  if (trace.status == deepo::RunStatus::infeasible) {
    std::cerr << "error: " << trace.message << '\n';
    return deepo::exit_code::numerical;
  }
  const bool ok = s.final_policy_error <= 1e-6 && s.fit && s.fit->r_squared >= 0.99 &&
                  trace.cost_increases == 0;
  if (!ok) {
    std::cerr << "check failed: need final policy_error <= 1e-6, r_squared >= 0.99 and no cost increase\n";
    return deepo::exit_code::acceptance;
  }
  return deepo::exit_code::ok;
}

int cmd_run(const CommonOptions& opts, const CLI::App* app) {
  const PreparedRun p = prepare(opts, app);
  const deepo::IterateTrace trace = execute(p, p.cfg.output.trace_path);
  print_json(summary_json(trace, deepo::summarize(trace)));
  if (trace.status == deepo::RunStatus::infeasible) {
    std::cerr << "error: " << trace.message << '\n';
    return deepo::exit_code::numerical;
  }
  return deepo::exit_code::ok;
}

int cmd_simulate(const CommonOptions& opts, const CLI::App* app, long horizon, std::uint64_t seed,
                 bool noise, const std::string& policy_path, const std::string& states_out) {
  const deepo::ExperimentConfig cfg = opts.load(app);
  deepo::LinearSystem sys = deepo::build_system(cfg);
  if (noise) sys.w_cov = cfg.cost.w_cov;
  deepo::GainPolicy policy = cfg.init;
  if (!policy_path.empty()) policy = deepo::io::gain_policy_from_json(deepo::read_json_file(policy_path));
  const Vector x_init = Vector::Zero(sys.n());
  const auto res = deepo::rollout_policy(sys, policy, x_init, horizon, cfg.cost.q_mat, cfg.cost.r_mat,
                                         cfg.cost.delta, seed, noise);
  deepo::CostParams cp = cfg.cost;
  if (!noise) cp.w_cov.setZero();
  const double closed = deepo::evaluate_theta(policy, sys.a, sys.b, cp).cost;
  if (!states_out.empty()) deepo::io::save_matrix_csv(states_out, res.states);
  print_json({{"average_cost", res.average_cost}, {"closed_form_cost", closed}, {"horizon", horizon}});
  return deepo::exit_code::ok;
}

int cmd_collect(const CommonOptions& opts, const CLI::App* app, const std::string& out_json,
                const std::string& out_dir) {
  const deepo::ExperimentConfig cfg = opts.load(app);
  const deepo::LinearSystem sys = deepo::build_system(cfg);
  const deepo::OfflineDataset ds = deepo::build_dataset(cfg, sys);
  const deepo::PeReport pe = deepo::check_pe(ds);
  if (!out_dir.empty()) deepo::io::save_dataset_csv(out_dir, ds);
  const json doc = deepo::io::dataset_to_json(ds);
  if (!out_json.empty()) {
    std::ofstream os(out_json);
    if (!os) throw deepo::InputError("cannot write " + out_json);
    os << doc.dump(2) << '\n';
  }
  if (out_json.empty() && out_dir.empty()) print_json(doc);
  std::cerr << "persistently exciting: " << (pe.is_pe ? "yes" : "no")
            << " (min singular value " << pe.min_singular_value << ")\n";
  return deepo::exit_code::ok;
}

int cmd_identify(const std::string& dataset_path) {
  const deepo::OfflineDataset ds = deepo::load_dataset(dataset_path);
  const deepo::LsModel model = deepo::identify_ls(ds);
  print_json({{"A_hat", deepo::io::matrix_to_json(model.a_hat)},
              {"B_hat", deepo::io::matrix_to_json(model.b_hat)}});
  return deepo::exit_code::ok;
}

int cmd_evaluate(const CommonOptions& opts, const CLI::App* app, const std::string& policy_path) {
  const PreparedRun p = prepare(opts, app);
  deepo::GainPolicy theta = p.cfg.init;
  if (!policy_path.empty()) theta = deepo::io::gain_policy_from_json(deepo::read_json_file(policy_path));
  const deepo::CovariancePolicy xi = deepo::lift_policy(theta, p.dm);
  const deepo::PolicyEvaluation ev = deepo::evaluate_xi(xi, p.dm, p.cfg.cost);
  json j = deepo::io::evaluation_to_json(ev);
  j["xi"] = deepo::io::covariance_policy_to_json(xi);
  j["gradient"] = deepo::io::matrix_to_json(ev.gradient());
  print_json(j);
  return deepo::exit_code::ok;
}

/// Central finite differences of J in every coordinate of xi.
Matrix finite_difference_gradient(const deepo::CovariancePolicy& xi, const deepo::DataMatrices& dm,
                                  const deepo::CostParams& cp, double step) {
  const Matrix base = xi.stacked();
  Matrix fd(base.rows(), base.cols());
  for (Eigen::Index i = 0; i < base.rows(); ++i) {
    for (Eigen::Index j = 0; j < base.cols(); ++j) {
      Matrix plus = base, minus = base;
      plus(i, j) += step;
      minus(i, j) -= step;
      const auto cost = [&](const Matrix& x) {
        return deepo::evaluate_xi(deepo::CovariancePolicy::from_stacked(x), dm, cp,
                                  deepo::FeasibilityCheck::stability_only)
            .cost;
      };
      fd(i, j) = (cost(plus) - cost(minus)) / (2.0 * step);
    }
  }
  return fd;
}

int cmd_gradcheck(const CommonOptions& opts, const CLI::App* app, int trials, std::uint64_t seed,
                  double tol) {
  const PreparedRun p = prepare(opts, app);
  const deepo::LsModel model = deepo::identify_ls(p.dm);
  deepo::NormalRng rng(seed);
  double worst = 0.0;
  json rows = json::array();
  int done = 0;
  for (int attempt = 0; done < trials && attempt < 100 * trials; ++attempt) {
    deepo::GainPolicy theta{p.cfg.init.k_gain + 0.1 * rng.normal_matrix(p.sys.m(), p.sys.n()),
                            p.cfg.init.l_ff + rng.normal_vector(p.sys.m())};
    if (!deepo::is_schur_stable(model.a_hat + model.b_hat * theta.k_gain)) continue;
    const auto xi = deepo::lift_policy(theta, p.dm);
    const Matrix analytic = deepo::gradient_xi(xi, p.dm, p.cfg.cost);
    const Matrix fd = finite_difference_gradient(xi, p.dm, p.cfg.cost, 1e-6);
    const double rel = (fd - analytic).norm() / std::max(1e-12, analytic.norm());
    worst = std::max(worst, rel);
    rows.push_back({{"trial", done}, {"relative_error", rel}});
    ++done;
  }
  print_json({{"trials", done}, {"max_relative_error", worst}, {"tolerance", tol}, {"details", rows}});
  return worst <= tol && done == trials ? deepo::exit_code::ok : deepo::exit_code::acceptance;
}

int cmd_equivcheck(const CommonOptions& opts, const CLI::App* app, int steps, double tol) {
  const PreparedRun p = prepare(opts, app);
  const deepo::LsModel model = deepo::identify_ls(p.dm);
  const deepo::MMatrix m = deepo::compute_m(p.dm);
  const Matrix projector = deepo::projector_nullspace(p.dm.x0_bar);
  deepo::CovariancePolicy xi = deepo::lift_policy(p.cfg.init, p.dm);
  double worst = 0.0;
  int done = 0;
  for (; done < steps; ++done) {
    const auto step = deepo::deepo_step(xi, p.dm, p.cfg.cost, p.cfg.optimizer.eta, projector);
    if (!step.stable) break;
    const deepo::GainPolicy via_data = deepo::recover_policy(step.next, p.dm);
    const deepo::GainPolicy via_model = deepo::model_po_step(deepo::recover_policy(xi, p.dm), m.m_mat,
                                                             model.a_hat, model.b_hat, p.cfg.cost,
                                                             p.cfg.optimizer.eta);
    const double diff = std::sqrt((via_data.k_gain - via_model.k_gain).squaredNorm() +
                                  (via_data.l_ff - via_model.l_ff).squaredNorm());
    worst = std::max(worst, diff);
    xi = step.next;
  }
  print_json({{"steps", done}, {"max_difference", worst}, {"tolerance", tol}, {"min_eig_M", m.min_eig}});
  return worst <= tol && done == steps ? deepo::exit_code::ok : deepo::exit_code::acceptance;
}

int cmd_compare(const CommonOptions& opts, const CLI::App* app) {
  const PreparedRun p = prepare(opts, app);
  const deepo::IterateTrace trace = execute(p, p.cfg.output.trace_path);
  const deepo::GainPolicy deepo_policy = deepo::recover_policy(trace.final_policy, p.dm);
  const auto true_opt = deepo::indirect_optimal(p.sys.a, p.sys.b, p.cfg.cost);
  const auto cost_on_plant = [&](const deepo::GainPolicy& th) {
    return deepo::evaluate_theta(th, p.sys.a, p.sys.b, p.cfg.cost).cost;
  };
  print_json({{"status", deepo::to_string(trace.status)},
              {"deepo_data_cost", trace.records.back().cost},
              {"indirect_data_cost", trace.reference.cost},
              {"deepo_true_cost", cost_on_plant(deepo_policy)},
              {"indirect_true_cost", cost_on_plant(trace.reference.indirect.policy())},
              {"true_optimal_cost", cost_on_plant(true_opt.policy())},
              {"deepo_policy", deepo::io::gain_policy_to_json(deepo_policy)},
              {"indirect_policy", deepo::io::gain_policy_to_json(trace.reference.indirect.policy())}});
  return trace.status == deepo::RunStatus::infeasible ? deepo::exit_code::numerical : deepo::exit_code::ok;
}

int cmd_sweep(const CommonOptions& opts, const CLI::App* app, std::uint64_t first, std::uint64_t count) {
  const deepo::ExperimentConfig base = opts.load(app);
  const std::filesystem::path trace_path = base.output.trace_path;
  std::vector<std::future<json>> jobs;
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::uint64_t seed = first + k;
    jobs.push_back(std::async(std::launch::async, [&, seed]() -> json {
      PreparedRun p;
      p.cfg = base;
      p.cfg.data.seed = seed;
      p.cfg.resolved["data"]["seed"] = seed;
      try {
        p.sys = deepo::build_system(p.cfg);
        p.ds = deepo::build_dataset(p.cfg, p.sys);
        p.dm = deepo::build_data_matrices(p.ds);
        std::filesystem::path out = trace_path;
        out.replace_filename(trace_path.stem().string() + "_seed" + std::to_string(seed) +
                             trace_path.extension().string());
        const auto trace = execute(p, out.string());
        json j = summary_json(trace, deepo::summarize(trace));
        j["seed"] = seed;
        return j;
      } catch (const deepo::Error& e) {
        return {{"seed", seed}, {"error", e.what()}};
      }
    }));
  }
  json results = json::array();
  for (auto& f : jobs) results.push_back(f.get());
  print_json(results);
  return deepo::exit_code::ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data-enabled policy optimization for linear quadratic tracking"};
  app.require_subcommand(1);

  CommonOptions common;

  auto* reproduce = app.add_subcommand("reproduce", "Run the benchmark experiment and check convergence");
  common.attach(reproduce);

  auto* run = app.add_subcommand("run", "Run the iteration for a general configuration");
  common.attach(run);

  long horizon = 100000;
  std::uint64_t sim_seed = 0;
  bool sim_noise = false;
  std::string policy_path, states_out;
  auto* simulate = app.add_subcommand("simulate", "Roll out a gain policy on the true plant");
  common.attach(simulate);
  simulate->add_option("--horizon", horizon, "Number of simulated steps");
  simulate->add_option("--seed", sim_seed, "Noise seed");
  simulate->add_flag("--noise", sim_noise, "Inject process noise with covariance cost.w_cov");
  simulate->add_option("--policy", policy_path, "Gain policy JSON {K, l}");
  simulate->add_option("--states-out", states_out, "Write the state trajectory as CSV");

  std::string collect_json, collect_dir;
  auto* collect = app.add_subcommand("collect", "Generate an offline dataset");
  common.attach(collect);
  collect->add_option("--json", collect_json, "Write the dataset as one JSON document");
  collect->add_option("--csv-dir", collect_dir, "Write one CSV file per matrix into this directory");

  std::string identify_dataset;
  auto* identify = app.add_subcommand("identify", "Least-squares estimate of (A, B) from a dataset");
  identify->add_option("dataset", identify_dataset, "Dataset JSON file or CSV directory")->required();

  std::string eval_policy;
  auto* evaluate = app.add_subcommand("evaluate", "Closed-form cost and gradient of a policy");
  common.attach(evaluate);
  evaluate->add_option("--policy", eval_policy, "Gain policy JSON {K, l} (default: init)");

  int gc_trials = 20;
  std::uint64_t gc_seed = 1;
  double gc_tol = 1e-5;
  auto* gradcheck = app.add_subcommand("gradcheck", "Compare the analytic gradient to finite differences");
  common.attach(gradcheck);
  gradcheck->add_option("--trials", gc_trials, "Number of random feasible policies");
  gradcheck->add_option("--seed", gc_seed, "Seed for the random policies");
  gradcheck->add_option("--tol", gc_tol, "Relative error tolerance");

  int eq_steps = 20;
  double eq_tol = 1e-10;
  auto* equivcheck = app.add_subcommand("equivcheck", "Compare data-space and model-space steps");
  common.attach(equivcheck);
  equivcheck->add_option("--steps", eq_steps, "Number of consecutive steps to compare");
  equivcheck->add_option("--tol", eq_tol, "Absolute tolerance on (K, l)");

  auto* compare = app.add_subcommand("compare", "Compare DeePO, indirect and true-model costs");
  common.attach(compare);

  std::uint64_t sweep_first = 0, sweep_count = 10;
  auto* sweep = app.add_subcommand("sweep", "Run over consecutive data seeds concurrently");
  common.attach(sweep);
  sweep->add_option("--first-seed", sweep_first, "First data seed");
  sweep->add_option("--count", sweep_count, "Number of seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : deepo::exit_code::config;
  }

  try {
    if (*reproduce) return cmd_reproduce(common, reproduce);
    if (*run) return cmd_run(common, run);
    if (*simulate) return cmd_simulate(common, simulate, horizon, sim_seed, sim_noise, policy_path, states_out);
    if (*collect) return cmd_collect(common, collect, collect_json, collect_dir);
    if (*identify) return cmd_identify(identify_dataset);
    if (*evaluate) return cmd_evaluate(common, evaluate, eval_policy);
    if (*gradcheck) return cmd_gradcheck(common, gradcheck, gc_trials, gc_seed, gc_tol);
    if (*equivcheck) return cmd_equivcheck(common, equivcheck, eq_steps, eq_tol);
    if (*compare) return cmd_compare(common, compare);
    if (*sweep) return cmd_sweep(common, sweep, sweep_first, sweep_count);
  } catch (const deepo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return deepo::exit_code::config;
  } catch (const deepo::InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return deepo::exit_code::config;
  } catch (const deepo::DimensionError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return deepo::exit_code::config;
  } catch (const deepo::Error& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return deepo::exit_code::numerical;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return deepo::exit_code::config;
  }
  return deepo::exit_code::config;
}
