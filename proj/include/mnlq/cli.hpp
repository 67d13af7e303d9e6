#pragma once

// Command-line front end: subcommands oracle, pi, sysid, simulate and
// reproduce. Exit codes: 0 success, 2 configuration error, 3 numerical
// failure, 4 instability.

#include <CLI11.hpp>
#include <Eigen/Dense>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mnlq/bundled_configs.hpp"
#include "mnlq/errors.hpp"
#include "mnlq/experiments.hpp"

namespace mnlq::experiments {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitUnstable = 4;

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParseError:
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kMissingField:
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kNotSymmetric:
      return kExitConfig;
    case ErrorCode::kNotStable:
    case ErrorCode::kNotStabilizing:
    case ErrorCode::kDivergence:
      return kExitUnstable;
    default:
      return kExitNumerical;
  }
}

inline ExperimentConfig bundled_config(std::string_view name) {
  for (const auto& [key, text] : kBundledConfigs) {
    if (key == name) {
      ExperimentConfig cfg = parse_config(text, std::string(name));
      cfg.name = std::string(name);
      return cfg;
    }
  }
  throw Error(ErrorCode::kParseError, "no bundled configuration named " + std::string(name));
}

inline std::vector<std::string> variants_of(std::string_view example) {
  if (example == "example1") {
    return {"example1", "example1_zero_r", "example1_indefinite_r",
            "example1_indefinite_r_published"};
  }
  if (example == "example2") return {"example2", "example2_semidefinite_r"};
  throw Error(ErrorCode::kParseError, "unknown example '" + std::string(example) +
                                          "' (expected example1 or example2)");
}

namespace internal {

inline std::filesystem::path prepare_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw Error(ErrorCode::kParseError, "cannot create output directory " + dir);
  return p;
}

inline std::string header(const ExperimentConfig& cfg, const std::string& what) {
  std::ostringstream os;
  os << what << ": " << cfg.name;
  if (!cfg.description.empty()) os << " (" << cfg.description << ")";
  os << "\n  n = " << cfg.model.n() << ", m = " << cfg.model.m()
     << ", sigma2 = " << format_number(cfg.model.sigma2) << "\n";
  return os.str();
}

inline std::string compare_expected(const ExperimentConfig& cfg, const ValueMatrix& P,
                                    const FeedbackGain& K) {
  std::ostringstream os;
  if (cfg.expected_P) {
    os << "expected P:\n" << format_matrix(*cfg.expected_P);
    os << "  max |P - expected| = " << format_number(max_abs_diff(P, *cfg.expected_P))
       << (matches_printed(P, *cfg.expected_P) ? "  (match at 4 decimals)\n"
                                               : "  (MISMATCH at 4 decimals)\n");
  }
  if (cfg.expected_K) {
    os << "expected K:\n" << format_matrix(*cfg.expected_K);
    os << "  max |K - expected| = " << format_number(max_abs_diff(K, *cfg.expected_K))
       << (matches_printed(K, *cfg.expected_K) ? "  (match at 4 decimals)\n"
                                               : "  (MISMATCH at 4 decimals)\n");
  }
  return os.str();
}

/// Oracle settings: library defaults unless the command line overrides them.
inline SolverSettings oracle_settings(const Overrides& o) {
  SolverSettings s;
  if (o.tolerance) s.tolerance = *o.tolerance;
  if (o.max_iters) s.max_iters = *o.max_iters;
  return s;
}

inline std::optional<OracleSolution> try_oracle(const ExperimentConfig& cfg,
                                                const SolverSettings& s, std::ostream& body) {
  try {
    return model_policy_iteration(cfg.model, cfg.weights, cfg.K0, s);
  } catch (const Error& e) {
    body << "oracle unavailable: " << e.what() << "\n";
    return std::nullopt;
  }
}

inline void append_error_vs_oracle(std::ostream& os, const ValueMatrix& P,
                                   const std::optional<OracleSolution>& oracle) {
  if (!oracle) return;
  const Eigen::MatrixXd err = P - oracle->P;
  os << "oracle P*:\n" << format_matrix(oracle->P);
  os << "oracle K*:\n" << format_matrix(oracle->K);
  os << "error P - P*:\n" << format_matrix(err);
  os << "  ||P - P*||_F / ||P*||_F = " << format_number(err.norm() / oracle->P.norm()) << "\n";
}

}  // namespace internal

inline int run_oracle(const ExperimentConfig& cfg, const Overrides& o, std::ostream& log) {
  const auto dir = internal::prepare_dir(cfg.out_dir);
  const OracleSolution sol =
      model_policy_iteration(cfg.model, cfg.weights, cfg.K0, internal::oracle_settings(o));
  const Eigen::MatrixXd res = sare_residual(cfg.model, cfg.weights, sol.P);
  std::ostringstream body;
  body << internal::header(cfg, "oracle");
  body << "  iterations = " << sol.report.iterations
       << ", converged = " << (sol.report.converged ? "yes" : "no") << "\n";
  body << "P*:\n" << format_matrix(sol.P) << "K*:\n" << format_matrix(sol.K);
  body << "  ||SARE residual||_F = " << format_number(res.norm()) << "\n";
  body << "  mean-square radius under K* = "
       << format_number(is_ms_stable(cfg.model, sol.K).radius) << "\n";
  body << internal::compare_expected(cfg, sol.P, sol.K);
  write_iterates_csv(dir / "iterates.csv", iterate_rows(sol.report));
  write_report(dir / "report.txt", body.str());
  log << body.str();
  return kExitOk;
}

inline int run_pi(const ExperimentConfig& cfg, const Overrides& o, std::ostream& log) {
  const auto dir = internal::prepare_dir(cfg.out_dir);
  std::ostringstream body;
  body << internal::header(cfg, "data-driven policy iteration");
  const auto oracle = internal::try_oracle(cfg, internal::oracle_settings(o), body);
  const RLSolution sol =
      run_algorithm1(cfg.model, cfg.weights, cfg.K0, cfg.plan, cfg.solver,
                     oracle ? std::optional<ValueMatrix>(oracle->P) : std::nullopt);
  const auto& it = sol.record.iterations;
  body << "  mode = " << (cfg.plan.mode == EvaluationMode::kExactMoment ? "exact" : "mc");
  if (cfg.plan.mode == EvaluationMode::kMonteCarlo) body << ", L = " << cfg.plan.paths;
  body << ", windows = " << cfg.plan.windows.size() << ", iterations = " << it.size()
       << ", converged = " << (sol.record.converged ? "yes" : "no") << "\n";
  body << "P(" << it.size() << "):\n" << format_matrix(sol.P);
  body << "K(" << it.size() << "):\n" << format_matrix(sol.K);
  body << "  last ||dP||_F = " << format_number(it.back().delta)
       << ", condition number = " << format_number(it.back().condition_number) << "\n";
  body << internal::compare_expected(cfg, sol.P, sol.K);
  internal::append_error_vs_oracle(body, sol.P, oracle);
  write_iterates_csv(dir / "iterates.csv", iterate_rows(sol.record));
  write_report(dir / "report.txt", body.str());
  log << body.str();
  return kExitOk;
}

inline int run_sysid(const ExperimentConfig& cfg, const Overrides& o, std::ostream& log) {
  if (!cfg.theta0) {
    throw Error(ErrorCode::kMissingField, "required field 'theta0' is missing");
  }
  const auto dir = internal::prepare_dir(cfg.out_dir);
  std::ostringstream body;
  body << internal::header(cfg, "policy iteration with estimated drift");
  const auto oracle = internal::try_oracle(cfg, internal::oracle_settings(o), body);
  // The environment, not the learner, confirms the initial gain.
  require_stabilizing(cfg.model, cfg.K0, cfg.solver.stability_margin, "initial gain");
  SysIdSettings s;
  s.solver = cfg.solver;
  s.form = cfg.form;
  const SysIdSolution sol =
      run_algorithm2(Plant(cfg.model), cfg.weights, cfg.K0, *cfg.theta0, cfg.plan, s,
                     oracle ? std::optional<ValueMatrix>(oracle->P) : std::nullopt);
  const auto& it = sol.record.iterations;
  body << "  rollouts per window = " << cfg.plan.paths << ", iterations = " << it.size()
       << ", converged = " << (sol.record.converged ? "yes" : "no") << "\n";
  body << "P(" << it.size() << "):\n" << format_matrix(sol.P);
  body << "K(" << it.size() << "):\n" << format_matrix(sol.K);
  body << "estimated A:\n" << format_matrix(sol.estimate.A());
  body << "estimated B:\n" << format_matrix(sol.estimate.B());
  body << "  ||[A_hat - A, B_hat - B]||_F = "
       << format_number(std::hypot((sol.estimate.A() - cfg.model.A).norm(),
                                   (sol.estimate.B() - cfg.model.B).norm()))
       << "\n";
  if (!sol.sysid.empty() && sol.sysid.back().model_gap) {
    body << "  last relative gap, data-driven vs model-based evaluation = "
         << format_number(*sol.sysid.back().model_gap) << "\n";
  }
  body << internal::compare_expected(cfg, sol.P, sol.K);
  internal::append_error_vs_oracle(body, sol.P, oracle);
  write_iterates_csv(dir / "iterates.csv", iterate_rows(sol.record));
  write_report(dir / "report.txt", body.str());
  log << body.str();
  return kExitOk;
}

inline int run_simulate(const ExperimentConfig& cfg, const Overrides&, std::ostream& log) {
  const auto dir = internal::prepare_dir(cfg.out_dir);
  write_trajectories_csv(dir / "trajectories.csv", cfg, cfg.K0);
  std::ostringstream body;
  body << internal::header(cfg, "simulation under K0");
  body << "  mean-square radius under K0 = "
       << format_number(is_ms_stable(cfg.model, cfg.K0).radius) << "\n";
  for (std::size_t j = 0; j < cfg.plan.windows.size(); ++j) {
    const Window& w = cfg.plan.windows[j];
    const int l = cfg.simulate.l.value_or(w.l);
    const MomentSequence seq = propagate_moments(cfg.model, cfg.K0, w.x0, w.s, l);
    body << "  window " << j << ": E|x_0|^2 = " << format_number(seq.moments.front().trace())
         << ", E|x_" << (l + 1) << "|^2 = " << format_number(seq.moments.back().trace())
         << "\n";
  }
  write_report(dir / "report.txt", body.str());
  log << body.str();
  return kExitOk;
}

inline int run_reproduce(const std::string& example, const Overrides& o, std::ostream& log,
                         std::ostream& err) {
  const std::string root = o.out_dir.value_or("out");
  int worst = kExitOk;
  for (const std::string& name : variants_of(example)) {
    ExperimentConfig cfg = bundled_config(name);
    apply(o, cfg);
    cfg.out_dir = (std::filesystem::path(root) / name).string();
    try {
      run_pi(cfg, o, log);
      if (name == "example2") {
        ExperimentConfig sim = cfg;
        sim.out_dir = (std::filesystem::path(root) / (name + "_simulate")).string();
        run_simulate(sim, o, log);
      }
    } catch (const Error& e) {
      err << name << ": " << e.what() << "\n";
      worst = std::max(worst, exit_code_for(e.code()));
    }
    log << "\n";
  }
  return worst;
}

/// Entry point of the `mnlq` tool.
inline int run_app(int argc, char** argv, std::ostream& log = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Stochastic LQ control with multiplicative noise: oracle and learners"};
  app.require_subcommand(1);

  std::string config_path;
  std::string mode;
  Overrides o;
  std::string example;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", config_path, "experiment configuration (JSON)");
    if (needs_config) c->required()->check(CLI::ExistingFile);
    sub->add_option("--mode", mode, "policy evaluation mode")
        ->check(CLI::IsMember({"exact", "mc"}));
    sub->add_option_function<int>("--paths", [&](int v) { o.paths = v; },
                                  "Monte Carlo paths per window (L)");
    sub->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t v) { o.seed = v; },
                                            "base random seed");
    sub->add_option_function<double>("--tol", [&](double v) { o.tolerance = v; },
                                      "stopping tolerance on ||dP||_F");
    sub->add_option_function<int>("--max-iters", [&](int v) { o.max_iters = v; },
                                  "iteration cap");
    sub->add_option_function<std::string>("--out", [&](const std::string& v) { o.out_dir = v; },
                                          "output directory");
  };

  auto* oracle = app.add_subcommand("oracle", "model-based policy iteration and SARE residual");
  auto* pi = app.add_subcommand("pi", "data-driven policy iteration");
  auto* sysid = app.add_subcommand("sysid", "policy iteration with estimated A, B");
  auto* simulate = app.add_subcommand("simulate", "dump closed-loop trajectories under K0");
  auto* reproduce = app.add_subcommand("reproduce", "run a bundled example and its variants");
  for (auto* sub : {oracle, pi, sysid, simulate}) add_common(sub, true);
  add_common(reproduce, false);
  reproduce->add_option("example", example, "example1 or example2")
      ->required()
      ->check(CLI::IsMember({"example1", "example2"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, log, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (!mode.empty()) {
      o.mode = mode == "mc" ? EvaluationMode::kMonteCarlo : EvaluationMode::kExactMoment;
    }
    if (reproduce->parsed()) return run_reproduce(example, o, log, err);

    ExperimentConfig cfg = load_config(config_path);
    apply(o, cfg);
    if (oracle->parsed()) return run_oracle(cfg, o, log);
    if (pi->parsed()) return run_pi(cfg, o, log);
    if (sysid->parsed()) return run_sysid(cfg, o, log);
    return run_simulate(cfg, o, log);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
}

}  // namespace mnlq::experiments
