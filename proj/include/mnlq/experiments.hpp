#pragma once

// Experiment plumbing: JSON configuration, CSV/report writers and the run
// drivers behind the command line tool.

#include <Eigen/Dense>
#include <json.hpp>

#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mnlq/errors.hpp"
#include "mnlq/matops.hpp"
#include "mnlq/oracle.hpp"
#include "mnlq/plant.hpp"
#include "mnlq/policy_iteration.hpp"
#include "mnlq/sysid.hpp"
#include "mnlq/system.hpp"

namespace mnlq::experiments {

struct SimulateSettings {
  int paths = 3;
  std::optional<int> l;  // defaults to each window's own length
};

struct ExperimentConfig {
  std::string name;
  std::string description;
  SystemModel model;
  CostWeights weights;
  FeedbackGain K0;
  std::optional<ParameterEstimate> theta0;
  ExcitationPlan plan;
  SolverSettings solver;
  ResidualForm form = ResidualForm::kLevel;
  SimulateSettings simulate;
  std::string out_dir = "out";
  std::optional<ValueMatrix> expected_P;
  std::optional<FeedbackGain> expected_K;
};

namespace internal {

using nlohmann::json;

inline const json* lookup(const json& root, std::string_view dotted) {
  const json* node = &root;
  std::size_t start = 0;
  while (start <= dotted.size()) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key(dotted.substr(start, dot == std::string_view::npos
                                                   ? std::string_view::npos
                                                   : dot - start));
    if (!node->is_object()) return nullptr;
    auto it = node->find(key);
    if (it == node->end()) return nullptr;
    node = &*it;
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return node;
}

inline const json& require(const json& root, const std::string& field) {
  const json* node = lookup(root, field);
  if (!node || node->is_null()) {
    throw Error(ErrorCode::kMissingField, "required field '" + field + "' is missing");
  }
  return *node;
}

inline double number(const json& node, const std::string& field) {
  if (!node.is_number()) {
    throw Error(ErrorCode::kParseError, "field '" + field + "' must be a number");
  }
  return node.get<double>();
}

inline Eigen::MatrixXd matrix(const json& node, const std::string& field) {
  if (!node.is_array() || node.empty()) {
    throw Error(ErrorCode::kParseError,
                "field '" + field + "' must be a non-empty list of rows");
  }
  const std::size_t rows = node.size();
  if (!node[0].is_array()) {
    throw Error(ErrorCode::kParseError, "field '" + field + "' row 0 is not a list");
  }
  const std::size_t cols = node[0].size();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    const json& row = node[i];
    if (!row.is_array() || row.size() != cols) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "field '" + field + "' row " + std::to_string(i) + " has " +
                      std::to_string(row.is_array() ? row.size() : 0) + " entries, row 0 has " +
                      std::to_string(cols));
    }
    for (std::size_t j = 0; j < cols; ++j) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          number(row[j], field + "[" + std::to_string(i) + "][" + std::to_string(j) + "]");
    }
  }
  return out;
}

inline Eigen::MatrixXd matrix_at(const json& root, const std::string& field) {
  return matrix(require(root, field), field);
}

inline Eigen::VectorXd vector(const json& node, const std::string& field) {
  if (!node.is_array() || node.empty()) {
    throw Error(ErrorCode::kParseError, "field '" + field + "' must be a non-empty list");
  }
  Eigen::VectorXd out(static_cast<Eigen::Index>(node.size()));
  for (std::size_t i = 0; i < node.size(); ++i) {
    out(static_cast<Eigen::Index>(i)) =
        number(node[i], field + "[" + std::to_string(i) + "]");
  }
  return out;
}

inline void expect_shape(const Eigen::MatrixXd& m, Eigen::Index rows, Eigen::Index cols,
                         const std::string& field, const std::string& why) {
  if (m.rows() != rows || m.cols() != cols) {
    throw Error(ErrorCode::kDimensionMismatch,
                "field '" + field + "' is " + shape_of(m) + " but " + why + " requires " +
                    std::to_string(rows) + "x" + std::to_string(cols));
  }
}

template <typename T>
T integer(const json& node, const std::string& field) {
  if (!node.is_number_integer() && !node.is_number_unsigned()) {
    throw Error(ErrorCode::kParseError, "field '" + field + "' must be an integer");
  }
  return node.get<T>();
}

}  // namespace internal

/// Parses and validates a configuration document. `source` names it in
/// error messages.
inline ExperimentConfig parse_config(std::string_view text, const std::string& source = "config") {
  using internal::json;
  json root;
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    root = json::object();
  } else {
    try {
      root = json::parse(text);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::kParseError, source + ": " + e.what());
    }
  }
  if (!root.is_object()) {
    throw Error(ErrorCode::kParseError, source + ": top level must be an object");
  }

  ExperimentConfig cfg;
  cfg.name = source;
  if (const json* d = internal::lookup(root, "description"); d && d->is_string()) {
    cfg.description = d->get<std::string>();
  }

  auto& md = cfg.model;
  md.A = internal::matrix_at(root, "model.A");
  const Eigen::Index n = md.A.rows();
  internal::expect_shape(md.A, n, n, "model.A", "a square state matrix");
  md.B = internal::matrix_at(root, "model.B");
  if (md.B.rows() != n) {
    throw Error(ErrorCode::kDimensionMismatch,
                "field 'model.B' has " + std::to_string(md.B.rows()) +
                    " rows but model.A is " + shape_of(md.A));
  }
  const Eigen::Index m = md.B.cols();
  cfg.K0 = internal::matrix_at(root, "K0");
  if (cfg.K0.rows() != m || cfg.K0.cols() != n) {
    throw Error(ErrorCode::kDimensionMismatch,
                "field 'K0' is " + shape_of(cfg.K0) + " but model.B (" + shape_of(md.B) +
                    ") and model.A (" + shape_of(md.A) + ") require " + std::to_string(m) +
                    "x" + std::to_string(n));
  }
  md.C = internal::matrix_at(root, "model.C");
  internal::expect_shape(md.C, n, n, "model.C", "model.A");
  md.D = internal::matrix_at(root, "model.D");
  internal::expect_shape(md.D, n, m, "model.D", "model.A and model.B");
  md.sigma2 = internal::number(internal::require(root, "model.sigma2"), "model.sigma2");
  if (!(md.sigma2 >= 0.0)) {
    throw Error(ErrorCode::kParseError, "field 'model.sigma2' must be non-negative");
  }

  cfg.weights.Q = internal::matrix_at(root, "cost.Q");
  internal::expect_shape(cfg.weights.Q, n, n, "cost.Q", "model.A");
  cfg.weights.S = internal::matrix_at(root, "cost.S");
  internal::expect_shape(cfg.weights.S, m, n, "cost.S", "model.B and model.A");
  cfg.weights.R = internal::matrix_at(root, "cost.R");
  internal::expect_shape(cfg.weights.R, m, m, "cost.R", "model.B");

  if (const json* t = internal::lookup(root, "theta0"); t && !t->is_null()) {
    const Eigen::MatrixXd a = internal::matrix_at(root, "theta0.A");
    internal::expect_shape(a, n, n, "theta0.A", "model.A");
    const Eigen::MatrixXd b = internal::matrix_at(root, "theta0.B");
    internal::expect_shape(b, n, m, "theta0.B", "model.B");
    cfg.theta0 = ParameterEstimate::from_model(a, b);
  }

  if (const json* plan = internal::lookup(root, "plan"); plan && !plan->is_null()) {
    if (const json* mode = internal::lookup(*plan, "mode")) {
      const std::string s = mode->is_string() ? mode->get<std::string>() : "";
      if (s == "exact") {
        cfg.plan.mode = EvaluationMode::kExactMoment;
      } else if (s == "mc") {
        cfg.plan.mode = EvaluationMode::kMonteCarlo;
      } else {
        throw Error(ErrorCode::kParseError, "field 'plan.mode' must be \"exact\" or \"mc\"");
      }
    }
    if (const json* p = internal::lookup(*plan, "paths")) {
      cfg.plan.paths = internal::integer<int>(*p, "plan.paths");
    }
    if (const json* s = internal::lookup(*plan, "seed")) {
      cfg.plan.seed = internal::integer<std::uint64_t>(*s, "plan.seed");
    }
    if (const json* ws = internal::lookup(*plan, "windows")) {
      if (!ws->is_array()) {
        throw Error(ErrorCode::kParseError, "field 'plan.windows' must be a list");
      }
      for (std::size_t j = 0; j < ws->size(); ++j) {
        const std::string f = "plan.windows[" + std::to_string(j) + "]";
        Window w;
        const json& win = (*ws)[j];
        if (!win.is_object() || !win.contains("x0")) {
          throw Error(ErrorCode::kMissingField, "required field '" + f + ".x0' is missing");
        }
        w.x0 = internal::vector(win["x0"], f + ".x0");
        if (w.x0.size() != n) {
          throw Error(ErrorCode::kDimensionMismatch,
                      "field '" + f + ".x0' has length " + std::to_string(w.x0.size()) +
                          " but model.A is " + shape_of(md.A));
        }
        if (const json* s = internal::lookup(win, "s")) {
          w.s = internal::integer<int>(*s, f + ".s");
        }
        if (const json* l = internal::lookup(win, "l")) {
          w.l = internal::integer<int>(*l, f + ".l");
        }
        cfg.plan.windows.push_back(w);
      }
    }
  }
  if (cfg.plan.windows.empty()) cfg.plan.windows = default_windows(n);

  if (const json* sv = internal::lookup(root, "solver"); sv && !sv->is_null()) {
    if (const json* t = internal::lookup(*sv, "tolerance")) {
      cfg.solver.tolerance = internal::number(*t, "solver.tolerance");
    }
    if (const json* mi = internal::lookup(*sv, "max_iters")) {
      cfg.solver.max_iters = internal::integer<int>(*mi, "solver.max_iters");
    }
    if (const json* rc = internal::lookup(*sv, "require_convergence")) {
      if (!rc->is_boolean()) {
        throw Error(ErrorCode::kParseError, "field 'solver.require_convergence' must be boolean");
      }
      cfg.solver.require_convergence = rc->get<bool>();
    }
    if (const json* rf = internal::lookup(*sv, "residual_form")) {
      const std::string s = rf->is_string() ? rf->get<std::string>() : "";
      if (s == "level") {
        cfg.form = ResidualForm::kLevel;
      } else if (s == "difference") {
        cfg.form = ResidualForm::kDifference;
      } else {
        throw Error(ErrorCode::kParseError,
                    "field 'solver.residual_form' must be \"level\" or \"difference\"");
      }
    }
  }

  if (const json* sim = internal::lookup(root, "simulate"); sim && !sim->is_null()) {
    if (const json* p = internal::lookup(*sim, "paths")) {
      cfg.simulate.paths = internal::integer<int>(*p, "simulate.paths");
    }
    if (const json* l = internal::lookup(*sim, "l")) {
      cfg.simulate.l = internal::integer<int>(*l, "simulate.l");
    }
  }

  if (const json* dir = internal::lookup(root, "output.dir"); dir && dir->is_string()) {
    cfg.out_dir = dir->get<std::string>();
  }
  if (internal::lookup(root, "expected.P")) {
    cfg.expected_P = internal::matrix_at(root, "expected.P");
    internal::expect_shape(*cfg.expected_P, n, n, "expected.P", "model.A");
  }
  if (internal::lookup(root, "expected.K")) {
    cfg.expected_K = internal::matrix_at(root, "expected.K");
    internal::expect_shape(*cfg.expected_K, m, n, "expected.K", "K0");
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParseError, "cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentConfig cfg = parse_config(ss.str(), path.string());
  cfg.name = path.stem().string();
  return cfg;
}

/// Command-line overrides; unset members keep the config value.
struct Overrides {
  std::optional<EvaluationMode> mode;
  std::optional<int> paths;
  std::optional<std::uint64_t> seed;
  std::optional<double> tolerance;
  std::optional<int> max_iters;
  std::optional<std::string> out_dir;
};

inline void apply(const Overrides& o, ExperimentConfig& cfg) {
  if (o.mode) cfg.plan.mode = *o.mode;
  if (o.paths) {
    cfg.plan.paths = *o.paths;
    cfg.simulate.paths = *o.paths;
  }
  if (o.seed) cfg.plan.seed = *o.seed;
  if (o.tolerance) cfg.solver.tolerance = *o.tolerance;
  if (o.max_iters) cfg.solver.max_iters = *o.max_iters;
  if (o.out_dir) cfg.out_dir = *o.out_dir;
}

// ---------------------------------------------------------------------------
// Output formatting.

/// Shortest round-trip decimal representation, independent of the C locale.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline std::string fixed4(double v) {
  std::array<char, 64> buf{};
  const auto res =
      std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::fixed, 4);
  std::string s(buf.data(), res.ptr);
  if (s == "-0.0000") s = "0.0000";
  return s;
}

inline std::string format_matrix(const Eigen::MatrixXd& M, const std::string& indent = "  ") {
  std::vector<std::string> cells;
  std::size_t width = 0;
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      cells.push_back(fixed4(M(i, j)));
      width = std::max(width, cells.back().size());
    }
  }
  std::string out;
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    out += indent + "[";
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      const std::string& c = cells[static_cast<std::size_t>(i * M.cols() + j)];
      out += " " + std::string(width - c.size(), ' ') + c;
    }
    out += " ]\n";
  }
  return out;
}

/// One line of iterates.csv.
struct IterateRow {
  int iteration = 0;
  ValueMatrix P;
  FeedbackGain K;
  double delta = 0.0;
  double radius = 0.0;
  std::optional<double> condition_number;
};

inline void write_iterates_csv(const std::filesystem::path& path,
                               const std::vector<IterateRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kParseError, "cannot write " + path.string());
  if (rows.empty()) return;
  const Eigen::Index np = half_size(rows.front().P.rows());
  const Eigen::Index nk = rows.front().K.size();
  out << "iteration";
  for (Eigen::Index i = 0; i < np; ++i) out << ",p" << (i + 1);
  for (Eigen::Index i = 0; i < nk; ++i) out << ",k" << (i + 1);
  out << ",delta_p,spectral_radius,condition_number\n";
  for (const IterateRow& r : rows) {
    out << r.iteration;
    const Eigen::VectorXd p = vec_plus(r.P).entries;
    for (Eigen::Index i = 0; i < p.size(); ++i) out << ',' << format_number(p(i));
    const Eigen::VectorXd k = vec(r.K);
    for (Eigen::Index i = 0; i < k.size(); ++i) out << ',' << format_number(k(i));
    out << ',' << format_number(r.delta) << ',' << format_number(r.radius) << ',';
    if (r.condition_number) out << format_number(*r.condition_number);
    out << '\n';
  }
}

inline std::vector<IterateRow> iterate_rows(const SolveReport& report) {
  std::vector<IterateRow> rows;
  for (std::size_t i = 0; i < report.history.size(); ++i) {
    const IterationRecord& h = report.history[i];
    rows.push_back({static_cast<int>(i), h.P, h.K, h.delta, h.radius, std::nullopt});
  }
  return rows;
}

inline std::vector<IterateRow> iterate_rows(const RLRunRecord& record) {
  std::vector<IterateRow> rows;
  for (std::size_t i = 0; i < record.iterations.size(); ++i) {
    const RLIteration& h = record.iterations[i];
    rows.push_back({static_cast<int>(i), h.P, h.K, h.delta, h.radius, h.condition_number});
  }
  return rows;
}

/// Writes t, path, x1..xn for `L` paths from every plan window under K.
inline void write_trajectories_csv(const std::filesystem::path& path,
                                   const ExperimentConfig& cfg, const FeedbackGain& K) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kParseError, "cannot write " + path.string());
  const Eigen::Index n = cfg.model.n();
  out << "t,path";
  for (Eigen::Index i = 0; i < n; ++i) out << ",x" << (i + 1);
  out << '\n';
  const ClosedLoop cl = closed_loop(cfg.model, K);
  const int L = cfg.simulate.paths;
  for (std::size_t j = 0; j < cfg.plan.windows.size(); ++j) {
    const Window& w = cfg.plan.windows[j];
    const int l = cfg.simulate.l.value_or(w.l);
    for_each_path(cl, cfg.model.sigma2, w.x0, l, L, derive_seed(cfg.plan.seed, j),
                  [&](int k, const Eigen::MatrixXd& states) {
                    const long id = static_cast<long>(j) * L + k;
                    for (Eigen::Index t = 0; t < states.cols(); ++t) {
                      out << (w.s + t) << ',' << id;
                      for (Eigen::Index i = 0; i < n; ++i) {
                        out << ',' << format_number(states(i, t));
                      }
                      out << '\n';
                    }
                  });
  }
}

inline std::string timestamp_utc() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// report.txt; the timestamp appears only in the first line.
inline void write_report(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kParseError, "cannot write " + path.string());
  out << "# generated " << timestamp_utc() << '\n' << body;
}

// ---------------------------------------------------------------------------
// Comparisons against expected (printed) values.

/// Largest absolute entry of a - b.
inline double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

/// Every entry agrees with the 4-decimal printed value, allowing for print
/// rounding.
inline bool matches_printed(const Eigen::MatrixXd& value, const Eigen::MatrixXd& printed,
                            double tol = 5e-5) {
  return value.rows() == printed.rows() && value.cols() == printed.cols() &&
         max_abs_diff(value, printed) <= tol + 1e-12;
}

struct Calibration {
  double sigma2 = 0.0;
  ValueMatrix P;
  FeedbackGain K;
  bool matched = false;
};

/// Bisects the noise variance so that the (0,0) entry of the value matrix
/// after cfg.solver.max_iters exact data-driven iterations hits `target`,
/// then refines by golden-section search on ||P - target||_F. That entry
/// grows with the variance; runs that fail count as too large.
inline Calibration calibrate_noise_variance(const ExperimentConfig& cfg,
                                            const ValueMatrix& target, double lo, double hi,
                                            int steps = 80) {
  SolverSettings s = cfg.solver;
  s.require_convergence = false;
  ExcitationPlan plan = cfg.plan;
  plan.mode = EvaluationMode::kExactMoment;
  auto run = [&](double sigma2) -> std::optional<RLSolution> {
    SystemModel model = cfg.model;
    model.sigma2 = sigma2;
    try {
      return run_algorithm1(model, cfg.weights, cfg.K0, plan, s);
    } catch (const Error&) {
      return std::nullopt;
    }
  };
  for (int i = 0; i < steps && hi - lo > 1e-15 * std::max(1.0, hi); ++i) {
    const double mid = 0.5 * (lo + hi);
    const auto r = run(mid);
    if (!r || r->P(0, 0) > target(0, 0)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  // Refine against the whole matrix.
  auto distance = [&](double sigma2) {
    const auto r = run(sigma2);
    return r ? (r->P - target).norm() : std::numeric_limits<double>::infinity();
  };
  const double mid = 0.5 * (lo + hi);
  const double ratio = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = std::max(0.0, mid * (1.0 - 1e-3)), b = mid * (1.0 + 1e-3);
  double c = b - ratio * (b - a), d = a + ratio * (b - a);
  double fc = distance(c), fd = distance(d);
  for (int i = 0; i < steps && b - a > 1e-14 * std::max(1.0, b); ++i) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - ratio * (b - a);
      fc = distance(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + ratio * (b - a);
      fd = distance(d);
    }
  }
  Calibration out;
  out.sigma2 = 0.5 * (a + b);
  if (const auto r = run(out.sigma2)) {
    out.P = r->P;
    out.K = r->K;
    out.matched = matches_printed(r->P, target);
  }
  return out;
}

}  // namespace mnlq::experiments
