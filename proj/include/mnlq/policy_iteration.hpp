#pragma once

// Data-driven policy iteration. Policy evaluation fits the value matrix P of
// the current gain from window statistics through the Bellman identity
//
//   x0'P x0 - E[x_{s+l+1}' P x_{s+l+1}] = E sum_{t=s}^{s+l} x_t'(Q + K'S + S'K + K'RK)x_t,
//
// one linear equation in vec_plus(P) per window. Policy improvement is the
// usual gain formula.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mnlq/errors.hpp"
#include "mnlq/matops.hpp"
#include "mnlq/oracle.hpp"
#include "mnlq/plant.hpp"
#include "mnlq/rng.hpp"
#include "mnlq/system.hpp"

namespace mnlq {

/// Condition number of X W above which an evaluation is flagged.
inline constexpr double kConditionWarning = 1e8;
/// Singular values below this fraction of the largest count as zero.
inline constexpr double kRankTolerance = 1e-12;

struct ExcitationPlan {
  std::vector<Window> windows;
  EvaluationMode mode = EvaluationMode::kExactMoment;
  int paths = 1000;  // L, Monte Carlo mode only
  std::uint64_t seed = 0;

  void validate(Eigen::Index n) const {
    if (static_cast<Eigen::Index>(windows.size()) < half_size(n)) {
      throw Error(ErrorCode::kRankDeficient,
                  "plan has " + std::to_string(windows.size()) +
                      " windows, at least n(n+1)/2 = " + std::to_string(half_size(n)) +
                      " are required");
    }
    for (std::size_t j = 0; j < windows.size(); ++j) {
      if (windows[j].x0.size() != n) {
        throw Error(ErrorCode::kShapeMismatch,
                    "window " + std::to_string(j) + " initial state has length " +
                        std::to_string(windows[j].x0.size()));
      }
      if (windows[j].l < 0) {
        throw Error(ErrorCode::kShapeMismatch,
                    "window " + std::to_string(j) + " has negative length");
      }
    }
    if (mode == EvaluationMode::kMonteCarlo && paths < 1) {
      throw Error(ErrorCode::kShapeMismatch, "Monte Carlo mode needs paths >= 1");
    }
  }
};

/// Initial states e_i and e_i + e_j (i < j), all with s = 0 and length l.
/// For n = 2 the states (3,7), (2,18), (14,3) are used instead.
inline std::vector<Window> default_windows(Eigen::Index n, int l = 200) {
  std::vector<Window> out;
  if (n == 2) {
    const double states[3][2] = {{3.0, 7.0}, {2.0, 18.0}, {14.0, 3.0}};
    for (const auto& xy : states) {
      Eigen::VectorXd x(2);
      x << xy[0], xy[1];
      out.push_back({x, 0, l});
    }
    return out;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    out.push_back({Eigen::VectorXd::Unit(n, i), 0, l});
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      out.push_back({Eigen::VectorXd::Unit(n, i) + Eigen::VectorXd::Unit(n, j), 0, l});
    }
  }
  return out;
}

/// Seed of window j at policy-iteration step i.
constexpr std::uint64_t window_seed(std::uint64_t plan_seed, int iteration, std::size_t j) {
  return derive_seed(derive_seed(plan_seed, static_cast<std::uint64_t>(iteration)),
                     static_cast<std::uint64_t>(j));
}

inline WindowStatistics observe_window(const Plant& plant, const Eigen::MatrixXd& phi,
                                       const FeedbackGain& K, const Window& window,
                                       EvaluationMode mode, int L, std::uint64_t seed) {
  return mode == EvaluationMode::kExactMoment ? plant.expected(phi, K, window)
                                              : plant.sampled(phi, K, window, L, seed);
}

/// Cost accumulated over the window (the right-hand side of one equation).
inline double delta_j(const SystemModel& model, const CostWeights& w, const FeedbackGain& K,
                      const Window& window, EvaluationMode mode, int L, std::uint64_t seed) {
  return observe_window(Plant(model), stage_weight(w, K), K, window, mode, L, seed).cost;
}

/// (x0 (x) x0)' - E[x_{s+l+1} (x) x_{s+l+1}]' from terminal second moments.
inline Eigen::RowVectorXd regression_row(const Eigen::VectorXd& x0,
                                         const Eigen::MatrixXd& terminal_moment) {
  return (vec(x0 * x0.transpose()) - vec(terminal_moment)).transpose();
}

inline Eigen::RowVectorXd terminal_row(const SystemModel& model, const FeedbackGain& K,
                                       const Window& window, EvaluationMode mode, int L,
                                       std::uint64_t seed) {
  const Eigen::MatrixXd none = Eigen::MatrixXd::Zero(model.n(), model.n());
  const WindowStatistics st = observe_window(Plant(model), none, K, window, mode, L, seed);
  return regression_row(window.x0, st.terminal_moment);
}

/// X vec(P) = J, one row per window.
struct RegressionSystem {
  Eigen::MatrixXd X;
  Eigen::VectorXd J;
};

struct PolicyEvaluation {
  ValueMatrix P;
  double condition_number = 0.0;
  Eigen::Index rank = 0;
  bool ill_conditioned = false;
};

inline RegressionSystem assemble_regression(const Plant& plant, const CostWeights& w,
                                            const FeedbackGain& K, const ExcitationPlan& plan,
                                            int iteration = 0) {
  const Eigen::Index n = plant.n();
  plan.validate(n);
  const Eigen::MatrixXd phi = stage_weight(w, K);
  RegressionSystem sys{Eigen::MatrixXd(plan.windows.size(), n * n),
                       Eigen::VectorXd(plan.windows.size())};
  for (std::size_t j = 0; j < plan.windows.size(); ++j) {
    const Window& win = plan.windows[j];
    const WindowStatistics st = observe_window(plant, phi, K, win, plan.mode, plan.paths,
                                               window_seed(plan.seed, iteration, j));
    sys.X.row(static_cast<Eigen::Index>(j)) = regression_row(win.x0, st.terminal_moment);
    sys.J(static_cast<Eigen::Index>(j)) = st.cost;
  }
  return sys;
}

/// Least-squares solve of (X W) vec_plus(P) = J. Exactly determined when
/// there are n(n+1)/2 windows.
inline PolicyEvaluation solve_policy_regression(const RegressionSystem& sys, Eigen::Index n) {
  const Eigen::MatrixXd xw = sys.X * duplication_w(n);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(xw, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double top = sv.size() ? sv(0) : 0.0;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > kRankTolerance * top) ++rank;
  }
  if (rank < half_size(n) || !(top > 0.0)) {
    throw Error(ErrorCode::kRankDeficient,
                "X W has rank " + std::to_string(rank) + " < " +
                    std::to_string(half_size(n)) + "; the excitation windows are not rich enough");
  }
  PolicyEvaluation out;
  out.rank = rank;
  out.condition_number = top / sv(sv.size() - 1);
  out.ill_conditioned = out.condition_number > kConditionWarning;
  out.P = symmetrize(inv_vec_plus(HalfVec{svd.solve(sys.J), n}));
  return out;
}

inline PolicyEvaluation evaluate_policy(const SystemModel& model, const CostWeights& w,
                                        const FeedbackGain& K, const ExcitationPlan& plan,
                                        int iteration = 0) {
  const Plant plant(model);
  return solve_policy_regression(assemble_regression(plant, w, K, plan, iteration),
                                 model.n());
}

struct RLIteration {
  FeedbackGain K;          // gain evaluated in this step
  ValueMatrix P;           // fitted value matrix
  double condition_number = 0.0;
  double radius = 0.0;     // mean-square spectral radius under K
  double delta = 0.0;      // ||P - P_prev||_F, P_prev = 0 on the first step
  std::optional<double> reference_error;  // ||P - P_ref||_F / ||P_ref||_F
};

struct RLRunRecord {
  std::vector<RLIteration> iterations;
  bool converged = false;
};

struct RLSolution {
  ValueMatrix P;
  FeedbackGain K;
  RLRunRecord record;
};

/// Data-driven policy iteration from the stabilizing gain K0. Evaluation uses
/// only window statistics of the plant; improvement uses the model matrices.
inline RLSolution run_algorithm1(const SystemModel& model, const CostWeights& w,
                                 const FeedbackGain& K0, const ExcitationPlan& plan,
                                 const SolverSettings& settings = {},
                                 const std::optional<ValueMatrix>& reference = std::nullopt) {
  model.validate();
  w.validate(model.n(), model.m());
  plan.validate(model.n());
  if (settings.max_iters < 1) {
    throw Error(ErrorCode::kMaxItersExceeded, "max_iters must be at least 1");
  }
  require_stabilizing(model, K0, settings.stability_margin, "initial gain");

  const Plant plant(model);
  RLSolution out;
  FeedbackGain K = K0;
  ValueMatrix P_prev = ValueMatrix::Zero(model.n(), model.n());
  for (int i = 0; i < settings.max_iters; ++i) {
    const StabilityCheck stab = plant.stability(K, settings.stability_margin);
    const PolicyEvaluation ev =
        solve_policy_regression(assemble_regression(plant, w, K, plan, i), model.n());

    RLIteration rec;
    rec.K = K;
    rec.P = ev.P;
    rec.condition_number = ev.condition_number;
    rec.radius = stab.radius;
    rec.delta = (ev.P - P_prev).norm();
    if (reference) rec.reference_error = (ev.P - *reference).norm() / reference->norm();
    out.record.iterations.push_back(rec);

    K = improve_gain(model, w, ev.P);
    const StabilityCheck next = plant.stability(K, settings.stability_margin);
    if (!next.stable) {
      throw Error(ErrorCode::kNotStabilizing,
                  "gain produced at iteration " + std::to_string(i + 1) +
                      " is not mean-square stabilizing (radius " +
                      std::to_string(next.radius) + ", fit condition number " +
                      std::to_string(ev.condition_number) + ")");
    }
    P_prev = ev.P;
    if (rec.delta < settings.tolerance) {
      out.record.converged = true;
      break;
    }
  }
  out.P = P_prev;
  out.K = K;
  if (!out.record.converged && settings.require_convergence) {
    throw Error(ErrorCode::kMaxItersExceeded,
                "no convergence after " + std::to_string(settings.max_iters) +
                    " iterations (last ||dP|| = " +
                    std::to_string(out.record.iterations.back().delta) + ")");
  }
  return out;
}

}  // namespace mnlq
