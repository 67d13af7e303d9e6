#pragma once

// Policy iteration with unknown drift. A and B are estimated by ridge least
// squares on closed-loop rollouts, Z_t = [x_t; K x_t], while C, D and sigma2
// are known to the learner.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mnlq/errors.hpp"
#include "mnlq/oracle.hpp"
#include "mnlq/plant.hpp"
#include "mnlq/policy_iteration.hpp"
#include "mnlq/system.hpp"

namespace mnlq {

enum class ResidualForm {
  kLevel,       // target x_{t+1}, theta estimates [A B]
  kDifference,  // target x_{t+1} - x_t, theta estimates [A-I B]
};

/// theta is (n+m) x n with theta' Z = A x + B u (level form).
struct ParameterEstimate {
  Eigen::MatrixXd theta;
  ResidualForm form = ResidualForm::kLevel;

  Eigen::Index n() const { return theta.cols(); }
  Eigen::Index m() const { return theta.rows() - theta.cols(); }

  Eigen::MatrixXd A() const {
    Eigen::MatrixXd a = theta.topRows(n()).transpose();
    if (form == ResidualForm::kDifference) a += Eigen::MatrixXd::Identity(n(), n());
    return a;
  }
  Eigen::MatrixXd B() const { return theta.bottomRows(m()).transpose(); }

  static ParameterEstimate from_model(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                      ResidualForm form = ResidualForm::kLevel) {
    if (A.rows() != A.cols() || B.rows() != A.rows()) {
      throw Error(ErrorCode::kShapeMismatch,
                  "estimate needs A n x n and B n x m, got " + shape_of(A) + " and " +
                      shape_of(B));
    }
    ParameterEstimate est;
    est.form = form;
    est.theta.resize(A.rows() + B.cols(), A.rows());
    est.theta.topRows(A.rows()) = A.transpose();
    if (form == ResidualForm::kDifference) {
      est.theta.topRows(A.rows()).diagonal().array() -= 1.0;
    }
    est.theta.bottomRows(B.cols()) = B.transpose();
    return est;
  }
};

/// Noise channel the learner is told about.
struct NoiseChannel {
  Eigen::MatrixXd C;
  Eigen::MatrixXd D;
  double sigma2 = 1.0;
};

/// Running sums sum Z Z' and sum Z target' over all observed samples.
class NormalEquations {
 public:
  NormalEquations(Eigen::Index n, Eigen::Index m, ResidualForm form = ResidualForm::kLevel)
      : n_(n), m_(m), form_(form),
        gram_(Eigen::MatrixXd::Zero(n + m, n + m)),
        cross_(Eigen::MatrixXd::Zero(n + m, n)) {}

  /// Adds every transition of one n x (l+2) path recorded under gain K.
  void add_path(const Eigen::MatrixXd& states, const FeedbackGain& K) {
    if (states.rows() != n_ || states.cols() < 2) {
      throw Error(ErrorCode::kShapeMismatch, "path has shape " + shape_of(states));
    }
    if (K.rows() != m_ || K.cols() != n_) {
      throw Error(ErrorCode::kShapeMismatch, "gain has shape " + shape_of(K));
    }
    const Eigen::Index steps = states.cols() - 1;
    Eigen::MatrixXd z(n_ + m_, steps);
    z.topRows(n_) = states.leftCols(steps);
    z.bottomRows(m_).noalias() = K * states.leftCols(steps);
    Eigen::MatrixXd target = states.rightCols(steps);
    if (form_ == ResidualForm::kDifference) target -= states.leftCols(steps);
    gram_.noalias() += z * z.transpose();
    cross_.noalias() += z * target.transpose();
    samples_ += steps;
  }

  void add_batch(const TrajectoryBatch& batch, const FeedbackGain& K) {
    for (const auto& p : batch.paths) add_path(p, K);
  }

  const Eigen::MatrixXd& gram() const { return gram_; }
  const Eigen::MatrixXd& cross() const { return cross_; }
  long samples() const { return samples_; }
  ResidualForm form() const { return form_; }

  /// Minimizer of sum ||target - theta'Z||^2 + ||theta - prior||_F^2, i.e.
  /// (sum ZZ' + I) theta = sum Z target' + prior. `scale` divides both sides
  /// and only affects rounding.
  ParameterEstimate solve(const std::optional<Eigen::MatrixXd>& prior = std::nullopt,
                          double scale = 1.0) const {
    const Eigen::Index d = n_ + m_;
    const Eigen::MatrixXd lhs = (gram_ + Eigen::MatrixXd::Identity(d, d)) / scale;
    Eigen::MatrixXd rhs = cross_;
    if (prior) {
      if (prior->rows() != d || prior->cols() != n_) {
        throw Error(ErrorCode::kShapeMismatch, "prior has shape " + shape_of(*prior));
      }
      rhs += *prior;
    }
    rhs /= scale;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(lhs);
    const double lo = ldlt.vectorD().size() ? ldlt.vectorD().minCoeff() : 1.0;
    const double hi = ldlt.vectorD().size() ? ldlt.vectorD().maxCoeff() : 1.0;
    if (ldlt.info() != Eigen::Success || !(lo > 1e-14 * hi) || !std::isfinite(hi)) {
      throw Error(ErrorCode::kSingularGram,
                  "regularized Gram matrix is numerically singular (pivot range " +
                      std::to_string(lo) + " .. " + std::to_string(hi) + ")");
    }
    ParameterEstimate est;
    est.form = form_;
    est.theta = ldlt.solve(rhs);
    if (!est.theta.allFinite()) {
      throw Error(ErrorCode::kSingularGram, "parameter estimate is not finite");
    }
    return est;
  }

 private:
  Eigen::Index n_, m_;
  ResidualForm form_;
  Eigen::MatrixXd gram_;
  Eigen::MatrixXd cross_;
  long samples_ = 0;
};

/// theta = [(1/L) sum ZZ' + (1/L) I]^{-1} (1/L) sum Z target' over the batch.
inline ParameterEstimate update_theta(const TrajectoryBatch& batch, const FeedbackGain& K,
                                      ResidualForm form = ResidualForm::kLevel) {
  if (batch.paths.empty()) {
    throw Error(ErrorCode::kShapeMismatch, "trajectory batch is empty");
  }
  NormalEquations ne(batch.paths.front().rows(), K.rows(), form);
  ne.add_batch(batch, K);
  return ne.solve(std::nullopt, static_cast<double>(batch.paths.size()));
}

inline void check_estimate(const ParameterEstimate& est, const NoiseChannel& noise) {
  if (noise.C.rows() != est.n() || noise.C.cols() != est.n() || noise.D.rows() != est.n() ||
      noise.D.cols() != est.m()) {
    throw Error(ErrorCode::kShapeMismatch,
                "noise channel " + shape_of(noise.C) + ", " + shape_of(noise.D) +
                    " does not fit theta " + shape_of(est.theta));
  }
}

/// Value matrix of K under the estimated drift and the known noise channel.
inline ValueMatrix estimated_policy_evaluation(const ParameterEstimate& est,
                                               const NoiseChannel& noise, const CostWeights& w,
                                               const FeedbackGain& K) {
  check_estimate(est, noise);
  w.validate(est.n(), est.m());
  const Eigen::MatrixXd F = est.A() + est.B() * K;
  const Eigen::MatrixXd G = noise.C + noise.D * K;
  return solve_stochastic_lyapunov(F, G, noise.sigma2, stage_weight(w, K));
}

inline FeedbackGain estimated_policy_improvement(const ParameterEstimate& est,
                                                 const NoiseChannel& noise,
                                                 const CostWeights& w, const ValueMatrix& P) {
  check_estimate(est, noise);
  w.validate(est.n(), est.m());
  return internal::gain_from(est.A(), est.B(), noise.C, noise.D, noise.sigma2, w, P);
}

enum class ThetaUpdate {
  /// Normal equations accumulate over all iterations and the ridge term is
  /// centred at theta0.
  kRecursive,
  /// Fresh data each iteration and a ridge term centred at zero.
  kPerIteration,
};

struct SysIdSettings {
  SolverSettings solver;
  ResidualForm form = ResidualForm::kLevel;
  ThetaUpdate update = ThetaUpdate::kRecursive;
  double divergence_bound = 1e9;
};

struct SysIdIteration {
  ParameterEstimate estimate;  // theta used for the improvement step
  /// ||P_data - P_model||_F / ||P_data||_F where P_model evaluates K on the
  /// estimated drift; empty when the estimate deems K unstable.
  std::optional<double> model_gap;
};

struct SysIdSolution {
  ValueMatrix P;
  FeedbackGain K;
  ParameterEstimate estimate;
  RLRunRecord record;
  std::vector<SysIdIteration> sysid;
};

/// Rollouts under K(i) feed both the data-driven evaluation of K(i) and the
/// estimate of [A B]; improvement uses the estimate. The plant's stability
/// radius is logged for diagnostics only.
inline SysIdSolution run_algorithm2(const Plant& plant, const CostWeights& w,
                                    const FeedbackGain& K0, const ParameterEstimate& theta0,
                                    const ExcitationPlan& plan, const SysIdSettings& settings = {},
                                    const std::optional<ValueMatrix>& reference = std::nullopt) {
  const Eigen::Index n = plant.n(), m = plant.m();
  w.validate(n, m);
  plan.validate(n);
  if (theta0.theta.rows() != n + m || theta0.theta.cols() != n) {
    throw Error(ErrorCode::kShapeMismatch,
                "theta0 has shape " + shape_of(theta0.theta) + ", expected " +
                    std::to_string(n + m) + "x" + std::to_string(n));
  }
  if (K0.rows() != m || K0.cols() != n) {
    throw Error(ErrorCode::kShapeMismatch, "K0 has shape " + shape_of(K0));
  }
  if (settings.solver.max_iters < 1) {
    throw Error(ErrorCode::kMaxItersExceeded, "max_iters must be at least 1");
  }
  const int L = std::max(plan.paths, 1);
  const NoiseChannel noise{plant.C(), plant.D(), plant.sigma2()};
  // Work in the requested residual form; a theta0 in the other form is
  // converted through its (A, B).
  const ParameterEstimate prior =
      ParameterEstimate::from_model(theta0.A(), theta0.B(), settings.form);

  SysIdSolution out;
  out.estimate = prior;
  NormalEquations ne(n, m, settings.form);
  FeedbackGain K = K0;
  ValueMatrix P_prev = ValueMatrix::Zero(n, n);
  for (int i = 0; i < settings.solver.max_iters; ++i) {
    const StabilityCheck stab = plant.stability(K, settings.solver.stability_margin);
    if (settings.update == ThetaUpdate::kPerIteration) ne = NormalEquations(n, m, settings.form);

    const Eigen::MatrixXd phi = stage_weight(w, K);
    RegressionSystem sys{Eigen::MatrixXd(plan.windows.size(), n * n),
                         Eigen::VectorXd(plan.windows.size())};
    for (std::size_t j = 0; j < plan.windows.size(); ++j) {
      const Window& win = plan.windows[j];
      WindowStatistics st;
      try {
        st = plant.sampled(phi, K, win, L, window_seed(plan.seed, i, j),
                           [&](int, const Eigen::MatrixXd& states) { ne.add_path(states, K); },
                           settings.divergence_bound);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kDivergence) throw;
        throw Error(ErrorCode::kNotStabilizing,
                    "gain at iteration " + std::to_string(i) +
                        " drove the plant past the divergence bound (" + e.what() + ")");
      }
      if (plan.mode == EvaluationMode::kExactMoment) st = plant.expected(phi, K, win);
      sys.X.row(static_cast<Eigen::Index>(j)) = regression_row(win.x0, st.terminal_moment);
      sys.J(static_cast<Eigen::Index>(j)) = st.cost;
    }
    const PolicyEvaluation ev = solve_policy_regression(sys, n);

    RLIteration rec;
    rec.K = K;
    rec.P = ev.P;
    rec.condition_number = ev.condition_number;
    rec.radius = stab.radius;
    rec.delta = (ev.P - P_prev).norm();
    if (reference) rec.reference_error = (ev.P - *reference).norm() / reference->norm();
    out.record.iterations.push_back(rec);

    SysIdIteration sid{out.estimate, std::nullopt};
    try {
      const ValueMatrix pm = estimated_policy_evaluation(out.estimate, noise, w, K);
      sid.model_gap = (ev.P - pm).norm() / ev.P.norm();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNotStable && e.code() != ErrorCode::kSingularSystem) throw;
    }
    out.sysid.push_back(sid);

    K = estimated_policy_improvement(out.estimate, noise, w, ev.P);
    if (settings.update == ThetaUpdate::kRecursive) {
      out.estimate = ne.solve(prior.theta, static_cast<double>(L));
    } else {
      out.estimate = ne.solve(std::nullopt, static_cast<double>(L));
    }
    P_prev = ev.P;
    if (rec.delta < settings.solver.tolerance) {
      out.record.converged = true;
      break;
    }
  }
  out.P = P_prev;
  out.K = K;
  if (!out.record.converged && settings.solver.require_convergence) {
    throw Error(ErrorCode::kMaxItersExceeded,
                "no convergence after " + std::to_string(settings.solver.max_iters) +
                    " iterations (last ||dP|| = " +
                    std::to_string(out.record.iterations.back().delta) + ")");
  }
  return out;
}

}  // namespace mnlq
