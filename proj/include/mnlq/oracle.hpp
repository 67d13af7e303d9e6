#pragma once

// Model-based reference solver: policy iteration where each evaluation is an
// exact stochastic Lyapunov solve. Used as ground truth for the data-driven
// learners.

#include <Eigen/Dense>

#include <limits>
#include <string>
#include <vector>

#include "mnlq/errors.hpp"
#include "mnlq/matops.hpp"
#include "mnlq/system.hpp"

namespace mnlq {

/// R + B'PB + sigma2 D'PD, symmetrized.
inline Eigen::MatrixXd quasi_r(const Eigen::Ref<const Eigen::MatrixXd>& B,
                               const Eigen::Ref<const Eigen::MatrixXd>& D,
                               double sigma2, const CostWeights& w,
                               const ValueMatrix& P) {
  return symmetrize(w.R + B.transpose() * P * B + sigma2 * D.transpose() * P * D);
}

/// B'PA + sigma2 D'PC + S.
inline Eigen::MatrixXd cross_term(const Eigen::Ref<const Eigen::MatrixXd>& A,
                                  const Eigen::Ref<const Eigen::MatrixXd>& B,
                                  const Eigen::Ref<const Eigen::MatrixXd>& C,
                                  const Eigen::Ref<const Eigen::MatrixXd>& D,
                                  double sigma2, const CostWeights& w,
                                  const ValueMatrix& P) {
  return B.transpose() * P * A + sigma2 * D.transpose() * P * C + w.S;
}

namespace internal {

inline Eigen::LLT<Eigen::MatrixXd> factor_quasi_r(const Eigen::MatrixXd& h) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h, Eigen::EigenvaluesOnly);
  const double lo = h.size() == 0 ? 1.0 : eig.eigenvalues().minCoeff();
  Eigen::LLT<Eigen::MatrixXd> llt(h);
  if (!(lo > 0.0) || llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kQuasiRNotPD,
                "R + B'PB + sigma2 D'PD has smallest eigenvalue " + std::to_string(lo));
  }
  return llt;
}

/// Gain formula for an arbitrary (A, B) pair, e.g. an identified estimate.
inline FeedbackGain gain_from(const Eigen::Ref<const Eigen::MatrixXd>& A,
                              const Eigen::Ref<const Eigen::MatrixXd>& B,
                              const Eigen::Ref<const Eigen::MatrixXd>& C,
                              const Eigen::Ref<const Eigen::MatrixXd>& D,
                              double sigma2, const CostWeights& w, const ValueMatrix& P) {
  const auto llt = factor_quasi_r(quasi_r(B, D, sigma2, w, P));
  return -llt.solve(cross_term(A, B, C, D, sigma2, w, P));
}

}  // namespace internal

/// K = -(R + B'PB + sigma2 D'PD)^{-1} (B'PA + sigma2 D'PC + S).
inline FeedbackGain improve_gain(const SystemModel& model, const CostWeights& w,
                                 const ValueMatrix& P) {
  return internal::gain_from(model.A, model.B, model.C, model.D, model.sigma2, w, P);
}

/// Q + A'PA + sigma2 C'PC - L'(R + B'PB + sigma2 D'PD)^{-1} L - P with
/// L = B'PA + sigma2 D'PC + S. Zero exactly at a solution of the stochastic
/// algebraic Riccati equation.
inline Eigen::MatrixXd sare_residual(const SystemModel& model, const CostWeights& w,
                                     const ValueMatrix& P) {
  const auto llt =
      internal::factor_quasi_r(quasi_r(model.B, model.D, model.sigma2, w, P));
  const Eigen::MatrixXd L =
      cross_term(model.A, model.B, model.C, model.D, model.sigma2, w, P);
  return w.Q + model.A.transpose() * P * model.A +
         model.sigma2 * model.C.transpose() * P * model.C - L.transpose() * llt.solve(L) - P;
}

struct SolverSettings {
  double tolerance = 1e-10;  // on ||P(i+1) - P(i)||_F
  int max_iters = 500;
  /// When false, hitting max_iters returns the last iterate instead of
  /// throwing MaxItersExceeded (fixed-iteration reproductions).
  bool require_convergence = true;
  double stability_margin = 1e-9;
};

struct IterationRecord {
  FeedbackGain K;      // gain evaluated in this iteration
  ValueMatrix P;       // resulting value matrix
  double radius = 0;   // mean-square spectral radius under K
  double delta = 0;    // ||P - P_prev||_F, with P_prev = 0 on the first pass
};

struct SolveReport {
  std::vector<IterationRecord> history;
  int iterations = 0;
  bool converged = false;
};

struct OracleSolution {
  ValueMatrix P;
  FeedbackGain K;
  SolveReport report;
};

inline void require_stabilizing(const SystemModel& model, const FeedbackGain& K,
                                double margin, const std::string& which) {
  const StabilityCheck s = is_ms_stable(model, K, margin);
  if (!s.stable) {
    throw Error(ErrorCode::kNotStabilizing,
                which + " is not mean-square stabilizing (radius " +
                    std::to_string(s.radius) + ")");
  }
}

/// Kleinman-style iteration: P(i+1) solves the Lyapunov equation of K(i),
/// K(i+1) = improve_gain(P(i+1)), until ||P(i+1) - P(i)||_F < tolerance.
inline OracleSolution model_policy_iteration(const SystemModel& model,
                                             const CostWeights& w,
                                             const FeedbackGain& K0,
                                             const SolverSettings& settings = {}) {
  model.validate();
  w.validate(model.n(), model.m());
  if (settings.max_iters < 1) {
    throw Error(ErrorCode::kMaxItersExceeded, "max_iters must be at least 1");
  }
  require_stabilizing(model, K0, settings.stability_margin, "initial gain");

  OracleSolution out;
  FeedbackGain K = K0;
  ValueMatrix P_prev = ValueMatrix::Zero(model.n(), model.n());
  for (int i = 0; i < settings.max_iters; ++i) {
    const ClosedLoop cl = closed_loop(model, K);
    const double radius =
        spectral_radius(second_moment_operator(cl.F, cl.G, model.sigma2));
    const ValueMatrix P =
        solve_stochastic_lyapunov(cl.F, cl.G, model.sigma2, stage_weight(w, K));
    const double delta = (P - P_prev).norm();
    out.report.history.push_back({K, P, radius, delta});
    out.report.iterations = i + 1;

    K = improve_gain(model, w, P);
    require_stabilizing(model, K, settings.stability_margin,
                        "gain at iteration " + std::to_string(i + 1));
    P_prev = P;
    if (delta < settings.tolerance) {
      out.report.converged = true;
      break;
    }
  }
  out.P = P_prev;
  out.K = K;
  if (!out.report.converged && settings.require_convergence) {
    throw Error(ErrorCode::kMaxItersExceeded,
                "no convergence after " + std::to_string(settings.max_iters) +
                    " iterations (last ||dP|| = " +
                    std::to_string(out.report.history.back().delta) + ")");
  }
  return out;
}

}  // namespace mnlq
