#pragma once

// Plant model x_{t+1} = A x + B u + (C x + D u) w with scalar white noise w of
// variance sigma2, under static feedback u = K x.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mnlq/errors.hpp"
#include "mnlq/matops.hpp"
#include "mnlq/rng.hpp"

namespace mnlq {

using FeedbackGain = Eigen::MatrixXd;  // m x n, u = K x
using ValueMatrix = Eigen::MatrixXd;   // symmetric n x n, V(x) = x'Px

inline std::string shape_of(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

struct SystemModel {
  Eigen::MatrixXd A;  // n x n
  Eigen::MatrixXd B;  // n x m
  Eigen::MatrixXd C;  // n x n
  Eigen::MatrixXd D;  // n x m
  double sigma2 = 1.0;

  Eigen::Index n() const { return A.rows(); }
  Eigen::Index m() const { return B.cols(); }

  void validate() const {
    const auto fail = [](const std::string& what) {
      throw Error(ErrorCode::kShapeMismatch, what);
    };
    if (A.rows() != A.cols()) fail("A must be square, got " + shape_of(A));
    if (C.rows() != n() || C.cols() != n())
      fail("C must be " + shape_of(A) + ", got " + shape_of(C));
    if (B.rows() != n())
      fail("B must have " + std::to_string(n()) + " rows, got " + shape_of(B));
    if (D.rows() != B.rows() || D.cols() != B.cols())
      fail("D must match B (" + shape_of(B) + "), got " + shape_of(D));
    if (!(sigma2 >= 0.0)) fail("sigma2 must be non-negative");
  }
};

struct CostWeights {
  Eigen::MatrixXd Q;  // n x n
  Eigen::MatrixXd S;  // m x n
  Eigen::MatrixXd R;  // m x m

  void validate(Eigen::Index n, Eigen::Index m) const {
    const auto fail = [](const std::string& what) {
      throw Error(ErrorCode::kShapeMismatch, what);
    };
    if (Q.rows() != n || Q.cols() != n) fail("Q has shape " + shape_of(Q));
    if (S.rows() != m || S.cols() != n) fail("S has shape " + shape_of(S));
    if (R.rows() != m || R.cols() != m) fail("R has shape " + shape_of(R));
    if (asymmetry(Q) > kSymmetryTolerance * (1.0 + Q.norm()))
      throw Error(ErrorCode::kNotSymmetric, "Q is not symmetric");
    if (asymmetry(R) > kSymmetryTolerance * (1.0 + R.norm()))
      throw Error(ErrorCode::kNotSymmetric, "R is not symmetric");
  }

  /// R > 0 and Q - S'R^{-1}S > 0. Informational only: zero and indefinite R
  /// are legitimate inputs as long as the gain update stays well defined.
  bool standard_assumption_holds() const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> r_eig(symmetrize(R));
    if (R.size() > 0 && r_eig.eigenvalues().minCoeff() <= 0.0) return false;
    const Eigen::MatrixXd schur =
        symmetrize(Q - S.transpose() * R.ldlt().solve(S));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> q_eig(schur);
    return q_eig.eigenvalues().minCoeff() > 0.0;
  }
};

inline void check_gain_shape(const SystemModel& model, const FeedbackGain& K) {
  if (K.rows() != model.m() || K.cols() != model.n()) {
    throw Error(ErrorCode::kShapeMismatch,
                "gain K must be " + std::to_string(model.m()) + "x" +
                    std::to_string(model.n()) + ", got " + shape_of(K));
  }
}

/// Closed loop x_{t+1} = (F + w G) x.
struct ClosedLoop {
  Eigen::MatrixXd F;
  Eigen::MatrixXd G;
};

inline ClosedLoop closed_loop(const SystemModel& model, const FeedbackGain& K) {
  model.validate();
  check_gain_shape(model, K);
  return {model.A + model.B * K, model.C + model.D * K};
}

/// Per-step cost kernel Q + K'S + S'K + K'RK of the closed loop.
inline Eigen::MatrixXd stage_weight(const CostWeights& w, const FeedbackGain& K) {
  return symmetrize(w.Q + K.transpose() * w.S + w.S.transpose() * K +
                    K.transpose() * w.R * K);
}

/// F'(x)F' + sigma2 G'(x)G', the map vec(P) -> vec(F'PF + sigma2 G'PG).
inline Eigen::MatrixXd second_moment_operator(
    const Eigen::Ref<const Eigen::MatrixXd>& F,
    const Eigen::Ref<const Eigen::MatrixXd>& G, double sigma2) {
  const Eigen::MatrixXd Ft = F.transpose(), Gt = G.transpose();
  return kron(Ft, Ft) + sigma2 * kron(Gt, Gt);
}

inline double spectral_radius(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  if (m.size() == 0) return 0.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(m, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

struct StabilityCheck {
  bool stable = false;
  double radius = 0.0;
};

/// Mean-square stability of the closed loop under K: spectral radius of the
/// second-moment operator below 1 - tol.
inline StabilityCheck is_ms_stable(const SystemModel& model, const FeedbackGain& K,
                                   double tol = 1e-9) {
  const ClosedLoop cl = closed_loop(model, K);
  const double r = spectral_radius(second_moment_operator(cl.F, cl.G, model.sigma2));
  return {r < 1.0 - tol, r};
}

/// Unique P with P = F'PF + sigma2 G'PG + M.
inline ValueMatrix solve_stochastic_lyapunov(
    const Eigen::Ref<const Eigen::MatrixXd>& F,
    const Eigen::Ref<const Eigen::MatrixXd>& G, double sigma2,
    const Eigen::Ref<const Eigen::MatrixXd>& M) {
  const Eigen::Index n = F.rows();
  if (F.cols() != n || G.rows() != n || G.cols() != n || M.rows() != n ||
      M.cols() != n) {
    throw Error(ErrorCode::kShapeMismatch, "solve_stochastic_lyapunov: F, G, M must be " +
                                               std::to_string(n) + "x" + std::to_string(n));
  }
  const Eigen::MatrixXd op = second_moment_operator(F, G, sigma2);
  const double radius = spectral_radius(op);
  if (!(radius < 1.0)) {
    throw Error(ErrorCode::kNotStable,
                "closed loop is not mean-square stable (radius " +
                    std::to_string(radius) + ")");
  }
  const Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(n * n, n * n) - op;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(lhs);
  if (!lu.isInvertible()) {
    throw Error(ErrorCode::kSingularSystem, "Lyapunov operator is singular");
  }
  const Eigen::VectorXd rhs = vec(symmetrize(M));
  Eigen::VectorXd p = lu.solve(rhs);
  // One step of iterative refinement.
  p += lu.solve(rhs - lhs * p);
  return symmetrize(unvec(p, n, n));
}

/// ||P - F'PF - sigma2 G'PG - M||_F.
inline double lyapunov_residual(const Eigen::Ref<const Eigen::MatrixXd>& F,
                                const Eigen::Ref<const Eigen::MatrixXd>& G,
                                double sigma2,
                                const Eigen::Ref<const Eigen::MatrixXd>& M,
                                const Eigen::Ref<const Eigen::MatrixXd>& P) {
  return (P - F.transpose() * P * F - sigma2 * G.transpose() * P * G - M).norm();
}

/// L sample paths over the window [s, s+l+1]. Column t-s of paths[k] holds
/// x_t of path k, so each path has l+2 columns.
struct TrajectoryBatch {
  std::vector<Eigen::MatrixXd> paths;
  std::uint64_t seed = 0;
  int s = 0;
  int l = 0;
};

/// Runs `L` closed-loop paths from x0 for l+1 steps and hands each finished
/// n x (l+2) state matrix to `visit(k, states)`. Path k draws its noise from
/// substream derive_seed(seed, k). A path whose state norm exceeds
/// `divergence_bound` aborts with Divergence.
template <typename Visitor>
void for_each_path(const ClosedLoop& cl, double sigma2,
                   const Eigen::Ref<const Eigen::VectorXd>& x0, int l, int L,
                   std::uint64_t seed, Visitor&& visit,
                   double divergence_bound = std::numeric_limits<double>::infinity()) {
  if (L < 1) throw Error(ErrorCode::kShapeMismatch, "path count L must be >= 1");
  if (l < 0) throw Error(ErrorCode::kShapeMismatch, "window length l must be >= 0");
  const Eigen::Index n = cl.F.rows();
  if (x0.size() != n) {
    throw Error(ErrorCode::kShapeMismatch, "initial state has length " +
                                               std::to_string(x0.size()) +
                                               ", expected " + std::to_string(n));
  }
  const double sigma = std::sqrt(sigma2);
  Eigen::MatrixXd states(n, l + 2);
  Eigen::VectorXd noisy(n);
  for (int k = 0; k < L; ++k) {
    GaussianStream normal(derive_seed(seed, static_cast<std::uint64_t>(k)));
    states.col(0) = x0;
    for (int t = 0; t <= l; ++t) {
      const double w = sigma * normal();
      states.col(t + 1).noalias() = cl.F * states.col(t);
      noisy.noalias() = cl.G * states.col(t);
      states.col(t + 1) += w * noisy;
      if (!(states.col(t + 1).norm() <= divergence_bound)) {
        throw Error(ErrorCode::kDivergence,
                    "state norm exceeded " + std::to_string(divergence_bound) +
                        " on path " + std::to_string(k) + " at step " +
                        std::to_string(t + 1));
      }
    }
    visit(k, static_cast<const Eigen::MatrixXd&>(states));
  }
}

inline TrajectoryBatch simulate_paths(const SystemModel& model, const FeedbackGain& K,
                                      const Eigen::Ref<const Eigen::VectorXd>& x0,
                                      int s, int l, int L, std::uint64_t seed) {
  const ClosedLoop cl = closed_loop(model, K);
  TrajectoryBatch batch;
  batch.seed = seed;
  batch.s = s;
  batch.l = l;
  batch.paths.reserve(static_cast<std::size_t>(std::max(L, 0)));
  for_each_path(cl, model.sigma2, x0, l, L, seed,
                [&](int, const Eigen::MatrixXd& states) { batch.paths.push_back(states); });
  return batch;
}

/// M_t = E[x_t x_t'] for t = s..s+l+1.
struct MomentSequence {
  std::vector<Eigen::MatrixXd> moments;
  int s = 0;
};

inline MomentSequence propagate_moments(const ClosedLoop& cl, double sigma2,
                                        const Eigen::Ref<const Eigen::VectorXd>& x0,
                                        int s, int l) {
  if (l < 0) throw Error(ErrorCode::kShapeMismatch, "window length l must be >= 0");
  MomentSequence seq;
  seq.s = s;
  seq.moments.reserve(static_cast<std::size_t>(l) + 2);
  seq.moments.push_back(x0 * x0.transpose());
  for (int t = 0; t <= l; ++t) {
    const Eigen::MatrixXd& m = seq.moments.back();
    seq.moments.push_back(symmetrize(cl.F * m * cl.F.transpose() +
                                     sigma2 * cl.G * m * cl.G.transpose()));
  }
  return seq;
}

inline MomentSequence propagate_moments(const SystemModel& model, const FeedbackGain& K,
                                        const Eigen::Ref<const Eigen::VectorXd>& x0,
                                        int s, int l) {
  if (x0.size() != model.n()) {
    throw Error(ErrorCode::kShapeMismatch, "initial state has wrong length");
  }
  return propagate_moments(closed_loop(model, K), model.sigma2, x0, s, l);
}

/// sum_{t=0}^{T} E[x_t'(Q + K'S + S'K + K'RK)x_t] from exact moments.
inline double evaluate_cost(const SystemModel& model, const CostWeights& weights,
                            const FeedbackGain& K,
                            const Eigen::Ref<const Eigen::VectorXd>& x0, int horizon) {
  const Eigen::MatrixXd phi = stage_weight(weights, K);
  if (horizon < 0) return 0.0;
  const MomentSequence seq = propagate_moments(model, K, x0, 0, std::max(horizon - 1, 0));
  double total = 0.0;
  for (int t = 0; t <= horizon; ++t) {
    total += (phi * seq.moments[static_cast<std::size_t>(t)]).trace();
  }
  return total;
}

}  // namespace mnlq
