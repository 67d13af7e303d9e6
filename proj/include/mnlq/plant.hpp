#pragma once

// The environment a learner interacts with. It runs the true dynamics and
// reports trajectory statistics; learners never see A or B through it.

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <utility>

#include "mnlq/system.hpp"

namespace mnlq {

enum class EvaluationMode {
  kExactMoment,  // expectations from exact second-moment propagation
  kMonteCarlo,   // sample means over L simulated paths
};

/// One excitation window: start the closed loop at x0 at time s and observe
/// it over [s, s+l+1].
struct Window {
  Eigen::VectorXd x0;
  int s = 0;
  int l = 200;
};

/// What a window yields under gain K.
struct WindowStatistics {
  double cost = 0.0;                // E sum_{t=s}^{s+l} x_t' Phi x_t
  Eigen::MatrixXd terminal_moment;  // E x_{s+l+1} x_{s+l+1}'
};

class Plant {
 public:
  explicit Plant(SystemModel model) : model_(std::move(model)) { model_.validate(); }

  Eigen::Index n() const { return model_.n(); }
  Eigen::Index m() const { return model_.m(); }

  // The noise channel is part of the learner's prior knowledge.
  const Eigen::MatrixXd& C() const { return model_.C; }
  const Eigen::MatrixXd& D() const { return model_.D; }
  double sigma2() const { return model_.sigma2; }

  StabilityCheck stability(const FeedbackGain& K, double tol = 1e-9) const {
    return is_ms_stable(model_, K, tol);
  }

  /// Exact window statistics for stage kernel `phi`.
  WindowStatistics expected(const Eigen::MatrixXd& phi, const FeedbackGain& K,
                            const Window& window) const {
    const MomentSequence seq = propagate_moments(model_, K, window.x0, window.s, window.l);
    WindowStatistics out;
    for (int t = 0; t <= window.l; ++t) {
      out.cost += (phi * seq.moments[static_cast<std::size_t>(t)]).trace();
    }
    out.terminal_moment = seq.moments.back();
    return out;
  }

  /// Sample-mean window statistics over L paths. `on_path(k, states)` sees
  /// every simulated path (n x (l+2) states) in path order.
  template <typename OnPath>
  WindowStatistics sampled(const Eigen::MatrixXd& phi, const FeedbackGain& K,
                           const Window& window, int L, std::uint64_t seed,
                           OnPath&& on_path,
                           double divergence_bound =
                               std::numeric_limits<double>::infinity()) const {
    const ClosedLoop cl = closed_loop(model_, K);
    const Eigen::Index n = model_.n();
    double cost_sum = 0.0;
    Eigen::MatrixXd terminal_sum = Eigen::MatrixXd::Zero(n, n);
    for_each_path(
        cl, model_.sigma2, window.x0, window.l, L, seed,
        [&](int k, const Eigen::MatrixXd& states) {
          const auto visited = states.leftCols(window.l + 1);
          cost_sum += visited.cwiseProduct(phi * visited).sum();
          const auto last = states.col(window.l + 1);
          terminal_sum.noalias() += last * last.transpose();
          on_path(k, states);
        },
        divergence_bound);
    WindowStatistics out;
    out.cost = cost_sum / L;
    out.terminal_moment = terminal_sum / L;
    return out;
  }

  WindowStatistics sampled(const Eigen::MatrixXd& phi, const FeedbackGain& K,
                           const Window& window, int L, std::uint64_t seed) const {
    return sampled(phi, K, window, L, seed, [](int, const Eigen::MatrixXd&) {});
  }

 private:
  SystemModel model_;
};

}  // namespace mnlq
