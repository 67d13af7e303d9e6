#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mnlq/oracle.hpp"
#include "mnlq/system.hpp"
#include "test_support.hpp"

namespace mnlq {
namespace {

using testing::mat;

SystemModel scalar(double a, double b, double c, double d, double sigma2) {
  return {mat({{a}}), mat({{b}}), mat({{c}}), mat({{d}}), sigma2};
}

TEST(SystemModel, Validate) {
  SystemModel m = testing::example1_model();
  EXPECT_NO_THROW(m.validate());
  m.D = Eigen::MatrixXd::Zero(2, 3);
  EXPECT_THROW(m.validate(), Error);
  m = testing::example1_model();
  m.sigma2 = -1.0;
  EXPECT_THROW(m.validate(), Error);
}

TEST(CostWeights, AssumptionFlag) {
  EXPECT_TRUE(testing::example1_weights().standard_assumption_holds());
  EXPECT_FALSE(testing::example1_weights(mat({{0, 0}, {0, -5}})).standard_assumption_holds());
  EXPECT_FALSE(testing::example1_weights(Eigen::MatrixXd::Zero(2, 2)).standard_assumption_holds());
  CostWeights w = testing::example1_weights();
  w.Q(0, 1) += 1.0;
  EXPECT_THROW(w.validate(2, 2), Error);
}

TEST(ClosedLoop, Arithmetic) {
  const SystemModel m = testing::example1_model();
  const ClosedLoop zero = closed_loop(m, Eigen::MatrixXd::Zero(2, 2));
  EXPECT_EQ(zero.F, m.A);
  EXPECT_EQ(zero.G, m.C);
  const ClosedLoop cl = closed_loop(m, testing::example1_k0());
  EXPECT_TRUE(cl.F.isApprox(mat({{1.6, 4.8}, {-0.3, -1.3}}), 1e-14));
  EXPECT_TRUE(cl.G.isApprox(mat({{0.35, 3.1}, {0.0, -0.4}}), 1e-14));
  const ClosedLoop s = closed_loop(scalar(1, 1, 0, 1, 1), mat({{-0.5}}));
  EXPECT_DOUBLE_EQ(s.F(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(s.G(0, 0), -0.5);
  EXPECT_THROW(closed_loop(m, Eigen::MatrixXd::Zero(3, 2)), Error);
}

TEST(Stability, Examples) {
  const SystemModel m = testing::example1_model();
  const StabilityCheck k0 = is_ms_stable(m, testing::example1_k0());
  EXPECT_TRUE(k0.stable);
  EXPECT_NEAR(k0.radius, 0.968, 1e-3);
  const StabilityCheck open = is_ms_stable(m, Eigen::MatrixXd::Zero(2, 2));
  EXPECT_FALSE(open.stable);
  EXPECT_GE(open.radius, 4.0);
  const StabilityCheck s = is_ms_stable(scalar(0.5, 0, 0.5, 0, 1), mat({{0}}));
  EXPECT_TRUE(s.stable);
  EXPECT_NEAR(s.radius, 0.5, 1e-15);
}

TEST(Stability, MarginRejectsBoundary) {
  // radius exactly 1
  const StabilityCheck s = is_ms_stable(scalar(std::sqrt(0.5), 0, std::sqrt(0.5), 0, 1),
                                        mat({{0}}));
  EXPECT_FALSE(s.stable);
}

TEST(Lyapunov, ScalarClosedForms) {
  const auto one = mat({{1}});
  EXPECT_NEAR(solve_stochastic_lyapunov(mat({{0.5}}), mat({{0}}), 1, one)(0, 0), 4.0 / 3.0,
              1e-15);
  EXPECT_NEAR(solve_stochastic_lyapunov(mat({{0.5}}), mat({{0.5}}), 1, one)(0, 0), 2.0, 1e-15);
  const Eigen::MatrixXd M = mat({{2, 1}, {1, 3}});
  EXPECT_EQ(solve_stochastic_lyapunov(Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 2),
                                      1, M),
            M);
}

TEST(Lyapunov, RejectsUnstable) {
  try {
    solve_stochastic_lyapunov(mat({{1.0}}), mat({{0.5}}), 1, mat({{1}}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotStable);
  }
}

TEST(Lyapunov, ResidualAndDefinitenessOnRandomSystems) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index n = 1 + trial % 4;
    const auto p = testing::random_problem(rng, n, 1 + trial % 2);
    const ClosedLoop cl = closed_loop(p.model, p.K0);
    const Eigen::MatrixXd M = testing::random_spd(rng, n);
    const ValueMatrix P = solve_stochastic_lyapunov(cl.F, cl.G, p.model.sigma2, M);
    EXPECT_LE(lyapunov_residual(cl.F, cl.G, p.model.sigma2, M, P), 1e-10 * (1 + P.norm()));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(P);
    EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0);
  }
}

TEST(Moments, ScalarSequences) {
  const MomentSequence a =
      propagate_moments(ClosedLoop{mat({{0.5}}), mat({{0}})}, 0.0, mat({{2}}), 0, 2);
  ASSERT_EQ(a.moments.size(), 4u);
  EXPECT_DOUBLE_EQ(a.moments[0](0, 0), 4.0);
  EXPECT_DOUBLE_EQ(a.moments[1](0, 0), 1.0);
  EXPECT_DOUBLE_EQ(a.moments[2](0, 0), 0.25);
  const MomentSequence b =
      propagate_moments(ClosedLoop{mat({{0}}), mat({{1}})}, 1.0, mat({{1}}), 0, 5);
  for (const auto& m : b.moments) EXPECT_DOUBLE_EQ(m(0, 0), 1.0);
}

TEST(Moments, DecayUnderStabilizingGain) {
  const MomentSequence seq = propagate_moments(testing::example1_model(),
                                               testing::example1_k0(),
                                               Eigen::Vector2d(3, 7), 0, 2000);
  EXPECT_LT(seq.moments.back().trace(), 1e-20 * seq.moments.front().trace());
}

TEST(Simulate, DeterministicAndShaped) {
  const SystemModel m = testing::example1_model();
  const TrajectoryBatch a = simulate_paths(m, testing::example1_k0(), Eigen::Vector2d(3, 7),
                                           0, 10, 5, 99);
  const TrajectoryBatch b = simulate_paths(m, testing::example1_k0(), Eigen::Vector2d(3, 7),
                                           0, 10, 5, 99);
  ASSERT_EQ(a.paths.size(), 5u);
  for (std::size_t k = 0; k < a.paths.size(); ++k) {
    EXPECT_EQ(a.paths[k].cols(), 12);
    EXPECT_EQ(a.paths[k], b.paths[k]);
  }
  EXPECT_NE(a.paths[0], a.paths[1]);
  const TrajectoryBatch c = simulate_paths(m, testing::example1_k0(), Eigen::Vector2d(3, 7),
                                           0, 10, 5, 100);
  EXPECT_NE(a.paths[0], c.paths[0]);
}

TEST(Simulate, NoiseFreePathsAreDeterministicRecursion) {
  const SystemModel m = testing::example1_model(0.0);
  const FeedbackGain K = testing::example1_k0();
  const TrajectoryBatch batch = simulate_paths(m, K, Eigen::Vector2d(3, 7), 0, 20, 4, 1);
  Eigen::VectorXd x = Eigen::Vector2d(3, 7);
  const Eigen::MatrixXd F = m.A + m.B * K;
  for (int t = 0; t <= 21; ++t) {
    for (const auto& p : batch.paths) EXPECT_EQ(p.col(t), x);
    x = F * x;
  }
}

TEST(Simulate, DivergenceGuard) {
  const SystemModel m = testing::example1_model();
  try {
    for_each_path(closed_loop(m, Eigen::MatrixXd::Zero(2, 2)), 1.0, Eigen::Vector2d(3, 7), 200,
                  1, 1, [](int, const Eigen::MatrixXd&) {}, 1e9);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDivergence);
  }
}

TEST(Simulate, SampleMeanMatchesExactMean) {
  const SystemModel m = testing::example1_model();
  const FeedbackGain K = testing::example1_k0();
  const Eigen::Vector2d x0(3, 7);
  const ClosedLoop cl = closed_loop(m, K);
  const int L = 100000;
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  Eigen::Matrix2d sq = Eigen::Matrix2d::Zero();
  for_each_path(cl, m.sigma2, x0, 0, L, 5, [&](int, const Eigen::MatrixXd& s) {
    sum += s.col(1);
    sq += s.col(1) * s.col(1).transpose();
  });
  const Eigen::Vector2d mean = sum / L;
  const Eigen::Vector2d exact = cl.F * x0;
  // x_1 = F x0 + w G x0, so the standard deviation of each entry is |G x0|.
  const Eigen::Vector2d sd = (cl.G * x0).cwiseAbs();
  for (int i = 0; i < 2; ++i) EXPECT_LE(std::abs(mean(i) - exact(i)), 3 * sd(i) / std::sqrt(L));
  const MomentSequence seq = propagate_moments(m, K, x0, 0, 0);
  EXPECT_LT(testing::rel(sq / L, seq.moments[1]), 1e-2);
}

TEST(Simulate, MonteCarloErrorShrinksLikeInverseSqrtL) {
  // RMS error of the sample second moment over independent seeds, per L.
  const SystemModel m = testing::example1_model();
  const FeedbackGain K = testing::example1_k0();
  const Eigen::Vector2d x0(3, 7);
  const int l = 3;
  const ClosedLoop cl = closed_loop(m, K);
  const Eigen::MatrixXd exact = propagate_moments(m, K, x0, 0, l).moments.back();
  const int seeds = 40;
  double rms[3];
  const int Ls[3] = {100, 1000, 10000};
  for (int i = 0; i < 3; ++i) {
    double acc = 0.0;
    for (int s = 0; s < seeds; ++s) {
      Eigen::Matrix2d sum = Eigen::Matrix2d::Zero();
      for_each_path(cl, m.sigma2, x0, l, Ls[i], derive_seed(1234, s),
                    [&](int, const Eigen::MatrixXd& st) {
                      sum += st.col(l + 1) * st.col(l + 1).transpose();
                    });
      acc += (sum / Ls[i] - exact).squaredNorm();
    }
    rms[i] = std::sqrt(acc / seeds);
  }
  const double r10 = std::sqrt(10.0);
  for (int i = 0; i < 2; ++i) {
    const double ratio = rms[i] / rms[i + 1];
    EXPECT_GT(ratio, r10 / 2) << "L = " << Ls[i];
    EXPECT_LT(ratio, r10 * 2) << "L = " << Ls[i];
  }
}

TEST(Cost, ZeroHorizonIsStageCost) {
  const SystemModel m = testing::example1_model();
  const CostWeights w = testing::example1_weights();
  const FeedbackGain K = testing::example1_k0();
  const Eigen::Vector2d x0(3, 7);
  EXPECT_NEAR(evaluate_cost(m, w, K, x0, 0), x0.dot(stage_weight(w, K) * x0), 1e-12);
}

TEST(Cost, LongHorizonMatchesLyapunovValue) {
  const SystemModel s = scalar(0.9, 1, 0.2, 0.1, 1);
  const CostWeights w{mat({{1}}), mat({{0.1}}), mat({{2}})};
  const FeedbackGain k = mat({{-0.4}});
  const ClosedLoop cl = closed_loop(s, k);
  const double f = cl.F(0, 0), g = cl.G(0, 0);
  const double p = stage_weight(w, k)(0, 0) / (1 - f * f - g * g);
  const Eigen::VectorXd x0 = mat({{1.7}});
  EXPECT_NEAR(evaluate_cost(s, w, k, x0, 500) / (1.7 * 1.7 * p), 1.0, 1e-8);
}

TEST(Cost, OptimalGainValue) {
  const SystemModel m = testing::example1_model();
  const CostWeights w = testing::example1_weights();
  const OracleSolution sol = model_policy_iteration(m, w, testing::example1_k0());
  const Eigen::Vector2d x0(2, 18);
  const double v = x0.dot(sol.P * x0);
  EXPECT_NEAR(evaluate_cost(m, w, sol.K, x0, 300) / v, 1.0, 1e-6);
}

}  // namespace
}  // namespace mnlq
