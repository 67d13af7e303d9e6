#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

#include "mnlq/oracle.hpp"
#include "mnlq/policy_iteration.hpp"
#include "mnlq/system.hpp"

namespace mnlq::testing {

inline Eigen::MatrixXd mat(std::initializer_list<std::initializer_list<double>> rows) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

inline SystemModel example1_model(double sigma2 = 1.0) {
  return {mat({{2, 1}, {0, 2}}), mat({{1, 0}, {-0.5, 1}}), mat({{1, 0}, {0.5, 1}}),
          mat({{1, 0.5}, {0, 1}}), sigma2};
}

inline CostWeights example1_weights(const Eigen::MatrixXd& R = mat({{10, 0}, {0, 10}})) {
  return {mat({{10, 5}, {5, 10}}), mat({{1, 0}, {0.5, 1}}), R};
}

inline FeedbackGain example1_k0() { return mat({{-0.4, 3.8}, {-0.5, -1.4}}); }

inline ExcitationPlan example1_plan(EvaluationMode mode = EvaluationMode::kExactMoment,
                                    int L = 1000, std::uint64_t seed = 7) {
  ExcitationPlan plan;
  plan.windows = default_windows(2);
  plan.mode = mode;
  plan.paths = L;
  plan.seed = seed;
  return plan;
}

inline SystemModel example2_model(double sigma2) {
  return {mat({{2, 1, 0}, {0, 2, 0}, {1, 0, 1}}), mat({{1, 0, 1}, {-0.5, 1, 0}, {0, 1, 1}}),
          mat({{1, 0, 0}, {0.5, 1, 1}, {0, 0, 1}}), mat({{1, 0.5, 0}, {0, 1, 1}, {0, 0, 1}}),
          sigma2};
}

inline CostWeights example2_weights(const Eigen::MatrixXd& R = mat({{10, 0, 0},
                                                                    {0, 10, 0},
                                                                    {0, 0, 100}})) {
  return {mat({{10, 5, 0}, {5, 10, 0}, {0, 0, 1}}), mat({{1, 0, 1}, {0.5, 1, 0}, {0, 1, 1}}),
          R};
}

inline FeedbackGain example2_k0() {
  return mat({{-0.6, -5.8, 0.8}, {-0.3, -4.8, 0.4}, {-0.7, 4.8, -0.8}});
}

inline ExcitationPlan example2_plan() {
  ExcitationPlan plan;
  const double xs[6][3] = {{1.69, 1.13, -0.59}, {0.11, 0.75, -2.10}, {0.10, 0.35, 0.58},
                           {-0.08, 0.50, 1.14}, {0.10, -1.91, 0.32}, {-2.00, 0.30, 0.07}};
  for (const auto& x : xs) {
    Window w;
    w.x0 = Eigen::Vector3d(x[0], x[1], x[2]);
    plan.windows.push_back(w);
  }
  return plan;
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c,
                                     double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

inline Eigen::MatrixXd random_symmetric(std::mt19937_64& rng, Eigen::Index n) {
  const Eigen::MatrixXd a = random_matrix(rng, n, n);
  return a + a.transpose();
}

inline Eigen::MatrixXd random_spd(std::mt19937_64& rng, Eigen::Index n, double floor = 0.5) {
  const Eigen::MatrixXd a = random_matrix(rng, n, n);
  return a * a.transpose() + floor * Eigen::MatrixXd::Identity(n, n);
}

/// A random problem whose gain K0 is mean-square stabilizing by
/// construction: pick closed-loop (F, G) with second-moment radius in
/// [0.3, 0.9], then set A = F - B K0, C = G - D K0.
struct RandomProblem {
  SystemModel model;
  CostWeights weights;
  FeedbackGain K0;
};

inline RandomProblem random_problem(std::mt19937_64& rng, Eigen::Index n, Eigen::Index m) {
  std::uniform_real_distribution<double> unif(0.3, 0.9);
  std::uniform_real_distribution<double> noise(0.2, 1.5);
  RandomProblem p;
  const double sigma2 = noise(rng);
  Eigen::MatrixXd F = random_matrix(rng, n, n);
  Eigen::MatrixXd G = random_matrix(rng, n, n, 0.5);
  const double r = spectral_radius(second_moment_operator(F, G, sigma2));
  const double scale = std::sqrt(unif(rng) / r);
  F *= scale;
  G *= scale;
  const Eigen::MatrixXd B = random_matrix(rng, n, m);
  const Eigen::MatrixXd D = random_matrix(rng, n, m, 0.3);
  p.K0 = random_matrix(rng, m, n);
  p.model = {F - B * p.K0, B, G - D * p.K0, D, sigma2};
  p.weights.R = random_spd(rng, m);
  p.weights.S = random_matrix(rng, m, n, 0.3);
  // Q - S'R^{-1}S > 0.
  p.weights.Q = random_spd(rng, n) +
                symmetrize(p.weights.S.transpose() * p.weights.R.ldlt().solve(p.weights.S));
  return p;
}

/// s = 0, l = 20 windows from random initial states, one more than needed.
inline ExcitationPlan random_plan(std::mt19937_64& rng, Eigen::Index n, int l = 20) {
  ExcitationPlan plan;
  for (Eigen::Index j = 0; j < half_size(n) + 1; ++j) {
    Window w;
    w.x0 = random_matrix(rng, n, 1);
    w.l = l;
    plan.windows.push_back(w);
  }
  return plan;
}

inline double rel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / b.norm();
}

}  // namespace mnlq::testing
