#include <gtest/gtest.h>

#include <random>

#include "mnlq/matops.hpp"
#include "test_support.hpp"

namespace mnlq {
namespace {

using testing::mat;

TEST(Vec, StacksColumns) {
  EXPECT_EQ(vec(mat({{1, 2}, {3, 4}})), Eigen::Vector4d(1, 3, 2, 4));
  EXPECT_EQ(vec(Eigen::Matrix2d::Identity()), Eigen::Vector4d(1, 0, 0, 1));
}

TEST(Vec, UnvecInvertsVec) {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd m = testing::random_matrix(rng, 3, 5);
  EXPECT_EQ(unvec(vec(m), 3, 5), m);
  EXPECT_THROW(unvec(vec(m), 4, 4), Error);
}

TEST(Vec, ProductIdentity) {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd a = testing::random_matrix(rng, 3, 3);
  const Eigen::MatrixXd b = testing::random_matrix(rng, 3, 3);
  const Eigen::MatrixXd c = testing::random_matrix(rng, 3, 3);
  EXPECT_LT((vec(a * b * c) - kron(c.transpose(), a) * vec(b)).norm(), 1e-12);
}

TEST(VecPlus, DoublesOffDiagonals) {
  const HalfVec h = vec_plus(mat({{2, 1}, {1, 3}}));
  EXPECT_EQ(h.n, 2);
  EXPECT_EQ(h.entries, Eigen::Vector3d(2, 2, 3));
  const double a = 1.5, b = -0.25, c = 7.0;
  EXPECT_EQ(vec_plus(mat({{a, b}, {b, c}})).entries, Eigen::Vector3d(a, 2 * b, c));
}

TEST(VecPlus, IdentityLayout) {
  Eigen::VectorXd want(6);
  want << 1, 0, 0, 1, 0, 1;
  EXPECT_EQ(vec_plus(Eigen::Matrix3d::Identity()).entries, want);
}

TEST(VecPlus, ColumnwiseLowerOrdering) {
  const Eigen::MatrixXd p = mat({{1, 2, 3}, {2, 4, 5}, {3, 5, 6}});
  Eigen::VectorXd want(6);
  want << 1, 4, 6, 4, 10, 6;
  EXPECT_EQ(vec_plus(p).entries, want);
}

TEST(VecPlus, RejectsAsymmetric) {
  try {
    vec_plus(mat({{1, 2}, {0, 1}}));
    FAIL() << "expected NotSymmetric";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotSymmetric);
  }
}

TEST(VecPlus, AcceptsRoundingAsymmetry) {
  Eigen::MatrixXd p = mat({{4, 1}, {1, 9}});
  p(0, 1) += 1e-13;
  const HalfVec h = vec_plus(p);
  EXPECT_NEAR(h.entries(1), 2.0 + 1e-13, 1e-15);
}

TEST(VecPlus, RoundTrip) {
  std::mt19937_64 rng(3);
  for (Eigen::Index n = 1; n <= 6; ++n) {
    const Eigen::MatrixXd p = testing::random_symmetric(rng, n);
    EXPECT_EQ(inv_vec_plus(vec_plus(p)), p) << "n = " << n;
  }
  EXPECT_THROW(inv_vec_plus(HalfVec{Eigen::VectorXd::Zero(4), 2}), Error);
}

TEST(DuplicationW, SmallCases) {
  EXPECT_EQ(duplication_w(1), Eigen::MatrixXd::Ones(1, 1));
  EXPECT_EQ(duplication_w(2), mat({{1, 0, 0}, {0, 0.5, 0}, {0, 0.5, 0}, {0, 0, 1}}));
}

TEST(DuplicationW, MapsHalfVecToVec) {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd w = duplication_w(3);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::MatrixXd p = testing::random_symmetric(rng, 3);
    worst = std::max(worst, (vec(p) - w * vec_plus(p).entries).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-14);
}

TEST(DuplicationW, FullColumnRank) {
  for (Eigen::Index n = 1; n <= 6; ++n) {
    const Eigen::MatrixXd w = duplication_w(n);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(w.transpose() * w);
    EXPECT_TRUE(lu.isInvertible()) << "n = " << n;
    EXPECT_EQ(lu.rank(), half_size(n));
  }
}

TEST(Kron, Definition) {
  EXPECT_EQ(kron(Eigen::Matrix2d::Identity(), Eigen::Matrix2d::Identity()),
            Eigen::MatrixXd::Identity(4, 4));
  EXPECT_EQ(kron(mat({{1, 2}}), mat({{3}, {4}})), mat({{3, 6}, {4, 8}}));
}

TEST(Kron, MixedProduct) {
  std::mt19937_64 rng(5);
  const Eigen::MatrixXd a = testing::random_matrix(rng, 2, 2);
  const Eigen::MatrixXd b = testing::random_matrix(rng, 2, 2);
  const Eigen::MatrixXd c = testing::random_matrix(rng, 2, 2);
  const Eigen::MatrixXd d = testing::random_matrix(rng, 2, 2);
  EXPECT_LT((kron(a, b) * kron(c, d) - kron(a * c, b * d)).norm(), 1e-13);
}

}  // namespace
}  // namespace mnlq
