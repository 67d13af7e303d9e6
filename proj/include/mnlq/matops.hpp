#pragma once

// Vectorization and Kronecker utilities used to turn the symmetric value
// matrix into a vector of independent unknowns for regression.

#include <Eigen/Dense>

#include <string>

#include "mnlq/errors.hpp"

namespace mnlq {

/// Relative asymmetry accepted by vec_plus before it refuses the input.
inline constexpr double kSymmetryTolerance = 1e-9;

/// Number of independent entries of a symmetric n x n matrix.
constexpr Eigen::Index half_size(Eigen::Index n) { return n * (n + 1) / 2; }

/// Half-vectorized symmetric matrix with off-diagonal entries doubled.
/// Layout: for column j = 0..n-1, P(j,j), 2 P(j+1,j), ..., 2 P(n-1,j).
struct HalfVec {
  Eigen::VectorXd entries;
  Eigen::Index n = 0;
};

/// Column-major stacking of M.
template <typename Derived>
Eigen::VectorXd vec(const Eigen::MatrixBase<Derived>& m) {
  Eigen::VectorXd out(m.size());
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) out(k++) = m(i, j);
  }
  return out;
}

/// Inverse of vec for a rows x cols target.
inline Eigen::MatrixXd unvec(const Eigen::Ref<const Eigen::VectorXd>& v,
                             Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols) {
    throw Error(ErrorCode::kShapeMismatch,
                "unvec: vector of length " + std::to_string(v.size()) +
                    " cannot fill " + std::to_string(rows) + "x" +
                    std::to_string(cols));
  }
  Eigen::MatrixXd out(rows, cols);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = v(k++);
  }
  return out;
}

/// Block Kronecker product a (x) b.
template <typename DerivedA, typename DerivedB>
Eigen::MatrixXd kron(const Eigen::MatrixBase<DerivedA>& a,
                     const Eigen::MatrixBase<DerivedB>& b) {
  const Eigen::Index br = b.rows(), bc = b.cols();
  Eigen::MatrixXd out(a.rows() * br, a.cols() * bc);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * br, j * bc, br, bc) = a(i, j) * b;
    }
  }
  return out;
}

inline Eigen::MatrixXd symmetrize(const Eigen::Ref<const Eigen::MatrixXd>& p) {
  return 0.5 * (p + p.transpose());
}

/// Largest |P(i,j) - P(j,i)|.
inline double asymmetry(const Eigen::Ref<const Eigen::MatrixXd>& p) {
  return (p - p.transpose()).cwiseAbs().maxCoeff();
}

/// Half-vectorization with doubled off-diagonals. The input is symmetrized
/// first; asymmetry beyond kSymmetryTolerance * ||P||_F is an error.
inline HalfVec vec_plus(const Eigen::Ref<const Eigen::MatrixXd>& p) {
  if (p.rows() != p.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "vec_plus: matrix is not square");
  }
  const double skew = p.size() == 0 ? 0.0 : asymmetry(p);
  if (skew > kSymmetryTolerance * p.norm()) {
    throw Error(ErrorCode::kNotSymmetric,
                "vec_plus: asymmetry " + std::to_string(skew) +
                    " exceeds tolerance");
  }
  const Eigen::MatrixXd s = symmetrize(p);
  const Eigen::Index n = p.rows();
  HalfVec h{Eigen::VectorXd(half_size(n)), n};
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    h.entries(k++) = s(j, j);
    for (Eigen::Index i = j + 1; i < n; ++i) h.entries(k++) = 2.0 * s(i, j);
  }
  return h;
}

inline Eigen::MatrixXd inv_vec_plus(const HalfVec& h) {
  const Eigen::Index n = h.n;
  if (h.entries.size() != half_size(n)) {
    throw Error(ErrorCode::kShapeMismatch,
                "inv_vec_plus: length " + std::to_string(h.entries.size()) +
                    " does not equal n(n+1)/2 for n = " + std::to_string(n));
  }
  Eigen::MatrixXd p(n, n);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    p(j, j) = h.entries(k++);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      p(i, j) = p(j, i) = 0.5 * h.entries(k++);
    }
  }
  return p;
}

/// The n^2 x N matrix W with vec(P) = W vec_plus(P) for symmetric P.
inline Eigen::MatrixXd duplication_w(Eigen::Index n) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n * n, half_size(n));
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    w(j * n + j, k++) = 1.0;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      // P(i,j) sits at vec index j*n+i and its mirror at i*n+j.
      w(j * n + i, k) = 0.5;
      w(i * n + j, k) = 0.5;
      ++k;
    }
  }
  return w;
}

}  // namespace mnlq
