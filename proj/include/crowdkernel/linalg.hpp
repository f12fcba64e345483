#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "crowdkernel/errors.hpp"

namespace crowdkernel::linalg {

/// Eigenpairs of a symmetric matrix, eigenvalues sorted in descending order.
/// Column j of `vectors` belongs to `values[j]`.
struct SymmetricEigen {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
  int sweeps = 0;
};

inline double off_diagonal_norm(const Eigen::MatrixXd& a) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

inline bool is_symmetric(const Eigen::MatrixXd& a, double tol = 1e-10) {
  if (a.rows() != a.cols()) return false;
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = i + 1; j < a.cols(); ++j)
      if (std::abs(a(i, j) - a(j, i)) > tol * scale) return false;
  return true;
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
///
/// Sweeps over all (p,q) pairs, annihilating a(p,q) with a plane rotation,
/// until the off-diagonal Frobenius norm drops below `rel_tol * ||A||_F`.
inline SymmetricEigen jacobi_eigen(const Eigen::MatrixXd& input, double rel_tol = 1e-13,
                                   int max_sweeps = 100) {
  if (input.rows() != input.cols()) throw ArgumentError("jacobi_eigen: matrix must be square");
  const Eigen::Index n = input.rows();
  Eigen::MatrixXd a = 0.5 * (input + input.transpose());
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  const double target = rel_tol * std::max(a.norm(), std::numeric_limits<double>::min());

  int sweep = 0;
  for (; sweep < max_sweeps; ++sweep) {
    if (off_diagonal_norm(a) <= target) break;
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });

  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index src = order[static_cast<std::size_t>(j)];
    out.values(j) = a(src, src);
    out.vectors.col(j) = v.col(src);
  }
  out.sweeps = sweep;
  return out;
}

inline double min_eigenvalue(const Eigen::MatrixXd& a) {
  return jacobi_eigen(a).values.minCoeff();
}

/// Nearest PSD matrix in Frobenius norm: clip negative eigenvalues to zero.
inline Eigen::MatrixXd project_psd(const Eigen::MatrixXd& a) {
  const SymmetricEigen eig = jacobi_eigen(a);
  const Eigen::VectorXd clipped = eig.values.cwiseMax(0.0);
  Eigen::MatrixXd out = eig.vectors * clipped.asDiagonal() * eig.vectors.transpose();
  return 0.5 * (out + out.transpose());
}

/// Cheap positive-definiteness test via Cholesky.
inline bool is_positive_definite(const Eigen::MatrixXd& a) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  return llt.info() == Eigen::Success;
}

}  // namespace crowdkernel::linalg
