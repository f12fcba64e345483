#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include "crowdkernel/errors.hpp"
#include "crowdkernel/linalg.hpp"
#include "crowdkernel/types.hpp"

namespace crowdkernel {

/// n objects embedded in d dimensions; row a holds the coordinates of object a.
class Embedding {
 public:
  Embedding() = default;

  explicit Embedding(Eigen::MatrixXd coords) : coords_(std::move(coords)) {
    if (coords_.rows() < 2) throw ArgumentError("Embedding: need at least 2 objects");
    if (coords_.cols() < 1) throw ArgumentError("Embedding: need at least 1 dimension");
    if (!coords_.allFinite()) throw ArgumentError("Embedding: entries must be finite");
  }

  std::size_t size() const { return static_cast<std::size_t>(coords_.rows()); }
  std::size_t dims() const { return static_cast<std::size_t>(coords_.cols()); }
  const Eigen::MatrixXd& coords() const { return coords_; }
  auto row(ObjectId a) const { return coords_.row(static_cast<Eigen::Index>(a)); }

  void check_index(ObjectId a) const {
    if (a >= size())
      throw std::out_of_range("object id " + std::to_string(a) + " out of range for n=" +
                              std::to_string(size()));
  }

 private:
  Eigen::MatrixXd coords_;
};

/// Symmetric n x n similarity matrix.
class KernelMatrix {
 public:
  KernelMatrix() = default;

  explicit KernelMatrix(Eigen::MatrixXd entries) : entries_(std::move(entries)) {
    if (entries_.rows() != entries_.cols()) throw ArgumentError("KernelMatrix: must be square");
    if (!entries_.allFinite()) throw ArgumentError("KernelMatrix: entries must be finite");
    if (!linalg::is_symmetric(entries_, 1e-10)) throw ArgumentError("KernelMatrix: must be symmetric");
  }

  static KernelMatrix identity(std::size_t n) {
    const auto m = static_cast<Eigen::Index>(n);
    return KernelMatrix(Eigen::MatrixXd::Identity(m, m));
  }

  std::size_t size() const { return static_cast<std::size_t>(entries_.rows()); }
  const Eigen::MatrixXd& entries() const { return entries_; }
  double operator()(ObjectId i, ObjectId j) const {
    return entries_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }

  void check_index(ObjectId a) const {
    if (a >= size())
      throw std::out_of_range("object id " + std::to_string(a) + " out of range for n=" +
                              std::to_string(size()));
  }

  /// Squared distance implied by the kernel, K_aa + K_bb - 2 K_ab.
  double distance2(ObjectId a, ObjectId b) const {
    return (*this)(a, a) + (*this)(b, b) - 2.0 * (*this)(a, b);
  }

  /// Membership in the set of unit-diagonal PSD matrices.
  bool in_unit_psd_set(double diag_tol = 1e-8, double eig_tol = 1e-8) const {
    for (Eigen::Index i = 0; i < entries_.rows(); ++i)
      if (std::abs(entries_(i, i) - 1.0) > diag_tol) return false;
    return linalg::min_eigenvalue(entries_) >= -eig_tol;
  }

 private:
  Eigen::MatrixXd entries_;
};

inline KernelMatrix kernel_from_embedding(const Embedding& m) {
  Eigen::MatrixXd k = m.coords() * m.coords().transpose();
  return KernelMatrix(0.5 * (k + k.transpose()));
}

/// Rank-d factor of K: top-d eigenvectors scaled by sqrt of clipped eigenvalues.
inline Embedding embedding_from_kernel(const KernelMatrix& k, std::size_t d) {
  if (d < 1 || d > k.size())
    throw ArgumentError("embedding_from_kernel: need 1 <= d <= n (d=" + std::to_string(d) + ")");
  const auto eig = linalg::jacobi_eigen(k.entries());
  const auto dd = static_cast<Eigen::Index>(d);
  Eigen::MatrixXd coords = eig.vectors.leftCols(dd);
  for (Eigen::Index j = 0; j < dd; ++j) coords.col(j) *= std::sqrt(std::max(0.0, eig.values(j)));
  return Embedding(std::move(coords));
}

struct ProjectionResult {
  KernelMatrix matrix;
  bool converged = false;
  int iterations = 0;
  double last_change = 0.0;
};

/// Frobenius-nearest unit-diagonal PSD matrix (nearest correlation matrix).
///
/// Dykstra-corrected alternating projections: the correction term is carried
/// only for the PSD cone, the unit-diagonal set being affine. Stops once the
/// iterates of both sequences and their gap all move less than `tol`.
inline ProjectionResult project_B(const KernelMatrix& k, double tol = 1e-8, int max_iter = 500) {
  const Eigen::MatrixXd& a = k.entries();
  const Eigen::Index n = a.rows();

  bool unit_diag = true;
  for (Eigen::Index i = 0; i < n; ++i) unit_diag = unit_diag && a(i, i) == 1.0;
  if (unit_diag && linalg::is_positive_definite(a)) return {k, true, 0, 0.0};

  Eigen::MatrixXd y = a;
  Eigen::MatrixXd x = a;
  Eigen::MatrixXd correction = Eigen::MatrixXd::Zero(n, n);
  double change = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    const Eigen::MatrixXd r = y - correction;
    const Eigen::MatrixXd x_prev = x;
    x = linalg::project_psd(r);
    correction = x - r;
    const Eigen::MatrixXd y_prev = y;
    y = x;
    y.diagonal().setOnes();
    change = std::max({(y - y_prev).norm(), (y - x).norm(), it > 1 ? (x - x_prev).norm() : 0.0});
    if (change < tol) return {KernelMatrix(0.5 * (y + y.transpose())), true, it, change};
  }
  return {KernelMatrix(0.5 * (y + y.transpose())), false, max_iter, change};
}

/// Top-two principal coordinates of the double-centred kernel.
/// Column 0 is the principal component. Signs are fixed so that the entry of
/// largest magnitude in each column is positive.
inline Eigen::MatrixXd pca_2d(const KernelMatrix& k) {
  const Eigen::Index n = static_cast<Eigen::Index>(k.size());
  const Eigen::MatrixXd j =
      Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
  const Eigen::MatrixXd centred = j * k.entries() * j;
  const auto eig = linalg::jacobi_eigen(centred);
  Eigen::MatrixXd out(n, 2);
  for (Eigen::Index c = 0; c < 2; ++c) {
    if (c >= n) {
      out.col(c).setZero();
      continue;
    }
    Eigen::VectorXd col = eig.vectors.col(c) * std::sqrt(std::max(0.0, eig.values(c)));
    Eigen::Index arg = 0;
    col.cwiseAbs().maxCoeff(&arg);
    if (col(arg) < 0.0) col = -col;
    out.col(c) = col;
  }
  return out;
}

}  // namespace crowdkernel
