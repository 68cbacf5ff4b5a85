#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include <Eigen/Dense>

#include "rnica/error.hpp"

namespace rnica {

/// Dense row-major array of doubles. Rows are samples, columns are dimensions.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw InputError(what + ": non-finite entry");
}

inline void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols,
                          const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(what + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                     ", got " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

/// Column means.
inline Vector column_mean(const Matrix& x) { return x.colwise().mean().transpose(); }

/// Empirical covariance with 1/T normalization.
inline Matrix covariance(const Matrix& x) {
  const Matrix centered = x.rowwise() - x.colwise().mean();
  return (centered.transpose() * centered) / static_cast<double>(x.rows());
}

/// Pearson correlation of two equal-length columns; 0 when either has zero variance.
inline double pearson(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  const double ma = a.mean();
  const double mb = b.mean();
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

/// Symmetric inverse square root of a symmetric positive definite matrix.
/// Throws NumericalError carrying the smallest eigenvalue when it is not.
inline Matrix inverse_sqrt_spd(const Matrix& c, double rel_floor = 1e-12) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c);
  if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  const Eigen::VectorXd& d = eig.eigenvalues();
  const double largest = d.maxCoeff();
  const double smallest = d.minCoeff();
  if (!(smallest > rel_floor * std::max(largest, 1e-300))) {
    throw NumericalError("rank-deficient covariance, smallest eigenvalue " +
                         std::to_string(smallest));
  }
  const Eigen::MatrixXd& v = eig.eigenvectors();
  return v * d.cwiseInverse().cwiseSqrt().asDiagonal() * v.transpose();
}

}  // namespace rnica
