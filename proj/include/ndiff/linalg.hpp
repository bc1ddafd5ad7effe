#ifndef NDIFF_LINALG_HPP
#define NDIFF_LINALG_HPP

#include <algorithm>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/QR>

#include "ndiff/errors.hpp"

namespace ndiff {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace linalg {

/// Triangular factor of the Householder QR of a tall stacked matrix.
///
/// Returns the leading cols×cols upper-triangular block R with rows
/// sign-flipped so that diag(R) >= 0, which makes R unique for full-rank
/// input. R^T R equals stacked^T stacked.
inline Matrix upper_qr_factor(const Matrix& stacked) {
  const Eigen::Index n = stacked.cols();
  if (stacked.rows() < n) throw InvalidArgument("QR stack must have at least as many rows as columns");
  Eigen::HouseholderQR<Matrix> qr(stacked);
  Matrix r = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (r(i, i) < 0.0) r.row(i) *= -1.0;
  }
  return r;
}

/// Lower-triangular factor L with L L^T = stacked^T stacked.
inline Matrix lower_qr_factor(const Matrix& stacked) { return upper_qr_factor(stacked).transpose(); }

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline bool is_lower_triangular(const Matrix& m) {
  for (Eigen::Index j = 1; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < std::min(j, m.rows()); ++i)
      if (m(i, j) != 0.0) return false;
  return true;
}

/// Lower Cholesky factor of a symmetric PSD matrix. A semidefinite input gets
/// 1e-12 * trace added to its diagonal before factoring.
inline Matrix cholesky_psd(const Matrix& cov) {
  const Matrix sym = symmetrized(cov);
  Eigen::LLT<Matrix> llt(sym);
  if (llt.info() == Eigen::Success) {
    Matrix l = llt.matrixL();
    if ((l.diagonal().array() > 0.0).all()) return l;
  }
  const double jitter = 1e-12 * std::max(sym.trace(), std::numeric_limits<double>::min());
  Matrix bumped = sym;
  bumped.diagonal().array() += jitter;
  Eigen::LLT<Matrix> retry(bumped);
  if (retry.info() != Eigen::Success) throw ConditioningError("covariance is not positive semidefinite");
  return retry.matrixL();
}

/// Solves (L L^T) X = B for X given lower-triangular L; two back-substitutions.
inline Matrix solve_with_factor(const Matrix& lower, const Matrix& rhs) {
  Matrix x = lower.triangularView<Eigen::Lower>().solve(rhs);
  lower.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
  return x;
}

}  // namespace linalg
}  // namespace ndiff

#endif  // NDIFF_LINALG_HPP
