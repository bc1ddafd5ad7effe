#ifndef NDIFF_VERIFICATION_ORACLE_HPP
#define NDIFF_VERIFICATION_ORACLE_HPP

// Brute-force dense Gaussian reference for the filter and smoother.
//
// Builds the joint prior of all stacked states and conditions it on the
// measurements with textbook dense formulas, evaluated in extended precision
// since the covariance form loses digits when the posterior is much tighter
// than the prior. Cost is cubic in T*d; the size guard keeps it to
// verification-scale problems.

#include <cmath>
#include <numbers>
#include <optional>

#include "ndiff/errors.hpp"
#include "ndiff/kalman.hpp"
#include "ndiff/linalg.hpp"
#include "ndiff/model.hpp"

namespace ndiff::verification {

inline constexpr Eigen::Index kMaxJointSize = 400;

using Real = long double;
using RealMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
using RealVector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

struct JointGaussian {
  RealVector mean;  // stacked x_1..x_T
  RealMatrix cov;
  int order = 1;

  Vector block_mean(std::size_t k) const {
    return mean.segment(static_cast<Eigen::Index>(k) * order, order).cast<double>();
  }
  Matrix block_cov(std::size_t k, std::size_t l) const {
    return cov.block(static_cast<Eigen::Index>(k) * order, static_cast<Eigen::Index>(l) * order, order, order)
        .cast<double>();
  }
  Matrix block_cov(std::size_t k) const { return block_cov(k, k); }
};

inline JointGaussian build_joint_prior(const TimeSeries& ts, const ModelParams& params, ModelOrder order) {
  const int d = order.value();
  params.validate(d);
  const auto n = static_cast<Eigen::Index>(ts.size());
  if (n == 0) throw InvalidArgument("empty time series");
  if (n * d > kMaxJointSize) throw InvalidArgument("joint Gaussian too large for the dense oracle");

  JointGaussian jg;
  jg.order = d;
  jg.mean = RealVector::Zero(n * d);
  jg.cov = RealMatrix::Zero(n * d, n * d);
  jg.mean.head(d) = params.m0.cast<Real>();
  const RealMatrix l0 = params.p0_factor.cast<Real>();
  jg.cov.topLeftCorner(d, d) = l0 * l0.transpose();

  for (Eigen::Index k = 0; k + 1 < n; ++k) {
    const double dt = ts.abscissa(static_cast<std::size_t>(k + 1)) - ts.abscissa(static_cast<std::size_t>(k));
    const RealMatrix a = transition_matrix(d, dt).a.cast<Real>();
    const RealMatrix qbar = process_noise_base(d, dt).qbar.cast<Real>();
    const Eigen::Index cur = k * d;
    const Eigen::Index nxt = (k + 1) * d;
    jg.mean.segment(nxt, d) = a * jg.mean.segment(cur, d);
    // C_{j,k+1} = C_{j,k} A^T for j <= k.
    for (Eigen::Index j = 0; j <= k; ++j) {
      const RealMatrix c = jg.cov.block(j * d, cur, d, d) * a.transpose();
      jg.cov.block(j * d, nxt, d, d) = c;
      jg.cov.block(nxt, j * d, d, d) = c.transpose();
    }
    const RealMatrix next = a * jg.cov.block(cur, cur, d, d) * a.transpose() + static_cast<Real>(params.q) * qbar;
    jg.cov.block(nxt, nxt, d, d) = 0.5L * (next + next.transpose());
  }
  return jg;
}

namespace detail {

/// Selection matrix rows and stacked values for the measurements at
/// abscissas [0, through).
inline RealMatrix symmetrized(const RealMatrix& m) { return 0.5L * (m + m.transpose()); }

inline std::pair<RealMatrix, RealVector> stacked_measurements(const TimeSeries& ts, int d, std::size_t through) {
  std::size_t count = 0;
  for (std::size_t k = 0; k < through; ++k) count += ts.measurements(k).size();
  RealMatrix sel = RealMatrix::Zero(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(ts.size()) * d);
  RealVector y(static_cast<Eigen::Index>(count));
  Eigen::Index row = 0;
  for (std::size_t k = 0; k < through; ++k)
    for (double v : ts.measurements(k)) {
      sel(row, static_cast<Eigen::Index>(k) * d) = 1.0;
      y(row++) = v;
    }
  return {std::move(sel), std::move(y)};
}

}  // namespace detail

/// Conditions the joint state on every measurement at abscissas [0, through)
/// (all of them by default) with noise variance r.
inline JointGaussian condition_on_measurements(const JointGaussian& jg, const TimeSeries& ts, double r,
                                               std::optional<std::size_t> through = std::nullopt) {
  if (!(r > 0.0)) throw InvalidArgument("measurement variance must be positive");
  const std::size_t upto = through.value_or(ts.size());
  if (upto > ts.size()) throw InvalidArgument("conditioning range exceeds the series");
  const auto [sel, y] = detail::stacked_measurements(ts, jg.order, upto);
  if (sel.rows() == 0) return jg;

  const RealMatrix cross = jg.cov * sel.transpose();  // C M^T
  RealMatrix innov = sel * cross;
  innov.diagonal().array() += static_cast<Real>(r);
  Eigen::LLT<RealMatrix> llt(detail::symmetrized(innov));
  if (llt.info() != Eigen::Success) throw ConditioningError("innovation covariance is not positive definite");

  JointGaussian out = jg;
  const RealMatrix gain = llt.solve(cross.transpose()).transpose();  // C M^T S^{-1}
  out.mean = jg.mean + gain * (y - sel * jg.mean);
  out.cov = detail::symmetrized(jg.cov - gain * cross.transpose());
  return out;
}

/// Same posterior as condition_on_measurements, one scalar at a time.
inline JointGaussian condition_sequentially(const JointGaussian& jg, const TimeSeries& ts, double r) {
  if (!(r > 0.0)) throw InvalidArgument("measurement variance must be positive");
  JointGaussian out = jg;
  for (std::size_t k = 0; k < ts.size(); ++k)
    for (double y : ts.measurements(k)) {
      const Eigen::Index idx = static_cast<Eigen::Index>(k) * jg.order;
      const RealVector c = out.cov.col(idx);
      const Real s = c(idx) + static_cast<Real>(r);
      if (!(s > 0.0L)) throw ConditioningError("innovation variance is not positive", k);
      out.mean += c * ((static_cast<Real>(y) - out.mean(idx)) / s);
      out.cov = detail::symmetrized(out.cov - c * c.transpose() / s);
    }
  return out;
}

/// -log N(y; M mean, M C M^T + r I) from the dense joint prior.
inline double nll_direct(const TimeSeries& ts, const ModelParams& params, ModelOrder order) {
  const int d = order.value();
  const auto jg = build_joint_prior(ts, params, d);
  const auto [sel, y] = detail::stacked_measurements(ts, d, ts.size());
  if (sel.rows() == 0) throw InvalidArgument("no measurements");
  RealMatrix innov = sel * jg.cov * sel.transpose();
  innov.diagonal().array() += static_cast<Real>(params.r);
  Eigen::LLT<RealMatrix> llt(detail::symmetrized(innov));
  if (llt.info() != Eigen::Success) throw ConditioningError("marginal covariance is not positive definite");
  const RealMatrix l = llt.matrixL();
  const RealVector resid = y - sel * jg.mean;
  const RealVector white = l.triangularView<Eigen::Lower>().solve(resid);
  Real log_det = 0.0L;
  for (Eigen::Index i = 0; i < l.rows(); ++i) log_det += 2.0L * std::log(l(i, i));
  const Real n = static_cast<Real>(sel.rows());
  return static_cast<double>(0.5L * (n * std::log(2.0L * std::numbers::pi_v<Real>) + log_det + white.squaredNorm()));
}

}  // namespace ndiff::verification

#endif  // NDIFF_VERIFICATION_ORACLE_HPP
