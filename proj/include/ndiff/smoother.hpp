#ifndef NDIFF_SMOOTHER_HPP
#define NDIFF_SMOOTHER_HPP

// Square-root Rauch-Tung-Striebel backward pass and dense output between
// abscissas.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "ndiff/errors.hpp"
#include "ndiff/kalman.hpp"
#include "ndiff/linalg.hpp"
#include "ndiff/model.hpp"

namespace ndiff {

struct SmoothResult {
  std::vector<SqrtGaussian> smoothed;  // x_{k|T}
  std::vector<Matrix> gains;           // G_k for k = 0..T-2
  double nll = 0.0;
};

/// Smoothed posterior at an arbitrary time inside [t_0, t_{T-1}].
struct DenseState {
  double t;
  Vector mean;
  Matrix cov;
};

namespace detail {

inline void require_nonsingular(const Matrix& lower, std::size_t k) {
  for (Eigen::Index i = 0; i < lower.rows(); ++i)
    if (!(lower(i, i) > 0.0)) throw ConditioningError("predicted covariance factor is singular", k);
}

}  // namespace detail

inline SmoothResult backward_pass(const ForwardRecord& fr) {
  const std::size_t n = fr.steps.size();
  if (n == 0) throw InvalidArgument("empty forward record");
  const Eigen::Index d = fr.order.value();

  SmoothResult sr;
  sr.nll = fr.nll;
  sr.smoothed.resize(n);
  sr.gains.resize(n - 1);
  sr.smoothed[n - 1] = fr.steps[n - 1].filtered;

  for (std::size_t k = n - 1; k-- > 0;) {
    const auto& filtered = fr.steps[k].filtered;
    if (!fr.steps[k].prediction) throw InvalidArgument("forward record is missing a prediction");
    const auto& pred = *fr.steps[k].prediction;
    const Matrix& a = pred.transition.a;
    detail::require_nonsingular(pred.state.cov_factor, k);

    // G = P_{k|k} A^T P_{k+1|k}^{-1}, via back-substitution on the predicted factor.
    const Matrix pf = filtered.covariance();
    const Matrix gain = linalg::solve_with_factor(pred.state.cov_factor, a * pf).transpose();
    if (!gain.allFinite()) throw ConditioningError("smoother gain is not finite", k);

    const auto& next = sr.smoothed[k + 1];
    Vector mean = filtered.mean + gain * (next.mean - pred.state.mean);

    Matrix stacked = Matrix::Zero(3 * d, 2 * d);
    const Matrix lf_t = filtered.cov_factor.transpose();
    stacked.block(0, 0, d, d) = lf_t * a.transpose();
    stacked.block(0, d, d, d) = lf_t;
    stacked.block(d, 0, d, d) = std::sqrt(fr.q) * pred.noise.qbar_chol.transpose();
    stacked.block(2 * d, d, d, d) = next.cov_factor.transpose() * gain.transpose();
    const Matrix upper = linalg::upper_qr_factor(stacked);

    sr.smoothed[k] = {std::move(mean), upper.block(d, d, d, d).transpose()};
    sr.gains[k] = gain;
  }
  return sr;
}

/// Dense output on one interval [t_k, t_{k+1}], sharing the per-interval work
/// across query points.
class IntervalInterpolator {
 public:
  IntervalInterpolator(const ForwardRecord& fr, const SmoothResult& sr, std::size_t k)
      : order_(fr.order), q_(fr.q) {
    if (k + 1 >= fr.steps.size()) throw InvalidArgument("interval index must be below the last abscissa");
    if (sr.smoothed.size() != fr.steps.size()) throw InvalidArgument("smoother and filter records differ in length");
    const auto& step = fr.steps[k];
    const auto& pred = *step.prediction;
    detail::require_nonsingular(pred.state.cov_factor, k);
    t0_ = fr.abscissas[k];
    dt_ = pred.transition.dt;
    filtered_mean_ = step.filtered.mean;
    filtered_cov_ = step.filtered.covariance();
    predicted_factor_ = pred.state.cov_factor;
    mean_correction_ = sr.smoothed[k + 1].mean - pred.state.mean;
    cov_correction_ = sr.smoothed[k + 1].covariance() - pred.state.covariance();
  }

  /// Posterior at t_k + theta * dt, 0 < theta < 1.
  DenseState operator()(double theta) const {
    if (!(theta > 0.0 && theta < 1.0)) throw InvalidArgument("theta must lie strictly inside (0, 1)");
    const auto a_theta = transition_matrix(order_, theta * dt_);
    const auto qbar_theta = process_noise_base(order_, theta * dt_);
    const auto a_rest = transition_matrix(order_, (1.0 - theta) * dt_);

    const Vector prior_mean = a_theta.a * filtered_mean_;
    const Matrix prior_cov =
        linalg::symmetrized(a_theta.a * filtered_cov_ * a_theta.a.transpose() + q_ * qbar_theta.qbar);
    const Matrix gain = linalg::solve_with_factor(predicted_factor_, a_rest.a * prior_cov).transpose();

    return {t0_ + theta * dt_, prior_mean + gain * mean_correction_,
            linalg::symmetrized(prior_cov + gain * cov_correction_ * gain.transpose())};
  }

  double start() const noexcept { return t0_; }
  double step() const noexcept { return dt_; }

 private:
  ModelOrder order_;
  double q_;
  double t0_ = 0.0;
  double dt_ = 0.0;
  Vector filtered_mean_;
  Matrix filtered_cov_;
  Matrix predicted_factor_;
  Vector mean_correction_;  // m_{k+1|T} - m_{k+1|k}
  Matrix cov_correction_;   // P_{k+1|T} - P_{k+1|k}
};

inline DenseState dense_predict(const ForwardRecord& fr, const SmoothResult& sr, std::size_t k, double theta) {
  return IntervalInterpolator(fr, sr, k)(theta);
}

inline std::vector<DenseState> interpolant_samples(const ForwardRecord& fr, const SmoothResult& sr, std::size_t k,
                                                   std::span<const double> thetas) {
  const IntervalInterpolator interp(fr, sr, k);
  std::vector<DenseState> out;
  out.reserve(thetas.size());
  for (double theta : thetas) out.push_back(interp(theta));
  return out;
}

/// Smoothed posterior at time t in [t_0, t_{T-1}]; exact abscissas return the
/// smoothed state itself.
inline DenseState smoothed_at(const ForwardRecord& fr, const SmoothResult& sr, double t) {
  const auto& ts = fr.abscissas;
  if (ts.empty() || !(t >= ts.front() && t <= ts.back()))
    throw InvalidArgument("query time lies outside the abscissa range");
  const auto it = std::lower_bound(ts.begin(), ts.end(), t);
  const auto k = static_cast<std::size_t>(it - ts.begin());
  if (*it == t) return {t, sr.smoothed[k].mean, sr.smoothed[k].covariance()};
  const double left = ts[k - 1];
  const double theta = (t - left) / (ts[k] - left);
  if (!(theta > 0.0)) return {t, sr.smoothed[k - 1].mean, sr.smoothed[k - 1].covariance()};
  if (!(theta < 1.0)) return {t, sr.smoothed[k].mean, sr.smoothed[k].covariance()};
  return dense_predict(fr, sr, k - 1, theta);
}

}  // namespace ndiff

#endif  // NDIFF_SMOOTHER_HPP
