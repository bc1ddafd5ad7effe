#ifndef NDIFF_KALMAN_HPP
#define NDIFF_KALMAN_HPP

// Square-root Kalman filter for the integrated Wiener process model.
//
// Covariances are carried as lower-triangular Cholesky factors with
// nonnegative diagonals and updated by Householder QR of stacked factor
// blocks. The filter also accumulates the exact negative log-likelihood of
// the measurements from the scalar innovations.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "ndiff/errors.hpp"
#include "ndiff/linalg.hpp"
#include "ndiff/model.hpp"

namespace ndiff {

/// Strictly increasing abscissas, each with zero or more scalar measurements.
class TimeSeries {
 public:
  TimeSeries() = default;

  TimeSeries(std::vector<double> abscissas, std::vector<std::vector<double>> measurements)
      : abscissas_(std::move(abscissas)), measurements_(std::move(measurements)) {
    if (abscissas_.size() != measurements_.size())
      throw InvalidArgument("abscissa and measurement lists differ in length");
    for (std::size_t k = 0; k < abscissas_.size(); ++k) {
      if (!std::isfinite(abscissas_[k])) throw InvalidArgument("abscissas must be finite");
      if (k > 0 && !(abscissas_[k] > abscissas_[k - 1]))
        throw InvalidArgument("abscissas must be strictly increasing");
      for (double y : measurements_[k])
        if (!std::isfinite(y)) throw InvalidArgument("measurements must be finite");
      total_ += measurements_[k].size();
    }
  }

  /// One measurement per abscissa.
  static TimeSeries uniform_samples(std::span<const double> t, std::span<const double> y) {
    if (t.size() != y.size()) throw InvalidArgument("t and y differ in length");
    std::vector<std::vector<double>> m;
    m.reserve(y.size());
    for (double v : y) m.push_back({v});
    return TimeSeries({t.begin(), t.end()}, std::move(m));
  }

  std::size_t size() const noexcept { return abscissas_.size(); }
  bool empty() const noexcept { return abscissas_.empty(); }
  double abscissa(std::size_t k) const { return abscissas_.at(k); }
  const std::vector<double>& abscissas() const noexcept { return abscissas_; }
  std::span<const double> measurements(std::size_t k) const { return measurements_.at(k); }
  const std::vector<std::vector<double>>& all_measurements() const noexcept { return measurements_; }
  std::size_t total_measurements() const noexcept { return total_; }

  double mean() const {
    double sum = 0.0;
    for (const auto& row : measurements_)
      for (double y : row) sum += y;
    return total_ ? sum / static_cast<double>(total_) : 0.0;
  }

  /// Population variance of all measurement values.
  double variance() const {
    if (total_ == 0) return 0.0;
    const double mu = mean();
    double ss = 0.0;
    for (const auto& row : measurements_)
      for (double y : row) ss += (y - mu) * (y - mu);
    return ss / static_cast<double>(total_);
  }

  /// Copy with an extra abscissa at `t` carrying no measurements.
  TimeSeries with_empty_abscissa(double t) const {
    auto pos = std::lower_bound(abscissas_.begin(), abscissas_.end(), t);
    if (pos != abscissas_.end() && *pos == t) throw InvalidArgument("abscissa already present");
    const auto idx = static_cast<std::size_t>(pos - abscissas_.begin());
    auto a = abscissas_;
    auto m = measurements_;
    a.insert(a.begin() + static_cast<std::ptrdiff_t>(idx), t);
    m.insert(m.begin() + static_cast<std::ptrdiff_t>(idx), std::vector<double>{});
    return TimeSeries(std::move(a), std::move(m));
  }

 private:
  std::vector<double> abscissas_;
  std::vector<std::vector<double>> measurements_;
  std::size_t total_ = 0;
};

/// Gaussian N(mean, cov_factor * cov_factor^T).
struct SqrtGaussian {
  Vector mean;
  Matrix cov_factor;  // lower triangular

  Matrix covariance() const { return cov_factor * cov_factor.transpose(); }
};

/// theta = [q, R, m_{1|0}, P_{1|0}].
struct ModelParams {
  double q = 1.0;     // driving noise intensity
  double r = 1.0;     // measurement variance
  Vector m0;          // prior mean of the first state
  Matrix p0_factor;   // lower Cholesky factor of the prior covariance

  Matrix p0() const { return p0_factor * p0_factor.transpose(); }

  void validate(ModelOrder order) const {
  const int d = order.value();
    if (!(q > 0.0) || !std::isfinite(q)) throw InvalidArgument("q must be positive and finite");
    if (!(r > 0.0) || !std::isfinite(r)) throw InvalidArgument("R must be positive and finite");
    if (m0.size() != d) throw InvalidArgument("m0 has wrong dimension");
    if (p0_factor.rows() != d || p0_factor.cols() != d) throw InvalidArgument("P0 factor has wrong dimension");
    if (!m0.allFinite() || !p0_factor.allFinite()) throw InvalidArgument("prior must be finite");
  }
};

struct Innovation {
  double v;  // y - H m
  double s;  // innovation variance
};

struct MeasurementUpdate {
  SqrtGaussian state;
  Innovation innovation;
};

/// Transition from abscissa k to k+1 and the resulting one-step prediction.
struct Prediction {
  SqrtGaussian state;  // x_{k+1|k}
  TransitionMatrix transition;
  ProcessNoiseBase noise;
};

struct ForwardStep {
  SqrtGaussian filtered;                // x_{k|k}
  std::optional<Prediction> prediction; // absent at the last abscissa
  std::vector<Innovation> innovations;  // one per measurement at k
};

struct ForwardRecord {
  ModelOrder order{1};
  double q = 0.0;
  double r = 0.0;
  std::vector<double> abscissas;
  std::vector<ForwardStep> steps;
  double nll = 0.0;  // -log p(y | theta)
};

inline constexpr double kInnovationFloor = 1e-300;

/// Conditions `state` on one scalar measurement y = H x + e, e ~ N(0, r).
inline MeasurementUpdate measurement_update(const SqrtGaussian& state, double y, double r) {
  if (!std::isfinite(y)) throw InvalidArgument("measurement must be finite");
  if (!(r > 0.0) || !std::isfinite(r)) throw InvalidArgument("measurement variance must be positive");
  const Eigen::Index d = state.mean.size();
  if (state.cov_factor.rows() != d || state.cov_factor.cols() != d)
    throw InvalidArgument("covariance factor has wrong dimension");

  // Transpose of [[sqrt(r), H L], [0, L]].
  Matrix stacked = Matrix::Zero(d + 1, d + 1);
  stacked(0, 0) = std::sqrt(r);
  stacked.block(1, 0, d, 1) = state.cov_factor.row(0).transpose();
  stacked.block(1, 1, d, d) = state.cov_factor.transpose();
  const Matrix upper = linalg::upper_qr_factor(stacked);

  const double root_s = upper(0, 0);
  const double s = root_s * root_s;
  if (!(s >= kInnovationFloor) || !std::isfinite(s)) throw ConditioningError("innovation variance collapsed");

  const Vector gain = upper.block(0, 1, 1, d).transpose() / root_s;
  const double v = y - state.mean(0);
  return {{state.mean + gain * v, upper.block(1, 1, d, d).transpose()}, {v, s}};
}

/// Propagates `state` through x' = A x + w, w ~ N(0, q Qbar).
inline SqrtGaussian dynamic_update(const SqrtGaussian& state, const TransitionMatrix& a, double q,
                                   const ProcessNoiseBase& qbar) {
  if (!(q > 0.0) || !std::isfinite(q)) throw InvalidArgument("q must be positive and finite");
  const Eigen::Index d = state.mean.size();
  if (a.a.rows() != d || a.a.cols() != d || qbar.qbar_chol.rows() != d || qbar.qbar_chol.cols() != d ||
      state.cov_factor.rows() != d || state.cov_factor.cols() != d)
    throw InvalidArgument("dimension mismatch in dynamic update");

  Matrix stacked(2 * d, d);
  stacked.topRows(d) = state.cov_factor.transpose() * a.a.transpose();
  stacked.bottomRows(d) = std::sqrt(q) * qbar.qbar_chol.transpose();
  return {a.a * state.mean, linalg::lower_qr_factor(stacked)};
}

namespace detail {

/// Lower factor with nonnegative diagonal representing the same covariance.
inline Matrix canonical_factor(const Matrix& factor) {
  bool canonical = linalg::is_lower_triangular(factor);
  for (Eigen::Index i = 0; canonical && i < factor.rows(); ++i) canonical = factor(i, i) >= 0.0;
  return canonical ? factor : linalg::lower_qr_factor(factor.transpose());
}

inline void require_filterable(const TimeSeries& ts) {
  if (ts.empty()) throw InvalidArgument("time series has no abscissas");
  if (ts.total_measurements() < 1) throw InvalidArgument("time series has no measurements");
}

}  // namespace detail

/// Runs the square-root Kalman filter over `ts` and accumulates the NLL.
inline ForwardRecord forward_pass(const TimeSeries& ts, const ModelParams& params, ModelOrder order,
                                  StepCache* cache = nullptr) {
  const int d = order.value();
  detail::require_filterable(ts);
  params.validate(d);
  StepCache local(d);
  StepCache& steps = cache ? *cache : local;
  if (steps.order() != d) throw InvalidArgument("step cache built for a different order");

  ForwardRecord rec;
  rec.order = d;
  rec.q = params.q;
  rec.r = params.r;
  rec.abscissas = ts.abscissas();
  rec.steps.reserve(ts.size());

  const double log_two_pi = std::log(2.0 * std::numbers::pi);
  SqrtGaussian current{params.m0, detail::canonical_factor(params.p0_factor)};
  for (std::size_t k = 0; k < ts.size(); ++k) {
    ForwardStep step;
    const auto ys = ts.measurements(k);
    step.innovations.reserve(ys.size());
    for (std::size_t j = 0; j < ys.size(); ++j) {
      try {
        auto upd = measurement_update(current, ys[j], params.r);
        current = std::move(upd.state);
        rec.nll += 0.5 * (log_two_pi + std::log(upd.innovation.s) +
                          upd.innovation.v * upd.innovation.v / upd.innovation.s);
        step.innovations.push_back(upd.innovation);
      } catch (const ConditioningError& e) {
        throw e.at(k, j);
      }
    }
    step.filtered = current;
    if (k + 1 < ts.size()) {
      const auto& entry = steps.at(ts.abscissa(k + 1) - ts.abscissa(k));
      current = dynamic_update(current, entry.transition, params.q, entry.noise);
      step.prediction = Prediction{current, entry.transition, entry.noise};
    }
    rec.steps.push_back(std::move(step));
  }
  return rec;
}

/// Negative log-likelihood of `ts` under `params`.
inline double negative_log_likelihood(const TimeSeries& ts, const ModelParams& params, ModelOrder order,
                                      StepCache* cache = nullptr) {
  const int d = order.value();
  return forward_pass(ts, params, d, cache).nll;
}

}  // namespace ndiff

#endif  // NDIFF_KALMAN_HPP
