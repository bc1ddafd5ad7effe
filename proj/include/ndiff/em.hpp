#ifndef NDIFF_EM_HPP
#define NDIFF_EM_HPP

// Maximum-likelihood estimation of theta = [q, R, m_{1|0}, P_{1|0}] by
// expectation-maximization, with a line-fit plus likelihood-scan initializer.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <utility>
#include <vector>

#include "ndiff/errors.hpp"
#include "ndiff/kalman.hpp"
#include "ndiff/linalg.hpp"
#include "ndiff/model.hpp"
#include "ndiff/smoother.hpp"

namespace ndiff {

struct EmConfig {
  int max_iters = 50;
  double rel_tol = 1e-3;         // on the relative change of the smoothed displacement
  double r_floor_scale = 1e-12;  // R >= r_floor_scale * data_scale(ts)
  std::pair<double, double> q_search_decades{-8.0, 8.0};
  std::optional<double> fixed_r;  // hold R at this value instead of estimating it

  void validate() const {
    if (max_iters < 1) throw InvalidArgument("max_iters must be at least 1");
    if (!(rel_tol > 0.0)) throw InvalidArgument("rel_tol must be positive");
    if (!(r_floor_scale > 0.0)) throw InvalidArgument("r_floor_scale must be positive");
    if (!(q_search_decades.first < q_search_decades.second)) throw InvalidArgument("empty q search range");
    if (fixed_r && (!(*fixed_r > 0.0) || !std::isfinite(*fixed_r)))
      throw InvalidArgument("fixed R must be positive and finite");
  }
};

struct QSearch {
  double q;
  bool at_boundary;  // minimum of the coarse scan sat on the edge of the range
};

struct FitReport {
  ModelParams params;
  ForwardRecord forward;
  SmoothResult smoothed;
  std::vector<double> nll_trace;  // nll at the initial and every subsequent iterate
  int iterations = 0;
  bool converged = false;
  bool q_at_boundary = false;
};

/// Variance of the measurements, or a fallback scale when they are all equal.
inline double data_scale(const TimeSeries& ts) {
  const double v = ts.variance();
  if (v > 0.0) return v;
  const double mu = ts.mean();
  return mu != 0.0 ? mu * mu : 1.0;
}

/// Expected residual second moment of the transition k -> k+1 under the
/// smoothing distribution:
///   E[(x_{k+1} - A x_k)(x_{k+1} - A x_k)^T | y_{1:T}]
///     = e e^T + P_{k+1|T} - A G P_{k+1|T} - P_{k+1|T} G^T A^T + A P_{k|T} A^T.
inline Matrix qhat(std::size_t k, const SmoothResult& sr, const ForwardRecord& fr) {
  if (k + 1 >= fr.steps.size() || k >= sr.gains.size()) throw InvalidArgument("transition index out of range");
  const Matrix& a = fr.steps[k].prediction->transition.a;
  const auto& now = sr.smoothed[k];
  const auto& next = sr.smoothed[k + 1];
  const Matrix& gain = sr.gains[k];

  const Vector resid = next.mean - a * now.mean;
  const Matrix p_next = next.covariance();
  const Matrix cross = a * gain * p_next;  // A G P_{k+1|T}
  const Matrix out = resid * resid.transpose() + p_next - cross - cross.transpose() +
                     a * now.covariance() * a.transpose();
  return linalg::symmetrized(out);
}

namespace detail {

/// qhat for a smoother run that came from `fr`, in Joseph form:
///   e e^T + M M^T,
///   M = [(I - A G) P_{k+1|T}^{1/2}, A (I - G A) P_{k|k}^{1/2}, sqrt(q) A G Qbar^{1/2}].
/// Same value, but PSD by construction; the expanded form cancels to
/// roundoff of either sign once q Qbar is tiny next to the smoothed
/// covariances.
inline Matrix qhat_joseph(std::size_t k, const SmoothResult& sr, const ForwardRecord& fr) {
  if (k + 1 >= fr.steps.size() || k >= sr.gains.size()) throw InvalidArgument("transition index out of range");
  const auto& pred = *fr.steps[k].prediction;
  const Matrix& a = pred.transition.a;
  const Matrix& gain = sr.gains[k];
  const Eigen::Index d = a.rows();
  const Matrix id = Matrix::Identity(d, d);
  const Matrix ag = a * gain;

  const Vector resid = sr.smoothed[k + 1].mean - a * sr.smoothed[k].mean;
  Matrix m(d, 3 * d);
  m << (id - ag) * sr.smoothed[k + 1].cov_factor, a * (id - gain * a) * fr.steps[k].filtered.cov_factor,
      std::sqrt(fr.q) * ag * pred.noise.qbar_chol;
  return linalg::symmetrized(resid * resid.transpose() + m * m.transpose());
}

}  // namespace detail

/// Expected squared residual of one measurement at abscissa k.
inline double rhat(std::size_t k, double y, const SmoothResult& sr) {
  const auto& s = sr.smoothed.at(k);
  const double e = y - s.mean(0);
  const double p11 = s.cov_factor.row(0).squaredNorm();
  return e * e + p11;
}

namespace detail {

/// tr(Qbar^{-1} X) with Qbar = C C^T.
inline double trace_against_noise(const Matrix& x, const Matrix& qbar_chol) {
  const Matrix y = qbar_chol.triangularView<Eigen::Lower>().solve(x);
  const Matrix z = qbar_chol.triangularView<Eigen::Lower>().solve(y.transpose());
  return z.trace();
}

inline double log_det_from_factor(const Matrix& lower) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < lower.rows(); ++i) s += std::log(lower(i, i));
  return 2.0 * s;
}

inline void require_fittable(const TimeSeries& ts) {
  if (ts.size() < 2) throw InvalidArgument("fitting needs at least two abscissas");
  if (ts.total_measurements() < 2) throw InvalidArgument("fitting needs at least two measurements");
}

}  // namespace detail

/// M-step: new parameters from a filter/smoother run at the current ones.
inline ModelParams em_update(const TimeSeries& ts, const ForwardRecord& fr, const SmoothResult& sr,
                             const EmConfig& cfg = {}) {
  const std::size_t n = ts.size();
  if (n < 2) throw InvalidArgument("EM update needs at least two abscissas");
  const int d = fr.order.value();

  double trace_sum = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k)
    trace_sum += detail::trace_against_noise(detail::qhat_joseph(k, sr, fr), fr.steps[k].prediction->noise.qbar_chol);

  ModelParams out;
  out.q = trace_sum / (static_cast<double>(n - 1) * d);
  if (!(out.q > 0.0) || !std::isfinite(out.q))
    throw InternalError("EM update produced a nonpositive driving noise intensity");

  if (cfg.fixed_r) {
    out.r = *cfg.fixed_r;
  } else {
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      for (double y : ts.measurements(k)) sum += rhat(k, y, sr);
    out.r = std::max(sum / static_cast<double>(ts.total_measurements()), cfg.r_floor_scale * data_scale(ts));
  }

  // The smoother already carries P_{1|T} as a canonical lower factor, so it is
  // reused as is; a zero diagonal entry is a valid (semidefinite) prior.
  out.m0 = sr.smoothed.front().mean;
  out.p0_factor = sr.smoothed.front().cov_factor;
  return out;
}

/// One EM iteration: smooth at `params`, then apply the M-step.
inline ModelParams em_step(const TimeSeries& ts, const ModelParams& params, ModelOrder order, const EmConfig& cfg = {}) {
  const int d = order.value();
  if (ts.size() < 2) throw InvalidArgument("EM step needs at least two abscissas");
  const auto fr = forward_pass(ts, params, d);
  return em_update(ts, fr, backward_pass(fr), cfg);
}

/// EM objective Q(theta, theta_hat): expected complete-data log-likelihood at
/// `theta` under the smoothing distribution computed at `theta_hat`.
inline double em_objective(const ModelParams& theta, const ModelParams& theta_hat, const TimeSeries& ts,
                           ModelOrder order) {
  const int d = order.value();
  theta.validate(d);
  const auto fr = forward_pass(ts, theta_hat, d);
  const auto sr = backward_pass(fr);
  const double log_two_pi = std::log(2.0 * std::numbers::pi);

  const Matrix& l0 = theta.p0_factor;
  for (Eigen::Index i = 0; i < d; ++i)
    if (!(l0(i, i) > 0.0)) throw ConditioningError("prior covariance is singular");
  const auto l0_view = l0.triangularView<Eigen::Lower>();
  const auto& first = sr.smoothed.front();
  const Vector offset = first.mean - theta.m0;
  double value = -0.5 * (d * log_two_pi + detail::log_det_from_factor(l0));
  value -= 0.5 * l0_view.solve(first.cov_factor).squaredNorm();
  value -= 0.5 * l0_view.solve(offset).squaredNorm();

  for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
    const Matrix& chol = fr.steps[k].prediction->noise.qbar_chol;
    const double log_det = d * std::log(theta.q) + detail::log_det_from_factor(chol);
    value -= 0.5 * (d * log_two_pi + log_det + detail::trace_against_noise(detail::qhat_joseph(k, sr, fr), chol) / theta.q);
  }

  for (std::size_t k = 0; k < ts.size(); ++k)
    for (double y : ts.measurements(k))
      value -= 0.5 * (log_two_pi + std::log(theta.r) + rhat(k, y, sr) / theta.r);
  return value;
}

namespace detail {

inline double safe_nll(const TimeSeries& ts, ModelParams params, ModelOrder order, double q, StepCache& cache) {
  const int d = order.value();
  params.q = q;
  try {
    const double v = negative_log_likelihood(ts, params, d, &cache);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  } catch (const ConditioningError&) {
    return std::numeric_limits<double>::infinity();
  } catch (const InvalidArgument&) {
    return std::numeric_limits<double>::infinity();
  }
}

}  // namespace detail

/// Minimizes the filter NLL over q with R, m0 and P0 held at `partial`.
///
/// Scans 17 log-spaced points over `decades` around a data-scaled centre
/// var(y) / (t_end - t_start)^(2d-1), then refines the bracketing interval by
/// golden-section search to a relative width of 1e-3 in q.
inline QSearch minimize_q(const TimeSeries& ts, const ModelParams& partial, ModelOrder order,
                          std::pair<double, double> decades = {-8.0, 8.0}) {
  const int d = order.value();
  detail::require_fittable(ts);
  const double span = ts.abscissas().back() - ts.abscissas().front();
  // Search runs over u = log10(q / q0), so rescaling the data rescales q0 and
  // leaves the search path unchanged.
  const double q0 = data_scale(ts) / std::pow(span, 2 * d - 1);
  const double lo = decades.first;
  const double hi = decades.second;
  auto to_q = [&](double u) { return q0 * std::pow(10.0, u); };

  StepCache cache(d);
  auto cost = [&](double u) { return detail::safe_nll(ts, partial, d, to_q(u), cache); };

  constexpr int kScan = 17;
  std::vector<double> xs(kScan), fs(kScan);
  int best = -1;
  for (int i = 0; i < kScan; ++i) {
    xs[i] = lo + (hi - lo) * i / (kScan - 1);
    fs[i] = cost(xs[i]);
    if (std::isfinite(fs[i]) && (best < 0 || fs[i] < fs[best])) best = i;
  }
  if (best < 0) throw FittingError("likelihood is not finite anywhere in the q search range");
  if (best == 0 || best == kScan - 1) return {to_q(xs[best]), true};

  const double golden = (std::sqrt(5.0) - 1.0) / 2.0;
  const double target = std::log10(1.0 + 1e-3);
  double a = xs[best - 1];
  double b = xs[best + 1];
  double best_x = xs[best];
  double best_f = fs[best];
  double c = b - golden * (b - a);
  double e = a + golden * (b - a);
  double fc = cost(c);
  double fe = cost(e);
  while (b - a > target) {
    if (fc < fe) {
      b = e;
      e = c;
      fe = fc;
      c = b - golden * (b - a);
      fc = cost(c);
    } else {
      a = c;
      c = e;
      fc = fe;
      e = a + golden * (b - a);
      fe = cost(e);
    }
    if (fc < best_f) {
      best_f = fc;
      best_x = c;
    }
    if (fe < best_f) {
      best_f = fe;
      best_x = e;
    }
  }
  const double mid = 0.5 * (a + b);
  if (cost(mid) < best_f) best_x = mid;
  return {to_q(best_x), false};
}

/// Line fit through the first ten abscissas for m0 and R, tiny P0, then q by
/// likelihood minimization.
inline ModelParams init_params(const TimeSeries& ts, ModelOrder order, const EmConfig& cfg = {},
                               bool* q_at_boundary = nullptr) {
  const int d = order.value();
  detail::require_fittable(ts);
  const std::size_t window = std::min<std::size_t>(10, ts.size());
  const double t0 = ts.abscissa(0);

  double n = 0.0, sx = 0.0, sy = 0.0;
  std::size_t distinct = 0;
  for (std::size_t k = 0; k < window; ++k) {
    const auto ys = ts.measurements(k);
    if (!ys.empty()) ++distinct;
    for (double y : ys) {
      n += 1.0;
      sx += ts.abscissa(k) - t0;
      sy += y;
    }
  }
  const double xbar = sx / n;
  const double ybar = sy / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < window; ++k)
    for (double y : ts.measurements(k)) {
      const double dx = ts.abscissa(k) - t0 - xbar;
      sxx += dx * dx;
      sxy += dx * (y - ybar);
    }
  const double slope = (distinct >= 2 && sxx > 0.0) ? sxy / sxx : 0.0;
  const double intercept = ybar - slope * xbar;

  double sse = 0.0;
  for (std::size_t k = 0; k < window; ++k)
    for (double y : ts.measurements(k)) {
      const double e = y - intercept - slope * (ts.abscissa(k) - t0);
      sse += e * e;
    }
  const double resid_var = n > 2.0 ? sse / (n - 2.0) : 0.0;

  const double scale = data_scale(ts);
  ModelParams p;
  p.r = cfg.fixed_r ? *cfg.fixed_r : std::max(resid_var, cfg.r_floor_scale * scale);
  p.m0 = Vector::Zero(d);
  p.m0(0) = intercept;
  if (d >= 2) p.m0(1) = slope;
  p.p0_factor = std::sqrt(1e-6 * scale) * Matrix::Identity(d, d);
  const auto search = minimize_q(ts, p, d, cfg.q_search_decades);
  p.q = search.q;
  if (q_at_boundary) *q_at_boundary = search.at_boundary;
  return p;
}

namespace detail {

inline Vector displacement(const SmoothResult& sr) {
  Vector out(static_cast<Eigen::Index>(sr.smoothed.size()));
  for (std::size_t k = 0; k < sr.smoothed.size(); ++k) out(static_cast<Eigen::Index>(k)) = sr.smoothed[k].mean(0);
  return out;
}

}  // namespace detail

/// Runs EM from `start` until the smoothed displacement changes by less than
/// rel_tol (relative L2) between iterations, or max_iters is reached.
inline FitReport fit_from(const TimeSeries& ts, ModelOrder order, const ModelParams& start, const EmConfig& cfg = {}) {
  const int d = order.value();
  cfg.validate();
  detail::require_fittable(ts);

  FitReport rep;
  rep.params = start;
  StepCache cache(d);
  rep.forward = forward_pass(ts, rep.params, d, &cache);
  rep.smoothed = backward_pass(rep.forward);
  rep.nll_trace.push_back(rep.forward.nll);
  Vector previous = detail::displacement(rep.smoothed);

  while (rep.iterations < cfg.max_iters) {
    rep.params = em_update(ts, rep.forward, rep.smoothed, cfg);
    rep.forward = forward_pass(ts, rep.params, d, &cache);
    rep.smoothed = backward_pass(rep.forward);
    rep.nll_trace.push_back(rep.forward.nll);
    ++rep.iterations;

    const Vector current = detail::displacement(rep.smoothed);
    const double change = (current - previous).norm();
    if (change < cfg.rel_tol * current.norm() || change == 0.0) {
      rep.converged = true;
      break;
    }
    previous = current;
  }
  return rep;
}

/// Full automatic fit: init_params followed by the EM loop.
inline FitReport fit(const TimeSeries& ts, ModelOrder order, const EmConfig& cfg = {}) {
  const int d = order.value();
  cfg.validate();
  bool boundary = false;
  const auto start = init_params(ts, d, cfg, &boundary);
  auto rep = fit_from(ts, d, start, cfg);
  rep.q_at_boundary = boundary;
  return rep;
}

}  // namespace ndiff

#endif  // NDIFF_EM_HPP
