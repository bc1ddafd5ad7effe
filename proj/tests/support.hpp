#ifndef NDIFF_TESTS_SUPPORT_HPP
#define NDIFF_TESTS_SUPPORT_HPP

// Shared generators and comparison metrics for the test suites.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "ndiff/em.hpp"
#include "ndiff/kalman.hpp"
#include "ndiff/linalg.hpp"
#include "ndiff/model.hpp"

namespace ndiff::testing {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
inline double normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }
inline double log_uniform(Rng& rng, double lo, double hi) {
  return std::pow(10.0, uniform(rng, std::log10(lo), std::log10(hi)));
}

inline Vector normal_vector(Rng& rng, Eigen::Index n) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

/// Well-conditioned SPD matrix with the given per-component scales.
inline Matrix random_spd(Rng& rng, const Vector& scale) {
  const Eigen::Index d = scale.size();
  Matrix b(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) b(i, j) = normal(rng);
  const Matrix core = b * b.transpose() / static_cast<double>(d) + Matrix::Identity(d, d);
  return scale.asDiagonal() * core * scale.asDiagonal();
}

inline Matrix random_spd(Rng& rng, Eigen::Index d) { return random_spd(rng, Vector::Ones(d)); }

struct Instance {
  TimeSeries ts;
  ModelParams params;
  int order;
};

struct InstanceOptions {
  int order = 2;
  std::size_t length = 10;
  double base_step = 1.0;      // typical abscissa spacing
  bool jitter_steps = true;    // spacing in [base/2, 2*base]
  int max_per_abscissa = 3;    // n_k drawn uniformly from [0, max]
  double noise_ratio = 1.0;    // q * base^(2d-1) / r
  double r = 1.0;
};

/// Draws a model and data sampled from it. The first abscissa always has at
/// least one measurement.
inline Instance random_instance(Rng& rng, const InstanceOptions& opt) {
  const int d = opt.order;
  const double tau = opt.base_step;
  Instance inst{{}, {}, d};
  inst.params.r = opt.r;
  inst.params.q = opt.noise_ratio * opt.r / std::pow(tau, 2 * d - 1);
  Vector scale(d);
  for (int i = 0; i < d; ++i) scale(i) = std::sqrt(opt.r) / std::pow(tau, i) * log_uniform(rng, 0.1, 10.0);
  inst.params.m0 = 3.0 * scale.cwiseProduct(normal_vector(rng, d));
  inst.params.p0_factor = linalg::cholesky_psd(random_spd(rng, scale));

  std::vector<double> t;
  std::vector<std::vector<double>> y;
  Vector x = inst.params.m0 + inst.params.p0_factor * normal_vector(rng, d);
  double now = 0.0;
  std::uniform_int_distribution<int> count(0, opt.max_per_abscissa);
  for (std::size_t k = 0; k < opt.length; ++k) {
    if (k > 0) {
      double dt = opt.jitter_steps ? tau * std::pow(2.0, uniform(rng, -1.0, 1.0)) : tau;
      now += dt;
      dt = now - t.back();
      x = transition_matrix(d, dt).a * x +
          std::sqrt(inst.params.q) * process_noise_base(d, dt).qbar_chol * normal_vector(rng, d);
    }
    t.push_back(now);
    std::vector<double> row;
    const int n = (k == 0) ? std::max(1, count(rng)) : count(rng);
    for (int j = 0; j < n; ++j) row.push_back(x(0) + std::sqrt(opt.r) * normal(rng));
    y.push_back(std::move(row));
  }
  inst.ts = TimeSeries(std::move(t), std::move(y));
  return inst;
}

/// Randomized instance mix used by the property and acceptance suites:
/// d cycles 1..4, T in [2, 20], base step log-uniform in [1e-2, 1e2],
/// n_k in {0, 1, 2, 3}, dimensionless noise ratio log-uniform in [1e-2, 1e2].
inline Instance mixed_instance(Rng& rng, int index, int max_order = 4, std::size_t max_length = 20) {
  InstanceOptions opt;
  opt.order = 1 + index % max_order;
  opt.length = std::uniform_int_distribution<std::size_t>(2, max_length)(rng);
  opt.base_step = log_uniform(rng, 1e-2, 1e2);
  opt.noise_ratio = log_uniform(rng, 1e-2, 1e2);
  opt.r = log_uniform(rng, 0.1, 10.0);
  return random_instance(rng, opt);
}

/// max_ij |A_ij - B_ij| / sqrt(B_ii B_jj): covariance error on the
/// correlation scale, invariant to per-component units.
inline double scaled_cov_error(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      const double s = std::sqrt(std::abs(b(i, i) * b(j, j)));
      const double e = std::abs(a(i, j) - b(i, j));
      worst = std::max(worst, s > 0.0 ? e / s : e);
    }
  return worst;
}

/// max_i |a_i - b_i| / (|b_i| + sd_i), sd from the reference covariance.
inline double scaled_mean_error(const Vector& a, const Vector& b, const Matrix& cov) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    const double s = std::abs(b(i)) + std::sqrt(std::max(cov(i, i), 0.0));
    const double e = std::abs(a(i) - b(i));
    worst = std::max(worst, s > 0.0 ? e / s : e);
  }
  return worst;
}

inline double relative_frobenius(const Matrix& a, const Matrix& b) {
  const double n = b.norm();
  return n > 0.0 ? (a - b).norm() / n : (a - b).norm();
}

inline double min_eigenvalue(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(linalg::symmetrized(m));
  return es.eigenvalues().minCoeff();
}

/// Coefficients of the degree-(n-1) polynomial through (x_i, y_i), n points.
inline Eigen::VectorXd interpolating_polynomial(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<Eigen::Index>(x.size());
  Matrix v(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) v(i, j) = std::pow(x[static_cast<std::size_t>(i)], static_cast<double>(j));
  const Vector rhs = Eigen::Map<const Vector>(y.data(), n);
  return v.fullPivLu().solve(rhs);
}

inline double evaluate_polynomial(const Eigen::VectorXd& c, double x) {
  double acc = 0.0;
  for (Eigen::Index j = c.size(); j-- > 0;) acc = acc * x + c(j);
  return acc;
}

/// Largest central-difference partial of Q(., theta_hat) over q, R and each
/// component of m0, evaluated at theta. Each partial is taken in units of the
/// parameter's own scale s_i (|q|, |R|, max(|m0_i|, sqrt(P0_ii))) with step
/// 1e-6 * s_i, and divided by max(1, |Q|).
inline double em_stationarity(const ModelParams& theta, const ModelParams& theta_hat, const TimeSeries& ts,
                              ModelOrder order) {
  const double base = std::abs(em_objective(theta, theta_hat, ts, order));
  auto partial = [&](auto&& field, double scale) {
    const double h = 1e-6 * scale;
    ModelParams up = theta, down = theta;
    field(up) += h;
    field(down) -= h;
    const double g = (em_objective(up, theta_hat, ts, order) - em_objective(down, theta_hat, ts, order)) / (2.0 * h);
    return std::abs(g) * scale / std::max(1.0, base);
  };
  double worst = partial([](ModelParams& p) -> double& { return p.q; }, theta.q);
  worst = std::max(worst, partial([](ModelParams& p) -> double& { return p.r; }, theta.r));
  const Matrix p0 = theta.p0();
  for (Eigen::Index i = 0; i < theta.m0.size(); ++i) {
    const double scale = std::max(std::abs(theta.m0(i)), std::sqrt(p0(i, i)));
    worst = std::max(worst, partial([i](ModelParams& p) -> double& { return p.m0(i); }, scale));
  }
  return worst;
}

/// Signal made of sinusoids with analytic derivatives.
struct SinusoidSignal {
  std::vector<double> amplitude, omega, phase;

  /// Derivative of order `order` at t.
  double operator()(double t, int order = 0) const {
    double s = 0.0;
    for (std::size_t i = 0; i < amplitude.size(); ++i)
      s += amplitude[i] * std::pow(omega[i], order) * std::sin(omega[i] * t + phase[i] + order * std::numbers::pi / 2);
    return s;
  }
};

inline double rms(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s / static_cast<double>(v.size()));
}

inline double relative_rms_error(const std::vector<double>& est, const std::vector<double>& truth) {
  std::vector<double> diff(est.size());
  for (std::size_t i = 0; i < est.size(); ++i) diff[i] = est[i] - truth[i];
  return rms(diff) / rms(truth);
}

}  // namespace ndiff::testing

#endif  // NDIFF_TESTS_SUPPORT_HPP
