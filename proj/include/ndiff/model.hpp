#ifndef NDIFF_MODEL_HPP
#define NDIFF_MODEL_HPP

// Discrete-time matrices of the (d-1)-fold integrated Wiener process.
//
// State component j (0-based) is the j-th derivative of the signal. Over a
// step dt the state evolves as x' = A x + w with w ~ N(0, q * Qbar).

#include <array>
#include <cmath>
#include <map>
#include <string>

#include "ndiff/errors.hpp"
#include "ndiff/linalg.hpp"

namespace ndiff {

/// Number of state components d (signal plus d-1 derivatives).
class ModelOrder {
 public:
  static constexpr int kMin = 1;
  static constexpr int kMax = 8;

  ModelOrder(int d) : d_(d) {  // NOLINT(google-explicit-constructor)
    if (d < kMin || d > kMax)
      throw InvalidArgument("model order must be in [" + std::to_string(kMin) + ", " + std::to_string(kMax) +
                            "], got " + std::to_string(d));
  }

  int value() const noexcept { return d_; }
  friend bool operator==(ModelOrder, ModelOrder) = default;

 private:
  int d_;
};

struct TransitionMatrix {
  Matrix a;   // upper triangular, unit diagonal
  double dt;
};

struct ProcessNoiseBase {
  Matrix qbar;       // symmetric positive definite
  Matrix qbar_chol;  // lower triangular, qbar = qbar_chol * qbar_chol^T
  double dt;
};

/// H = [1, 0, ..., 0]: each measurement observes the signal itself.
inline Eigen::RowVectorXd observation_row(ModelOrder order) {
  Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(order.value());
  h(0) = 1.0;
  return h;
}

namespace detail {

inline double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

inline void check_step(double dt) {
  if (!std::isfinite(dt) || dt <= 0.0) throw InvalidArgument("time step must be positive and finite");
}

/// Constant part M of Qbar = D M D, entry (i, j) = 1 / (e (d-1-i)! (d-1-j)!)
/// with e = 2d-1-i-j.
inline Matrix noise_fraction_matrix(int d) {
  Matrix m(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      const int e = 2 * d - 1 - i - j;
      m(i, j) = 1.0 / (e * factorial(d - 1 - i) * factorial(d - 1 - j));
    }
  return m;
}

struct FractionFactor {
  Matrix chol;
  bool ok = false;
};

/// chol(M) for every supported order, built once per process.
inline const FractionFactor& fraction_factor(int d) {
  static const auto table = [] {
    std::array<FractionFactor, ModelOrder::kMax + 1> t{};
    for (int k = ModelOrder::kMin; k <= ModelOrder::kMax; ++k) {
      Eigen::LLT<Matrix> llt(noise_fraction_matrix(k));
      if (llt.info() == Eigen::Success) {
        t[k].chol = llt.matrixL();
        t[k].ok = (t[k].chol.diagonal().array() > 0.0).all();
      }
    }
    return t;
  }();
  const FractionFactor& f = table.at(static_cast<std::size_t>(d));
  if (!f.ok) throw ConditioningError("Cholesky factorization of the noise fraction matrix failed for d=" + std::to_string(d));
  return f;
}

}  // namespace detail

/// A = exp(F dt); entry (i, j) = dt^(j-i) / (j-i)! for j >= i.
inline TransitionMatrix transition_matrix(ModelOrder order, double dt) {
  detail::check_step(dt);
  const int d = order.value();
  Matrix a = Matrix::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) a(i, j) = std::pow(dt, j - i) / detail::factorial(j - i);
  return {std::move(a), dt};
}

/// Qbar = int_0^dt exp(F s) L L^T exp(F^T s) ds and its lower Cholesky factor.
///
/// The factor is D chol(M) where D = diag(dt^((2d-1)/2), ..., dt^(1/2)), so no
/// dt-dependent factorization happens.
inline ProcessNoiseBase process_noise_base(ModelOrder order, double dt) {
  detail::check_step(dt);
  const int d = order.value();
  const auto& frac = detail::fraction_factor(d);
  Vector scale(d);
  for (int i = 0; i < d; ++i) scale(i) = std::pow(dt, (2.0 * d - 1.0 - 2.0 * i) / 2.0);

  Matrix qbar(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      const int e = 2 * d - 1 - i - j;
      qbar(i, j) = std::pow(dt, e) / (e * detail::factorial(d - 1 - i) * detail::factorial(d - 1 - j));
    }
  Matrix chol = scale.asDiagonal() * frac.chol;
  return {std::move(qbar), std::move(chol), dt};
}

/// Memoizes (A, Qbar) per distinct step length. Not thread-safe; use one per pass.
class StepCache {
 public:
  struct Entry {
    TransitionMatrix transition;
    ProcessNoiseBase noise;
  };

  explicit StepCache(ModelOrder order) : d_(order) {}

  const Entry& at(double dt) {
    auto it = entries_.find(dt);
    if (it == entries_.end()) {
      it = entries_.emplace(dt, Entry{transition_matrix(d_, dt), process_noise_base(d_, dt)}).first;
    }
    return it->second;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  ModelOrder order() const noexcept { return d_; }

 private:
  ModelOrder d_;
  std::map<double, Entry> entries_;
};

}  // namespace ndiff

#endif  // NDIFF_MODEL_HPP
