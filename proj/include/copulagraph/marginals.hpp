#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <variant>

#include "copulagraph/autodiff.hpp"
#include "copulagraph/errors.hpp"
#include "copulagraph/normal.hpp"

namespace copulagraph {

enum class Family { Normal, Poisson };

inline std::string_view to_string(Family f) { return f == Family::Normal ? "normal" : "poisson"; }

// Probability-integral-transform values are clipped into this range before
// the normal quantile so every z stays finite.
inline constexpr double kPitLow = 1e-7;
inline constexpr double kPitHigh = 1.0 - 1e-7;

// Lower bound on marginal variances taken from the copula covariance.
inline constexpr double kVarianceFloor = 1e-6;

inline double clip_pit(double u) { return std::clamp(u, kPitLow, kPitHigh); }

namespace poisson {

inline bool is_count(double y) { return y >= 0.0 && std::floor(y) == y && std::isfinite(y); }

inline void require_rate(double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw DomainError("Poisson rate must be positive and finite, got " + std::to_string(lambda));
  }
}

inline double log_pmf(double k, double lambda) {
  return k * std::log(lambda) - lambda - std::lgamma(k + 1.0);
}

inline double pmf(double k, double lambda) {
  if (k < 0.0) return 0.0;
  return std::exp(log_pmf(k, lambda));
}

// P(Y <= y) as the sum of PMF terms 0..floor(y).
inline double cdf(double y, double lambda) {
  require_rate(lambda);
  if (y < 0.0) return 0.0;
  const double top = std::floor(y);
  double total = 0.0;
  for (double k = 0.0; k <= top; k += 1.0) {
    total += pmf(k, lambda);
  }
  return std::min(total, 1.0);
}

inline double scan_cap(double lambda) { return lambda + 40.0 * std::sqrt(lambda) + 100.0; }

// Smallest k >= 0 with cdf(k) >= u.
inline double quantile(double u, double lambda) {
  require_rate(lambda);
  if (!(u > 0.0 && u < 1.0)) throw DomainError("Poisson quantile requires u in (0, 1)");
  const double cap = scan_cap(lambda);
  double total = 0.0;
  for (double k = 0.0;; k += 1.0) {
    if (k > cap) {
      throw NumericalError("Poisson quantile scan exceeded k = " + std::to_string(cap) +
                           " for rate " + std::to_string(lambda));
    }
    total += pmf(k, lambda);
    if (total >= u) return k;
  }
}

// dF(k; lambda)/dlambda = -PMF(k; lambda).
inline double cdf_grad_lambda(double lambda, double k) { return -pmf(k, lambda); }

}  // namespace poisson

struct NormalMarginal {
  double mean;
  double variance;
};

struct PoissonMarginal {
  double rate;
};

using Marginal = std::variant<NormalMarginal, PoissonMarginal>;

namespace detail {

inline void validate(const NormalMarginal& m) {
  if (!(m.variance > 0.0)) throw DomainError("normal marginal variance must be positive");
}

inline void require_count(double y) {
  if (!poisson::is_count(y)) {
    throw DomainError("Poisson marginal requires a nonnegative integer, got " + std::to_string(y));
  }
}

}  // namespace detail

inline double log_density(const Marginal& m, double y) {
  return std::visit(
      [y](const auto& p) -> double {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, NormalMarginal>) {
          detail::validate(p);
          const double r = y - p.mean;
          return -0.5 * (normal::kLog2Pi + std::log(p.variance)) - r * r / (2.0 * p.variance);
        } else {
          poisson::require_rate(p.rate);
          detail::require_count(y);
          return poisson::log_pmf(y, p.rate);
        }
      },
      m);
}

inline double cdf(const Marginal& m, double y) {
  return std::visit(
      [y](const auto& p) -> double {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, NormalMarginal>) {
          detail::validate(p);
          return normal::cdf((y - p.mean) / std::sqrt(p.variance));
        } else {
          return poisson::cdf(y, p.rate);
        }
      },
      m);
}

// Generalized inverse of the marginal CDF.
inline double quantile(const Marginal& m, double u) {
  return std::visit(
      [u](const auto& p) -> double {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, NormalMarginal>) {
          detail::validate(p);
          return p.mean + std::sqrt(p.variance) * normal::quantile(u);
        } else {
          return poisson::quantile(u, p.rate);
        }
      },
      m);
}

// (F(y-1) + F(y)) / 2 for discrete families; F(y) for continuous ones.
inline double midpoint_transform(const Marginal& m, double y) {
  return std::visit(
      [y](const auto& p) -> double {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, NormalMarginal>) {
          detail::validate(p);
          return normal::cdf((y - p.mean) / std::sqrt(p.variance));
        } else {
          detail::require_count(y);
          return 0.5 * (poisson::cdf(y - 1.0, p.rate) + poisson::cdf(y, p.rate));
        }
      },
      m);
}

// Per-node marginal parameters. Normal: location = mu, variance = sigma^2.
// Poisson: location = lambda, variance unused.
struct MarginalModel {
  Family family = Family::Normal;
  Vector location;
  Vector variance;

  std::size_t size() const { return static_cast<std::size_t>(location.size()); }

  Marginal at(std::size_t i) const {
    if (family == Family::Normal) return NormalMarginal{location(i), variance(i)};
    return PoissonMarginal{location(i)};
  }
};

inline void validate_labels(Family family, const Vector& y) {
  if (family != Family::Poisson) return;
  for (Eigen::Index i = 0; i < y.size(); ++i) detail::require_count(y(i));
}

// Differentiable pieces used by the copula loss.
namespace ad {

// Elementwise normal log density over n x 1 mean and variance columns.
inline Value normal_log_density(const Value& mean, const Value& variance, const Vector& y) {
  const Value resid = sub(mean.tape().constant(y), mean);
  const Value quad = mul(square(resid), reciprocal(variance));
  return add_scalar(scale(add(log(variance), quad), -0.5), -0.5 * normal::kLog2Pi);
}

// y * eta - exp(eta) - log(y!) with eta = log(rate).
inline Value poisson_log_pmf(const Value& log_rate, const Vector& y) {
  for (Eigen::Index i = 0; i < y.size(); ++i) copulagraph::detail::require_count(y(i));
  Tape& t = log_rate.tape();
  Vector log_fact = y.unaryExpr([](double k) { return std::lgamma(k + 1.0); });
  return sub(sub(mul(t.constant(y), log_rate), exp(log_rate)), t.constant(log_fact));
}

// Midpoint transform of count labels, differentiable in the rate via
// dF(k; lambda)/dlambda = -PMF(k; lambda).
inline Value poisson_midpoint(const Value& rate, const Vector& y) {
  if (rate.cols() != 1 || rate.rows() != y.size()) throw ShapeError("poisson_midpoint: shape mismatch");
  Matrix v(y.size(), 1);
  Matrix dv(y.size(), 1);
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    copulagraph::detail::require_count(y(i));
    const double lambda = rate.value()(i, 0);
    v(i, 0) = midpoint_transform(PoissonMarginal{lambda}, y(i));
    dv(i, 0) = 0.5 * (poisson::cdf_grad_lambda(lambda, y(i) - 1.0) + poisson::cdf_grad_lambda(lambda, y(i)));
  }
  return rate.tape().record(
      std::move(v), {rate}, [rate, dv](Tape& t, const Matrix& g) { t.accumulate(rate, g.cwiseProduct(dv)); },
      "poisson_midpoint");
}

}  // namespace ad

}  // namespace copulagraph
