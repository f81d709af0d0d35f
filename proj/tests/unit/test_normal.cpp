#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "copulagraph/normal.hpp"
#include "support/testing.hpp"

using namespace copulagraph;

namespace {

double simpson(const std::function<double(double)>& f, double a, double b, int intervals = 20000) {
  const double h = (b - a) / intervals;
  double s = f(a) + f(b);
  for (int i = 1; i < intervals; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// Phi(x) by integrating the density from -12.
double integrated_cdf(double x) { return simpson([](double t) { return normal::pdf(t); }, -12.0, x); }

}  // namespace

TEST(Normal, QuantileAtHalfIsZero) { EXPECT_EQ(normal::quantile(0.5), 0.0); }

TEST(Normal, QuantileMatchesBisectionOnIntegratedDensity) {
  double lo = 0.0, hi = 4.0;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (integrated_cdf(mid) < 0.975 ? lo : hi) = mid;
  }
  EXPECT_NEAR(normal::quantile(0.975), 0.5 * (lo + hi), 1e-9);
  EXPECT_NEAR(normal::quantile(0.975), 1.959964, 1e-6);
}

TEST(Normal, CdfMatchesQuadrature) {
  for (double x : {-6.0, -2.5, -1.0, 0.0, 0.3, 1.7, 4.0}) EXPECT_NEAR(normal::cdf(x), integrated_cdf(x), 1e-12);
}

TEST(Normal, QuantileInvertsCdf) {
  copulagraph::testing::Rng rng(5);
  std::uniform_real_distribution<double> u(1e-12, 1.0 - 1e-12);
  for (int i = 0; i < 2000; ++i) {
    const double p = u(rng);
    EXPECT_NEAR(normal::cdf(normal::quantile(p)), p, 1e-9 * std::max(1.0, p));
  }
  for (double p : {1e-300, 1e-20, 1e-10, 1e-7, 1.0 - 1e-7}) {
    EXPECT_NEAR(normal::cdf(normal::quantile(p)) / p, 1.0, 1e-8);
  }
}

TEST(Normal, QuantileDomain) {
  EXPECT_THROW(normal::quantile(0.0), DomainError);
  EXPECT_THROW(normal::quantile(1.0), DomainError);
  EXPECT_THROW(normal::quantile(std::nan("")), DomainError);
}

// P(X <= a, Y <= b) = int_{-inf}^{a} phi(x) Phi((b - rho x) / sqrt(1 - rho^2)) dx.
TEST(Normal, BivariateCdfMatchesQuadrature) {
  for (double rho : {-0.95, -0.5, 0.0, 0.3, 0.8, 0.99}) {
    for (auto [a, b] : {std::pair{0.0, 0.0}, {-1.0, 0.5}, {1.3, 2.1}, {-2.0, -1.5}}) {
      const double s = std::sqrt(1.0 - rho * rho);
      const double want = simpson([&](double x) { return normal::pdf(x) * normal::cdf((b - rho * x) / s); }, -12.0, a);
      EXPECT_NEAR(normal::bivariate_cdf(a, b, rho), want, 1e-10) << rho << " " << a << " " << b;
    }
  }
}

TEST(Normal, BivariateCdfSpecialCases) {
  EXPECT_NEAR(normal::bivariate_cdf(0.0, 0.0, 0.0), 0.25, 1e-15);
  // Orthant probability 1/4 + asin(rho) / (2 pi).
  EXPECT_NEAR(normal::bivariate_cdf(0.0, 0.0, 0.5), 0.25 + std::asin(0.5) / (2 * std::numbers::pi), 1e-14);
  EXPECT_NEAR(normal::bivariate_cdf(0.7, 0.7, 1.0), normal::cdf(0.7), 1e-14);
  EXPECT_NEAR(normal::bivariate_cdf(0.7, -0.7, -1.0), 0.0, 1e-14);
}
