#include <gtest/gtest.h>

#include <cmath>

#include "copulagraph/copula.hpp"
#include "support/testing.hpp"

using namespace copulagraph;
using copula::PrecisionKind;
using copulagraph::testing::Rng;
using ad::Tape;
using ad::Value;

namespace {

Graph path(std::size_t n) {
  std::vector<Edge> e;
  for (std::size_t i = 0; i + 1 < n; ++i) e.push_back({i, i + 1});
  return Graph(n, e);
}

// log N(y; mean, cov) via LU, independent of the Cholesky path under test.
double mvn_log_density(const Vector& y, const Vector& mean, const Matrix& cov) {
  const Eigen::PartialPivLU<Matrix> lu(cov);
  const Vector r = y - mean;
  return -0.5 * (static_cast<double>(y.size()) * normal::kLog2Pi + std::log(lu.determinant()) + r.dot(lu.solve(r)));
}

Matrix realize(PrecisionKind kind, const nets::ParamSet& params, const Matrix& x, const Graph& g) {
  Tape t;
  const auto bound = nets::bind(t, params);
  return copula::realize_precision(kind, bound, t.constant(x), copula::PrecisionContext::from(g)).value();
}

nets::ParamSet random_precision_params(PrecisionKind kind, std::size_t d, Rng& rng) {
  auto p = copula::init_precision(kind, d, rng);
  for (auto& [name, m] : p) m = copulagraph::testing::random_matrix(m.rows(), m.cols(), rng);
  return p;
}

const std::vector<PrecisionKind> kAllKinds{PrecisionKind::TwoParamAlphaBeta, PrecisionKind::TwoParamTauGamma,
                                           PrecisionKind::RegressionBased};

}  // namespace

TEST(RealizePrecision, AlphaZeroGivesScaledIdentity) {
  nets::ParamSet p{{"prec.a", Matrix::Zero(1, 1)}, {"prec.b", Matrix::Constant(1, 1, 0.3)}};
  const Matrix k = realize(PrecisionKind::TwoParamAlphaBeta, p, Matrix::Zero(4, 2), path(4));
  EXPECT_TRUE(k.isApprox(ad::softplus_scalar(0.3) * Matrix::Identity(4, 4)));
}

TEST(RealizePrecision, AlphaBetaTwoNodePath) {
  nets::ParamSet p{{"prec.a", Matrix::Constant(1, 1, 0.4)}, {"prec.b", Matrix::Constant(1, 1, -0.2)}};
  const auto [alpha, beta] = copula::constrained_values(PrecisionKind::TwoParamAlphaBeta, 0.4, -0.2);
  const Matrix k = realize(PrecisionKind::TwoParamAlphaBeta, p, Matrix::Zero(2, 1), path(2));
  Matrix want(2, 2);
  want << 1, -alpha, -alpha, 1;
  EXPECT_TRUE(k.isApprox(beta * want, 1e-14));
}

TEST(RealizePrecision, InitialValues) {
  Rng rng(0);
  const auto ab = copula::init_precision(PrecisionKind::TwoParamAlphaBeta, 3, rng);
  const auto v = copula::constrained_values(PrecisionKind::TwoParamAlphaBeta, ab.at("prec.a")(0, 0), ab.at("prec.b")(0, 0));
  EXPECT_EQ(v.first, 0.0);
  EXPECT_NEAR(v.second, 1.0, 1e-15);
}

TEST(RealizePrecision, RegressionZeroWeightsTwoNodePath) {
  Rng rng(0);
  auto p = copula::init_precision(PrecisionKind::RegressionBased, 3, rng);
  for (auto& [name, m] : p) m.setZero();
  Rng xr(1);
  const Matrix k = realize(PrecisionKind::RegressionBased, p, copulagraph::testing::random_matrix(2, 3, xr), path(2));
  const double l2 = std::log(2.0);
  Matrix want(2, 2);
  want << 1 + l2, -l2, -l2, 1 + l2;
  EXPECT_TRUE(k.isApprox(want, 1e-14));
}

TEST(RealizePrecision, RegressionNoEdgesIsIdentity) {
  Rng rng(0);
  const auto p = copula::init_precision(PrecisionKind::RegressionBased, 2, rng);
  EXPECT_EQ(realize(PrecisionKind::RegressionBased, p, Matrix::Ones(3, 2), Graph(3, {})), Matrix::Identity(3, 3));
}

TEST(RealizePrecision, RandomInstancesAreSparseSymmetricPositiveDefinite) {
  Rng rng(17);
  for (const auto kind : kAllKinds) {
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 2 + rng() % 25, d = 1 + rng() % 4;
      const Graph g = copulagraph::testing::random_graph(n, 0.15, rng);
      const Matrix x = copulagraph::testing::random_matrix(n, d, rng);
      const Matrix k = realize(kind, random_precision_params(kind, d, rng), x, g);
      EXPECT_LE((k - k.transpose()).cwiseAbs().maxCoeff(), 1e-14);
      Matrix adj = Matrix::Zero(n, n);
      for (const auto& e : g.edges()) adj(e.u, e.v) = adj(e.v, e.u) = 1.0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          if (i != j && adj(i, j) == 0.0) EXPECT_EQ(k(i, j), 0.0);
        }
      }
      const Eigen::SelfAdjointEigenSolver<Matrix> es(k);
      EXPECT_GT(es.eigenvalues().minCoeff(), 0.0) << copula::to_string(kind);
      if (kind == PrecisionKind::RegressionBased) {
        EXPECT_LE((k * Vector::Ones(n) - Vector::Ones(n)).cwiseAbs().maxCoeff(), 1e-12);
      }
    }
  }
}

TEST(CopulaLogdensity, IdentityIsZero) {
  Rng rng(2);
  Tape t;
  const Value z = t.constant(copulagraph::testing::random_matrix(5, 1, rng));
  EXPECT_NEAR(copula::copula_logdensity(z, t.constant(Matrix::Identity(5, 5))).item(), 0.0, 1e-14);
}

TEST(CopulaLogdensity, BivariateAtOrigin) {
  Tape t;
  Matrix r(2, 2);
  r << 1, 0.5, 0.5, 1;
  const double v = copula::copula_logdensity(t.constant(Matrix::Zero(2, 1)), t.constant(r)).item();
  EXPECT_NEAR(v, 0.143841, 1e-6);
  EXPECT_NEAR(v, -0.5 * std::log(0.75), 1e-14);
}

TEST(CopulaLogdensity, MatchesMvnRatio) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index m = 1 + static_cast<Eigen::Index>(rng() % 6);
    const Matrix r = copulagraph::testing::random_correlation(m, rng);
    const Vector z = copulagraph::testing::random_matrix(m, 1, rng);
    double want = mvn_log_density(z, Vector::Zero(m), r);
    for (Eigen::Index i = 0; i < m; ++i) want -= std::log(normal::pdf(z(i)));
    Tape t;
    EXPECT_NEAR(copula::copula_logdensity(t.constant(z), t.constant(r)).item(), want, 1e-10);
  }
}

TEST(NllLoss, IdentityPrecisionIsIndependentGaussians) {
  Rng rng(4);
  const Vector mu = copulagraph::testing::random_matrix(6, 1, rng);
  const Vector y = copulagraph::testing::random_matrix(6, 1, rng);
  const std::vector<std::size_t> obs{0, 2, 3, 5};
  Tape t;
  Vector y_obs(obs.size());
  double want = 0.0;
  for (std::size_t k = 0; k < obs.size(); ++k) {
    y_obs(k) = y(obs[k]);
    want -= log_density(NormalMarginal{mu(obs[k]), 1.0}, y(obs[k]));
  }
  const auto terms = copula::nll_loss(t.constant(Matrix::Identity(6, 6)), t.constant(mu), Family::Normal, y_obs, obs);
  EXPECT_NEAR(terms.total.item(), want, 1e-12);
  EXPECT_NEAR(terms.copula.item(), 0.0, 1e-12);
}

// Gaussian copula with N(mu_i, Sigma_ii) marginals is N(mu, Sigma).
TEST(NllLoss, NormalMarginalsEqualMultivariateNormal) {
  Rng rng(5);
  for (const auto kind : kAllKinds) {
    for (int trial = 0; trial < 60; ++trial) {
      const std::size_t n = 2 + rng() % 20, d = 2;
      const Graph g = copulagraph::testing::random_graph(n, 0.2, rng);
      const Matrix x = copulagraph::testing::random_matrix(n, d, rng);
      const Matrix k = realize(kind, random_precision_params(kind, d, rng), x, g);
      const Matrix sigma = k.inverse();
      const Vector mu = copulagraph::testing::random_matrix(n, 1, rng);
      const Eigen::LLT<Matrix> chol(sigma);
      const Vector y = mu + Matrix(chol.matrixL()) * copulagraph::testing::random_matrix(n, 1, rng);
      std::vector<std::size_t> obs;
      for (std::size_t i = 0; i < n; ++i) {
        if (rng() % 3 != 0 || obs.empty()) obs.push_back(i);
      }
      Vector y_obs(obs.size()), mu_obs(obs.size());
      Matrix s00(obs.size(), obs.size());
      for (std::size_t a = 0; a < obs.size(); ++a) {
        y_obs(a) = y(obs[a]);
        mu_obs(a) = mu(obs[a]);
        for (std::size_t b = 0; b < obs.size(); ++b) s00(a, b) = sigma(obs[a], obs[b]);
      }
      Tape t;
      const double nll = copula::nll_loss(t.constant(k), t.constant(mu), Family::Normal, y_obs, obs).total.item();
      EXPECT_NEAR(nll, -mvn_log_density(y_obs, mu_obs, s00), 1e-8) << copula::to_string(kind);
    }
  }
}

TEST(NllLoss, AlphaBetaGradientMatchesFiniteDifferences) {
  Rng rng(6);
  const std::size_t n = 10;
  const Graph g = copulagraph::testing::random_graph(n, 0.3, rng);
  const auto ctx = copula::PrecisionContext::from(g);
  const Vector mu = copulagraph::testing::random_matrix(n, 1, rng);
  const Vector y = copulagraph::testing::random_matrix(n, 1, rng);
  const std::vector<std::size_t> obs{0, 1, 2, 4, 5, 7, 9};
  Vector y_obs(obs.size());
  for (std::size_t a = 0; a < obs.size(); ++a) y_obs(a) = y(obs[a]);
  const auto r = copulagraph::testing::check_gradient(
      [&](Tape& t, const std::vector<Value>& v) {
        const nets::BoundParams p{{"prec.a", v[0]}, {"prec.b", v[1]}};
        const Value k = copula::realize_precision(PrecisionKind::TwoParamAlphaBeta, p, t.constant(Matrix::Zero(n, 1)), ctx);
        return copula::nll_loss(k, t.constant(mu), Family::Normal, y_obs, obs).total;
      },
      {Matrix::Constant(1, 1, 0.7), Matrix::Constant(1, 1, 0.2)});
  EXPECT_LE(r.rel_error, 1e-4);
}

TEST(NllLoss, RejectsEmptyObservedSet) {
  Tape t;
  EXPECT_THROW(copula::nll_loss(t.constant(Matrix::Identity(2, 2)), t.constant(Matrix::Zero(2, 1)), Family::Normal,
                                Vector(0), std::vector<std::size_t>{}),
               ConfigError);
}

TEST(ConditionalPosterior, IdentityIsIndependent) {
  const std::vector<std::size_t> obs{0, 2}, miss{1, 3};
  const auto post = copula::conditional_posterior(Matrix::Identity(4, 4), Vector::Constant(2, 1.3), obs, miss);
  EXPECT_EQ(post.mean, Vector::Zero(2));
  EXPECT_EQ(post.cov, Matrix::Identity(2, 2));
}

TEST(ConditionalPosterior, Bivariate) {
  for (double rho : {-0.7, 0.0, 0.35, 0.9}) {
    Matrix r(2, 2);
    r << 1, rho, rho, 1;
    const std::vector<std::size_t> obs{0}, miss{1};
    const auto post = copula::conditional_posterior(r, Vector::Constant(1, 1.2), obs, miss);
    EXPECT_NEAR(post.mean(0), rho * 1.2, 1e-14);
    EXPECT_NEAR(post.cov(0, 0), 1 - rho * rho, 1e-14);
  }
}

// Regress z_miss on z_obs over joint draws: the coefficients estimate
// R10 R00^{-1} and the residual covariance estimates the posterior covariance.
TEST(ConditionalPosterior, MatchesMonteCarloRegression) {
  Rng rng(7);
  const Matrix r = copulagraph::testing::random_correlation(4, rng);
  const std::vector<std::size_t> obs{0, 3}, miss{1, 2};
  const int draws = 1000000;
  const Matrix l = Eigen::LLT<Matrix>(r).matrixL();
  Matrix zo(draws, 2), zm(draws, 2);
  std::normal_distribution<double> std_normal;
  for (int s = 0; s < draws; ++s) {
    Vector e(4);
    for (int i = 0; i < 4; ++i) e(i) = std_normal(rng);
    const Vector z = l * e;
    zo.row(s) << z(0), z(3);
    zm.row(s) << z(1), z(2);
  }
  const Matrix gram = zo.transpose() * zo;
  const Matrix coef = gram.ldlt().solve(zo.transpose() * zm);  // 2 x 2, column per missing node
  const Matrix resid = zm - zo * coef;
  const Matrix resid_cov = resid.transpose() * resid / (draws - 2);
  const Matrix gram_inv = gram.inverse();

  const auto p0 = copula::conditional_posterior(r, Vector::Unit(2, 0), obs, miss);
  const auto p1 = copula::conditional_posterior(r, Vector::Unit(2, 1), obs, miss);
  for (int j = 0; j < 2; ++j) {
    for (int k = 0; k < 2; ++k) {
      const double se = std::sqrt(resid_cov(j, j) * gram_inv(k, k));
      const double gain = k == 0 ? p0.mean(j) : p1.mean(j);
      EXPECT_NEAR(coef(k, j), gain, 3 * se);
    }
    // Var of a sample variance of normals is 2 sigma^4 / N.
    EXPECT_NEAR(resid_cov(j, j), p0.cov(j, j), 3 * std::sqrt(2.0 / draws) * p0.cov(j, j));
  }
  EXPECT_NEAR(p0.cov(0, 1), p1.cov(0, 1), 1e-15);
}

TEST(InferSample, IndependentNormalRecoversMean) {
  const MarginalModel m{Family::Normal, (Vector(3) << 1.0, -2.0, 0.5).finished(), (Vector(3) << 1.0, 4.0, 0.25).finished()};
  const std::vector<std::size_t> obs{}, miss{0, 1, 2};
  const std::size_t l = 100000;
  const Vector y_hat = copula::infer_sample(Matrix::Identity(3, 3), m, Vector(0), obs, miss, l, 11);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y_hat(i), m.location(i), 3 * std::sqrt(m.variance(i) / l));
}

TEST(InferSample, BivariateNormalConditionalMean) {
  const double rho = 0.6, mu0 = 1.0, var0 = 2.0, mu1 = -0.5, var1 = 3.0, y0 = 2.4;
  Matrix r(2, 2);
  r << 1, rho, rho, 1;
  const MarginalModel m{Family::Normal, (Vector(2) << mu0, mu1).finished(), (Vector(2) << var0, var1).finished()};
  const std::vector<std::size_t> obs{0}, miss{1};
  const std::size_t l = 100000;
  const double z_obs = (y0 - mu0) / std::sqrt(var0);
  const double want = mu1 + rho * std::sqrt(var1) * z_obs;
  const double post_sd = std::sqrt(var1 * (1 - rho * rho));
  const Vector y_hat = copula::infer_sample(r, m, Vector::Constant(1, y0), obs, miss, l, 5);
  EXPECT_NEAR(y_hat(0), want, 3 * post_sd / std::sqrt(static_cast<double>(l)));
}

TEST(InferSample, IndependentPoissonMatchesReferenceSimulation) {
  const MarginalModel m{Family::Poisson, Vector::Constant(1, 1.0), Vector()};
  const std::vector<std::size_t> obs{}, miss{0};
  const std::size_t l = 100000;
  const double y_hat = copula::infer_sample(Matrix::Identity(1, 1), m, Vector(0), obs, miss, l, 3)(0);

  Rng rng(99);
  std::normal_distribution<double> std_normal;
  const int ref_draws = 1000000;
  double sum = 0.0, sum2 = 0.0;
  for (int s = 0; s < ref_draws; ++s) {
    const double y = poisson::quantile(clip_pit(normal::cdf(std_normal(rng))), 1.0);
    sum += y;
    sum2 += y * y;
  }
  const double ref = sum / ref_draws;
  const double var = sum2 / ref_draws - ref * ref;
  EXPECT_NEAR(y_hat, ref, 3 * std::sqrt(var / l + var / ref_draws));
}

TEST(InferSample, SameSeedIsBitIdentical) {
  Rng rng(8);
  const Matrix r = copulagraph::testing::random_correlation(5, rng);
  const MarginalModel m{Family::Poisson, (Vector(5) << 1, 2, 3, 0.5, 7).finished(), Vector()};
  const std::vector<std::size_t> obs{0, 3}, miss{1, 2, 4};
  const Vector y_obs = (Vector(2) << 2, 0).finished();
  const Vector a = copula::infer_sample(r, m, y_obs, obs, miss, 500, 42);
  const Vector b = copula::infer_sample(r, m, y_obs, obs, miss, 500, 42);
  const Vector c = copula::infer_sample(r, m, y_obs, obs, miss, 500, 43);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(InferSample, ZeroSamplesIsConfigError) {
  const MarginalModel m{Family::Normal, Vector::Zero(1), Vector::Ones(1)};
  const std::vector<std::size_t> obs{}, miss{0};
  EXPECT_THROW(copula::infer_sample(Matrix::Identity(1, 1), m, Vector(0), obs, miss, 0, 1), ConfigError);
}

TEST(ExactBivariatePmf, IndependentOrigin) {
  EXPECT_NEAR(copula::exact_bivariate_discrete_pmf(0.0, PoissonMarginal{1.0}, PoissonMarginal{1.0}, 0, 0), std::exp(-2.0),
              1e-12);
  EXPECT_NEAR(copula::exact_bivariate_discrete_pmf(0.0, PoissonMarginal{1.0}, PoissonMarginal{1.0}, 0, 0), 0.135335,
              1e-6);
}

TEST(ExactBivariatePmf, SumsToOne) {
  double total = 0.0;
  for (int a = 0; a <= 60; ++a) {
    for (int b = 0; b <= 60; ++b) total += copula::exact_bivariate_discrete_pmf(0.8, PoissonMarginal{2.0}, PoissonMarginal{2.0}, a, b);
  }
  EXPECT_NEAR(total, 1.0, 1e-6);
}

TEST(ExactBivariatePmf, MatchesMonteCarlo) {
  const double rho = 0.8;
  const double want = copula::exact_bivariate_discrete_pmf(rho, PoissonMarginal{2.0}, PoissonMarginal{2.0}, 1, 1);
  Rng rng(12);
  std::normal_distribution<double> std_normal;
  const int draws = 1000000;
  int hits = 0;
  for (int s = 0; s < draws; ++s) {
    const double z1 = std_normal(rng);
    const double z2 = rho * z1 + std::sqrt(1 - rho * rho) * std_normal(rng);
    hits += poisson::quantile(normal::cdf(z1), 2.0) == 1.0 && poisson::quantile(normal::cdf(z2), 2.0) == 1.0;
  }
  const double p = static_cast<double>(hits) / draws;
  EXPECT_NEAR(p, want, 3 * std::sqrt(want * (1 - want) / draws));
}

TEST(ExactBivariatePmf, RejectsContinuousMarginals) {
  EXPECT_THROW(copula::exact_bivariate_discrete_pmf(0.1, NormalMarginal{0, 1}, PoissonMarginal{1}, 0, 0), DomainError);
}
