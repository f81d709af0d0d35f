#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "copulagraph/autodiff.hpp"
#include "copulagraph/errors.hpp"
#include "copulagraph/graph.hpp"
#include "copulagraph/marginals.hpp"
#include "copulagraph/nets.hpp"
#include "copulagraph/normal.hpp"

namespace copulagraph::copula {

using ad::Tape;
using ad::Value;
using nets::BoundParams;
using nets::ParamSet;

enum class PrecisionKind { TwoParamAlphaBeta, TwoParamTauGamma, RegressionBased };

inline std::string_view to_string(PrecisionKind k) {
  switch (k) {
    case PrecisionKind::TwoParamAlphaBeta: return "alpha_beta";
    case PrecisionKind::TwoParamTauGamma: return "tau_gamma";
    case PrecisionKind::RegressionBased: return "regression";
  }
  return "?";
}

// |alpha| < 0.99 keeps beta (I - alpha S) positive definite since spec(S) is in [-1, 1].
inline constexpr double kAlphaBound = 0.99;
inline constexpr double kConditionalJitter = 1e-10;

inline double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

// Raw two-parameter values map to (alpha, beta) or (tau, gamma) as
// alpha = 0.99 tanh(a), beta = softplus(b), tau = softplus(a), gamma = softplus(b).
struct TwoParamValues {
  double first;
  double second;
};

inline TwoParamValues constrained_values(PrecisionKind kind, double a, double b) {
  if (kind == PrecisionKind::TwoParamAlphaBeta) return {kAlphaBound * std::tanh(a), ad::softplus_scalar(b)};
  return {ad::softplus_scalar(a), ad::softplus_scalar(b)};
}

// Parameters owned by the precision model: "prec.a"/"prec.b" for the
// two-parameter kinds, the pairwise regressor "pair.*" otherwise.
inline ParamSet init_precision(PrecisionKind kind, std::size_t feature_dim, std::mt19937_64& rng,
                               std::size_t hidden_dim = 16) {
  switch (kind) {
    case PrecisionKind::TwoParamAlphaBeta:
      return {{"prec.a", Matrix::Zero(1, 1)}, {"prec.b", Matrix::Constant(1, 1, inverse_softplus(1.0))}};
    case PrecisionKind::TwoParamTauGamma:
      return {{"prec.a", Matrix::Constant(1, 1, inverse_softplus(1.0))},
              {"prec.b", Matrix::Constant(1, 1, inverse_softplus(1.0))}};
    case PrecisionKind::RegressionBased:
      return nets::init_pair_regressor(nets::pair_regressor_config(feature_dim, hidden_dim), rng);
  }
  throw ConfigError("unknown precision kind");
}

// Graph-derived constants for precision realization.
struct PrecisionContext {
  Graph graph;
  Matrix sym_norm;
  Matrix laplacian;
  Index src;
  Index dst;

  static PrecisionContext from(const Graph& g) {
    PrecisionContext c{g, sym_normalized_adjacency(g), copulagraph::laplacian(g), {}, {}};
    for (const auto& e : g.edges()) {
      c.src.push_back(e.u);
      c.dst.push_back(e.v);
    }
    return c;
  }
};

// K with the graph's sparsity pattern:
//   alpha-beta:  K = beta (I - alpha D^{-1/2} A D^{-1/2})
//   tau-gamma:   K = (L + gamma I) / tau
//   regression:  A^_ij = softplus((h(x_i, x_j) + h(x_j, x_i)) / 2) on edges, K = I + D^ - A^
inline Value realize_precision(PrecisionKind kind, const BoundParams& p, const Value& x,
                               const PrecisionContext& ctx, std::size_t hidden_dim = 16) {
  Tape& t = x.tape();
  const std::size_t n = ctx.graph.num_nodes();
  if (static_cast<std::size_t>(x.rows()) != n) {
    throw ShapeError("realize_precision: feature rows " + std::to_string(x.rows()) + " != n = " +
                     std::to_string(n));
  }
  const Matrix eye = Matrix::Identity(n, n);
  switch (kind) {
    case PrecisionKind::TwoParamAlphaBeta: {
      const Value alpha = ad::scale(ad::tanh(nets::param(p, "prec.a")), kAlphaBound);
      const Value beta = ad::softplus(nets::param(p, "prec.b"));
      const Value inner = ad::sub(t.constant(eye), ad::scale(alpha, t.constant(ctx.sym_norm)));
      return ad::scale(beta, inner);
    }
    case PrecisionKind::TwoParamTauGamma: {
      const Value tau = ad::softplus(nets::param(p, "prec.a"));
      const Value gamma = ad::softplus(nets::param(p, "prec.b"));
      const Value inner = ad::add(t.constant(ctx.laplacian), ad::scale(gamma, t.constant(eye)));
      return ad::scale(ad::reciprocal(tau), inner);
    }
    case PrecisionKind::RegressionBased: {
      if (ctx.src.empty()) return t.constant(eye);
      const auto cfg = nets::pair_regressor_config(static_cast<std::size_t>(x.cols()), hidden_dim);
      const Value xs = ad::gather_rows(x, ctx.src);
      const Value xd = ad::gather_rows(x, ctx.dst);
      const Value h_fwd = nets::pair_regressor_forward(p, ad::concat_cols(xs, xd), cfg);
      const Value h_bwd = nets::pair_regressor_forward(p, ad::concat_cols(xd, xs), cfg);
      const Value w = ad::softplus(ad::scale(ad::add(h_fwd, h_bwd), 0.5));
      const Value a_hat = ad::scatter_edges(w, ctx.graph.edges(), n);
      const Value d_hat = ad::diag_embed(ad::row_sum(a_hat));
      return ad::sub(ad::add(t.constant(eye), d_hat), a_hat);
    }
  }
  throw ConfigError("unknown precision kind");
}

// R = diag(S)^{-1/2} S diag(S)^{-1/2}, on the tape. The diagonal is floored
// at the marginal variance floor.
inline Value correlation_from_covariance(const Value& cov) {
  const Value var = ad::clamp(ad::diag(cov), kVarianceFloor, std::numeric_limits<double>::max());
  const Value d = ad::rsqrt(var);
  return ad::mul(cov, ad::matmul(d, ad::transpose(d)));
}

inline Matrix correlation_from_covariance(const Matrix& cov) {
  Vector d = cov.diagonal().cwiseMax(kVarianceFloor).cwiseSqrt().cwiseInverse();
  return d.asDiagonal() * cov * d.asDiagonal();
}

// log c = -1/2 log det R - 1/2 z^T (R^{-1} - I) z for z = Phi^{-1}(u).
inline Value copula_logdensity(const Value& z, const Value& corr) {
  if (z.cols() != 1 || z.rows() != corr.rows() || corr.rows() != corr.cols()) {
    throw ShapeError("copula_logdensity: z " + Tape::shape_str(z.value()) + " vs R " +
                     Tape::shape_str(corr.value()));
  }
  const Value logdet = ad::logdet_spd(corr);
  const Value zt = ad::transpose(z);
  const Value quad = ad::matmul(zt, ad::matmul(ad::inverse_spd(corr), z));
  const Value zz = ad::matmul(zt, z);
  return ad::scale(ad::add(logdet, ad::sub(quad, zz)), -0.5);
}

struct NllTerms {
  Value total;     // -log c(u_obs; Sigma_00) - sum_i log f_i(y_i)
  Value copula;    // log c(u_obs; Sigma_00)
  Value marginal;  // sum_i log f_i(y_i)
};

// Negative log-likelihood of the observed labels given the copula
// covariance Sigma = K^{-1}. `location` is the base network output for every
// node: mu for Normal, log(lambda) for Poisson. Normal variances come from
// the diagonal of Sigma.
inline NllTerms nll_from_covariance(const Value& sigma, const Value& location, Family family,
                                    const Vector& y_obs, std::span<const std::size_t> obs) {
  if (obs.empty()) throw ConfigError("nll_loss: the observed index set is empty");
  if (static_cast<std::size_t>(y_obs.size()) != obs.size()) {
    throw ShapeError("nll_loss: " + std::to_string(y_obs.size()) + " labels for " +
                     std::to_string(obs.size()) + " observed nodes");
  }
  validate_labels(family, y_obs);
  const Value sigma00 = ad::gather(sigma, obs, obs);
  const Value corr = correlation_from_covariance(sigma00);
  const Value loc = ad::gather_rows(location, obs);
  Value u;
  Value log_f;
  if (family == Family::Normal) {
    const Value var = ad::clamp(ad::diag(sigma00), kVarianceFloor, std::numeric_limits<double>::max());
    const Value resid = ad::sub(loc.tape().constant(y_obs), loc);
    u = ad::normal_cdf(ad::mul(resid, ad::rsqrt(var)));
    log_f = ad::normal_log_density(loc, var, y_obs);
  } else {
    u = ad::poisson_midpoint(ad::exp(loc), y_obs);
    log_f = ad::poisson_log_pmf(loc, y_obs);
  }
  const Value z = ad::normal_quantile(ad::clamp(u, kPitLow, kPitHigh));
  const Value log_c = copula_logdensity(z, corr);
  const Value marginal = ad::sum(log_f);
  return {ad::scale(ad::add(log_c, marginal), -1.0), log_c, marginal};
}

inline NllTerms nll_loss(const Value& precision, const Value& location, Family family, const Vector& y_obs,
                         std::span<const std::size_t> obs) {
  return nll_from_covariance(ad::inverse_spd(precision), location, family, y_obs, obs);
}

// Distribution of z_miss | z_obs in copula space.
struct CopulaPosterior {
  Vector mean;
  Matrix cov;
};

// mean = R10 R00^{-1} z_obs, cov = R11 - R10 R00^{-1} R01 (symmetrized).
inline CopulaPosterior conditional_posterior(const Matrix& corr, const Vector& z_obs,
                                             std::span<const std::size_t> obs,
                                             std::span<const std::size_t> miss) {
  if (corr.rows() != corr.cols()) throw ShapeError("conditional_posterior: R must be square");
  if (static_cast<std::size_t>(z_obs.size()) != obs.size()) {
    throw ShapeError("conditional_posterior: z_obs length does not match the observed set");
  }
  const auto pick = [&](std::span<const std::size_t> r, std::span<const std::size_t> c) {
    Matrix out(r.size(), c.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
      for (std::size_t j = 0; j < c.size(); ++j) out(i, j) = corr(r[i], c[j]);
    }
    return out;
  };
  CopulaPosterior post;
  const Matrix r11 = pick(miss, miss);
  if (obs.empty()) {
    post.mean = Vector::Zero(miss.size());
    post.cov = r11;
    return post;
  }
  const Matrix r00 = pick(obs, obs);
  const Matrix r10 = pick(miss, obs);
  const auto llt = ad::detail::factor_spd(r00, "conditional_posterior");
  const Matrix gain = llt.solve(r10.transpose()).transpose();  // R10 R00^{-1}
  post.mean = gain * z_obs;
  const Matrix cov = r11 - gain * r10.transpose();
  post.cov = 0.5 * (cov + cov.transpose());
  return post;
}

// Lower Cholesky factor of the posterior covariance after jittering.
inline Matrix posterior_factor(const CopulaPosterior& post) {
  const Eigen::Index m = post.cov.rows();
  Matrix jittered = post.cov + kConditionalJitter * Matrix::Identity(m, m);
  return ad::detail::factor_spd(jittered, "posterior_factor").matrixL();
}

// z = Phi^{-1}(clip(u)) with u the PIT of each observed label (midpoint
// transform for discrete families).
inline Vector observed_scores(const MarginalModel& marginals_obs, const Vector& y_obs) {
  Vector z(y_obs.size());
  for (Eigen::Index i = 0; i < y_obs.size(); ++i) {
    z(i) = normal::quantile(clip_pit(midpoint_transform(marginals_obs.at(i), y_obs(i))));
  }
  return z;
}

namespace detail {

// Inverse-CDF lookup for one missing node.
class QuantileMap {
 public:
  explicit QuantileMap(const Marginal& m) : marginal_(m) {
    if (const auto* p = std::get_if<PoissonMarginal>(&m)) {
      poisson::require_rate(p->rate);
      const double cap = poisson::scan_cap(p->rate);
      double total = 0.0;
      for (double k = 0.0; total < kPitHigh; k += 1.0) {
        if (k > cap) {
          throw NumericalError("Poisson quantile scan exceeded k = " + std::to_string(cap) +
                               " for rate " + std::to_string(p->rate));
        }
        total += poisson::pmf(k, p->rate);
        cumulative_.push_back(total);
      }
    }
  }

  double operator()(double u) const {
    if (cumulative_.empty()) return quantile(marginal_, u);
    auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), u);
    return static_cast<double>(it - cumulative_.begin());
  }

 private:
  Marginal marginal_;
  std::vector<double> cumulative_;
};

}  // namespace detail

// Monte Carlo prediction for the missing nodes: draw L samples of
// z_miss | z_obs, map each through Phi and the marginal quantile, and
// average. `marginals_miss` holds the marginals of the missing nodes in
// the order of `posterior.mean`.
inline Vector infer_sample(const CopulaPosterior& posterior, const MarginalModel& marginals_miss,
                           std::size_t samples, std::uint64_t seed) {
  if (samples == 0) throw ConfigError("infer_sample: sample count must be >= 1");
  const Eigen::Index m = posterior.mean.size();
  if (static_cast<Eigen::Index>(marginals_miss.size()) != m) {
    throw ShapeError("infer_sample: marginal count does not match the posterior dimension");
  }
  Vector y_hat = Vector::Zero(m);
  if (m == 0) return y_hat;
  const Matrix chol = posterior_factor(posterior);
  std::vector<detail::QuantileMap> maps;
  maps.reserve(m);
  for (Eigen::Index i = 0; i < m; ++i) maps.emplace_back(marginals_miss.at(i));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> std_normal;
  Vector eps(m);
  const double inv_l = 1.0 / static_cast<double>(samples);
  for (std::size_t l = 0; l < samples; ++l) {
    for (Eigen::Index i = 0; i < m; ++i) eps(i) = std_normal(rng);
    const Vector z = posterior.mean + chol.triangularView<Eigen::Lower>() * eps;
    for (Eigen::Index i = 0; i < m; ++i) y_hat(i) += maps[i](clip_pit(normal::cdf(z(i)))) * inv_l;
  }
  return y_hat;
}

// Full inference: z_obs from the observed labels, condition, sample.
inline Vector infer_sample(const Matrix& corr, const MarginalModel& marginals, const Vector& y_obs,
                           std::span<const std::size_t> obs, std::span<const std::size_t> miss,
                           std::size_t samples, std::uint64_t seed) {
  const auto restrict = [&](std::span<const std::size_t> idx) {
    MarginalModel out{marginals.family, Vector(idx.size()), Vector(idx.size())};
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.location(k) = marginals.location(idx[k]);
      out.variance(k) = marginals.variance.size() > 0 ? marginals.variance(idx[k]) : 0.0;
    }
    return out;
  };
  const Vector z_obs = observed_scores(restrict(obs), y_obs);
  return infer_sample(conditional_posterior(corr, z_obs, obs, miss), restrict(miss), samples, seed);
}

// Gaussian copula CDF C(u, v; rho).
inline double gaussian_copula_cdf(double u, double v, double rho) {
  if (u <= 0.0 || v <= 0.0) return 0.0;
  if (u >= 1.0) return std::min(v, 1.0);
  if (v >= 1.0) return u;
  return normal::bivariate_cdf(normal::quantile(u), normal::quantile(v), rho);
}

// P(Y1 = y1, Y2 = y2) for two discrete marginals coupled by a Gaussian
// copula: the rectangle sum C(u12,u22) - C(u11,u22) - C(u12,u21) + C(u11,u21)
// with u_i1 = F_i(y_i - 1), u_i2 = F_i(y_i).
inline double exact_bivariate_discrete_pmf(double rho, const Marginal& m1, const Marginal& m2, double y1,
                                           double y2) {
  if (!std::holds_alternative<PoissonMarginal>(m1) || !std::holds_alternative<PoissonMarginal>(m2)) {
    throw DomainError("exact_bivariate_discrete_pmf requires discrete marginals");
  }
  if (!(rho > -1.0 && rho < 1.0)) throw DomainError("correlation must lie in (-1, 1)");
  const double u11 = cdf(m1, y1 - 1.0), u12 = cdf(m1, y1);
  const double u21 = cdf(m2, y2 - 1.0), u22 = cdf(m2, y2);
  const double p = gaussian_copula_cdf(u12, u22, rho) - gaussian_copula_cdf(u11, u22, rho) -
                   gaussian_copula_cdf(u12, u21, rho) + gaussian_copula_cdf(u11, u21, rho);
  return std::max(p, 0.0);
}

}  // namespace copulagraph::copula
