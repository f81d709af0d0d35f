#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "copulagraph/autodiff.hpp"
#include "copulagraph/copula.hpp"
#include "copulagraph/dataset.hpp"
#include "copulagraph/errors.hpp"
#include "copulagraph/marginals.hpp"
#include "copulagraph/nets.hpp"
#include "copulagraph/synthgen.hpp"

namespace copulagraph::train {

using ad::Tape;
using ad::Value;
using copula::PrecisionKind;
using nets::BaseModel;
using nets::ParamSet;

// ---------------------------------------------------------------------------
// Metrics

// 1 - sum (y - y_hat)^2 / sum (y - mean(y))^2.
inline double r2(const Vector& y, const Vector& y_hat) {
  if (y.size() != y_hat.size()) throw MetricError("r2: length mismatch");
  if (y.size() < 2) throw MetricError("r2: need at least two observations");
  const double ss_tot = (y.array() - y.mean()).square().sum();
  if (!(ss_tot > 0.0)) throw MetricError("r2: undefined for constant targets");
  return 1.0 - (y - y_hat).squaredNorm() / ss_tot;
}

// Poisson deviance 2 sum [y log(y / mu) - (y - mu)] with 0 log 0 = 0.
inline double poisson_deviance(const Vector& y, const Vector& mu) {
  double d = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (!(mu(i) > 0.0)) throw MetricError("poisson deviance: predictions must be positive");
    const double term = y(i) > 0.0 ? y(i) * std::log(y(i) / mu(i)) : 0.0;
    d += term - (y(i) - mu(i));
  }
  return 2.0 * d;
}

// 1 - D(y, y_hat) / D(y, mean(y)).
inline double r2_deviance(const Vector& y, const Vector& y_hat) {
  if (y.size() != y_hat.size()) throw MetricError("r2_deviance: length mismatch");
  if (y.size() < 1) throw MetricError("r2_deviance: empty input");
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (!poisson::is_count(y(i))) throw MetricError("r2_deviance: targets must be nonnegative integers");
  }
  const double ybar = y.mean();
  if (!(ybar > 0.0)) throw MetricError("r2_deviance: undefined when mean(y) = 0");
  const double null_dev = poisson_deviance(y, Vector::Constant(y.size(), ybar));
  if (!(null_dev > 0.0)) throw MetricError("r2_deviance: undefined for constant targets");
  return 1.0 - poisson_deviance(y, y_hat) / null_dev;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  ParamSet m;
  ParamSet v;
  std::size_t t = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

inline void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, double lr) {
  ++state.t;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Matrix& g = git->second;
    auto [mit, m_new] = state.m.try_emplace(name, Matrix::Zero(p.rows(), p.cols()));
    auto [vit, v_new] = state.v.try_emplace(name, Matrix::Zero(p.rows(), p.cols()));
    Matrix& m = mit->second;
    Matrix& v = vit->second;
    m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
    v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kAdamEps);
  }
}

// ---------------------------------------------------------------------------
// Model variants

struct ModelVariant {
  BaseModel base = BaseModel::MLP;
  std::optional<PrecisionKind> coupling;
  Family family = Family::Normal;

  bool coupled() const { return coupling.has_value(); }
};

inline std::string variant_name(const ModelVariant& v) {
  std::string prefix;
  if (v.coupling) {
    switch (*v.coupling) {
      case PrecisionKind::TwoParamAlphaBeta: prefix = "ab-c-"; break;
      case PrecisionKind::TwoParamTauGamma: prefix = "tg-c-"; break;
      case PrecisionKind::RegressionBased: prefix = "r-c-"; break;
    }
  }
  return prefix + std::string(nets::to_string(v.base));
}

inline const std::vector<std::string>& valid_variant_names() {
  static const std::vector<std::string> names = {"mlp",       "gcn",       "sage",      "ab-c-mlp",
                                                 "ab-c-gcn",  "ab-c-sage", "r-c-mlp",   "r-c-gcn",
                                                 "r-c-sage",  "tg-c-mlp",  "tg-c-gcn",  "tg-c-sage"};
  return names;
}

inline ModelVariant parse_variant(std::string_view name, Family family) {
  ModelVariant v;
  v.family = family;
  std::string_view base = name;
  if (name.starts_with("ab-c-")) {
    v.coupling = PrecisionKind::TwoParamAlphaBeta;
    base = name.substr(5);
  } else if (name.starts_with("tg-c-")) {
    v.coupling = PrecisionKind::TwoParamTauGamma;
    base = name.substr(5);
  } else if (name.starts_with("r-c-")) {
    v.coupling = PrecisionKind::RegressionBased;
    base = name.substr(4);
  }
  if (base == "mlp") {
    v.base = BaseModel::MLP;
  } else if (base == "gcn") {
    v.base = BaseModel::GCN;
  } else if (base == "sage") {
    v.base = BaseModel::SAGE;
  } else {
    std::string list;
    for (const auto& n : valid_variant_names()) list += (list.empty() ? "" : ", ") + n;
    throw ConfigError("unknown variant '" + std::string(name) + "'; valid variants: " + list);
  }
  return v;
}

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t max_epochs = 1000;
  std::size_t patience = 50;
  std::uint64_t seed = 0;
  std::size_t hidden_dim = 16;
  std::size_t layers = 2;
  std::size_t val_samples = 200;
  std::size_t test_samples = 2000;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate: must be > 0");
    if (patience < 1) throw ConfigError("patience: must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs: must be >= 1");
    if (val_samples < 1 || test_samples < 1) throw ConfigError("samples: must be >= 1");
  }
};

struct Model {
  ModelVariant variant;
  nets::NetConfig net;
  ParamSet params;
};

inline Model init_model(const ModelVariant& variant, std::size_t in_dim, const TrainConfig& cfg) {
  Model m{variant, nets::NetConfig{in_dim, cfg.hidden_dim, cfg.layers, nets::Activation::ReLU}, {}};
  std::mt19937_64 rng(cfg.seed);
  m.params = nets::init_base(variant.base, m.net, rng);
  if (variant.coupling) {
    auto prec = copula::init_precision(*variant.coupling, in_dim, rng, cfg.hidden_dim);
    m.params.insert(prec.begin(), prec.end());
  }
  return m;
}

// Per-dataset constants shared by every epoch.
struct Context {
  const Dataset& data;
  nets::GraphOperators ops;
  copula::PrecisionContext precision;

  explicit Context(const Dataset& d)
      : data(d), ops(nets::GraphOperators::from(d.graph)), precision(copula::PrecisionContext::from(d.graph)) {}
};

struct Forward {
  Value location;  // mu (Normal) or log lambda (Poisson), n x 1
  Value sigma;     // copula covariance; invalid for uncoupled variants
  Value loss;
};

inline Vector gather(const Vector& v, std::span<const std::size_t> idx) {
  Vector out(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) out(k) = v(idx[k]);
  return out;
}

// Uncoupled: MSE (Normal) or mean Poisson NLL with log link.
// Coupled: copula negative log-likelihood of the observed labels.
inline Forward forward(Tape& tape, const nets::BoundParams& bound, const Model& model, const Context& ctx,
                       std::span<const std::size_t> obs) {
  const Value x = tape.constant(ctx.data.x);
  Forward f;
  f.location = nets::base_forward(model.variant.base, bound, x, ctx.ops, model.net);
  const Vector y_obs = gather(ctx.data.y, obs);
  if (!model.variant.coupling) {
    const Value loc = ad::gather_rows(f.location, obs);
    if (model.variant.family == Family::Normal) {
      f.loss = ad::mean(ad::square(ad::sub(tape.constant(y_obs), loc)));
    } else {
      f.loss = ad::scale(ad::mean(ad::poisson_log_pmf(loc, y_obs)), -1.0);
    }
    return f;
  }
  const Value k = copula::realize_precision(*model.variant.coupling, bound, x, ctx.precision, model.net.hidden_dim);
  f.sigma = ad::inverse_spd(k);
  f.loss = copula::nll_from_covariance(f.sigma, f.location, model.variant.family, y_obs, obs).total;
  return f;
}

// Marginals and copula correlation at fixed parameters.
struct Realized {
  MarginalModel marginals;
  Matrix corr;  // empty for uncoupled variants
};

inline Realized realized_from(const Forward& f, const Model& model) {
  Realized r;
  r.marginals.family = model.variant.family;
  const Vector loc = f.location.value().col(0);
  if (model.variant.family == Family::Normal) {
    r.marginals.location = loc;
  } else {
    r.marginals.location = loc.array().exp();
  }
  if (f.sigma.valid()) {
    const Matrix& sigma = f.sigma.value();
    r.marginals.variance = sigma.diagonal().cwiseMax(kVarianceFloor);
    r.corr = copula::correlation_from_covariance(sigma);
  } else {
    r.marginals.variance = Vector::Ones(loc.size());
  }
  return r;
}

inline Realized realize(const Model& model, const Context& ctx) {
  Tape tape;
  nets::BoundParams bound;
  for (const auto& [name, m] : model.params) bound.emplace(name, tape.constant(m));
  Forward f;
  const Value x = tape.constant(ctx.data.x);
  f.location = nets::base_forward(model.variant.base, bound, x, ctx.ops, model.net);
  if (model.variant.coupling) {
    f.sigma = ad::inverse_spd(
        copula::realize_precision(*model.variant.coupling, bound, x, ctx.precision, model.net.hidden_dim));
  }
  return realized_from(f, model);
}

// Predictions for `target` nodes. Uncoupled variants predict the marginal
// mean directly; coupled variants condition on the observed labels and
// average `samples` Monte Carlo draws.
inline Vector predict(const Model& model, const Realized& r, const Dataset& data, std::span<const std::size_t> obs,
                      std::span<const std::size_t> target, std::size_t samples, std::uint64_t seed) {
  if (!model.variant.coupling) return gather(r.marginals.location, target);
  return copula::infer_sample(r.corr, r.marginals, gather(data.y, obs), obs, target, samples, seed);
}

// Count predictions are floored so the deviance stays defined when every
// sample of a node is zero.
inline constexpr double kCountPredictionFloor = 1e-6;

inline double score(Family family, const Vector& y, const Vector& y_hat) {
  if (family == Family::Normal) return r2(y, y_hat);
  return r2_deviance(y, y_hat.cwiseMax(kCountPredictionFloor));
}

inline std::uint64_t validation_seed(const TrainConfig& cfg) { return cfg.seed ^ 0x5bd1e9955bd1e995ULL; }
inline std::uint64_t test_seed(const TrainConfig& cfg) { return cfg.seed ^ 0x27d4eb2f165667c5ULL; }

struct EpochRecord {
  std::size_t epoch;
  double train_loss;
  double val_score;
};

struct TrainResult {
  Model model;  // best-validation parameters
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val = -std::numeric_limits<double>::infinity();
  double seconds = 0.0;
};

// Full-batch training on the train labels with early stopping on the
// validation score (R^2 or R^2-deviance). Each epoch scores the current
// parameters from the same forward pass that produces the loss, then takes
// one Adam step.
inline TrainResult train(const ModelVariant& variant, const Dataset& data, const synth::Split& split,
                         const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  if (variant.family != data.family()) throw ConfigError("variant family does not match the dataset label kind");
  const auto start = std::chrono::steady_clock::now();
  const Context ctx(data);
  Model model = init_model(variant, static_cast<std::size_t>(data.x.cols()), cfg);
  AdamState adam;
  TrainResult result;
  result.model = model;
  const Vector y_val = gather(data.y, split.val);
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    try {
      Tape tape;
      const auto bound = nets::bind(tape, model.params);
      const Forward f = forward(tape, bound, model, ctx, split.train);
      const Realized r = realized_from(f, model);
      const double val = score(variant.family, y_val,
                               predict(model, r, data, split.train, split.val, cfg.val_samples, validation_seed(cfg)));
      result.history.push_back({epoch, f.loss.item(), val});
      if (val > result.best_val) {
        result.best_val = val;
        result.best_epoch = epoch;
        result.model.params = model.params;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        break;
      }
      tape.backward(f.loss);
      adam_step(model.params, nets::gradients(bound), adam, cfg.learning_rate);
    } catch (const TrainingError&) {
      throw;
    } catch (const Error& e) {
      throw TrainingError(e.what(), epoch);
    }
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// Test-set score of a trained model.
inline double evaluate(const Model& model, const Dataset& data, const synth::Split& split, std::size_t samples,
                       std::uint64_t seed) {
  const Context ctx(data);
  const Realized r = realize(model, ctx);
  return score(model.variant.family, gather(data.y, split.test),
               predict(model, r, data, split.train, split.test, samples, seed));
}

}  // namespace copulagraph::train
