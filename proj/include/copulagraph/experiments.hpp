#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <mutex>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "copulagraph/dataset.hpp"
#include "copulagraph/errors.hpp"
#include "copulagraph/marginals.hpp"
#include "copulagraph/synthgen.hpp"
#include "copulagraph/trainer.hpp"

namespace copulagraph::experiments {

// ---------------------------------------------------------------------------
// Statistics

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& v) {
  if (v.empty()) throw MetricError("mean_se: empty sample");
  MeanSe out;
  for (double x : v) out.mean += x;
  out.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return out;
}

struct PairedTest {
  double mean_diff = 0.0;  // mean of a - b
  double t = 0.0;
  double p = 1.0;  // two-sided
};

inline PairedTest paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw MetricError("paired t-test: samples differ in length");
  if (a.size() < 2) throw MetricError("paired t-test: need at least two pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const MeanSe m = mean_se(d);
  PairedTest out;
  out.mean_diff = m.mean;
  if (m.se == 0.0) {
    out.t = m.mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), m.mean);
    out.p = m.mean == 0.0 ? 1.0 : 0.0;
    return out;
  }
  out.t = m.mean / m.se;
  const boost::math::students_t dist(static_cast<double>(d.size() - 1));
  out.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t)));
  return out;
}

// "*", "**", "***" for p below 0.1, 0.05, 0.01.
inline std::string significance_marker(double p) {
  if (p < 0.01) return "***";
  if (p < 0.05) return "**";
  if (p < 0.1) return "*";
  return "";
}

// ---------------------------------------------------------------------------
// Worker pool

// COPULAGRAPH_THREADS caps the pool; unset means hardware concurrency.
inline std::size_t worker_count() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("COPULAGRAPH_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw ConfigError("COPULAGRAPH_THREADS: expected a positive integer");
    n = static_cast<std::size_t>(v);
  }
  return n;
}

// Runs task(i) for i in [0, count); results must be written by index so the
// outcome does not depend on scheduling. The first exception is rethrown.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& task,
                         std::size_t workers = worker_count()) {
  workers = std::min(workers, count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count && !failed; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Count-valued field for the count pipeline: a Gaussian copula with the
// correlation of tau (L + gamma I)^{-1} coupling Poisson marginals whose
// log-rate is an affine function of the standardized aggregated mean,
// clipped to +-3 so low-degree nodes do not produce extreme rates.

struct CountFieldConfig {
  synth::SynthConfig graph;  // n, s, d0, tau, gamma, seed are used
  double log_rate_offset = 1.5;
  double log_rate_scale = 0.5;
};

inline constexpr double kCountMeanClip = 3.0;

inline Dataset count_field(const CountFieldConfig& cfg) {
  synth::SynthConfig base = cfg.graph;
  base.setting = synth::Setting::C;
  synth::SynthData d = synth::generate(base);
  const Vector mu = d.mu;
  const double sd = std::sqrt((mu.array() - mu.mean()).square().mean());
  const Vector log_rate =
      (cfg.log_rate_offset +
       cfg.log_rate_scale * ((mu.array() - mu.mean()) / (sd > 0.0 ? sd : 1.0)).cwiseMax(-kCountMeanClip).cwiseMin(kCountMeanClip))
          .matrix();

  std::mt19937_64 rng(base.seed ^ 0xc2b2ae3d27d4eb4fULL);
  const Vector field =
      synth::sample_labels(synth::Setting::B, d.graph, Vector::Zero(base.n), 1.0, base.tau, base.gamma, rng);
  const Matrix cov = synth::noise_precision(d.graph, base.tau, base.gamma).inverse();
  Vector y(base.n);
  for (std::size_t i = 0; i < base.n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const double u = clip_pit(normal::cdf(field(k) / std::sqrt(cov(k, k))));
    y(k) = poisson::quantile(u, std::exp(log_rate(k)));
  }
  return Dataset{std::move(d.graph), std::move(d.x), std::move(y), LabelKind::Count, log_rate.array().exp().matrix()};
}

// ---------------------------------------------------------------------------
// Seeded trials

inline constexpr std::array<double, 3> kEqualThirds{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};

// Trains one variant and returns its test score. Every seed (data, split,
// initialization, sampling) derives from `seed`.
inline double run_trial(const Dataset& data, const std::string& variant, train::TrainConfig cfg,
                        std::uint64_t seed, std::array<double, 3> ratios = kEqualThirds) {
  cfg.seed = seed;
  const synth::Split sp = synth::split(data.num_nodes(), ratios, seed);
  const train::TrainResult r = train::train(train::parse_variant(variant, data.family()), data, sp, cfg);
  return train::evaluate(r.model, data, sp, cfg.test_samples, train::test_seed(cfg));
}

struct StudyConfig {
  std::string name;  // setting label written to the table
  std::string param;  // name of the varied parameter
  std::vector<double> grid;
  std::size_t trials = 20;
  std::uint64_t first_seed = 0;
  std::vector<std::string> variants;
  // Each listed variant is compared with its reference by a paired t-test.
  std::map<std::string, std::string> reference;
  train::TrainConfig train;
  std::array<double, 3> ratios = kEqualThirds;
  std::function<Dataset(double value, std::uint64_t seed)> make_data;
};

struct Cell {
  std::string model;
  double value = 0.0;
  std::vector<double> scores;  // one per trial, in seed order
  MeanSe summary;
  std::string reference;
  std::optional<PairedTest> test;
};

struct StudyResult {
  StudyConfig config;
  std::vector<Cell> cells;  // grid-major, then variant order

  const Cell& cell(double value, const std::string& model) const {
    for (const auto& c : cells) {
      if (c.value == value && c.model == model) return c;
    }
    throw ConfigError("no cell for model '" + model + "'");
  }
};

inline StudyResult run_study(const StudyConfig& cfg) {
  if (cfg.trials < 1) throw ConfigError("trials: must be >= 1");
  if (cfg.grid.empty()) throw ConfigError("grid: must not be empty");
  if (cfg.variants.empty()) throw ConfigError("variants: must not be empty");
  for (const auto& v : cfg.variants) train::parse_variant(v, Family::Normal);
  const std::size_t nv = cfg.variants.size();
  const std::size_t per_value = cfg.trials * nv;
  std::vector<double> scores(cfg.grid.size() * per_value);
  parallel_for(scores.size(), [&](std::size_t task) {
    const std::size_t g = task / per_value;
    const std::size_t trial = (task % per_value) / nv;
    const std::size_t v = task % nv;
    const std::uint64_t seed = cfg.first_seed + trial;
    const Dataset data = cfg.make_data(cfg.grid[g], seed);
    scores[task] = run_trial(data, cfg.variants[v], cfg.train, seed, cfg.ratios);
  });

  StudyResult out{cfg, {}};
  for (std::size_t g = 0; g < cfg.grid.size(); ++g) {
    std::map<std::string, std::vector<double>> by_model;
    for (std::size_t v = 0; v < nv; ++v) {
      auto& s = by_model[cfg.variants[v]];
      for (std::size_t t = 0; t < cfg.trials; ++t) s.push_back(scores[g * per_value + t * nv + v]);
    }
    for (const auto& model : cfg.variants) {
      Cell c{model, cfg.grid[g], by_model[model], mean_se(by_model[model]), "", std::nullopt};
      auto ref = cfg.reference.find(model);
      if (ref != cfg.reference.end() && by_model.contains(ref->second) && cfg.trials >= 2) {
        c.reference = ref->second;
        c.test = paired_ttest(c.scores, by_model[ref->second]);
      }
      out.cells.push_back(std::move(c));
    }
  }
  return out;
}

inline void write_summary_csv(std::ostream& out, const StudyResult& r) {
  out << std::setprecision(6);
  out << "setting,param,value,model,trials,mean,se,reference,mean_diff,p_value,marker\n";
  for (const auto& c : r.cells) {
    out << r.config.name << ',' << r.config.param << ',' << c.value << ',' << c.model << ',' << c.scores.size()
        << ',' << c.summary.mean << ',' << c.summary.se << ',' << c.reference << ',';
    if (c.test) {
      out << c.test->mean_diff << ',' << c.test->p << ',' << significance_marker(c.test->p);
    } else {
      out << ",,";
    }
    out << '\n';
  }
}

inline void write_trials_csv(std::ostream& out, const StudyResult& r) {
  out << std::setprecision(17);
  out << "setting,param,value,model,trial,seed,score\n";
  for (const auto& c : r.cells) {
    for (std::size_t t = 0; t < c.scores.size(); ++t) {
      out << r.config.name << ',' << r.config.param << ',' << c.value << ',' << c.model << ',' << t << ','
          << r.config.first_seed + t << ',' << c.scores[t] << '\n';
    }
  }
}

// Setting-wise defaults: A varies sigma2, B and C vary tau.
inline StudyConfig simulation_study(synth::Setting setting, std::vector<double> grid, std::size_t trials,
                                    std::vector<std::string> variants = {"mlp", "gcn", "sage"}) {
  StudyConfig cfg;
  cfg.name = std::string(synth::to_string(setting));
  cfg.param = setting == synth::Setting::A ? "sigma2" : "tau";
  cfg.grid = std::move(grid);
  cfg.trials = trials;
  cfg.variants = std::move(variants);
  for (const auto& v : cfg.variants) {
    if (v != "mlp") cfg.reference[v] = "mlp";
  }
  cfg.make_data = [setting](double value, std::uint64_t seed) {
    synth::SynthConfig sc;
    sc.setting = setting;
    sc.seed = seed;
    if (setting == synth::Setting::A) {
      sc.sigma2 = value;
    } else {
      sc.tau = value;
    }
    return from_synthetic(synth::generate(sc));
  };
  return cfg;
}

// Setting C over tau with the copula variants compared to their base models.
inline StudyConfig table1_study(std::vector<double> taus, std::size_t trials,
                                std::vector<std::string> variants = {"mlp", "gcn", "ab-c-gcn", "r-c-gcn", "sage",
                                                                     "ab-c-sage", "r-c-sage"}) {
  StudyConfig cfg = simulation_study(synth::Setting::C, std::move(taus), trials, std::move(variants));
  cfg.reference.clear();
  for (const auto& v : cfg.variants) {
    const auto base = std::string(nets::to_string(train::parse_variant(v, Family::Normal).base));
    if (v != base) cfg.reference[v] = base;
  }
  return cfg;
}

// Count pipeline over seeds; the grid holds a single placeholder value.
inline StudyConfig count_study(const CountFieldConfig& field, std::size_t trials, std::vector<std::string> variants) {
  StudyConfig cfg;
  cfg.name = "count";
  cfg.param = "tau";
  cfg.grid = {field.graph.tau};
  cfg.trials = trials;
  cfg.variants = std::move(variants);
  cfg.reference = {};
  for (const auto& v : cfg.variants) {
    const auto base = std::string(nets::to_string(train::parse_variant(v, Family::Poisson).base));
    if (v != base) cfg.reference[v] = base;
  }
  cfg.make_data = [field](double tau, std::uint64_t seed) {
    CountFieldConfig c = field;
    c.graph.tau = tau;
    c.graph.seed = seed;
    return count_field(c);
  };
  return cfg;
}

}  // namespace copulagraph::experiments
