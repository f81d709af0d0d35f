#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "copulagraph/experiments.hpp"
#include "support/testing.hpp"

using namespace copulagraph;
namespace ex = copulagraph::experiments;

namespace {

// Two-sided p of Student's t with nu degrees of freedom, by Simpson
// integration of the density over [-|t|, |t|].
double t_pvalue_by_quadrature(double t, double nu) {
  const double c = std::exp(std::lgamma((nu + 1) / 2) - std::lgamma(nu / 2)) / std::sqrt(nu * std::numbers::pi);
  const auto f = [&](double x) { return c * std::pow(1 + x * x / nu, -(nu + 1) / 2); };
  const int m = 200000;
  const double a = -std::abs(t), h = 2 * std::abs(t) / m;
  double s = f(a) + f(-a);
  for (int i = 1; i < m; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return 1.0 - s * h / 3.0;
}

}  // namespace

TEST(Stats, MeanSe) {
  const auto m = ex::mean_se({1.0, 2.0, 3.0, 4.0});
  EXPECT_EQ(m.mean, 2.5);
  EXPECT_NEAR(m.se, std::sqrt((2.25 + 0.25 + 0.25 + 2.25) / 3.0 / 4.0), 1e-15);
  EXPECT_EQ(ex::mean_se({7.0}).se, 0.0);
  EXPECT_THROW(ex::mean_se({}), MetricError);
}

TEST(Stats, PairedTTestHandValues) {
  // Differences 0.5, -0.1, 0.6, 0.1, 0.8: mean 0.38, sd 0.3701..., t = 2.2958...
  const std::vector<double> a{1.5, 1.9, 3.6, 4.1, 5.8}, b{1, 2, 3, 4, 5};
  const auto r = ex::paired_ttest(a, b);
  EXPECT_NEAR(r.mean_diff, 0.38, 1e-12);
  const double sd = std::sqrt((0.0144 + 0.2304 + 0.0484 + 0.0784 + 0.1764) / 4.0);
  EXPECT_NEAR(r.t, 0.38 / (sd / std::sqrt(5.0)), 1e-12);
  EXPECT_NEAR(r.p, t_pvalue_by_quadrature(r.t, 4.0), 1e-9);
}

TEST(Stats, PairedTTestMatchesQuadratureOnRandomSamples) {
  copulagraph::testing::Rng rng(3);
  std::normal_distribution<double> z(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng() % 25;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = z(rng) + 0.3, b[i] = z(rng);
    const auto r = ex::paired_ttest(a, b);
    EXPECT_NEAR(r.p, t_pvalue_by_quadrature(r.t, static_cast<double>(n - 1)), 1e-8);
    // Swapping the samples flips the sign and keeps p.
    const auto s = ex::paired_ttest(b, a);
    EXPECT_EQ(s.t, -r.t);
    EXPECT_EQ(s.p, r.p);
  }
}

TEST(Stats, PairedTTestDegenerateCases) {
  EXPECT_EQ(ex::paired_ttest({1, 2, 3}, {1, 2, 3}).p, 1.0);
  EXPECT_EQ(ex::paired_ttest({2, 3, 4}, {1, 2, 3}).p, 0.0);
  EXPECT_THROW(ex::paired_ttest({1, 2}, {1}), MetricError);
  EXPECT_THROW(ex::paired_ttest({1}, {1}), MetricError);
}

TEST(Stats, SignificanceMarkers) {
  EXPECT_EQ(ex::significance_marker(0.005), "***");
  EXPECT_EQ(ex::significance_marker(0.01), "**");
  EXPECT_EQ(ex::significance_marker(0.049), "**");
  EXPECT_EQ(ex::significance_marker(0.05), "*");
  EXPECT_EQ(ex::significance_marker(0.099), "*");
  EXPECT_EQ(ex::significance_marker(0.1), "");
}

TEST(Pool, ResultsIndependentOfWorkerCount) {
  auto run = [](std::size_t workers) {
    std::vector<double> out(200);
    ex::parallel_for(out.size(), [&](std::size_t i) {
      std::mt19937_64 rng(i);
      out[i] = std::normal_distribution<double>()(rng);
    }, workers);
    return out;
  };
  const auto one = run(1);
  EXPECT_EQ(one, run(3));
  EXPECT_EQ(one, run(8));
}

TEST(Pool, RethrowsTaskError) {
  EXPECT_THROW(ex::parallel_for(50, [](std::size_t i) {
    if (i == 17) throw NumericalError("boom");
  }, 4),
               NumericalError);
}

TEST(CountField, CountsWithClippedRates) {
  ex::CountFieldConfig cfg;
  cfg.graph.n = 120;
  cfg.graph.s = 600;
  cfg.graph.gamma = 0.01;
  cfg.graph.seed = 4;
  const Dataset d = ex::count_field(cfg);
  EXPECT_EQ(d.label_kind, LabelKind::Count);
  EXPECT_NO_THROW(d.validate());
  ASSERT_TRUE(d.mu.has_value());
  const double lo = std::exp(cfg.log_rate_offset - cfg.log_rate_scale * ex::kCountMeanClip);
  const double hi = std::exp(cfg.log_rate_offset + cfg.log_rate_scale * ex::kCountMeanClip);
  EXPECT_GE(d.mu->minCoeff(), lo * (1 - 1e-12));
  EXPECT_LE(d.mu->maxCoeff(), hi * (1 + 1e-12));
  const Dataset again = ex::count_field(cfg);
  EXPECT_EQ(d.y, again.y);
}

// Marginals of the field are Poisson(mu_i). Labels inside one field share a
// near-common shock when gamma is small, so each field is one independent
// draw of its mean standardized residual.
TEST(CountField, LabelsHavePoissonMeans) {
  std::vector<double> per_field;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    ex::CountFieldConfig cfg;
    cfg.graph.n = 100;
    cfg.graph.s = 400;
    cfg.graph.gamma = 0.01;
    cfg.graph.seed = seed;
    const Dataset d = ex::count_field(cfg);
    const Vector r = (d.y - *d.mu).array() / d.mu->array().sqrt();
    per_field.push_back(r.mean());
  }
  const auto m = ex::mean_se(per_field);
  EXPECT_LT(std::abs(m.mean), 3 * m.se) << m.mean << " se " << m.se;
}

TEST(Study, DeterministicAcrossThreadCountsAndTables) {
  auto cfg = ex::simulation_study(synth::Setting::A, {5.0}, 3, {"mlp", "gcn"});
  cfg.train.max_epochs = 30;
  cfg.train.patience = 10;
  const auto base_make = cfg.make_data;
  cfg.make_data = [base_make](double v, std::uint64_t seed) {
    synth::SynthConfig sc;
    sc.n = 60;
    sc.s = 200;
    sc.sigma2 = v;
    sc.seed = seed;
    return from_synthetic(synth::generate(sc));
  };
  setenv("COPULAGRAPH_THREADS", "1", 1);
  const auto a = ex::run_study(cfg);
  setenv("COPULAGRAPH_THREADS", "3", 1);
  const auto b = ex::run_study(cfg);
  unsetenv("COPULAGRAPH_THREADS");
  ASSERT_EQ(a.cells.size(), 2u);
  for (std::size_t k = 0; k < a.cells.size(); ++k) EXPECT_EQ(a.cells[k].scores, b.cells[k].scores);
  const auto& gcn = a.cell(5.0, "gcn");
  EXPECT_EQ(gcn.reference, "mlp");
  ASSERT_TRUE(gcn.test.has_value());
  // Trial t is the one-off run with seed first_seed + t.
  EXPECT_EQ(gcn.scores[1], ex::run_trial(cfg.make_data(5.0, 1), "gcn", cfg.train, 1));

  std::ostringstream summary, trials;
  ex::write_summary_csv(summary, a);
  ex::write_trials_csv(trials, a);
  EXPECT_EQ(summary.str().substr(0, summary.str().find('\n')),
            "setting,param,value,model,trials,mean,se,reference,mean_diff,p_value,marker");
  EXPECT_EQ(trials.str().substr(0, trials.str().find('\n')), "setting,param,value,model,trial,seed,score");
  const std::string rows = trials.str();
  EXPECT_EQ(std::count(rows.begin(), rows.end(), '\n'), 7);
}

TEST(Study, BadThreadEnvIsConfigError) {
  setenv("COPULAGRAPH_THREADS", "zero", 1);
  EXPECT_THROW(ex::worker_count(), ConfigError);
  unsetenv("COPULAGRAPH_THREADS");
}
