#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "copulagraph/copulagraph.hpp"

namespace cg = copulagraph;
namespace fs = std::filesystem;

namespace {

struct TrainFlags {
  double lr = 0.01;
  std::uint64_t seed = 0;
  std::size_t samples = 2000;
  std::size_t val_samples = 200;
  std::size_t max_epochs = 1000;
  std::size_t patience = 50;

  cg::train::TrainConfig config() const {
    cg::train::TrainConfig c;
    c.learning_rate = lr;
    c.seed = seed;
    c.test_samples = samples;
    c.val_samples = val_samples;
    c.max_epochs = max_epochs;
    c.patience = patience;
    c.validate();
    return c;
  }
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--lr", f.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--seed", f.seed, "seed for split, initialization and sampling")->capture_default_str();
  cmd->add_option("--samples", f.samples, "Monte Carlo samples L at test time")->capture_default_str();
  cmd->add_option("--val-samples", f.val_samples, "Monte Carlo samples L for validation")->capture_default_str();
  cmd->add_option("--max-epochs", f.max_epochs)->capture_default_str();
  cmd->add_option("--patience", f.patience, "epochs without validation improvement before stopping")
      ->capture_default_str();
}

std::array<double, 3> parse_ratios(const std::vector<double>& v) {
  if (v.size() != 3) throw cg::ConfigError("split: expected three ratios");
  return {v[0], v[1], v[2]};
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw cg::Error("cannot write " + path.string());
  out << text;
}

void print_study(const cg::experiments::StudyResult& r) {
  std::cout << r.config.param << "  model        mean     se       vs       diff     p       \n";
  for (const auto& c : r.cells) {
    std::printf("%-6g  %-11s  %7.4f  %7.4f", c.value, c.model.c_str(), c.summary.mean, c.summary.se);
    if (c.test) {
      std::printf("  %-7s  %+7.4f  %7.4f %s", c.reference.c_str(), c.test->mean_diff, c.test->p,
                  cg::experiments::significance_marker(c.test->p).c_str());
    }
    std::printf("\n");
  }
}

void save_study(const cg::experiments::StudyResult& r, const fs::path& dir) {
  fs::create_directories(dir);
  std::ostringstream summary, trials;
  cg::experiments::write_summary_csv(summary, r);
  cg::experiments::write_trials_csv(trials, r);
  write_file(dir / "summary.csv", summary.str());
  write_file(dir / "trials.csv", trials.str());
}

int cmd_synth(const std::optional<std::string>& config_path, std::optional<std::uint64_t> seed,
              const std::string& out_dir) {
  cg::synth::SynthConfig cfg;
  if (config_path) cfg = cg::io::read_synth_config(*config_path);
  if (seed) cfg.seed = *seed;
  cfg.validate();
  const cg::Dataset data = cg::from_synthetic(cg::synth::generate(cfg));
  cg::io::write_dataset(out_dir, data, cfg.seed);
  write_file(fs::path(out_dir) / "synth_config.json", cg::io::to_json(cfg).dump(2) + "\n");
  std::cout << "wrote " << data.num_nodes() << " nodes, " << data.graph.num_edges() << " edges to " << out_dir
            << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& variant_name, const TrainFlags& flags,
              const std::vector<double>& ratios_in, const std::string& out_dir) {
  const cg::Dataset data = cg::io::load_dataset(data_dir);
  const auto variant = cg::train::parse_variant(variant_name, data.family());
  const auto cfg = flags.config();
  const auto ratios = parse_ratios(ratios_in);
  const auto sp = cg::synth::split(data.num_nodes(), ratios, cfg.seed);
  const auto result = cg::train::train(variant, data, sp, cfg);
  const double test = cg::train::evaluate(result.model, data, sp, cfg.test_samples, cg::train::test_seed(cfg));

  cg::io::RunRecord rec;
  rec.variant = cg::train::variant_name(variant);
  rec.dataset = data_dir;
  rec.seed = cfg.seed;
  rec.metric = cg::io::metric_name(data.family());
  rec.test_metric = test;
  rec.best_epoch = result.best_epoch;
  rec.best_val = result.best_val;
  rec.history = result.history;
  rec.wall_clock_seconds = result.seconds;
  rec.config = cfg;
  rec.split_ratios = ratios;
  rec.split_seed = cfg.seed;

  fs::create_directories(out_dir);
  write_file(fs::path(out_dir) / "checkpoint.json",
             cg::io::to_json(cg::io::Checkpoint{result.model, cfg, sp}).dump(1) + "\n");
  write_file(fs::path(out_dir) / "result.json", cg::io::to_json(rec).dump(2) + "\n");
  std::printf("%s test %s = %.6f (best epoch %zu of %zu)\n", rec.variant.c_str(), rec.metric.c_str(), test,
              result.best_epoch, result.history.size());
  return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& checkpoint, std::optional<std::size_t> samples) {
  const cg::Dataset data = cg::io::load_dataset(data_dir);
  const cg::io::Checkpoint ck = cg::io::read_checkpoint(checkpoint);
  if (ck.model.variant.family != data.family()) throw cg::ConfigError("checkpoint family does not match dataset");
  const std::size_t l = samples.value_or(ck.config.test_samples);
  const double test = cg::train::evaluate(ck.model, data, ck.split, l, cg::train::test_seed(ck.config));
  const nlohmann::json out{{"variant", cg::train::variant_name(ck.model.variant)},
                           {"metric", cg::io::metric_name(data.family())},
                           {"test_metric", test}};
  std::cout << out.dump() << "\n";
  return 0;
}

void apply(cg::experiments::StudyConfig& s, const TrainFlags& flags, std::uint64_t first_seed) {
  s.train = flags.config();
  s.first_seed = first_seed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Copula-coupled graph regression"};
  app.require_subcommand(1);

  std::optional<std::string> synth_config;
  std::optional<std::uint64_t> synth_seed;
  std::string out_dir = ".";
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--config", synth_config, "JSON generator config (fields n, s, d0, d1, setting, sigma2, tau, gamma, seed)");
  synth->add_option("--seed", synth_seed, "overrides the config seed");
  synth->add_option("--out-dir", out_dir)->required();

  std::string data_dir, variant, checkpoint;
  TrainFlags flags;
  std::vector<double> ratios{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  auto* train = app.add_subcommand("train", "train one model variant");
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--variant", variant, "e.g. mlp, gcn, ab-c-gcn, r-c-sage")->required();
  train->add_option("--split", ratios, "train/val/test ratios")->delimiter(',')->expected(3);
  train->add_option("--out-dir", out_dir)->required();
  add_train_flags(train, flags);

  std::optional<std::size_t> eval_samples;
  auto* eval = app.add_subcommand("eval", "re-evaluate a checkpoint on its test split");
  eval->add_option("--data", data_dir)->required();
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--samples", eval_samples, "Monte Carlo samples L (default: the checkpoint's)");

  std::string setting = "A";
  std::vector<double> grid;
  std::size_t trials = 20;
  std::uint64_t first_seed = 0;
  std::vector<std::string> variants;
  TrainFlags sim_flags;
  auto* sim = app.add_subcommand("reproduce-sim", "MLP/GCN/SAGE over a parameter grid");
  sim->add_option("--setting", setting, "A (varies sigma2), B or C (vary tau)")->capture_default_str();
  sim->add_option("--grid", grid, "parameter values")->delimiter(',');
  sim->add_option("--trials", trials)->capture_default_str();
  sim->add_option("--first-seed", first_seed)->capture_default_str();
  sim->add_option("--variants", variants)->delimiter(',');
  sim->add_option("--out-dir", out_dir)->required();
  add_train_flags(sim, sim_flags);

  std::vector<double> taus{0.5, 1.0, 2.0, 5.0};
  auto* table1 = app.add_subcommand("reproduce-table1", "copula variants vs. base models on setting C");
  table1->add_option("--taus", taus)->delimiter(',');
  table1->add_option("--trials", trials)->capture_default_str();
  table1->add_option("--first-seed", first_seed)->capture_default_str();
  table1->add_option("--variants", variants)->delimiter(',');
  table1->add_option("--out-dir", out_dir)->required();
  add_train_flags(table1, sim_flags);

  double count_gamma = 0.01;
  auto* count = app.add_subcommand("reproduce-count", "count pipeline on a copula-coupled Poisson field");
  count->add_option("--gamma", count_gamma)->capture_default_str();
  count->add_option("--trials", trials)->capture_default_str();
  count->add_option("--first-seed", first_seed)->capture_default_str();
  count->add_option("--variants", variants)->delimiter(',');
  count->add_option("--out-dir", out_dir)->required();
  add_train_flags(count, sim_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) return cmd_synth(synth_config, synth_seed, out_dir);
    if (*train) return cmd_train(data_dir, variant, flags, ratios, out_dir);
    if (*eval) return cmd_eval(data_dir, checkpoint, eval_samples);
    cg::experiments::StudyConfig study;
    if (*sim) {
      const auto s = cg::synth::parse_setting(setting);
      if (grid.empty()) grid = s == cg::synth::Setting::A ? std::vector<double>{2.5, 5, 10, 20}
                                                          : std::vector<double>{0.5, 1, 2, 5};
      study = variants.empty() ? cg::experiments::simulation_study(s, grid, trials)
                               : cg::experiments::simulation_study(s, grid, trials, variants);
    } else if (*table1) {
      study = variants.empty() ? cg::experiments::table1_study(taus, trials)
                               : cg::experiments::table1_study(taus, trials, variants);
    } else {
      cg::experiments::CountFieldConfig field;
      field.graph.gamma = count_gamma;
      if (variants.empty()) variants = {"sage", "ab-c-sage", "r-c-sage"};
      study = cg::experiments::count_study(field, trials, variants);
    }
    apply(study, sim_flags, first_seed);
    const auto result = cg::experiments::run_study(study);
    save_study(result, out_dir);
    print_study(result);
    return 0;
  } catch (const cg::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const cg::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
