#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "copulagraph/dataset.hpp"
#include "copulagraph/errors.hpp"
#include "copulagraph/graph.hpp"
#include "copulagraph/synthgen.hpp"
#include "copulagraph/trainer.hpp"

// On-disk formats:
//   features.csv  one node per row, comma-separated decimals, no header
//   labels.csv    one label per row
//   edges.txt     "u v" per line (see read_edge_list)
//   meta.json     {"n", "d", "s", "label_kind", "seed"}
//   mu.csv        optional true label mean, synthetic data only
namespace copulagraph::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  return out;
}

inline std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path.string(), 0, "cannot open file");
  return in;
}

inline void write_matrix_csv(std::ostream& out, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << m(i, j);
    }
    out << '\n';
  }
}

inline double parse_decimal(const std::string& field, const std::string& source, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(field, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  while (used < field.size() && std::isspace(static_cast<unsigned char>(field[used]))) ++used;
  if (used == 0 || used != field.size()) throw LoadError(source, line, "expected a decimal number, got '" + field + "'");
  if (!std::isfinite(v)) throw LoadError(source, line, "value is not finite");
  return v;
}

// Rows of comma-separated decimals; every row must have the same width.
inline Matrix read_matrix_csv(std::istream& in, const std::string& source) {
  std::vector<std::vector<double>> rows;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(text);
    std::string field;
    while (std::getline(ss, field, ',')) row.push_back(parse_decimal(field, source, line));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw LoadError(source, line,
                      "expected " + std::to_string(rows.front().size()) + " columns, got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw LoadError(source, 0, "file has no data rows");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

inline Vector read_vector_csv(std::istream& in, const std::string& source) {
  const Matrix m = read_matrix_csv(in, source);
  if (m.cols() != 1) throw LoadError(source, 1, "expected one value per row, got " + std::to_string(m.cols()));
  return m.col(0);
}

inline void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
}

// ---------------------------------------------------------------------------
// Datasets

struct DatasetMeta {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t s = 0;
  LabelKind label_kind = LabelKind::Continuous;
  std::uint64_t seed = 0;
};

inline json to_json(const DatasetMeta& m) {
  return json{{"n", m.n}, {"d", m.d}, {"s", m.s}, {"label_kind", to_string(m.label_kind)}, {"seed", m.seed}};
}

namespace detail {

template <class T>
T require_field(const json& j, const char* key, const std::string& source) {
  if (!j.contains(key)) throw LoadError(source, 1, std::string("missing field \"") + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw LoadError(source, 1, std::string("field \"") + key + "\" has the wrong type");
  }
}

inline json parse_json_file(const fs::path& path) {
  auto in = open_in(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    // nlohmann reports a byte offset; recover the line number from it.
    std::ifstream again(path, std::ios::binary);
    std::size_t line = 1;
    char c;
    for (std::size_t i = 0; i < e.byte && again.get(c); ++i) {
      if (c == '\n') ++line;
    }
    throw LoadError(path.string(), line, "malformed JSON");
  }
}

}  // namespace detail

inline DatasetMeta read_meta(const fs::path& path) {
  const json j = detail::parse_json_file(path);
  const std::string src = path.string();
  if (!j.is_object()) throw LoadError(src, 1, "expected a JSON object");
  DatasetMeta m;
  m.n = detail::require_field<std::size_t>(j, "n", src);
  m.d = detail::require_field<std::size_t>(j, "d", src);
  m.s = detail::require_field<std::size_t>(j, "s", src);
  m.seed = detail::require_field<std::uint64_t>(j, "seed", src);
  const auto kind = detail::require_field<std::string>(j, "label_kind", src);
  try {
    m.label_kind = parse_label_kind(kind);
  } catch (const ConfigError& e) {
    throw LoadError(src, 1, e.what());
  }
  return m;
}

inline void write_dataset(const fs::path& dir, const Dataset& data, std::uint64_t seed) {
  fs::create_directories(dir);
  {
    auto out = open_out(dir / "features.csv");
    write_matrix_csv(out, data.x);
  }
  {
    auto out = open_out(dir / "labels.csv");
    write_matrix_csv(out, data.y);
  }
  {
    auto out = open_out(dir / "edges.txt");
    write_edge_list(out, data.graph);
  }
  if (data.mu) {
    auto out = open_out(dir / "mu.csv");
    write_matrix_csv(out, *data.mu);
  }
  const DatasetMeta meta{data.num_nodes(), static_cast<std::size_t>(data.x.cols()), data.graph.num_edges(),
                         data.label_kind, seed};
  write_text(dir / "meta.json", to_json(meta).dump(2) + "\n");
}

inline Dataset load_dataset(const fs::path& dir) {
  const DatasetMeta meta = read_meta(dir / "meta.json");
  const std::string features_src = (dir / "features.csv").string();
  const std::string labels_src = (dir / "labels.csv").string();
  const std::string edges_src = (dir / "edges.txt").string();
  Dataset data;
  data.label_kind = meta.label_kind;
  {
    auto in = open_in(dir / "features.csv");
    data.x = read_matrix_csv(in, features_src);
  }
  {
    auto in = open_in(dir / "labels.csv");
    data.y = read_vector_csv(in, labels_src);
  }
  if (data.x.rows() != data.y.size()) {
    throw LoadError(features_src, static_cast<std::size_t>(data.x.rows()),
                    "feature rows (" + std::to_string(data.x.rows()) + ") do not match label rows (" +
                        std::to_string(data.y.size()) + ")");
  }
  if (static_cast<std::size_t>(data.x.rows()) != meta.n) {
    throw LoadError(features_src, static_cast<std::size_t>(data.x.rows()),
                    "row count " + std::to_string(data.x.rows()) + " does not match meta.json n = " +
                        std::to_string(meta.n));
  }
  if (static_cast<std::size_t>(data.x.cols()) != meta.d) {
    throw LoadError(features_src, 1,
                    "column count " + std::to_string(data.x.cols()) + " does not match meta.json d = " +
                        std::to_string(meta.d));
  }
  if (meta.label_kind == LabelKind::Count) {
    for (Eigen::Index i = 0; i < data.y.size(); ++i) {
      if (!poisson::is_count(data.y(i))) {
        throw LoadError(labels_src, static_cast<std::size_t>(i) + 1,
                        "count labels must be nonnegative integers, got " + std::to_string(data.y(i)));
      }
    }
  }
  {
    auto in = open_in(dir / "edges.txt");
    data.graph = read_edge_list(in, meta.n, edges_src);
  }
  if (fs::exists(dir / "mu.csv")) {
    auto in = open_in(dir / "mu.csv");
    data.mu = read_vector_csv(in, (dir / "mu.csv").string());
  }
  try {
    data.validate();
  } catch (const ConfigError& e) {
    throw LoadError(dir.string(), 0, e.what());
  }
  return data;
}

// ---------------------------------------------------------------------------
// Synthetic generator config

inline json to_json(const synth::SynthConfig& c) {
  return json{{"n", c.n},         {"s", c.s},     {"d0", c.d0},       {"d1", c.latent_dim()},
              {"setting", std::string(synth::to_string(c.setting))},  {"sigma2", c.sigma2},
              {"tau", c.tau},     {"gamma", c.gamma}, {"seed", c.seed}};
}

// Missing keys keep their defaults; unknown keys and wrong types are errors
// naming the field.
inline synth::SynthConfig synth_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  synth::SynthConfig c;
  auto number = [&](const std::string& key, auto& field) {
    using T = std::remove_reference_t<decltype(field)>;
    const json& v = j.at(key);
    if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(key + ": expected a number");
    } else {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        throw ConfigError(key + ": expected a nonnegative integer");
      }
    }
    field = v.get<T>();
  };
  for (const auto& [key, value] : j.items()) {
    if (key == "n") number(key, c.n);
    else if (key == "s") number(key, c.s);
    else if (key == "d0") number(key, c.d0);
    else if (key == "d1") number(key, c.d1);
    else if (key == "sigma2") number(key, c.sigma2);
    else if (key == "tau") number(key, c.tau);
    else if (key == "gamma") number(key, c.gamma);
    else if (key == "seed") number(key, c.seed);
    else if (key == "setting") {
      if (!value.is_string()) throw ConfigError("setting: expected a string");
      c.setting = synth::parse_setting(value.get<std::string>());
    } else {
      throw ConfigError(key + ": unknown field");
    }
  }
  c.validate();
  return c;
}

inline synth::SynthConfig read_synth_config(const fs::path& path) {
  json j;
  try {
    j = detail::parse_json_file(path);
  } catch (const LoadError& e) {
    throw ConfigError(e.what());
  }
  return synth_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Checkpoints and results

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j, const std::string& name) {
  if (!j.is_array() || j.empty() || !j.front().is_array()) throw ConfigError(name + ": expected a nested array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.front().size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) throw ConfigError(name + ": ragged rows");
    for (Eigen::Index k = 0; k < cols; ++k) {
      if (!row[static_cast<std::size_t>(k)].is_number()) throw ConfigError(name + ": non-numeric entry");
      m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
    }
  }
  return m;
}

inline json to_json(const train::TrainConfig& c) {
  return json{{"learning_rate", c.learning_rate}, {"max_epochs", c.max_epochs}, {"patience", c.patience},
              {"seed", c.seed},   {"hidden_dim", c.hidden_dim}, {"layers", c.layers},
              {"val_samples", c.val_samples}, {"test_samples", c.test_samples}};
}

inline train::TrainConfig train_config_from_json(const json& j) {
  train::TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.val_samples = j.at("val_samples").get<std::size_t>();
  c.test_samples = j.at("test_samples").get<std::size_t>();
  c.validate();
  return c;
}

inline json to_json(const synth::Split& s) { return json{{"train", s.train}, {"val", s.val}, {"test", s.test}}; }

inline synth::Split split_from_json(const json& j) {
  return synth::Split{j.at("train").get<Index>(), j.at("val").get<Index>(), j.at("test").get<Index>()};
}

struct Checkpoint {
  train::Model model;
  train::TrainConfig config;
  synth::Split split;
};

inline json to_json(const Checkpoint& c) {
  json params = json::object();
  for (const auto& [name, m] : c.model.params) params[name] = matrix_to_json(m);
  return json{{"variant", train::variant_name(c.model.variant)},
              {"family", std::string(to_string(c.model.variant.family))},
              {"net", {{"in_dim", c.model.net.in_dim}, {"hidden_dim", c.model.net.hidden_dim},
                       {"layers", c.model.net.layers}}},
              {"config", to_json(c.config)},
              {"split", to_json(c.split)},
              {"params", std::move(params)}};
}

inline Checkpoint read_checkpoint(const fs::path& path) {
  const json j = detail::parse_json_file(path);
  try {
    Checkpoint c;
    const auto family = j.at("family").get<std::string>();
    if (family != "normal" && family != "poisson") throw ConfigError("family: unknown value '" + family + "'");
    c.model.variant = train::parse_variant(j.at("variant").get<std::string>(),
                                           family == "poisson" ? Family::Poisson : Family::Normal);
    const json& net = j.at("net");
    c.model.net = nets::NetConfig{net.at("in_dim").get<std::size_t>(), net.at("hidden_dim").get<std::size_t>(),
                                  net.at("layers").get<std::size_t>(), nets::Activation::ReLU};
    c.config = train_config_from_json(j.at("config"));
    c.split = split_from_json(j.at("split"));
    for (const auto& [name, value] : j.at("params").items()) c.model.params[name] = matrix_from_json(value, name);
    return c;
  } catch (const json::exception& e) {
    throw LoadError(path.string(), 0, std::string("invalid checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(path.string(), 0, std::string("invalid checkpoint: ") + e.what());
  }
}

inline std::string metric_name(Family f) { return f == Family::Normal ? "r2" : "r2_deviance"; }

struct RunRecord {
  std::string variant;
  std::string dataset;
  std::uint64_t seed = 0;
  std::string metric;
  double test_metric = 0.0;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  std::vector<train::EpochRecord> history;
  double wall_clock_seconds = 0.0;
  train::TrainConfig config;
  std::array<double, 3> split_ratios{};
  std::uint64_t split_seed = 0;
};

inline json to_json(const RunRecord& r) {
  json history = json::array();
  for (const auto& e : r.history) {
    history.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_score", e.val_score}});
  }
  json config = to_json(r.config);
  config["dataset"] = r.dataset;
  config["variant"] = r.variant;
  config["split_ratios"] = r.split_ratios;
  config["split_seed"] = r.split_seed;
  return json{{"variant", r.variant},
              {"seed", r.seed},
              {"metric", r.metric},
              {"test_metric", r.test_metric},
              {"best_epoch", r.best_epoch},
              {"best_val", r.best_val},
              {"history", std::move(history)},
              {"wall_clock_seconds", r.wall_clock_seconds},
              {"config", std::move(config)}};
}

}  // namespace copulagraph::io
