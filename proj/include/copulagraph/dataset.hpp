#pragma once

#include <optional>
#include <string>

#include "copulagraph/errors.hpp"
#include "copulagraph/graph.hpp"
#include "copulagraph/marginals.hpp"
#include "copulagraph/synthgen.hpp"

namespace copulagraph {

enum class LabelKind { Continuous, Count };

inline std::string to_string(LabelKind k) { return k == LabelKind::Continuous ? "continuous" : "count"; }

inline LabelKind parse_label_kind(const std::string& s) {
  if (s == "continuous") return LabelKind::Continuous;
  if (s == "count") return LabelKind::Count;
  throw ConfigError("label_kind: expected \"continuous\" or \"count\", got \"" + s + "\"");
}

inline Family family_for(LabelKind k) { return k == LabelKind::Count ? Family::Poisson : Family::Normal; }

struct Dataset {
  Graph graph;
  Matrix x;
  Vector y;
  LabelKind label_kind = LabelKind::Continuous;
  std::optional<Vector> mu;  // true label mean, synthetic data only

  std::size_t num_nodes() const { return graph.num_nodes(); }
  Family family() const { return family_for(label_kind); }

  void validate() const {
    const auto n = static_cast<Eigen::Index>(graph.num_nodes());
    if (x.rows() != n) {
      throw ConfigError("feature rows (" + std::to_string(x.rows()) + ") != node count (" + std::to_string(n) + ")");
    }
    if (y.size() != n) {
      throw ConfigError("label rows (" + std::to_string(y.size()) + ") != node count (" + std::to_string(n) + ")");
    }
    if (mu && mu->size() != n) throw ConfigError("mu sidecar length does not match node count");
    if (!x.allFinite() || !y.allFinite()) throw ConfigError("features and labels must be finite");
    validate_labels(family(), y);
  }
};

inline Dataset from_synthetic(synth::SynthData d) {
  return Dataset{std::move(d.graph), std::move(d.x), std::move(d.y), LabelKind::Continuous, std::move(d.mu)};
}

}  // namespace copulagraph
