// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0
//
// A circuit is a retained-edge subgraph with signed effect weights d.
//
// Serialized as JSON:
//   {
//     "format": "patchwork.circuit/1",
//     "metadata": {
//       "idiom": "...", "meaning": "...", "tokens": [" He", ...],
//       "n_layers": 2, "n_heads": 4, "n_tokens": 4, "layer": 1, "pruned": false,
//       "corruptions": [{"string": "...", "position": 1, "tau": 0.01,
//                        "cos_circuit": 0.71, "cos_pruned": 0.65}]
//     },
//     "nodes": [{"kind": "resid", "layer": -1, "token": 0},
//               {"kind": "head", "layer": 0, "head": 2, "token": 3}, ...],
//     "edges": [{"type": "K", "src": {...}, "dst": {...}, "weight": 0.05}, ...]
//   }
// cos_circuit / cos_pruned are omitted when not evaluated.

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "patchwork/graph.hpp"

namespace patchwork {

struct CorruptionRecord {
  std::string text;
  int position = 0;
  double tau = 0.0;
  /// Metric with every edge outside the circuit patched.
  std::optional<double> cos_circuit;
  /// Same, for the interpretability-pruned circuit.
  std::optional<double> cos_pruned;

  bool operator==(const CorruptionRecord&) const = default;
};

struct Circuit {
  int n_layers = 0;
  int n_heads = 0;
  int n_tokens = 0;
  int layer = 0;  // evaluation layer L; the graph is truncated after it
  std::string idiom;
  std::string meaning;
  std::vector<std::string> tokens;
  std::vector<CorruptionRecord> corruptions;
  bool pruned = false;
  std::map<EdgeId, double> edges;

  /// Endpoints of retained edges plus every residual node (the residual chain
  /// is never removed). Sorted.
  std::vector<NodeId> nodes() const;

  /// Same model shape, sequence length, layer and idiom string.
  bool compatible_with(const Circuit& other) const;

  bool operator==(const Circuit&) const = default;
};

nlohmann::json circuit_to_json(const Circuit& circuit);
Circuit circuit_from_json(const nlohmann::json& j);
std::string serialize_circuit(const Circuit& circuit);

Circuit load_circuit(const std::filesystem::path& path);
void save_circuit(const Circuit& circuit, const std::filesystem::path& path);

nlohmann::json node_to_json(const NodeId& node);
NodeId node_from_json(const nlohmann::json& j);

}  // namespace patchwork
