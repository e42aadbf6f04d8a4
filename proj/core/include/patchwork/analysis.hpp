// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0
//
// Post-discovery reports: per-head effect tables, QK dot products between
// critical tokens, augmented reception and suppressor listings.

#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "patchwork/circuit.hpp"
#include "patchwork/graph.hpp"
#include "patchwork/model.hpp"
#include "patchwork/tokenizer.hpp"

namespace patchwork {

inline constexpr double kDisplayFloor = 0.01;

/// One head's effect in one idiom's (merged) circuit.
struct HeadEffect {
  std::string idiom;
  int layer = 0;
  int head = 0;
  double d = 0.0;
  bool has_query = false;  // some incoming Q edge was retained

  bool operator==(const HeadEffect&) const = default;
};

/// Max-|d| HeadOut weight per (layer, head) over all token positions.
std::vector<HeadEffect> head_effects(const std::string& label, const Circuit& circuit);

/// "idiom,layer,head,d,query_edge" with a header row; query_edge is 0 or 1.
std::string head_effects_to_csv(const std::vector<HeadEffect>& effects);
std::vector<HeadEffect> parse_head_effects_csv(const std::string& text);

struct HeadEffectTable {
  std::vector<std::string> rows;
  std::vector<std::pair<int, int>> columns;  // (layer, head), only heads shown somewhere
  std::vector<std::vector<std::optional<double>>> cells;  // d, empty when at or below floor
  std::vector<std::vector<bool>> asterisk;                // shown cell without a Q edge
};

/// Rows keep first-appearance order; duplicate (idiom, layer, head) entries
/// combine by max |d| (positive on ties) and any Q edge.
HeadEffectTable head_effect_table(const std::vector<HeadEffect>& effects,
                                  double floor = kDisplayFloor);
/// Circuits must share n_layers and n_heads (kIncompatibleCircuits).
HeadEffectTable head_effect_table(const std::vector<std::pair<std::string, Circuit>>& circuits,
                                  double floor = kDisplayFloor);

/// Fixed-width text, cells in units of 1e-2, "--" for blanks, "*" suffix.
std::string format_head_effect_table(const HeadEffectTable& table);
std::string head_effect_table_csv(const HeadEffectTable& table);

struct QkFill {
  std::string first;   // word for the first "_"
  std::string second;  // word for the second "_"
  std::vector<std::string> first_corruptions;
  std::vector<std::string> second_corruptions;
};

struct QkCell {
  double dot = 0.0;
  /// Diagonal only: (mean corrupted-query . key, mean query . corrupted-key).
  std::optional<std::pair<double, double>> corrupted;
};

struct QkMatrix {
  std::vector<std::string> query_tokens;  // rows
  std::vector<std::string> key_tokens;    // columns
  std::vector<std::vector<QkCell>> cells;
};

/// Raw (unscaled, post-rotary) query . key of one head. Row r takes the
/// query at the `query_slot` word of fill r; column c the key at the other
/// slot of fill c. The template holds exactly two "_" placeholders.
QkMatrix qk_dot_products(const Weights& weights, const Vocabulary& vocab,
                         const std::string& templ, const std::vector<QkFill>& fills, int layer,
                         int head, int query_slot = 1);

std::string format_qk_matrix(const QkMatrix& m);
std::string qk_matrix_csv(const QkMatrix& m);

/// Heads with a retained Q edge sitting after the corrupted position.
/// Throws kNotSingleCorruption for merged circuits.
std::vector<NodeId> detect_augmented_reception(const Circuit& circuit, int corrupted_position);

/// Retained edges with d < 0, ascending by d.
std::vector<std::pair<EdgeId, double>> antagonistic_components(const Circuit& circuit);

}  // namespace patchwork
