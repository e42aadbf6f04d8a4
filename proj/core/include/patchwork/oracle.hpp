// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0
//
// Brute-force reference for single-edge effects. Runs its own double
// precision forward pass that resolves every patched input per destination
// token; it shares only the weight structs with the engine.

#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <vector>

#include "patchwork/experiment.hpp"
#include "patchwork/graph.hpp"
#include "patchwork/model.hpp"

namespace patchwork {

inline constexpr std::size_t kOracleEdgeLimit = 5000;

struct EdgeEffect {
  EdgeId edge;
  double d = 0.0;
};

struct EdgeEffectReport {
  int layer = 0;
  double base_metric = 0.0;          // nothing patched
  std::vector<EdgeEffect> effects;   // every edge of the truncated universe, index order

  double max_abs() const;
  /// Smallest nonzero |d|, if any.
  std::optional<double> min_positive_abs() const;
};

/// Metric of `clean` after blocks 0..layer with every edge in `patched`
/// taken from the `corrupt` run, against the final token of `meaning`.
double oracle_metric(const Weights& weights, const std::vector<TokenId>& clean,
                     const std::vector<TokenId>& corrupt, const std::vector<TokenId>& meaning,
                     int layer, const std::set<EdgeId>& patched);

/// d(e) = metric(nothing patched) - metric({e} patched) for every edge.
/// `layer` defaults to the experiment's resolved layer. Throws
/// kUniverseTooLarge beyond kOracleEdgeLimit edges.
EdgeEffectReport brute_force_edge_effects(const Weights& weights, const Vocabulary& vocab,
                                          const ExperimentSpec& spec, std::size_t corruption_index,
                                          std::optional<int> layer = std::nullopt);

}  // namespace patchwork
