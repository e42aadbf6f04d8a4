// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0
//
// Greedy edge-removal circuit discovery over the path-patching graph.
//
// The metric is the cosine between the final-token residual after block L of
// the (partially patched) idiom run and that of the meaning run. An edge's
// effect is
//     d = metric(H) - metric(H without the edge),
// evaluated against the current circuit H. Edges with |d| <= tau are removed
// for good; the rest are kept with their signed d, so suppressor edges
// (d < -tau) survive alongside ordinary ones.

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "patchwork/circuit.hpp"
#include "patchwork/experiment.hpp"
#include "patchwork/graph.hpp"
#include "patchwork/model.hpp"

namespace patchwork {

/// Everything needed to evaluate patched runs for one (experiment, corruption)
/// pair. The corrupted and meaning caches are computed once and reused.
struct DiscoveryProblem {
  const Weights* weights = nullptr;
  std::string idiom_text;
  std::string meaning_text;
  TokenSequence clean;
  TokenSequence corrupt;
  TokenSequence meaning;
  CorruptionRecord corruption;
  int layer = 0;
  CircuitGraph graph;
  ActivationCache corrupt_cache;
  ActivationCache meaning_cache;
};

/// The experiment's layer, or the plateau layer from its similarity curves.
int resolve_layer(const ExperimentSpec& spec, const Weights& weights, const Vocabulary& vocab);

DiscoveryProblem prepare_problem(const Weights& weights, const Vocabulary& vocab,
                                 const ExperimentSpec& spec, std::size_t corruption_index,
                                 std::optional<int> layer_override = std::nullopt);

/// Cosine between final-token residuals after block `layer`.
double metric(const ActivationCache& patched, const ActivationCache& meaning, int layer);

/// Metric of the idiom run with `patches` taken from the corrupted run.
double evaluate_patches(const DiscoveryProblem& problem, const PatchSet& patches);

/// Metric with every edge outside `circuit` patched.
double evaluate_circuit(const DiscoveryProblem& problem, const Circuit& circuit);

struct EdgeEvaluation {
  EdgeId edge;
  double d = 0.0;
  bool retained = false;
};

struct DiscoveryTrace {
  double initial_metric = 0.0;
  std::vector<EdgeEvaluation> evaluations;  // in visiting order
};

/// Visits nodes in reverse topological order and each node's incoming edges
/// in CircuitGraph::incoming() order.
Circuit discover_circuit(const DiscoveryProblem& problem, double tau,
                         DiscoveryTrace* trace = nullptr);
Circuit discover_circuit(const Weights& weights, const Vocabulary& vocab,
                         const ExperimentSpec& spec, std::size_t corruption_index, double tau);

struct SweepPoint {
  double tau = 0.0;
  std::size_t edge_count = 0;
  double cosine = 0.0;

  bool operator==(const SweepPoint&) const = default;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  std::vector<Circuit> circuits;  // parallel to points; empty when parsed from text
};

/// One independent discovery per tau. `grid` must be strictly ascending and
/// positive. Points run concurrently on up to `threads` workers (0 = auto).
SweepResult threshold_sweep(const DiscoveryProblem& problem, const std::vector<double>& grid,
                            unsigned threads = 0);

/// "tau,edge_count,cosine" with a header row.
std::string sweep_to_csv(const SweepResult& sweep);
SweepResult parse_sweep_csv(const std::string& text);

/// Parses "start:stop:step" (inclusive stop) or a comma-separated list.
std::vector<double> parse_tau_grid(const std::string& text);

inline constexpr double kJumpRatio = 1.5;
inline constexpr double kTailResidual = 0.2;
inline constexpr double kTypicalTauLow = 0.004;
inline constexpr double kTypicalTauHigh = 0.008;

struct ThresholdSuggestion {
  double tau = 0.0;
  std::vector<std::string> flags;
  /// Index of the last grid point of the low-tau exponential tail.
  std::optional<std::size_t> tail_end;
  /// Index i of the lowest jump, between grid points i and i + 1.
  std::optional<std::size_t> jump;
};

/// Heuristic threshold choice from a sweep:
///  - the low-tau exponential tail is the longest prefix (>= 3 points) whose
///    log edge counts fit a line in tau with max residual < 0.2;
///  - a jump is an adjacent count ratio >= 1.5 at or after the tail end;
///  - tau* is the midpoint between the tail end and the grid point just
///    below the lowest jump; with no jump, the grid median.
/// Flags always include a request for manual confirmation.
ThresholdSuggestion suggest_threshold(const std::vector<SweepPoint>& points);

/// Union of edges; each weight is the input d with the largest |d| (sign
/// kept, positive on exact ties). Throws kIncompatibleCircuits.
Circuit merge_circuits(const std::vector<Circuit>& circuits);

/// Repeatedly drops heads whose incoming edges are empty or only Q, along
/// with all their edges. Residual nodes are never touched.
Circuit prune_circuit(const Circuit& circuit);

}  // namespace patchwork
