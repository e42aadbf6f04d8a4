// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchwork/discovery.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>
#include <thread>
#include <tuple>

#include <fmt/format.h>

#include "patchwork/error.hpp"
#include "patchwork/patching.hpp"

namespace patchwork {

int resolve_layer(const ExperimentSpec& spec, const Weights& weights, const Vocabulary& vocab) {
  if (spec.layer) return *spec.layer;
  return select_layer(layerwise_similarity(spec, weights, vocab), spec.epsilon);
}

DiscoveryProblem prepare_problem(const Weights& weights, const Vocabulary& vocab,
                                 const ExperimentSpec& spec, std::size_t corruption_index,
                                 std::optional<int> layer_override) {
  if (corruption_index >= spec.corruptions.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("experiment has no corruption #{}", corruption_index));
  }
  check_experiment(spec, vocab, weights.config);
  const auto& entry = spec.corruptions[corruption_index];
  const int layer = layer_override ? *layer_override : resolve_layer(spec, weights, vocab);

  auto clean = tokenize(spec.idiom, vocab);
  auto corrupt = tokenize(entry.text, vocab);
  auto meaning = tokenize(spec.meaning, vocab);
  CircuitGraph graph(weights.config, clean.size(), layer);
  auto corrupt_cache = run_forward(weights, corrupt, layer, nullptr);
  auto meaning_cache = run_forward(weights, meaning, layer, nullptr);
  return DiscoveryProblem{
      .weights = &weights,
      .idiom_text = spec.idiom,
      .meaning_text = spec.meaning,
      .clean = std::move(clean),
      .corrupt = std::move(corrupt),
      .meaning = std::move(meaning),
      .corruption = {entry.text, entry.position, entry.tau, std::nullopt, std::nullopt},
      .layer = layer,
      .graph = std::move(graph),
      .corrupt_cache = std::move(corrupt_cache),
      .meaning_cache = std::move(meaning_cache),
  };
}

double metric(const ActivationCache& patched, const ActivationCache& meaning, int layer) {
  return layer_cosine(patched, meaning, layer + 1);
}

double evaluate_patches(const DiscoveryProblem& problem, const PatchSet& patches) {
  const auto cache =
      forward_with_patches(*problem.weights, problem.clean, problem.corrupt_cache, patches);
  return metric(cache, problem.meaning_cache, problem.layer);
}

namespace {

PatchSet complement(const CircuitGraph& graph, const Circuit& circuit) {
  auto patches = PatchSet::full(graph);
  for (const auto& [edge, weight] : circuit.edges) patches.erase_index(graph.index_of(edge));
  return patches;
}

Circuit empty_circuit(const DiscoveryProblem& problem) {
  Circuit c;
  c.n_layers = problem.weights->config.n_layers;
  c.n_heads = problem.weights->config.n_heads;
  c.n_tokens = problem.clean.size();
  c.layer = problem.layer;
  c.idiom = problem.idiom_text;
  c.meaning = problem.meaning_text;
  c.tokens = problem.clean.text_spans;
  c.corruptions = {problem.corruption};
  return c;
}

}  // namespace

double evaluate_circuit(const DiscoveryProblem& problem, const Circuit& circuit) {
  if (circuit.n_tokens != problem.graph.n_tokens() || circuit.layer != problem.layer) {
    throw Error(ErrorCode::kIncompatibleCircuits,
                "circuit was discovered for a different sequence length or layer");
  }
  return evaluate_patches(problem, complement(problem.graph, circuit));
}

Circuit discover_circuit(const DiscoveryProblem& problem, double tau, DiscoveryTrace* trace) {
  const auto& graph = problem.graph;
  PatchSet removed(graph);
  double current = evaluate_patches(problem, removed);
  if (trace) {
    trace->initial_metric = current;
    trace->evaluations.clear();
  }

  Circuit circuit = empty_circuit(problem);
  for (const auto& node : reverse_topological_order(graph)) {
    // Once a head's output is taken from the corrupted run, nothing feeding
    // that head can reach the metric: its incoming edges have d = 0 exactly.
    const bool dead_head =
        node.is_head() &&
        removed.contains_index(graph.head_out_index(node.layer, node.head, node.token));
    for (const auto& edge : graph.incoming(node)) {
      const auto index = graph.index_of(edge);
      double d = 0.0;
      double candidate = current;
      if (!dead_head) {
        removed.insert_index(index);
        candidate = evaluate_patches(problem, removed);
        d = current - candidate;
      }
      const bool keep = std::abs(d) > tau;
      if (keep) {
        removed.erase_index(index);
        circuit.edges[edge] = d;
      } else {
        removed.insert_index(index);
        current = candidate;
      }
      if (trace) trace->evaluations.push_back({edge, d, keep});
    }
  }
  circuit.corruptions.front().cos_circuit = current;
  return circuit;
}

Circuit discover_circuit(const Weights& weights, const Vocabulary& vocab,
                         const ExperimentSpec& spec, std::size_t corruption_index, double tau) {
  const auto problem = prepare_problem(weights, vocab, spec, corruption_index);
  return discover_circuit(problem, tau);
}

SweepResult threshold_sweep(const DiscoveryProblem& problem, const std::vector<double>& grid,
                            unsigned threads) {
  if (grid.empty()) throw Error(ErrorCode::kInvalidArgument, "empty tau grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0)) throw Error(ErrorCode::kInvalidArgument, "tau values must be positive");
    if (i > 0 && !(grid[i] > grid[i - 1])) {
      throw Error(ErrorCode::kInvalidArgument, "tau grid must be strictly ascending");
    }
  }

  SweepResult result;
  result.points.resize(grid.size());
  result.circuits.resize(grid.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (auto i = next++; i < grid.size(); i = next++) {
      auto circuit = discover_circuit(problem, grid[i]);
      result.points[i] = {grid[i], circuit.edges.size(), *circuit.corruptions.front().cos_circuit};
      result.circuits[i] = std::move(circuit);
    }
  };

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(grid.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  return result;
}

Circuit merge_circuits(const std::vector<Circuit>& circuits) {
  if (circuits.empty()) throw Error(ErrorCode::kInvalidArgument, "nothing to merge");
  const Circuit& first = circuits.front();
  Circuit merged = first;
  merged.edges.clear();
  merged.corruptions.clear();
  merged.pruned = false;

  auto record_key = [](const CorruptionRecord& r) {
    return std::tie(r.text, r.position, r.tau, r.cos_circuit, r.cos_pruned);
  };
  std::vector<CorruptionRecord> records;
  for (const auto& c : circuits) {
    if (!c.compatible_with(first) || c.meaning != first.meaning || c.tokens != first.tokens) {
      throw Error(ErrorCode::kIncompatibleCircuits,
                  "circuits differ in model shape, sequence, layer or strings");
    }
    merged.pruned = merged.pruned || c.pruned;
    records.insert(records.end(), c.corruptions.begin(), c.corruptions.end());
    for (const auto& [edge, d] : c.edges) {
      auto [it, inserted] = merged.edges.emplace(edge, d);
      if (inserted) continue;
      const double a = std::abs(d);
      const double b = std::abs(it->second);
      if (a > b || (a == b && d > it->second)) it->second = d;
    }
  }
  std::sort(records.begin(), records.end(), [&](const auto& x, const auto& y) {
    return record_key(x) < record_key(y);
  });
  records.erase(std::unique(records.begin(), records.end()), records.end());
  merged.corruptions = std::move(records);
  return merged;
}

Circuit prune_circuit(const Circuit& circuit) {
  Circuit out = circuit;
  out.pruned = true;
  bool changed = true;
  while (changed) {
    changed = false;
    std::set<NodeId> heads;
    for (const auto& [edge, d] : out.edges) {
      if (edge.src.is_head()) heads.insert(edge.src);
      if (edge.dst.is_head()) heads.insert(edge.dst);
    }
    for (const auto& head : heads) {
      bool informative = false;
      for (const auto& [edge, d] : out.edges) {
        if (edge.dst == head && edge.etype != EdgeType::kQ) {
          informative = true;
          break;
        }
      }
      if (informative) continue;
      std::erase_if(out.edges, [&](const auto& entry) {
        return entry.first.src == head || entry.first.dst == head;
      });
      changed = true;
    }
  }
  return out;
}

}  // namespace patchwork
