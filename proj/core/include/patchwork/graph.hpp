// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0
//
// Computational graph at per-token, per-head granularity.
//
// Nodes are attention heads Head(l, h, t) and post-MLP residual streams
// Resid(l, t); Resid(-1, t) is the embedding output. Edges:
//   Q        Resid(l-1, t) -> Head(l, h, t)
//   K, V     Resid(l-1, s) -> Head(l, h, t)   for s < t only
//   HeadOut  Head(l, h, t) -> Resid(l, t)
// Residual-to-residual carries exist in the model but are not edges here;
// they are never patched.

#pragma once

#include <compare>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "patchwork/model.hpp"

namespace patchwork {

enum class NodeKind { kResid, kHead };
enum class EdgeType { kQ, kK, kV, kHeadOut };

struct NodeId {
  NodeKind kind = NodeKind::kResid;
  int layer = 0;
  int head = 0;  // always 0 for residual nodes
  int token = 0;

  static NodeId resid(int layer, int token) { return {NodeKind::kResid, layer, 0, token}; }
  static NodeId attn(int layer, int head, int token) { return {NodeKind::kHead, layer, head, token}; }

  bool is_head() const noexcept { return kind == NodeKind::kHead; }
  auto operator<=>(const NodeId&) const = default;
};

struct EdgeId {
  NodeId src;
  NodeId dst;
  EdgeType etype = EdgeType::kQ;

  static EdgeId query(int layer, int head, int token);
  static EdgeId key(int layer, int head, int src_token, int dst_token);
  static EdgeId value(int layer, int head, int src_token, int dst_token);
  static EdgeId head_out(int layer, int head, int token);

  /// True for K and V edges, which connect different tokens.
  bool cross_token() const noexcept { return etype == EdgeType::kK || etype == EdgeType::kV; }
  auto operator<=>(const EdgeId&) const = default;
};

std::string to_string(const NodeId& node);
std::string to_string(const EdgeId& edge);
std::string to_string(EdgeType type);
EdgeType parse_edge_type(const std::string& text);

/// The edge universe for one sequence length, truncated after `max_layer`.
/// Edges are addressed by a dense index; index order is the enumeration order.
class CircuitGraph {
 public:
  CircuitGraph(const ModelConfig& config, int n_tokens, int max_layer);

  const ModelConfig& config() const noexcept { return config_; }
  int n_tokens() const noexcept { return n_tokens_; }
  int max_layer() const noexcept { return max_layer_; }

  std::size_t num_edges() const noexcept { return num_edges_; }
  EdgeId edge(std::size_t index) const;
  std::vector<EdgeId> edges() const;
  std::optional<std::size_t> find(const EdgeId& edge) const;
  /// Like find() but throws ErrorCode::kEdgeOutsideUniverse.
  std::size_t index_of(const EdgeId& edge) const;

  // Dense indices of the four edge kinds, for hot loops.
  std::size_t query_index(int layer, int head, int token) const;
  std::size_t head_out_index(int layer, int head, int token) const;
  std::size_t key_index(int layer, int head, int src, int dst) const;
  std::size_t value_index(int layer, int head, int src, int dst) const;

  std::vector<NodeId> nodes() const;
  bool contains(const NodeId& node) const;
  /// Incoming edges in evaluation order: HeadOut, then Q, then K, then V;
  /// within a type by ascending source token, source layer, head.
  std::vector<EdgeId> incoming(const NodeId& node) const;

 private:
  std::size_t block_base(int layer, int head) const;
  std::size_t pair_offset(int src, int dst) const;

  ModelConfig config_;
  int n_tokens_;
  int max_layer_;
  std::size_t pairs_;     // T(T-1)/2
  std::size_t per_head_;  // 2T + 2 pairs
  std::size_t num_edges_;
};

CircuitGraph build_graph(const ModelConfig& config, int n_tokens, int max_layer);

/// Output-to-input order: layer descending, token descending, residual
/// before head, head ascending. Every edge's dst precedes its src.
std::vector<NodeId> reverse_topological_order(const CircuitGraph& graph);

/// Set of edges to take from the corrupted run, bound to one graph.
class PatchSet {
 public:
  explicit PatchSet(const CircuitGraph& graph);

  const CircuitGraph& graph() const noexcept { return *graph_; }

  /// Throws ErrorCode::kEdgeOutsideUniverse.
  void insert(const EdgeId& edge);
  void erase(const EdgeId& edge);
  bool contains(const EdgeId& edge) const;

  void insert_index(std::size_t index);
  void erase_index(std::size_t index);
  bool contains_index(std::size_t index) const { return bits_[index] != 0; }

  std::size_t size() const noexcept { return count_; }
  bool empty() const noexcept { return count_ == 0; }
  std::vector<EdgeId> edges() const;

  /// Patches every edge of the universe.
  static PatchSet full(const CircuitGraph& graph);

 private:
  const CircuitGraph* graph_;
  std::vector<char> bits_;
  std::size_t count_ = 0;
};

}  // namespace patchwork
