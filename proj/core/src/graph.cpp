// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchwork/graph.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "patchwork/error.hpp"

namespace patchwork {

EdgeId EdgeId::query(int layer, int head, int token) {
  return {NodeId::resid(layer - 1, token), NodeId::attn(layer, head, token), EdgeType::kQ};
}

EdgeId EdgeId::key(int layer, int head, int src_token, int dst_token) {
  return {NodeId::resid(layer - 1, src_token), NodeId::attn(layer, head, dst_token), EdgeType::kK};
}

EdgeId EdgeId::value(int layer, int head, int src_token, int dst_token) {
  return {NodeId::resid(layer - 1, src_token), NodeId::attn(layer, head, dst_token), EdgeType::kV};
}

EdgeId EdgeId::head_out(int layer, int head, int token) {
  return {NodeId::attn(layer, head, token), NodeId::resid(layer, token), EdgeType::kHeadOut};
}

std::string to_string(const NodeId& node) {
  if (node.is_head()) return fmt::format("head({},{})@{}", node.layer, node.head, node.token);
  if (node.layer < 0) return fmt::format("embed@{}", node.token);
  return fmt::format("resid({})@{}", node.layer, node.token);
}

std::string to_string(EdgeType type) {
  switch (type) {
    case EdgeType::kQ: return "Q";
    case EdgeType::kK: return "K";
    case EdgeType::kV: return "V";
    case EdgeType::kHeadOut: return "HeadOut";
  }
  return "?";
}

EdgeType parse_edge_type(const std::string& text) {
  if (text == "Q") return EdgeType::kQ;
  if (text == "K") return EdgeType::kK;
  if (text == "V") return EdgeType::kV;
  if (text == "HeadOut") return EdgeType::kHeadOut;
  throw Error(ErrorCode::kConfig, fmt::format("unknown edge type \"{}\"", text));
}

std::string to_string(const EdgeId& edge) {
  return fmt::format("{} -{}-> {}", to_string(edge.src), to_string(edge.etype),
                     to_string(edge.dst));
}

CircuitGraph::CircuitGraph(const ModelConfig& config, int n_tokens, int max_layer)
    : config_(config), n_tokens_(n_tokens), max_layer_(max_layer) {
  config_.validate();
  if (n_tokens < 1 || n_tokens > config.max_seq) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("sequence length {} outside [1, {}]", n_tokens, config.max_seq));
  }
  if (max_layer < 0 || max_layer >= config.n_layers) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("max_layer {} outside [0, {}]", max_layer, config.n_layers - 1));
  }
  const auto T = static_cast<std::size_t>(n_tokens);
  pairs_ = T * (T - 1) / 2;
  per_head_ = 2 * T + 2 * pairs_;
  num_edges_ = per_head_ * static_cast<std::size_t>(config.n_heads) * (max_layer + 1);
}

std::size_t CircuitGraph::block_base(int layer, int head) const {
  return (static_cast<std::size_t>(layer) * config_.n_heads + head) * per_head_;
}

std::size_t CircuitGraph::pair_offset(int src, int dst) const {
  return static_cast<std::size_t>(dst) * (dst - 1) / 2 + src;
}

std::size_t CircuitGraph::query_index(int layer, int head, int token) const {
  return block_base(layer, head) + token;
}

std::size_t CircuitGraph::head_out_index(int layer, int head, int token) const {
  return block_base(layer, head) + n_tokens_ + token;
}

std::size_t CircuitGraph::key_index(int layer, int head, int src, int dst) const {
  return block_base(layer, head) + 2 * static_cast<std::size_t>(n_tokens_) + pair_offset(src, dst);
}

std::size_t CircuitGraph::value_index(int layer, int head, int src, int dst) const {
  return block_base(layer, head) + 2 * static_cast<std::size_t>(n_tokens_) + pairs_ +
         pair_offset(src, dst);
}

EdgeId CircuitGraph::edge(std::size_t index) const {
  if (index >= num_edges_) {
    throw Error(ErrorCode::kEdgeOutsideUniverse, fmt::format("edge index {} out of range", index));
  }
  const auto block = index / per_head_;
  auto offset = index % per_head_;
  const int layer = static_cast<int>(block / config_.n_heads);
  const int head = static_cast<int>(block % config_.n_heads);
  const auto T = static_cast<std::size_t>(n_tokens_);
  if (offset < T) return EdgeId::query(layer, head, static_cast<int>(offset));
  offset -= T;
  if (offset < T) return EdgeId::head_out(layer, head, static_cast<int>(offset));
  offset -= T;
  const bool is_value = offset >= pairs_;
  if (is_value) offset -= pairs_;
  int dst = 1;
  while (static_cast<std::size_t>(dst + 1) * dst / 2 <= offset) ++dst;
  const int src = static_cast<int>(offset - pair_offset(0, dst));
  return is_value ? EdgeId::value(layer, head, src, dst) : EdgeId::key(layer, head, src, dst);
}

std::vector<EdgeId> CircuitGraph::edges() const {
  std::vector<EdgeId> out;
  out.reserve(num_edges_);
  for (std::size_t i = 0; i < num_edges_; ++i) out.push_back(edge(i));
  return out;
}

bool CircuitGraph::contains(const NodeId& node) const {
  if (node.token < 0 || node.token >= n_tokens_) return false;
  if (node.is_head()) {
    return node.layer >= 0 && node.layer <= max_layer_ && node.head >= 0 &&
           node.head < config_.n_heads;
  }
  return node.head == 0 && node.layer >= -1 && node.layer <= max_layer_;
}

std::optional<std::size_t> CircuitGraph::find(const EdgeId& e) const {
  if (!contains(e.src) || !contains(e.dst)) return std::nullopt;
  switch (e.etype) {
    case EdgeType::kQ:
      if (e.src.is_head() || !e.dst.is_head() || e.src.layer != e.dst.layer - 1 ||
          e.src.token != e.dst.token) {
        return std::nullopt;
      }
      return query_index(e.dst.layer, e.dst.head, e.dst.token);
    case EdgeType::kK:
    case EdgeType::kV:
      if (e.src.is_head() || !e.dst.is_head() || e.src.layer != e.dst.layer - 1 ||
          e.src.token >= e.dst.token) {
        return std::nullopt;
      }
      return e.etype == EdgeType::kK ? key_index(e.dst.layer, e.dst.head, e.src.token, e.dst.token)
                                     : value_index(e.dst.layer, e.dst.head, e.src.token, e.dst.token);
    case EdgeType::kHeadOut:
      if (!e.src.is_head() || e.dst.is_head() || e.src.layer != e.dst.layer ||
          e.src.token != e.dst.token) {
        return std::nullopt;
      }
      return head_out_index(e.src.layer, e.src.head, e.src.token);
  }
  return std::nullopt;
}

std::size_t CircuitGraph::index_of(const EdgeId& edge) const {
  if (auto index = find(edge)) return *index;
  throw Error(ErrorCode::kEdgeOutsideUniverse,
              fmt::format("edge {} is not in the graph universe", to_string(edge)));
}

std::vector<NodeId> CircuitGraph::nodes() const {
  std::vector<NodeId> out;
  for (int l = -1; l <= max_layer_; ++l) {
    for (int t = 0; t < n_tokens_; ++t) {
      out.push_back(NodeId::resid(l, t));
      if (l < 0) continue;
      for (int h = 0; h < config_.n_heads; ++h) out.push_back(NodeId::attn(l, h, t));
    }
  }
  return out;
}

std::vector<EdgeId> CircuitGraph::incoming(const NodeId& node) const {
  if (!contains(node)) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("node {} is not in the graph", to_string(node)));
  }
  std::vector<EdgeId> out;
  if (!node.is_head()) {
    if (node.layer < 0) return out;
    for (int h = 0; h < config_.n_heads; ++h) out.push_back(EdgeId::head_out(node.layer, h, node.token));
    return out;
  }
  out.push_back(EdgeId::query(node.layer, node.head, node.token));
  for (int s = 0; s < node.token; ++s) out.push_back(EdgeId::key(node.layer, node.head, s, node.token));
  for (int s = 0; s < node.token; ++s) {
    out.push_back(EdgeId::value(node.layer, node.head, s, node.token));
  }
  return out;
}

CircuitGraph build_graph(const ModelConfig& config, int n_tokens, int max_layer) {
  return CircuitGraph(config, n_tokens, max_layer);
}

std::vector<NodeId> reverse_topological_order(const CircuitGraph& graph) {
  auto nodes = graph.nodes();
  std::sort(nodes.begin(), nodes.end(), [](const NodeId& a, const NodeId& b) {
    if (a.layer != b.layer) return a.layer > b.layer;
    if (a.token != b.token) return a.token > b.token;
    if (a.kind != b.kind) return a.kind == NodeKind::kResid;
    return a.head < b.head;
  });
  return nodes;
}

PatchSet::PatchSet(const CircuitGraph& graph) : graph_(&graph), bits_(graph.num_edges(), 0) {}

void PatchSet::insert(const EdgeId& edge) { insert_index(graph_->index_of(edge)); }

void PatchSet::erase(const EdgeId& edge) {
  if (auto index = graph_->find(edge)) erase_index(*index);
}

bool PatchSet::contains(const EdgeId& edge) const {
  auto index = graph_->find(edge);
  return index && bits_[*index] != 0;
}

void PatchSet::insert_index(std::size_t index) {
  if (index >= bits_.size()) {
    throw Error(ErrorCode::kEdgeOutsideUniverse, fmt::format("edge index {} out of range", index));
  }
  if (!bits_[index]) {
    bits_[index] = 1;
    ++count_;
  }
}

void PatchSet::erase_index(std::size_t index) {
  if (index < bits_.size() && bits_[index]) {
    bits_[index] = 0;
    --count_;
  }
}

std::vector<EdgeId> PatchSet::edges() const {
  std::vector<EdgeId> out;
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (bits_[i]) out.push_back(graph_->edge(i));
  }
  return out;
}

PatchSet PatchSet::full(const CircuitGraph& graph) {
  PatchSet set(graph);
  std::fill(set.bits_.begin(), set.bits_.end(), 1);
  set.count_ = set.bits_.size();
  return set;
}

}  // namespace patchwork
