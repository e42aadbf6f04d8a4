// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchwork/patching.hpp"

#include <vector>

#include <fmt/format.h>

#include "patchwork/error.hpp"

namespace patchwork {
namespace {

class EdgePatcher final : public AttentionIntervention {
 public:
  EdgePatcher(const PatchSet& patches, const ActivationCache& source)
      : patches_(patches), graph_(patches.graph()), source_(source) {
    // Edge indices are laid out layer-major, so each layer owns one
    // contiguous range.
    const std::size_t n_layers = graph_.max_layer() + 1;
    const std::size_t per_layer = graph_.num_edges() / n_layers;
    layer_touched_.assign(n_layers, false);
    for (std::size_t l = 0; l < n_layers; ++l) {
      for (std::size_t i = l * per_layer; i < (l + 1) * per_layer; ++i) {
        if (patches_.contains_index(i)) {
          layer_touched_[l] = true;
          break;
        }
      }
    }
  }

  const ActivationCache& source() const override { return source_; }

  bool query(int layer, int head, int dst) const override {
    return patches_.contains_index(graph_.query_index(layer, head, dst));
  }
  bool key(int layer, int head, int src, int dst) const override {
    return patches_.contains_index(graph_.key_index(layer, head, src, dst));
  }
  bool value(int layer, int head, int src, int dst) const override {
    return patches_.contains_index(graph_.value_index(layer, head, src, dst));
  }
  bool head_out(int layer, int head, int dst) const override {
    return patches_.contains_index(graph_.head_out_index(layer, head, dst));
  }
  bool touches_layer(int layer) const override {
    return layer < static_cast<int>(layer_touched_.size()) && layer_touched_[layer];
  }

 private:
  const PatchSet& patches_;
  const CircuitGraph& graph_;
  const ActivationCache& source_;
  std::vector<bool> layer_touched_;
};

}  // namespace

ActivationCache forward_with_patches(const Weights& weights, const TokenSequence& clean,
                                     const ActivationCache& corrupt_cache,
                                     const PatchSet& patches) {
  const auto& graph = patches.graph();
  if (!(graph.config() == weights.config)) {
    throw Error(ErrorCode::kInvalidArgument, "patch graph was built for a different model");
  }
  if (clean.size() != graph.n_tokens() || corrupt_cache.n_tokens != graph.n_tokens()) {
    throw Error(ErrorCode::kLengthMismatch,
                fmt::format("clean run has {} tokens, corrupted run {}, graph {}", clean.size(),
                            corrupt_cache.n_tokens, graph.n_tokens()));
  }
  if (corrupt_cache.computed_layers() <= graph.max_layer()) {
    throw Error(ErrorCode::kLengthMismatch,
                fmt::format("corrupted cache covers {} layers, need {}",
                            corrupt_cache.computed_layers(), graph.max_layer() + 1));
  }
  EdgePatcher patcher(patches, corrupt_cache);
  return run_forward(weights, clean, graph.max_layer(), &patcher);
}

}  // namespace patchwork
