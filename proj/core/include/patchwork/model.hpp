// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal pre-norm decoder-only transformer with full activation capture.
//
// Block structure, per layer:
//   resid -> norm -> attention (sum of per-head outputs) -> add
//         -> norm -> MLP -> add
//
// Residual indexing follows the activation cache: resid[0] is the embedding
// output and resid[l + 1] is the stream after block l's MLP.

#pragma once

#include <cstdint>
#include <vector>

#include "patchwork/tensor.hpp"
#include "patchwork/tokenizer.hpp"

namespace patchwork {

enum class NormKind { kRms, kLayer };
enum class PositionalKind { kLearned, kRotary, kNone };

inline constexpr float kNormEpsilon = 1e-6f;
inline constexpr float kRotaryBase = 10000.0f;

struct ModelConfig {
  int n_layers = 1;
  int n_heads = 1;
  int d_model = 1;
  int d_head = 1;
  int d_mlp = 1;
  int vocab_size = 1;
  int max_seq = 1;
  NormKind norm_kind = NormKind::kRms;
  PositionalKind positional_kind = PositionalKind::kNone;

  /// Throws ErrorCode::kConfig on non-positive dimensions, or an odd d_head
  /// with rotary positions.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct AttentionWeights {
  // One entry per head.
  std::vector<Matrix> W_Q;  // d_model x d_head
  std::vector<Matrix> W_K;  // d_model x d_head
  std::vector<Matrix> W_V;  // d_model x d_head
  std::vector<Matrix> W_O;  // d_head x d_model
};

struct MlpWeights {
  Matrix W_in;  // d_model x d_mlp
  std::vector<float> b_in;
  Matrix W_out;  // d_mlp x d_model
  std::vector<float> b_out;
};

struct BlockWeights {
  std::vector<float> ln1;
  AttentionWeights attn;
  std::vector<float> ln2;
  MlpWeights mlp;
};

struct Weights {
  ModelConfig config;
  Matrix token_embedding;  // vocab_size x d_model
  Matrix positional;       // max_seq x d_model, only for learned positions
  std::vector<BlockWeights> blocks;
  std::vector<float> ln_final;
  Matrix unembedding;  // d_model x vocab_size

  /// Zero-initialised weights with unit norm scales, shaped for `config`.
  static Weights zeros(const ModelConfig& config);

  /// Throws ErrorCode::kShapeMismatch or kNonFinite.
  void validate() const;
};

struct LayerActivations {
  Tensor3 q;        // n_heads x T x d_head (post-rotary)
  Tensor3 k;        // n_heads x T x d_head (post-rotary)
  Tensor3 v;        // n_heads x T x d_head
  Tensor3 pattern;  // n_heads x T x T
  Tensor3 z;        // n_heads x T x d_model, per-head contribution after W_O
  Matrix mlp_out;   // T x d_model

  bool operator==(const LayerActivations&) const = default;
};

struct ActivationCache {
  int n_tokens = 0;
  std::vector<Matrix> resid;  // (computed layers + 1) x T x d_model
  std::vector<LayerActivations> layers;
  Matrix logits;  // T x vocab_size; empty for truncated runs

  int computed_layers() const noexcept { return static_cast<int>(layers.size()); }
  std::span<const float> final_resid(int index) const { return resid.at(index).row(n_tokens - 1); }

  bool operator==(const ActivationCache&) const = default;
};

/// Substitution points consulted while computing attention. Each predicate
/// returning true means "take this input from source() instead of the running
/// stream". Layers are block indices; positions are token indices.
class AttentionIntervention {
 public:
  virtual ~AttentionIntervention() = default;

  virtual const ActivationCache& source() const = 0;
  /// Query used for scores against strictly earlier tokens of `dst`.
  virtual bool query(int layer, int head, int dst) const = 0;
  /// Key of `src` as seen by `dst` (src < dst).
  virtual bool key(int layer, int head, int src, int dst) const = 0;
  /// Value of `src` as seen by `dst` (src < dst).
  virtual bool value(int layer, int head, int src, int dst) const = 0;
  virtual bool head_out(int layer, int head, int dst) const = 0;
  /// Fast path: false when no predicate can fire inside this layer.
  virtual bool touches_layer(int layer) const = 0;
};

/// Runs blocks 0..last_layer. Logits are produced only when the final block
/// was computed. `intervention` may be null.
ActivationCache run_forward(const Weights& weights, const TokenSequence& tokens, int last_layer,
                            const AttentionIntervention* intervention);

/// Full forward pass. Throws ErrorCode::kSequenceTooLong / kInvalidArgument.
ActivationCache forward(const Weights& weights, const TokenSequence& tokens);

/// Cosine of two token-embedding rows. Throws kDegenerateVector on zero rows.
double embedding_cosine(TokenId a, TokenId b, const Weights& weights);

/// Cosine between the final-token residuals resid[index] of two caches.
double layer_cosine(const ActivationCache& a, const ActivationCache& b, int resid_index);

/// Plain cosine with double accumulation. Throws kDegenerateVector on zero norm.
double cosine(std::span<const float> a, std::span<const float> b);

// Kernels shared by the forward pass and the patching engine.
void apply_norm(NormKind kind, std::span<const float> x, std::span<const float> scale,
                std::span<float> out);
void apply_rotary(std::span<float> vec, int position);
float gelu(float x);

}  // namespace patchwork
