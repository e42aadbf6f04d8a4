// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchwork/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <fmt/format.h>

#include "patchwork/error.hpp"

namespace patchwork {
namespace {

float dot(std::span<const float> a, std::span<const float> b) {
  float acc = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// out = x * W, with x of length W.rows().
void vec_mat(std::span<const float> x, const Matrix& W, std::span<float> out) {
  std::fill(out.begin(), out.end(), 0.0f);
  for (int i = 0; i < W.rows(); ++i) {
    const float xi = x[i];
    if (xi == 0.0f) continue;
    auto w = W.row(i);
    for (int j = 0; j < W.cols(); ++j) out[j] += xi * w[j];
  }
}

void require_shape(const Matrix& m, int rows, int cols, const std::string& name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("{} has shape [{}, {}], expected [{}, {}]", name, m.rows(), m.cols(),
                            rows, cols));
  }
}

void require_size(const std::vector<float>& v, int size, const std::string& name) {
  if (static_cast<int>(v.size()) != size) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("{} has length {}, expected {}", name, v.size(), size));
  }
}

void require_finite(std::span<const float> values, const std::string& name) {
  for (float x : values) {
    if (!std::isfinite(x)) {
      throw Error(ErrorCode::kNonFinite, fmt::format("{} contains a non-finite value", name));
    }
  }
}

void check_heads(const std::vector<Matrix>& per_head, int n_heads, int rows, int cols,
                 const std::string& name) {
  if (static_cast<int>(per_head.size()) != n_heads) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("{} has {} heads, expected {}", name, per_head.size(), n_heads));
  }
  for (int h = 0; h < n_heads; ++h) {
    const auto label = fmt::format("{}[{}]", name, h);
    require_shape(per_head[h], rows, cols, label);
    require_finite(per_head[h].data(), label);
  }
}

}  // namespace

void ModelConfig::validate() const {
  const auto positive = [](int value, const char* name) {
    if (value < 1) throw Error(ErrorCode::kConfig, fmt::format("{} must be >= 1", name));
  };
  positive(n_layers, "n_layers");
  positive(n_heads, "n_heads");
  positive(d_model, "d_model");
  positive(d_head, "d_head");
  positive(d_mlp, "d_mlp");
  positive(vocab_size, "vocab_size");
  positive(max_seq, "max_seq");
  if (positional_kind == PositionalKind::kRotary && d_head % 2 != 0) {
    throw Error(ErrorCode::kConfig, "rotary positions need an even d_head");
  }
}

Weights Weights::zeros(const ModelConfig& config) {
  config.validate();
  Weights w;
  w.config = config;
  w.token_embedding = Matrix(config.vocab_size, config.d_model);
  if (config.positional_kind == PositionalKind::kLearned) {
    w.positional = Matrix(config.max_seq, config.d_model);
  }
  w.blocks.resize(config.n_layers);
  for (auto& block : w.blocks) {
    block.ln1.assign(config.d_model, 1.0f);
    block.ln2.assign(config.d_model, 1.0f);
    for (int h = 0; h < config.n_heads; ++h) {
      block.attn.W_Q.emplace_back(config.d_model, config.d_head);
      block.attn.W_K.emplace_back(config.d_model, config.d_head);
      block.attn.W_V.emplace_back(config.d_model, config.d_head);
      block.attn.W_O.emplace_back(config.d_head, config.d_model);
    }
    block.mlp.W_in = Matrix(config.d_model, config.d_mlp);
    block.mlp.b_in.assign(config.d_mlp, 0.0f);
    block.mlp.W_out = Matrix(config.d_mlp, config.d_model);
    block.mlp.b_out.assign(config.d_model, 0.0f);
  }
  w.ln_final.assign(config.d_model, 1.0f);
  w.unembedding = Matrix(config.d_model, config.vocab_size);
  return w;
}

void Weights::validate() const {
  config.validate();
  const auto& c = config;
  require_shape(token_embedding, c.vocab_size, c.d_model, "embed.W_E");
  require_finite(token_embedding.data(), "embed.W_E");
  if (c.positional_kind == PositionalKind::kLearned) {
    require_shape(positional, c.max_seq, c.d_model, "embed.W_pos");
    require_finite(positional.data(), "embed.W_pos");
  }
  if (static_cast<int>(blocks.size()) != c.n_layers) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("{} blocks present, expected {}", blocks.size(), c.n_layers));
  }
  for (int l = 0; l < c.n_layers; ++l) {
    const auto& b = blocks[l];
    const auto prefix = fmt::format("blocks.{}", l);
    require_size(b.ln1, c.d_model, prefix + ".ln1.w");
    require_finite(b.ln1, prefix + ".ln1.w");
    require_size(b.ln2, c.d_model, prefix + ".ln2.w");
    require_finite(b.ln2, prefix + ".ln2.w");
    check_heads(b.attn.W_Q, c.n_heads, c.d_model, c.d_head, prefix + ".attn.W_Q");
    check_heads(b.attn.W_K, c.n_heads, c.d_model, c.d_head, prefix + ".attn.W_K");
    check_heads(b.attn.W_V, c.n_heads, c.d_model, c.d_head, prefix + ".attn.W_V");
    check_heads(b.attn.W_O, c.n_heads, c.d_head, c.d_model, prefix + ".attn.W_O");
    require_shape(b.mlp.W_in, c.d_model, c.d_mlp, prefix + ".mlp.W_in");
    require_finite(b.mlp.W_in.data(), prefix + ".mlp.W_in");
    require_size(b.mlp.b_in, c.d_mlp, prefix + ".mlp.b_in");
    require_finite(b.mlp.b_in, prefix + ".mlp.b_in");
    require_shape(b.mlp.W_out, c.d_mlp, c.d_model, prefix + ".mlp.W_out");
    require_finite(b.mlp.W_out.data(), prefix + ".mlp.W_out");
    require_size(b.mlp.b_out, c.d_model, prefix + ".mlp.b_out");
    require_finite(b.mlp.b_out, prefix + ".mlp.b_out");
  }
  require_size(ln_final, c.d_model, "ln_final.w");
  require_finite(ln_final, "ln_final.w");
  require_shape(unembedding, c.d_model, c.vocab_size, "unembed.W_U");
  require_finite(unembedding.data(), "unembed.W_U");
}

void apply_norm(NormKind kind, std::span<const float> x, std::span<const float> scale,
                std::span<float> out) {
  const float n = static_cast<float>(x.size());
  float mean = 0.0f;
  if (kind == NormKind::kLayer) {
    for (float xi : x) mean += xi;
    mean /= n;
  }
  float sq = 0.0f;
  for (float xi : x) sq += (xi - mean) * (xi - mean);
  const float inv = 1.0f / std::sqrt(sq / n + kNormEpsilon);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv * scale[i];
}

void apply_rotary(std::span<float> vec, int position) {
  const std::size_t half = vec.size() / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const float freq =
        std::pow(kRotaryBase, -2.0f * static_cast<float>(i) / static_cast<float>(vec.size()));
    const float angle = static_cast<float>(position) * freq;
    const float c = std::cos(angle);
    const float s = std::sin(angle);
    const float a = vec[i];
    const float b = vec[i + half];
    vec[i] = a * c - b * s;
    vec[i + half] = a * s + b * c;
  }
}

float gelu(float x) {
  constexpr float kSqrt2OverPi = 0.7978845608028654f;
  return 0.5f * x * (1.0f + std::tanh(kSqrt2OverPi * (x + 0.044715f * x * x * x)));
}

ActivationCache run_forward(const Weights& weights, const TokenSequence& tokens, int last_layer,
                            const AttentionIntervention* intervention) {
  const auto& cfg = weights.config;
  const int T = tokens.size();
  if (T < 1) throw Error(ErrorCode::kInvalidArgument, "empty token sequence");
  if (T > cfg.max_seq) {
    throw Error(ErrorCode::kSequenceTooLong,
                fmt::format("sequence of {} tokens exceeds max_seq {}", T, cfg.max_seq));
  }
  if (last_layer < 0 || last_layer >= cfg.n_layers) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("layer {} out of range", last_layer));
  }
  for (TokenId id : tokens.ids) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("token id {} out of range", id));
    }
  }

  const int D = cfg.d_model;
  const int H = cfg.n_heads;
  const int Dh = cfg.d_head;
  const float score_scale = 1.0f / std::sqrt(static_cast<float>(Dh));

  ActivationCache cache;
  cache.n_tokens = T;
  Matrix embed(T, D);
  for (int t = 0; t < T; ++t) {
    auto row = embed.row(t);
    auto src = weights.token_embedding.row(tokens.ids[t]);
    std::copy(src.begin(), src.end(), row.begin());
    if (cfg.positional_kind == PositionalKind::kLearned) {
      auto pos = weights.positional.row(t);
      for (int i = 0; i < D; ++i) row[i] += pos[i];
    }
  }
  cache.resid.push_back(std::move(embed));

  std::vector<float> scores(T);
  std::vector<float> head_vec(Dh);
  std::vector<float> hidden(cfg.d_mlp);
  Matrix normed(T, D);

  for (int l = 0; l <= last_layer; ++l) {
    const auto& block = weights.blocks[l];
    const Matrix& x = cache.resid[l];
    const bool patched = intervention != nullptr && intervention->touches_layer(l);
    const LayerActivations* src = patched ? &intervention->source().layers[l] : nullptr;

    LayerActivations act;
    act.q = Tensor3(H, T, Dh);
    act.k = Tensor3(H, T, Dh);
    act.v = Tensor3(H, T, Dh);
    act.pattern = Tensor3(H, T, T);
    act.z = Tensor3(H, T, D);
    act.mlp_out = Matrix(T, D);

    for (int t = 0; t < T; ++t) apply_norm(cfg.norm_kind, x.row(t), block.ln1, normed.row(t));
    for (int h = 0; h < H; ++h) {
      for (int t = 0; t < T; ++t) {
        vec_mat(normed.row(t), block.attn.W_Q[h], act.q.vec(h, t));
        vec_mat(normed.row(t), block.attn.W_K[h], act.k.vec(h, t));
        vec_mat(normed.row(t), block.attn.W_V[h], act.v.vec(h, t));
        if (cfg.positional_kind == PositionalKind::kRotary) {
          apply_rotary(act.q.vec(h, t), t);
          apply_rotary(act.k.vec(h, t), t);
        }
      }
    }

    for (int h = 0; h < H; ++h) {
      for (int t = 0; t < T; ++t) {
        const auto own_query = act.q.vec(h, t);
        const auto cross_query =
            (patched && intervention->query(l, h, t)) ? src->q.vec(h, t) : own_query;

        float max_score = -INFINITY;
        for (int s = 0; s <= t; ++s) {
          const auto query = s == t ? own_query : cross_query;
          const auto key = (s < t && patched && intervention->key(l, h, s, t)) ? src->k.vec(h, s)
                                                                               : act.k.vec(h, s);
          scores[s] = dot(query, key) * score_scale;
          max_score = std::max(max_score, scores[s]);
        }
        float total = 0.0f;
        for (int s = 0; s <= t; ++s) {
          scores[s] = std::exp(scores[s] - max_score);
          total += scores[s];
        }
        std::fill(head_vec.begin(), head_vec.end(), 0.0f);
        for (int s = 0; s <= t; ++s) {
          const float p = scores[s] / total;
          act.pattern(h, t, s) = p;
          const auto value = (s < t && patched && intervention->value(l, h, s, t))
                                 ? src->v.vec(h, s)
                                 : act.v.vec(h, s);
          for (int i = 0; i < Dh; ++i) head_vec[i] += p * value[i];
        }

        auto z = act.z.vec(h, t);
        if (patched && intervention->head_out(l, h, t)) {
          auto corrupt = src->z.vec(h, t);
          std::copy(corrupt.begin(), corrupt.end(), z.begin());
        } else {
          vec_mat(head_vec, block.attn.W_O[h], z);
        }
      }
    }

    Matrix next(T, D);
    for (int t = 0; t < T; ++t) {
      auto mid = next.row(t);
      auto xt = x.row(t);
      std::copy(xt.begin(), xt.end(), mid.begin());
      for (int h = 0; h < H; ++h) {
        auto z = act.z.vec(h, t);
        for (int i = 0; i < D; ++i) mid[i] += z[i];
      }
      apply_norm(cfg.norm_kind, mid, block.ln2, normed.row(t));
      vec_mat(normed.row(t), block.mlp.W_in, hidden);
      for (int j = 0; j < cfg.d_mlp; ++j) hidden[j] = gelu(hidden[j] + block.mlp.b_in[j]);
      auto out = act.mlp_out.row(t);
      vec_mat(hidden, block.mlp.W_out, out);
      for (int i = 0; i < D; ++i) {
        out[i] += block.mlp.b_out[i];
        mid[i] += out[i];
      }
    }
    cache.layers.push_back(std::move(act));
    cache.resid.push_back(std::move(next));
  }

  if (last_layer == cfg.n_layers - 1) {
    cache.logits = Matrix(T, cfg.vocab_size);
    const Matrix& final_resid = cache.resid.back();
    for (int t = 0; t < T; ++t) {
      apply_norm(cfg.norm_kind, final_resid.row(t), weights.ln_final, normed.row(t));
      vec_mat(normed.row(t), weights.unembedding, cache.logits.row(t));
    }
  }
  return cache;
}

ActivationCache forward(const Weights& weights, const TokenSequence& tokens) {
  return run_forward(weights, tokens, weights.config.n_layers - 1, nullptr);
}

double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kInvalidArgument, "cosine of vectors with different lengths");
  }
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw Error(ErrorCode::kDegenerateVector, "zero-norm vector");
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

double embedding_cosine(TokenId a, TokenId b, const Weights& weights) {
  const int V = weights.config.vocab_size;
  if (a < 0 || a >= V || b < 0 || b >= V) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("token ids ({}, {}) out of range", a, b));
  }
  try {
    return cosine(weights.token_embedding.row(a), weights.token_embedding.row(b));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kDegenerateVector) throw;
    throw Error(ErrorCode::kDegenerateVector,
                fmt::format("zero-norm embedding row for token {} or {}", a, b));
  }
}

double layer_cosine(const ActivationCache& a, const ActivationCache& b, int resid_index) {
  const int available = static_cast<int>(std::min(a.resid.size(), b.resid.size()));
  if (resid_index < 0 || resid_index >= available) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("residual index {} not present in both caches", resid_index));
  }
  try {
    return cosine(a.final_resid(resid_index), b.final_resid(resid_index));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kDegenerateVector) throw;
    throw Error(ErrorCode::kDegenerateVector,
                fmt::format("zero-norm final-token residual at index {}", resid_index));
  }
}

}  // namespace patchwork
