// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tensor container: an 8-byte little-endian header length, a UTF-8 JSON
// header, then raw little-endian f32 data.
//
// Header layout:
//   {
//     "__config__": {"n_layers": 2, "n_heads": 4, ..., "norm_kind": "rms",
//                    "positional_kind": "none"},
//     "<tensor name>": {"dtype": "f32", "shape": [..], "offset": N, "length": M},
//     ...
//   }
// Offsets and lengths are in bytes, relative to the first byte after the
// header.
//
// Tensor names:
//   embed.W_E            [vocab_size, d_model]
//   embed.W_pos          [max_seq, d_model]          (learned positions only)
//   blocks.{l}.ln1.w     [d_model]
//   blocks.{l}.attn.W_Q  [n_heads, d_model, d_head]  (W_K, W_V likewise)
//   blocks.{l}.attn.W_O  [n_heads, d_head, d_model]
//   blocks.{l}.ln2.w     [d_model]
//   blocks.{l}.mlp.W_in  [d_model, d_mlp]
//   blocks.{l}.mlp.b_in  [d_mlp]
//   blocks.{l}.mlp.W_out [d_mlp, d_model]
//   blocks.{l}.mlp.b_out [d_model]
//   ln_final.w           [d_model]
//   unembed.W_U          [d_model, vocab_size]

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "patchwork/model.hpp"

namespace patchwork {

/// Loads and validates a container. Throws kIo, kMalformedHeader,
/// kShapeMismatch (wrong or missing tensors) or kNonFinite.
Weights load_model(const std::filesystem::path& path);
Weights parse_model(const std::vector<std::uint8_t>& bytes);

void save_model(const Weights& weights, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_model(const Weights& weights);

}  // namespace patchwork
