// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "patchwork/graph.hpp"
#include "patchwork/model.hpp"

namespace patchwork {

/// Recomputes the clean run through patches.graph().max_layer(), taking each
/// patched edge's input from `corrupt_cache`:
///  - Q: scores against earlier tokens use the corrupted query; the diagonal
///    score keeps the running query.
///  - K / V: the key (value) of src as seen by dst is the corrupted one.
///    Same-token keys and values always come from the running stream.
///  - HeadOut: the corrupted per-head output is added to the residual.
/// Corrupted Q/K/V vectors are norm + projection of the corrupted pre-norm
/// residual, which is exactly what the corrupted cache already holds.
///
/// Throws kLengthMismatch when the runs differ in length or the corrupted
/// cache is too shallow.
ActivationCache forward_with_patches(const Weights& weights, const TokenSequence& clean,
                                     const ActivationCache& corrupt_cache,
                                     const PatchSet& patches);

}  // namespace patchwork
