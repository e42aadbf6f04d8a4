// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0
//
// Graphviz and SVG exporters.
//
// Circuit drawings put tokens in columns and layers in rows (bottom to top).
// Embeddings are triangles, residual nodes circles, heads squares. Edge
// colour follows the sign of d (red for drops, blue for gains) and pen width
// is pen_scale * |d| clamped to [pen_min, pen_max]. K and V edges carry
// their letter, or "KV" when both connect the same pair; Q and HeadOut edges
// are unlabeled. The residual chain is drawn in neutral grey.

#pragma once

#include <string>
#include <vector>

#include "patchwork/circuit.hpp"
#include "patchwork/discovery.hpp"

namespace patchwork {

struct RenderStyle {
  double pen_scale = 50.0;
  double pen_min = 0.5;
  double pen_max = 8.0;
  std::string positive_color = "red";
  std::string negative_color = "blue";
  std::string neutral_color = "gray60";
};

double pen_width(double d, const RenderStyle& style = {});

std::string render_graph(const Circuit& circuit, const RenderStyle& style = {});

/// Dual-axis line chart: cosine on the left axis, log10 edge count on the
/// right. Empty circuits plot at one edge. Throws kInvalidArgument when empty.
std::string export_sweep_chart(const std::vector<SweepPoint>& points,
                               const std::string& title = "threshold sweep");

}  // namespace patchwork
