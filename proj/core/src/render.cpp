// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchwork/render.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>

#include <fmt/format.h>

#include "patchwork/error.hpp"

namespace patchwork {

namespace {

std::string node_name(const NodeId& n) {
  if (n.is_head()) return fmt::format("h{}_{}_{}", n.layer, n.head, n.token);
  if (n.layer < 0) return fmt::format("e{}", n.token);
  return fmt::format("r{}_{}", n.layer, n.token);
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + '"';
}

std::string xml_escaped(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string edge_attrs(double d, const RenderStyle& style, const std::string& label) {
  std::string out = fmt::format("color={}, penwidth={:.3f}, tooltip=\"d={:.5f}\"",
                                d < 0 ? style.negative_color : style.positive_color,
                                pen_width(d, style), d);
  if (!label.empty()) out += fmt::format(", label={}", quoted(label));
  return out;
}

}  // namespace

double pen_width(double d, const RenderStyle& style) {
  return std::clamp(style.pen_scale * std::abs(d), style.pen_min, style.pen_max);
}

std::string render_graph(const Circuit& c, const RenderStyle& style) {
  std::string out = "digraph circuit {\n";
  out += "  rankdir=BT;\n  newrank=true;\n";
  out += "  node [fontname=\"Helvetica\", fontsize=10];\n";
  out += "  edge [arrowsize=0.6, fontname=\"Helvetica\", fontsize=9];\n";

  auto token_label = [&](int t) {
    return t < static_cast<int>(c.tokens.size()) ? c.tokens[t] : fmt::format("t{}", t);
  };

  out += "  { rank=same;";
  for (int t = 0; t < c.n_tokens; ++t) {
    out += fmt::format(" {} [shape=triangle, label={}];", node_name(NodeId::resid(-1, t)),
                       quoted(token_label(t)));
  }
  out += " }\n";

  std::map<int, std::set<NodeId>> heads_by_layer;
  for (const auto& [edge, d] : c.edges) {
    for (const auto& n : {edge.src, edge.dst}) {
      if (n.is_head()) heads_by_layer[n.layer].insert(n);
    }
  }
  for (int l = 0; l <= c.layer; ++l) {
    if (auto it = heads_by_layer.find(l); it != heads_by_layer.end()) {
      out += "  { rank=same;";
      for (const auto& n : it->second) {
        out += fmt::format(" {} [shape=square, label=\"{},{}\"];", node_name(n), n.layer, n.head);
      }
      out += " }\n";
    }
    out += "  { rank=same;";
    for (int t = 0; t < c.n_tokens; ++t) {
      out += fmt::format(" {} [shape=circle, label=\"\", width=0.25];",
                         node_name(NodeId::resid(l, t)));
    }
    out += " }\n";
  }

  for (int t = 0; t < c.n_tokens; ++t) {
    for (int l = 0; l <= c.layer; ++l) {
      out += fmt::format("  {} -> {} [color={}, style=dashed, arrowhead=none];\n",
                         node_name(NodeId::resid(l - 1, t)), node_name(NodeId::resid(l, t)),
                         style.neutral_color);
    }
  }

  struct CrossPair {
    std::optional<double> k, v;
  };
  std::map<std::pair<NodeId, NodeId>, CrossPair> cross;
  for (const auto& [edge, d] : c.edges) {
    if (edge.etype == EdgeType::kK) cross[{edge.src, edge.dst}].k = d;
    if (edge.etype == EdgeType::kV) cross[{edge.src, edge.dst}].v = d;
  }
  for (const auto& [edge, d] : c.edges) {
    if (edge.cross_token()) continue;
    out += fmt::format("  {} -> {} [{}];\n", node_name(edge.src), node_name(edge.dst),
                       edge_attrs(d, style, ""));
  }
  for (const auto& [ends, pair] : cross) {
    std::string label;
    double d = 0.0;
    if (pair.k && pair.v) {
      label = "KV";
      // The stronger of the two sets colour and width.
      const bool k_wins = std::abs(*pair.k) > std::abs(*pair.v) ||
                          (std::abs(*pair.k) == std::abs(*pair.v) && *pair.k > *pair.v);
      d = k_wins ? *pair.k : *pair.v;
    } else {
      label = pair.k ? "K" : "V";
      d = pair.k ? *pair.k : *pair.v;
    }
    out += fmt::format("  {} -> {} [{}];\n", node_name(ends.first), node_name(ends.second),
                       edge_attrs(d, style, label));
  }
  out += "}\n";
  return out;
}

std::string export_sweep_chart(const std::vector<SweepPoint>& points, const std::string& title) {
  if (points.empty()) throw Error(ErrorCode::kInvalidArgument, "empty sweep");
  constexpr double kWidth = 640, kHeight = 400;
  constexpr double kLeft = 70, kRight = 70, kTop = 40, kBottom = 55;
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;

  double tmin = points.front().tau, tmax = points.front().tau;
  double cmin = 0.0, cmax = 1.0;
  double lmax = 1.0;
  for (const auto& p : points) {
    tmin = std::min(tmin, p.tau);
    tmax = std::max(tmax, p.tau);
    cmin = std::min(cmin, p.cosine);
    cmax = std::max(cmax, p.cosine);
    lmax = std::max(lmax, std::ceil(std::log10(std::max<double>(1.0, p.edge_count))));
  }
  if (tmax == tmin) {
    tmin -= 0.5 * std::max(tmin, 1e-3);
    tmax += 0.5 * std::max(tmax, 1e-3);
  }
  cmin = std::floor(cmin * 10.0) / 10.0;

  auto x_of = [&](double tau) { return kLeft + (tau - tmin) / (tmax - tmin) * plot_w; };
  auto yc_of = [&](double cos) { return kTop + (cmax - cos) / (cmax - cmin) * plot_h; };
  auto ye_of = [&](std::size_t n) {
    const double lg = std::log10(std::max<double>(1.0, static_cast<double>(n)));
    return kTop + (lmax - lg) / lmax * plot_h;
  };

  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" "
      "viewBox=\"0 0 {0} {1}\" font-family=\"Helvetica, Arial, sans-serif\" font-size=\"11\">\n",
      kWidth, kHeight);
  svg += fmt::format("  <rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", kWidth, kHeight);
  svg += fmt::format("  <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
                     kWidth / 2, xml_escaped(title));
  svg += fmt::format(
      "  <rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
      kLeft, kTop, plot_w, plot_h);

  // x ticks at the sweep points, thinned to at most 10 labels
  const std::size_t stride = (points.size() + 9) / 10;
  for (std::size_t i = 0; i < points.size(); i += stride) {
    const double x = x_of(points[i].tau);
    svg += fmt::format("  <line x1=\"{0:.2f}\" y1=\"{1}\" x2=\"{0:.2f}\" y2=\"{2}\" stroke=\"black\"/>\n",
                       x, kTop + plot_h, kTop + plot_h + 5);
    svg += fmt::format("  <text x=\"{:.2f}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", x,
                       kTop + plot_h + 18, points[i].tau);
  }
  svg += fmt::format("  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">threshold tau</text>\n",
                     kLeft + plot_w / 2, kHeight - 12);

  for (int i = 0; i <= 5; ++i) {
    const double cos = cmin + (cmax - cmin) * i / 5.0;
    svg += fmt::format("  <text x=\"{}\" y=\"{:.2f}\" text-anchor=\"end\" fill=\"steelblue\">{:.2f}</text>\n",
                       kLeft - 8, yc_of(cos) + 4, cos);
  }
  for (int e = 0; e <= static_cast<int>(lmax); ++e) {
    svg += fmt::format("  <text x=\"{}\" y=\"{:.2f}\" text-anchor=\"start\" fill=\"darkorange\">{}</text>\n",
                       kLeft + plot_w + 8, ye_of(static_cast<std::size_t>(std::pow(10, e))) + 4,
                       static_cast<long long>(std::llround(std::pow(10, e))));
  }
  svg += fmt::format(
      "  <text transform=\"translate(18 {0:.2f}) rotate(-90)\" text-anchor=\"middle\" "
      "fill=\"steelblue\">final-token cosine</text>\n",
      kTop + plot_h / 2);
  svg += fmt::format(
      "  <text transform=\"translate({0} {1:.2f}) rotate(90)\" text-anchor=\"middle\" "
      "fill=\"darkorange\">edges (log scale)</text>\n",
      kWidth - 18, kTop + plot_h / 2);

  std::string cos_line, edge_line;
  for (const auto& p : points) {
    cos_line += fmt::format("{:.2f},{:.2f} ", x_of(p.tau), yc_of(p.cosine));
    edge_line += fmt::format("{:.2f},{:.2f} ", x_of(p.tau), ye_of(p.edge_count));
  }
  cos_line.pop_back();
  edge_line.pop_back();
  svg += fmt::format("  <g class=\"series cosine\">\n    <polyline points=\"{}\" fill=\"none\" "
                     "stroke=\"steelblue\" stroke-width=\"2\"/>\n",
                     cos_line);
  for (const auto& p : points) {
    svg += fmt::format("    <circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"steelblue\"/>\n",
                       x_of(p.tau), yc_of(p.cosine));
  }
  svg += "  </g>\n";
  svg += fmt::format("  <g class=\"series edges\">\n    <polyline points=\"{}\" fill=\"none\" "
                     "stroke=\"darkorange\" stroke-width=\"2\"/>\n",
                     edge_line);
  for (const auto& p : points) {
    svg += fmt::format("    <rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"6\" height=\"6\" fill=\"darkorange\"/>\n",
                       x_of(p.tau) - 3, ye_of(p.edge_count) - 3);
  }
  svg += "  </g>\n</svg>\n";
  return svg;
}

}  // namespace patchwork
