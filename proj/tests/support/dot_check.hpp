// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0
//
// Recursive-descent parser for the Graphviz DOT language (graph, node, edge
// and attribute statements, subgraphs, ports, quoted/HTML/numeral IDs,
// comments). Good enough to reject malformed output and to inspect what the
// renderer emitted.

#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace patchwork::testing {

using DotAttrs = std::map<std::string, std::string>;

struct DotNode {
  std::string id;
  DotAttrs attrs;
};

struct DotEdge {
  std::string src;
  std::string dst;
  DotAttrs attrs;
};

struct DotGraph {
  bool strict = false;
  bool directed = false;
  std::string name;
  DotAttrs graph_attrs;            // top-level `a=b` and `graph [..]` statements
  std::vector<DotNode> nodes;      // in statement order, duplicates kept
  std::vector<DotEdge> edges;      // node-to-node edges only
  int subgraphs = 0;
};

class DotSyntaxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

DotGraph parse_dot(std::string_view text);

}  // namespace patchwork::testing
