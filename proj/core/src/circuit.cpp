// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchwork/circuit.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "patchwork/error.hpp"

namespace patchwork {

using nlohmann::json;

namespace {
constexpr const char* kFormat = "patchwork.circuit/1";
}

std::vector<NodeId> Circuit::nodes() const {
  std::set<NodeId> out;
  for (int l = -1; l <= layer; ++l) {
    for (int t = 0; t < n_tokens; ++t) out.insert(NodeId::resid(l, t));
  }
  for (const auto& [edge, weight] : edges) {
    out.insert(edge.src);
    out.insert(edge.dst);
  }
  return {out.begin(), out.end()};
}

bool Circuit::compatible_with(const Circuit& other) const {
  return n_layers == other.n_layers && n_heads == other.n_heads && n_tokens == other.n_tokens &&
         layer == other.layer && idiom == other.idiom;
}

json node_to_json(const NodeId& node) {
  if (node.is_head()) {
    return {{"kind", "head"}, {"layer", node.layer}, {"head", node.head}, {"token", node.token}};
  }
  return {{"kind", "resid"}, {"layer", node.layer}, {"token", node.token}};
}

NodeId node_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "head") {
    return NodeId::attn(j.at("layer").get<int>(), j.at("head").get<int>(), j.at("token").get<int>());
  }
  if (kind == "resid") return NodeId::resid(j.at("layer").get<int>(), j.at("token").get<int>());
  throw Error(ErrorCode::kConfig, fmt::format("unknown node kind \"{}\"", kind));
}

json circuit_to_json(const Circuit& c) {
  json meta;
  meta["idiom"] = c.idiom;
  meta["meaning"] = c.meaning;
  meta["tokens"] = c.tokens;
  meta["n_layers"] = c.n_layers;
  meta["n_heads"] = c.n_heads;
  meta["n_tokens"] = c.n_tokens;
  meta["layer"] = c.layer;
  meta["pruned"] = c.pruned;
  meta["corruptions"] = json::array();
  for (const auto& r : c.corruptions) {
    json jr = {{"string", r.text}, {"position", r.position}, {"tau", r.tau}};
    if (r.cos_circuit) jr["cos_circuit"] = *r.cos_circuit;
    if (r.cos_pruned) jr["cos_pruned"] = *r.cos_pruned;
    meta["corruptions"].push_back(std::move(jr));
  }

  json j;
  j["format"] = kFormat;
  j["metadata"] = std::move(meta);
  j["nodes"] = json::array();
  for (const auto& node : c.nodes()) j["nodes"].push_back(node_to_json(node));
  j["edges"] = json::array();
  for (const auto& [edge, weight] : c.edges) {
    j["edges"].push_back({{"type", to_string(edge.etype)},
                          {"src", node_to_json(edge.src)},
                          {"dst", node_to_json(edge.dst)},
                          {"weight", weight}});
  }
  return j;
}

Circuit circuit_from_json(const json& j) {
  try {
    if (j.value("format", std::string()) != kFormat) {
      throw Error(ErrorCode::kConfig, fmt::format("not a {} document", kFormat));
    }
    const auto& meta = j.at("metadata");
    Circuit c;
    c.idiom = meta.at("idiom").get<std::string>();
    c.meaning = meta.at("meaning").get<std::string>();
    c.tokens = meta.at("tokens").get<std::vector<std::string>>();
    c.n_layers = meta.at("n_layers").get<int>();
    c.n_heads = meta.at("n_heads").get<int>();
    c.n_tokens = meta.at("n_tokens").get<int>();
    c.layer = meta.at("layer").get<int>();
    c.pruned = meta.value("pruned", false);
    for (const auto& r : meta.at("corruptions")) {
      CorruptionRecord rec;
      rec.text = r.at("string").get<std::string>();
      rec.position = r.at("position").get<int>();
      rec.tau = r.at("tau").get<double>();
      if (r.contains("cos_circuit")) rec.cos_circuit = r["cos_circuit"].get<double>();
      if (r.contains("cos_pruned")) rec.cos_pruned = r["cos_pruned"].get<double>();
      c.corruptions.push_back(std::move(rec));
    }

    ModelConfig shape;
    shape.n_layers = c.n_layers;
    shape.n_heads = c.n_heads;
    shape.max_seq = std::max(1, c.n_tokens);
    const CircuitGraph universe(shape, c.n_tokens, c.layer);
    for (const auto& e : j.at("edges")) {
      EdgeId edge{node_from_json(e.at("src")), node_from_json(e.at("dst")),
                  parse_edge_type(e.at("type").get<std::string>())};
      universe.index_of(edge);
      c.edges[edge] = e.at("weight").get<double>();
    }
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, fmt::format("circuit document: {}", e.what()));
  }
}

std::string serialize_circuit(const Circuit& circuit) {
  return circuit_to_json(circuit).dump(2) + "\n";
}

Circuit load_circuit(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open circuit {}", path.string()));
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, fmt::format("{}: {}", path.string(), e.what()));
  }
  return circuit_from_json(j);
}

void save_circuit(const Circuit& circuit, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  out << serialize_circuit(circuit);
}

}  // namespace patchwork
