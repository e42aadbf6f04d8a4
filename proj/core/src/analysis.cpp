// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchwork/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include <fmt/format.h>

#include "patchwork/error.hpp"

namespace patchwork {

namespace {

// Larger |d| wins, positive on exact ties (same rule as merging).
bool dominates(double a, double b) {
  return std::abs(a) > std::abs(b) || (std::abs(a) == std::abs(b) && a > b);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string strip_cr(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  return s;
}

std::string cell_text(const HeadEffectTable& t, std::size_t r, std::size_t c) {
  if (!t.cells[r][c]) return "--";
  return fmt::format("{}{}", std::lround(*t.cells[r][c] * 100.0), t.asterisk[r][c] ? "*" : "");
}

}  // namespace

std::vector<HeadEffect> head_effects(const std::string& label, const Circuit& circuit) {
  std::map<std::pair<int, int>, HeadEffect> by_head;
  for (const auto& [edge, d] : circuit.edges) {
    if (edge.etype != EdgeType::kHeadOut) continue;
    const auto key = std::make_pair(edge.src.layer, edge.src.head);
    auto [it, inserted] = by_head.try_emplace(key, HeadEffect{label, key.first, key.second, d, false});
    if (!inserted && dominates(d, it->second.d)) it->second.d = d;
  }
  for (const auto& [edge, d] : circuit.edges) {
    if (edge.etype != EdgeType::kQ) continue;
    auto it = by_head.find({edge.dst.layer, edge.dst.head});
    if (it != by_head.end()) it->second.has_query = true;
  }
  std::vector<HeadEffect> out;
  for (auto& [key, e] : by_head) out.push_back(std::move(e));
  return out;
}

std::string head_effects_to_csv(const std::vector<HeadEffect>& effects) {
  std::string out = "idiom,layer,head,d,query_edge\n";
  for (const auto& e : effects) {
    if (e.idiom.find_first_of(",\n") != std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("label \"{}\" contains a comma", e.idiom));
    }
    out += fmt::format("{},{},{},{},{}\n", e.idiom, e.layer, e.head, e.d, e.has_query ? 1 : 0);
  }
  return out;
}

std::vector<HeadEffect> parse_head_effects_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (!line.empty() && line.front() == '#') continue;  // leading comments
    have_header = line == "idiom,layer,head,d,query_edge";
    break;
  }
  if (!have_header) {
    throw Error(ErrorCode::kConfig, "head effect CSV must start with \"idiom,layer,head,d,query_edge\"");
  }
  std::vector<HeadEffect> out;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty() || line.front() == '#') continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 5) {
      throw Error(ErrorCode::kConfig, fmt::format("head effect CSV line {}: expected 5 fields", line_no));
    }
    try {
      std::size_t used = 0;
      HeadEffect e;
      e.idiom = cells[0];
      e.layer = std::stoi(cells[1]);
      e.head = std::stoi(cells[2]);
      e.d = std::stod(cells[3], &used);
      if (used != cells[3].size() || !std::isfinite(e.d)) throw std::invalid_argument(cells[3]);
      if (cells[4] != "0" && cells[4] != "1") throw std::invalid_argument(cells[4]);
      e.has_query = cells[4] == "1";
      out.push_back(std::move(e));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kConfig, fmt::format("head effect CSV line {}: bad value", line_no));
    }
  }
  return out;
}

HeadEffectTable head_effect_table(const std::vector<HeadEffect>& effects, double floor) {
  std::vector<std::string> rows;
  std::map<std::tuple<std::string, int, int>, HeadEffect> merged;
  for (const auto& e : effects) {
    if (std::find(rows.begin(), rows.end(), e.idiom) == rows.end()) rows.push_back(e.idiom);
    auto [it, inserted] = merged.try_emplace({e.idiom, e.layer, e.head}, e);
    if (inserted) continue;
    if (dominates(e.d, it->second.d)) it->second.d = e.d;
    it->second.has_query = it->second.has_query || e.has_query;
  }

  std::set<std::pair<int, int>> shown;
  for (const auto& [key, e] : merged) {
    if (std::abs(e.d) > floor) shown.insert({e.layer, e.head});
  }

  HeadEffectTable t;
  t.rows = rows;
  t.columns.assign(shown.begin(), shown.end());
  for (const auto& row : rows) {
    std::vector<std::optional<double>> cells;
    std::vector<bool> stars;
    for (const auto& [layer, head] : t.columns) {
      auto it = merged.find({row, layer, head});
      if (it != merged.end() && std::abs(it->second.d) > floor) {
        cells.push_back(it->second.d);
        stars.push_back(!it->second.has_query);
      } else {
        cells.push_back(std::nullopt);
        stars.push_back(false);
      }
    }
    t.cells.push_back(std::move(cells));
    t.asterisk.push_back(std::move(stars));
  }
  return t;
}

HeadEffectTable head_effect_table(const std::vector<std::pair<std::string, Circuit>>& circuits,
                                  double floor) {
  std::vector<HeadEffect> all;
  for (const auto& [label, c] : circuits) {
    const auto& first = circuits.front().second;
    if (c.n_layers != first.n_layers || c.n_heads != first.n_heads) {
      throw Error(ErrorCode::kIncompatibleCircuits, "circuits come from different model shapes");
    }
    auto effects = head_effects(label, c);
    all.insert(all.end(), effects.begin(), effects.end());
  }
  return head_effect_table(all, floor);
}

std::string format_head_effect_table(const HeadEffectTable& t) {
  std::size_t label_width = 5;  // "Idiom"
  for (const auto& r : t.rows) label_width = std::max(label_width, r.size());
  std::vector<std::size_t> widths;
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    std::size_t w = fmt::format("L{}H{}", t.columns[c].first, t.columns[c].second).size();
    for (std::size_t r = 0; r < t.rows.size(); ++r) w = std::max(w, cell_text(t, r, c).size());
    widths.push_back(w);
  }

  std::string out = fmt::format("{:<{}}", "Idiom", label_width);
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    out += fmt::format("  {:>{}}", fmt::format("L{}H{}", t.columns[c].first, t.columns[c].second),
                       widths[c]);
  }
  out += '\n';
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    std::string line = fmt::format("{:<{}}", t.rows[r], label_width);
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      line += fmt::format("  {:>{}}", cell_text(t, r, c), widths[c]);
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + '\n';
  }
  return out;
}

std::string head_effect_table_csv(const HeadEffectTable& t) {
  std::string out = "idiom";
  for (const auto& [l, h] : t.columns) out += fmt::format(",L{}H{}", l, h);
  out += '\n';
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    out += t.rows[r];
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      out += ',';
      if (t.cells[r][c]) out += cell_text(t, r, c);
    }
    out += '\n';
  }
  return out;
}

namespace {

struct Slots {
  std::vector<TokenId> ids;
  int pos[2];
};

// Fills the two placeholders and locates the token carrying each word.
Slots fill_template(const std::string& templ, const std::string& a, const std::string& b,
                    const Vocabulary& vocab) {
  const auto first = templ.find('_');
  const auto second = first == std::string::npos ? first : templ.find('_', first + 1);
  if (second == std::string::npos || templ.find('_', second + 1) != std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("template \"{}\" must contain exactly two '_'", templ));
  }
  const std::string text = templ.substr(0, first) + a + templ.substr(first + 1, second - first - 1) +
                           b + templ.substr(second + 1);
  const std::size_t starts[2] = {first, first + a.size() + (second - first - 1)};
  const std::size_t lengths[2] = {a.size(), b.size()};

  const auto seq = tokenize(text, vocab);
  Slots out{seq.ids, {-1, -1}};
  std::size_t offset = 0;
  for (int t = 0; t < seq.size(); ++t) {
    const std::size_t begin = offset, end = offset + seq.text_spans[t].size();
    for (int s = 0; s < 2; ++s) {
      // The token may carry the separating space but nothing else.
      const bool aligned = begin == starts[s] || (begin + 1 == starts[s] && text[begin] == ' ');
      if (aligned && end == starts[s] + lengths[s]) {
        out.pos[s] = t;
      }
    }
    offset = end;
  }
  for (int s = 0; s < 2; ++s) {
    if (out.pos[s] < 0) {
      throw Error(ErrorCode::kTokenization,
                  fmt::format("\"{}\" is not a single token in \"{}\"", s == 0 ? a : b, text));
    }
  }
  return out;
}

}  // namespace

QkMatrix qk_dot_products(const Weights& weights, const Vocabulary& vocab,
                         const std::string& templ, const std::vector<QkFill>& fills, int layer,
                         int head, int query_slot) {
  const auto& cfg = weights.config;
  if (layer < 0 || layer >= cfg.n_layers || head < 0 || head >= cfg.n_heads) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("no head ({}, {})", layer, head));
  }
  if (query_slot != 0 && query_slot != 1) {
    throw Error(ErrorCode::kInvalidArgument, "query_slot must be 0 or 1");
  }
  if (fills.empty()) throw Error(ErrorCode::kInvalidArgument, "no fills");
  const int key_slot = 1 - query_slot;

  std::optional<std::size_t> length;
  auto vectors = [&](const std::string& a, const std::string& b) {
    const auto slots = fill_template(templ, a, b, vocab);
    if (length && *length != slots.ids.size()) {
      throw Error(ErrorCode::kLengthMismatch, "filled templates tokenize to different lengths");
    }
    length = slots.ids.size();
    TokenSequence seq;
    seq.ids = slots.ids;
    for (auto id : slots.ids) seq.text_spans.push_back(vocab.token(id));
    const auto cache = run_forward(weights, seq, layer, nullptr);
    const auto q = cache.layers[layer].q.vec(head, slots.pos[query_slot]);
    const auto k = cache.layers[layer].k.vec(head, slots.pos[key_slot]);
    return std::make_pair(std::vector<float>(q.begin(), q.end()),
                          std::vector<float>(k.begin(), k.end()));
  };
  auto dot = [](const std::vector<float>& a, const std::vector<float>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
  };

  std::vector<std::vector<float>> queries, keys;
  QkMatrix m;
  for (const auto& f : fills) {
    auto [q, k] = vectors(f.first, f.second);
    queries.push_back(std::move(q));
    keys.push_back(std::move(k));
    m.query_tokens.push_back(query_slot == 0 ? f.first : f.second);
    m.key_tokens.push_back(key_slot == 0 ? f.first : f.second);
  }

  for (std::size_t r = 0; r < fills.size(); ++r) {
    std::vector<QkCell> row;
    for (std::size_t c = 0; c < fills.size(); ++c) row.push_back({dot(queries[r], keys[c]), {}});

    const auto& f = fills[r];
    const auto& query_corruptions = query_slot == 0 ? f.first_corruptions : f.second_corruptions;
    const auto& key_corruptions = key_slot == 0 ? f.first_corruptions : f.second_corruptions;
    if (!query_corruptions.empty() && !key_corruptions.empty()) {
      double qsum = 0.0, ksum = 0.0;
      for (const auto& w : query_corruptions) {
        const auto [q, k] = query_slot == 0 ? vectors(w, f.second) : vectors(f.first, w);
        qsum += dot(q, keys[r]);
      }
      for (const auto& w : key_corruptions) {
        const auto [q, k] = key_slot == 0 ? vectors(w, f.second) : vectors(f.first, w);
        ksum += dot(queries[r], k);
      }
      row[r].corrupted = std::make_pair(qsum / query_corruptions.size(),
                                        ksum / key_corruptions.size());
    }
    m.cells.push_back(std::move(row));
  }
  return m;
}

namespace {

std::string qk_cell_text(const QkCell& cell) {
  auto out = fmt::format("{}", std::lround(cell.dot));
  if (cell.corrupted) {
    out += fmt::format(" ({}, {})", std::lround(cell.corrupted->first),
                       std::lround(cell.corrupted->second));
  }
  return out;
}

}  // namespace

std::string format_qk_matrix(const QkMatrix& m) {
  std::size_t label_width = 0;
  for (const auto& q : m.query_tokens) label_width = std::max(label_width, q.size());
  std::vector<std::size_t> widths;
  for (std::size_t c = 0; c < m.key_tokens.size(); ++c) {
    std::size_t w = m.key_tokens[c].size();
    for (const auto& row : m.cells) w = std::max(w, qk_cell_text(row[c]).size());
    widths.push_back(w);
  }
  std::string out(label_width, ' ');
  for (std::size_t c = 0; c < m.key_tokens.size(); ++c) {
    out += fmt::format("  {:>{}}", m.key_tokens[c], widths[c]);
  }
  out += '\n';
  for (std::size_t r = 0; r < m.query_tokens.size(); ++r) {
    out += fmt::format("{:<{}}", m.query_tokens[r], label_width);
    for (std::size_t c = 0; c < m.key_tokens.size(); ++c) {
      out += fmt::format("  {:>{}}", qk_cell_text(m.cells[r][c]), widths[c]);
    }
    out += '\n';
  }
  return out;
}

std::string qk_matrix_csv(const QkMatrix& m) {
  std::string out = "query,key,dot,corrupted_query_dot,corrupted_key_dot\n";
  for (std::size_t r = 0; r < m.query_tokens.size(); ++r) {
    for (std::size_t c = 0; c < m.key_tokens.size(); ++c) {
      const auto& cell = m.cells[r][c];
      out += fmt::format("{},{},{}", m.query_tokens[r], m.key_tokens[c], cell.dot);
      if (cell.corrupted) {
        out += fmt::format(",{},{}\n", cell.corrupted->first, cell.corrupted->second);
      } else {
        out += ",,\n";
      }
    }
  }
  return out;
}

std::vector<NodeId> detect_augmented_reception(const Circuit& circuit, int corrupted_position) {
  if (circuit.corruptions.size() != 1) {
    throw Error(ErrorCode::kNotSingleCorruption,
                fmt::format("augmented reception needs a single-corruption circuit, got {} "
                            "corruptions",
                            circuit.corruptions.size()));
  }
  if (corrupted_position < 0 || corrupted_position >= circuit.n_tokens) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("position {} outside [0, {})", corrupted_position, circuit.n_tokens));
  }
  std::set<NodeId> out;
  for (const auto& [edge, d] : circuit.edges) {
    if (edge.etype == EdgeType::kQ && edge.dst.token > corrupted_position) out.insert(edge.dst);
  }
  return {out.begin(), out.end()};
}

std::vector<std::pair<EdgeId, double>> antagonistic_components(const Circuit& circuit) {
  std::vector<std::pair<EdgeId, double>> out;
  for (const auto& [edge, d] : circuit.edges) {
    if (d < 0.0) out.emplace_back(edge, d);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.second < b.second; });
  return out;
}

}  // namespace patchwork
