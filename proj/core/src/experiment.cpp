// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchwork/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "patchwork/error.hpp"

namespace patchwork {

using nlohmann::json;

ExperimentSpec parse_experiment(const json& j) {
  try {
    ExperimentSpec spec;
    spec.name = j.value("name", std::string());
    spec.idiom = j.at("idiom").get<std::string>();
    spec.meaning = j.at("meaning").get<std::string>();
    if (j.contains("layer") && !j["layer"].is_null()) spec.layer = j["layer"].get<int>();
    spec.epsilon = j.value("epsilon", kDefaultPlateauEpsilon);
    spec.cosine_floor = j.value("cosine_floor", kDefaultCosineFloor);
    for (const auto& c : j.at("corruptions")) {
      spec.corruptions.push_back(
          {c.at("string").get<std::string>(), c.at("position").get<int>(), c.at("tau").get<double>()});
    }
    if (spec.epsilon <= 0.0) throw Error(ErrorCode::kConfig, "epsilon must be positive");
    return spec;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, fmt::format("experiment config: {}", e.what()));
  }
}

json experiment_to_json(const ExperimentSpec& spec) {
  json j;
  if (!spec.name.empty()) j["name"] = spec.name;
  j["idiom"] = spec.idiom;
  j["meaning"] = spec.meaning;
  if (spec.layer) j["layer"] = *spec.layer;
  j["epsilon"] = spec.epsilon;
  j["cosine_floor"] = spec.cosine_floor;
  j["corruptions"] = json::array();
  for (const auto& c : spec.corruptions) {
    j["corruptions"].push_back({{"string", c.text}, {"position", c.position}, {"tau", c.tau}});
  }
  return j;
}

ExperimentSpec load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open experiment {}", path.string()));
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, fmt::format("{}: {}", path.string(), e.what()));
  }
  return parse_experiment(j);
}

void save_experiment(const ExperimentSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  out << experiment_to_json(spec).dump(2) << '\n';
}

namespace {

// Positions where two equal-prefix sequences differ.
std::vector<int> differing_positions(const TokenSequence& a, const TokenSequence& b) {
  std::vector<int> out;
  for (int t = 0; t < std::min(a.size(), b.size()); ++t) {
    if (a.ids[t] != b.ids[t]) out.push_back(t);
  }
  return out;
}

}  // namespace

void check_experiment(const ExperimentSpec& spec, const Vocabulary& vocab,
                      const ModelConfig& config) {
  const auto idiom = tokenize(spec.idiom, vocab);
  tokenize(spec.meaning, vocab);
  if (spec.layer && (*spec.layer < 0 || *spec.layer >= config.n_layers)) {
    throw Error(ErrorCode::kConfig,
                fmt::format("layer {} outside [0, {}]", *spec.layer, config.n_layers - 1));
  }
  for (const auto& c : spec.corruptions) {
    if (!(c.tau > 0.0)) {
      throw Error(ErrorCode::kConfig, fmt::format("\"{}\": tau must be positive", c.text));
    }
    const auto corrupt = tokenize(c.text, vocab);
    if (corrupt.size() != idiom.size()) {
      throw Error(ErrorCode::kConfig,
                  fmt::format("\"{}\" has {} tokens, idiom has {}", c.text, corrupt.size(),
                              idiom.size()));
    }
    const auto diff = differing_positions(idiom, corrupt);
    if (diff.size() != 1 || diff.front() != c.position) {
      throw Error(ErrorCode::kConfig,
                  fmt::format("\"{}\" must differ from the idiom at exactly position {}", c.text,
                              c.position));
    }
  }
}

std::vector<Candidate> candidate_corruptions(TokenId token, int k, const Weights& weights) {
  const int V = weights.config.vocab_size;
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  if (k > V - 1) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("k = {} exceeds vocab_size - 1 = {}", k, V - 1));
  }
  if (token < 0 || token >= V) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("token id {} out of range", token));
  }
  std::vector<Candidate> all;
  all.reserve(V - 1);
  for (TokenId other = 0; other < V; ++other) {
    if (other == token) continue;
    try {
      all.push_back({other, embedding_cosine(token, other, weights)});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDegenerateVector) throw;
      // The query row itself being zero is an error; a zero candidate is skipped.
      embedding_cosine(token, token, weights);
    }
  }
  std::sort(all.begin(), all.end(), [](const Candidate& a, const Candidate& b) {
    if (a.cosine != b.cosine) return a.cosine > b.cosine;
    return a.id < b.id;
  });
  if (static_cast<int>(all.size()) > k) all.resize(k);
  return all;
}

SimilarityCurves layerwise_similarity(const ExperimentSpec& spec, const Weights& weights,
                                      const Vocabulary& vocab) {
  const auto meaning = forward(weights, tokenize(spec.meaning, vocab));
  const int n_resid = weights.config.n_layers + 1;
  auto curve = [&](const std::string& text) {
    const auto cache = forward(weights, tokenize(text, vocab));
    std::vector<double> out(n_resid);
    for (int i = 0; i < n_resid; ++i) out[i] = layer_cosine(cache, meaning, i);
    return out;
  };

  SimilarityCurves curves;
  curves.idiom = curve(spec.idiom);
  for (const auto& c : spec.corruptions) curves.corruptions.push_back(curve(c.text));
  curves.margin.resize(n_resid);
  for (int i = 0; i < n_resid; ++i) {
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& c : curves.corruptions) worst = std::max(worst, c[i]);
    curves.margin[i] = curves.corruptions.empty() ? curves.idiom[i] : curves.idiom[i] - worst;
  }
  return curves;
}

int select_layer(const std::vector<double>& margin, double epsilon) {
  if (margin.empty()) throw Error(ErrorCode::kInvalidArgument, "empty similarity curve");
  if (!(epsilon > 0.0)) throw Error(ErrorCode::kInvalidArgument, "epsilon must be positive");
  const int n = static_cast<int>(margin.size());
  int plateau = n - 1;
  for (int i = 0; i < n; ++i) {
    double rise = -std::numeric_limits<double>::infinity();
    for (int j = i + 1; j < n; ++j) rise = std::max(rise, margin[j] - margin[i]);
    if (rise < epsilon) {
      plateau = i;
      break;
    }
  }
  return std::max(0, plateau - 1);
}

int select_layer(const SimilarityCurves& curves, double epsilon) {
  return select_layer(curves.margin, epsilon);
}

CorruptionReport validate_corruption(const ExperimentSpec& spec, std::size_t index,
                                     const Weights& weights, const Vocabulary& vocab) {
  if (index >= spec.corruptions.size()) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("no corruption #{}", index));
  }
  const auto& entry = spec.corruptions[index];
  CorruptionReport report;
  report.corrupted = entry.text;

  TokenSequence idiom, corrupt;
  try {
    idiom = tokenize(spec.idiom, vocab);
    corrupt = tokenize(entry.text, vocab);
    report.checks.push_back({"tokenizes", true, ""});
  } catch (const Error& e) {
    report.checks.push_back({"tokenizes", false, e.what()});
    return report;
  }

  const bool same_length = idiom.size() == corrupt.size();
  report.checks.push_back({"equal token counts", same_length,
                           fmt::format("idiom {} tokens, corruption {}", idiom.size(), corrupt.size())});

  const auto diff = differing_positions(idiom, corrupt);
  if (same_length && diff.empty()) {
    report.checks.push_back({"single-token corruption", false, "corruption identical to original"});
  } else {
    report.checks.push_back({"single-token corruption", same_length && diff.size() == 1,
                             fmt::format("{} differing positions", diff.size())});
  }

  if (diff.size() == 1) {
    const int pos = diff.front();
    report.checks.push_back({"declared position", pos == entry.position,
                             fmt::format("differs at {}, declared {}", pos, entry.position)});
    try {
      const double cos = embedding_cosine(idiom.ids[pos], corrupt.ids[pos], weights);
      report.checks.push_back({"embedding cosine", cos >= spec.cosine_floor,
                               fmt::format("cos(\"{}\", \"{}\") = {:.4f}, floor {:.2f}",
                                           idiom.text_spans[pos], corrupt.text_spans[pos], cos,
                                           spec.cosine_floor)});
    } catch (const Error& e) {
      report.checks.push_back({"embedding cosine", false, e.what()});
    }
  }

  report.passed = std::all_of(report.checks.begin(), report.checks.end(),
                              [](const CheckResult& c) { return c.passed; });
  return report;
}

json report_to_json(const CorruptionReport& report) {
  json j;
  j["corrupted"] = report.corrupted;
  j["passed"] = report.passed;
  j["manual_review"] = report.manual_review;
  j["checks"] = json::array();
  for (const auto& c : report.checks) {
    j["checks"].push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  }
  return j;
}

}  // namespace patchwork
