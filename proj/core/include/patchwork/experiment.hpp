// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment inputs: idiom string I, meaning string M and single-token
// corruptions C of I, each with its own discovery threshold.
//
// Config file (JSON):
//   {
//     "name": "kicked the bucket",          optional label
//     "idiom": "He kicked the bucket",
//     "meaning": "He died",
//     "layer": 4,                           optional; chosen by select_layer if absent
//     "epsilon": 0.02,                      optional plateau tolerance
//     "cosine_floor": 0.25,                 optional corruption embedding floor
//     "corruptions": [
//       {"string": "He booted the bucket", "position": 1, "tau": 0.008}
//     ]
//   }

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "patchwork/model.hpp"
#include "patchwork/tokenizer.hpp"

namespace patchwork {

inline constexpr double kDefaultPlateauEpsilon = 0.02;
inline constexpr double kDefaultCosineFloor = 0.25;

struct CorruptionSpec {
  std::string text;
  int position = 0;
  double tau = 0.0;

  bool operator==(const CorruptionSpec&) const = default;
};

struct ExperimentSpec {
  std::string name;
  std::string idiom;
  std::string meaning;
  std::vector<CorruptionSpec> corruptions;
  std::optional<int> layer;
  double epsilon = kDefaultPlateauEpsilon;
  double cosine_floor = kDefaultCosineFloor;
};

ExperimentSpec parse_experiment(const nlohmann::json& j);
nlohmann::json experiment_to_json(const ExperimentSpec& spec);
ExperimentSpec load_experiment(const std::filesystem::path& path);
void save_experiment(const ExperimentSpec& spec, const std::filesystem::path& path);

/// Enforces the hard invariants: every corruption tokenizes to the idiom's
/// length and differs from it at exactly its declared position; tau > 0;
/// the layer (when set) is a valid block index. Throws kConfig.
void check_experiment(const ExperimentSpec& spec, const Vocabulary& vocab,
                      const ModelConfig& config);

struct Candidate {
  TokenId id = 0;
  double cosine = 0.0;
};

/// Top-k tokens by embedding cosine to `token`, descending, ties by ascending
/// id, never including `token` itself. Rows with zero norm are skipped.
std::vector<Candidate> candidate_corruptions(TokenId token, int k, const Weights& weights);

/// Final-token cosine to the meaning string, per residual index 0..n_layers.
struct SimilarityCurves {
  std::vector<double> idiom;
  std::vector<std::vector<double>> corruptions;
  /// idiom[i] - max over corruptions of corruptions[c][i].
  std::vector<double> margin;
};

SimilarityCurves layerwise_similarity(const ExperimentSpec& spec, const Weights& weights,
                                      const Vocabulary& vocab);

/// Smallest residual index i whose margin is not exceeded by epsilon or more
/// at any later index, reported as the block layer that produced it:
/// max(0, i - 1). With no corruptions the idiom curve stands in for the
/// margin.
int select_layer(const SimilarityCurves& curves, double epsilon = kDefaultPlateauEpsilon);
int select_layer(const std::vector<double>& margin, double epsilon = kDefaultPlateauEpsilon);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct CorruptionReport {
  std::string corrupted;
  std::vector<CheckResult> checks;
  bool passed = false;
  /// Figurative-meaning preservation cannot be checked mechanically.
  std::string manual_review = "manual review required: literal vs. figurative meaning";
};

/// Mechanical corruption checks: single-token difference at the declared
/// position, not identical to the idiom, embedding cosine >= floor.
CorruptionReport validate_corruption(const ExperimentSpec& spec, std::size_t index,
                                     const Weights& weights, const Vocabulary& vocab);

nlohmann::json report_to_json(const CorruptionReport& report);

}  // namespace patchwork
