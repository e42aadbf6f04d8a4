// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0
//
// Hand-built models whose causally necessary edges are known by design.
//
// All recipes share one 13-token vocabulary and a one-hot residual layout:
// dims [0, 13) are token identities, [13, 18) are "family" directions shared
// by a token and its corruption (so their embedding cosine is 0.39), dim 18
// is a free feature written by layer-0 heads. A head is planted by reading a
// single identity dim into one query/key slot with gains calibrated so the
// scaled score is 20 (softmax mass > 1 - 1e-8 on the designed source), and a
// value slot that reads one identity dim and writes a fixed amount onto a
// target dim. Everything else is zero, MLPs included.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "patchwork/experiment.hpp"
#include "patchwork/graph.hpp"
#include "patchwork/model.hpp"
#include "patchwork/tokenizer.hpp"

namespace patchwork {

enum class Recipe {
  kSingleHead,     // one head attends bucket -> kicked and writes " died"
  kReception,      // layer-0 head feeds a feature into a layer-1 query
  kSuppressor,     // second head writes the negative meaning direction
  kDiagonal,       // self-attending head; only HeadOut matters
  kStepMargin,     // five layers, the write happens in block 3
  kOrthogonalQk,   // two idioms on orthogonal QK slots
};

std::string to_string(Recipe recipe);
Recipe parse_recipe(const std::string& name);

struct PlantedCorruption {
  std::string text;
  int position = 0;
  double tau = 0.0;
  std::vector<EdgeId> planted;      // exact expected circuit at tau
  std::vector<EdgeId> suppressors;  // subset of planted with d < 0
};

struct PlantedSpec {
  std::string name;
  Recipe recipe = Recipe::kSingleHead;
  ModelConfig config;
  int design_layer = 0;
  std::string idiom;
  std::string meaning;
  std::vector<PlantedCorruption> corruptions;
  std::string notes;
};

/// Default spec for a recipe, with the planted sets worked out by hand.
PlantedSpec planted_spec(Recipe recipe);
/// One spec per recipe, in declaration order.
std::vector<PlantedSpec> fixture_catalog();

struct PlantedModel {
  PlantedSpec spec;
  Weights weights;
  Vocabulary vocab;
  ExperimentSpec experiment;
};

/// Deterministic; throws kInfeasibleFixture when the config cannot host the
/// recipe (too few dims, layers or heads, rotary positions, wrong vocab size).
PlantedModel build_planted_model(const PlantedSpec& spec);

/// The shared vocabulary.
Vocabulary fixture_vocabulary();

nlohmann::json planted_to_json(const PlantedSpec& spec);
PlantedSpec planted_from_json(const nlohmann::json& j);

/// Writes model.ptc, vocab.tsv, experiment.json and planted.json into `dir`.
void save_fixture(const PlantedModel& model, const std::filesystem::path& dir);
PlantedModel load_fixture(const std::filesystem::path& dir);

nlohmann::json edge_to_json(const EdgeId& edge);
EdgeId edge_from_json(const nlohmann::json& j);

}  // namespace patchwork
