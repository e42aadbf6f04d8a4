// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchwork/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "patchwork/circuit.hpp"
#include "patchwork/container.hpp"
#include "patchwork/error.hpp"

namespace patchwork {

using nlohmann::json;

namespace {

// Token ids double as identity dims.
enum Tok : int {
  kHe, kKicked, kThe, kBucket, kDied, kBooted, kA, kPail, kHit, kSack, kStruck, kBag, kSlept,
  kVocabSize
};

constexpr int kFamilyKick = 13;
constexpr int kFamilyThe = 14;
constexpr int kFamilyBucket = 15;
constexpr int kFamilyHit = 16;
constexpr int kFamilySack = 17;
constexpr int kFeature = 18;
constexpr int kMinDModel = 19;

constexpr float kFamilyWeight = 0.8f;
constexpr double kScore = 20.0;

const std::vector<std::string>& vocab_strings() {
  static const std::vector<std::string> v = {"He",    " kicked", " the",    " bucket", " died",
                                             " booted", " a",    " pail",   " hit",    " sack",
                                             " struck", " bag",  " slept"};
  return v;
}

int family_of(int tok) {
  switch (tok) {
    case kKicked: case kBooted: return kFamilyKick;
    case kThe: case kA: return kFamilyThe;
    case kBucket: case kPail: return kFamilyBucket;
    case kHit: case kStruck: return kFamilyHit;
    case kSack: case kBag: return kFamilySack;
    default: return -1;
  }
}

struct Probe {
  std::string text;
  int pos;
  int dim;
};

struct QkPair {
  Probe query;
  Probe key;
  int slot;
};

struct ValueRead {
  Probe source;
  float sign;
};

struct ValueWrite {
  std::vector<ValueRead> reads;
  int slot;
  int target_dim;
  float amount;
};

// Component `dim` of the normed residual entering block `layer`.
double block_input(const Weights& w, const Vocabulary& vocab, const Probe& p, int layer) {
  const auto tokens = tokenize(p.text, vocab);
  const auto cache = run_forward(w, tokens, layer, nullptr);
  const auto row = cache.resid[layer].row(p.pos);
  std::vector<float> normed(row.size());
  apply_norm(w.config.norm_kind, row, w.blocks[layer].ln1, normed);
  const double x = normed[p.dim];
  if (!(std::abs(x) > 1e-6)) {
    throw Error(ErrorCode::kInfeasibleFixture,
                fmt::format("\"{}\" position {} has no component on dim {} at block {}", p.text,
                            p.pos, p.dim, layer));
  }
  return x;
}

void plant_head(Weights& w, const Vocabulary& vocab, int layer, int head,
                const std::vector<QkPair>& pairs, const std::vector<ValueWrite>& writes) {
  auto& attn = w.blocks[layer].attn;
  const double sqrt_dh = std::sqrt(static_cast<double>(w.config.d_head));
  for (const auto& p : pairs) {
    const double xq = block_input(w, vocab, p.query, layer);
    const double xk = block_input(w, vocab, p.key, layer);
    const double gain = std::sqrt(kScore * sqrt_dh / std::abs(xq * xk));
    attn.W_Q[head](p.query.dim, p.slot) = static_cast<float>(std::copysign(gain, xq));
    attn.W_K[head](p.key.dim, p.slot) = static_cast<float>(std::copysign(gain, xk));
  }
  for (const auto& v : writes) {
    for (const auto& r : v.reads) {
      const double x = block_input(w, vocab, r.source, layer);
      attn.W_V[head](r.source.dim, v.slot) = static_cast<float>(r.sign / x);
    }
    attn.W_O[head](v.slot, v.target_dim) = v.amount;
  }
}

// The bucket -> kicked head that writes `amount` of " died".
void plant_idiom_head(Weights& w, const Vocabulary& vocab, int layer, int head, float amount) {
  const std::string idiom = "He kicked the bucket";
  plant_head(w, vocab, layer, head, {{{idiom, 3, kBucket}, {idiom, 1, kKicked}, 0}},
             {{{{{idiom, 1, kKicked}, 1.0f}}, 2, kDied, amount}});
}

void require(bool ok, const PlantedSpec& spec, const std::string& what) {
  if (!ok) {
    throw Error(ErrorCode::kInfeasibleFixture, fmt::format("fixture {}: {}", spec.name, what));
  }
}

void check_feasible(const PlantedSpec& spec) {
  const auto& c = spec.config;
  c.validate();
  require(c.vocab_size == kVocabSize, spec, fmt::format("vocab_size must be {}", kVocabSize));
  require(c.d_model >= kMinDModel, spec, fmt::format("d_model must be >= {}", kMinDModel));
  require(c.positional_kind != PositionalKind::kRotary, spec,
          "rotary positions break the one-hot QK construction");
  require(c.max_seq >= 4, spec, "max_seq must be >= 4");
  const int slots = spec.recipe == Recipe::kOrthogonalQk ? 4 : 3;
  require(c.d_head >= slots, spec, fmt::format("d_head must be >= {}", slots));
  int layers = 1, heads = 1;
  switch (spec.recipe) {
    case Recipe::kReception: layers = 2; break;
    case Recipe::kSuppressor: heads = 2; break;
    case Recipe::kStepMargin: layers = 4; break;
    default: break;
  }
  require(c.n_layers >= layers, spec, fmt::format("needs >= {} layers", layers));
  require(c.n_heads >= heads, spec, fmt::format("needs >= {} heads", heads));
}

ModelConfig base_config(int n_layers, int n_heads) {
  ModelConfig c;
  c.n_layers = n_layers;
  c.n_heads = n_heads;
  c.d_model = 20;
  c.d_head = 4;
  c.d_mlp = 4;
  c.vocab_size = kVocabSize;
  c.max_seq = 8;
  c.norm_kind = NormKind::kRms;
  c.positional_kind = PositionalKind::kNone;
  return c;
}

std::vector<EdgeId> sorted(std::vector<EdgeId> edges) {
  std::sort(edges.begin(), edges.end());
  return edges;
}

}  // namespace

std::string to_string(Recipe recipe) {
  switch (recipe) {
    case Recipe::kSingleHead: return "single_head";
    case Recipe::kReception: return "reception";
    case Recipe::kSuppressor: return "suppressor";
    case Recipe::kDiagonal: return "diagonal";
    case Recipe::kStepMargin: return "step_margin";
    case Recipe::kOrthogonalQk: return "orthogonal_qk";
  }
  return "?";
}

Recipe parse_recipe(const std::string& name) {
  for (auto r : {Recipe::kSingleHead, Recipe::kReception, Recipe::kSuppressor, Recipe::kDiagonal,
                 Recipe::kStepMargin, Recipe::kOrthogonalQk}) {
    if (to_string(r) == name) return r;
  }
  throw Error(ErrorCode::kConfig, fmt::format("unknown fixture recipe \"{}\"", name));
}

Vocabulary fixture_vocabulary() { return Vocabulary(vocab_strings()); }

PlantedSpec planted_spec(Recipe recipe) {
  using E = EdgeId;
  PlantedSpec s;
  s.recipe = recipe;
  s.name = to_string(recipe);
  s.idiom = "He kicked the bucket";
  s.meaning = "He died";
  switch (recipe) {
    case Recipe::kSingleHead:
      s.config = base_config(1, 1);
      s.design_layer = 0;
      s.corruptions = {
          {"He booted the bucket", 1, 0.1,
           sorted({E::head_out(0, 0, 3), E::key(0, 0, 1, 3), E::value(0, 0, 1, 3)}), {}},
          {"He kicked the pail", 3, 0.1, sorted({E::head_out(0, 0, 3), E::query(0, 0, 3)}), {}},
      };
      s.notes = "Head (0,0) at ' bucket' attends to ' kicked' and copies 3x ' died'. "
                "Breaking the key or value side leaves K/V edges; breaking the query side "
                "leaves only Q, so pruning drops the head.";
      break;
    case Recipe::kReception:
      s.config = base_config(2, 1);
      s.design_layer = 1;
      s.corruptions = {
          {"He kicked a bucket", 2, 0.05,
           sorted({E::head_out(1, 0, 3), E::query(1, 0, 3), E::head_out(0, 0, 3),
                   E::key(0, 0, 2, 3), E::value(0, 0, 2, 3)}),
           {}},
          {"He booted the bucket", 1, 0.05,
           sorted({E::head_out(1, 0, 3), E::key(1, 0, 1, 3), E::value(1, 0, 1, 3)}), {}},
      };
      s.notes = "Head (0,0) at ' bucket' attends to ' the' and writes a feature; its value "
                "subtracts the same amount on ' bucket' itself so uniform attention cancels. "
                "Head (1,0) queries that feature and copies ' died' from ' kicked'. "
                "Corrupting ' the' reaches (1,0) only through its Q edge.";
      break;
    case Recipe::kSuppressor:
      s.config = base_config(1, 2);
      s.design_layer = 0;
      s.corruptions = {
          {"He kicked the pail", 3, 0.02,
           sorted({E::head_out(0, 0, 3), E::query(0, 0, 3), E::head_out(0, 1, 3)}),
           {E::head_out(0, 1, 3)}},
      };
      s.notes = "Head (0,0) writes 4.5x ' died'; head (0,1) attends to itself on ' bucket' "
                "and writes -1.5x ' died'. Its only effective edge is HeadOut, with d < 0.";
      break;
    case Recipe::kDiagonal:
      s.config = base_config(1, 1);
      s.design_layer = 0;
      s.corruptions = {
          {"He kicked the pail", 3, 0.1, {E::head_out(0, 0, 3)}, {}},
      };
      s.notes = "Head (0,0) attends to its own token and reads ' bucket'. The patched query "
                "only meets earlier keys, which carry nothing, so Q has no effect.";
      break;
    case Recipe::kStepMargin:
      s.config = base_config(5, 1);
      s.design_layer = 3;
      s.corruptions = {
          {"He booted the bucket", 1, 0.1,
           sorted({E::head_out(3, 0, 3), E::key(3, 0, 1, 3), E::value(3, 0, 1, 3)}), {}},
      };
      s.notes = "Only block 3 has weights: the idiom margin steps once, at resid index 4.";
      break;
    case Recipe::kOrthogonalQk:
      s.config = base_config(1, 1);
      s.design_layer = 0;
      s.idiom = "He hit the sack";
      s.meaning = "He slept";
      s.corruptions = {
          {"He struck the sack", 1, 0.1,
           sorted({E::head_out(0, 0, 3), E::key(0, 0, 1, 3), E::value(0, 0, 1, 3)}), {}},
          {"He hit the bag", 3, 0.1, sorted({E::head_out(0, 0, 3), E::query(0, 0, 3)}), {}},
      };
      s.notes = "bucket/kicked use QK slot 0, sack/hit slot 1; cross products are zero.";
      break;
  }
  return s;
}

std::vector<PlantedSpec> fixture_catalog() {
  std::vector<PlantedSpec> out;
  for (auto r : {Recipe::kSingleHead, Recipe::kReception, Recipe::kSuppressor, Recipe::kDiagonal,
                 Recipe::kStepMargin, Recipe::kOrthogonalQk}) {
    out.push_back(planted_spec(r));
  }
  return out;
}

PlantedModel build_planted_model(const PlantedSpec& spec) {
  check_feasible(spec);
  const auto vocab = fixture_vocabulary();
  Weights w = Weights::zeros(spec.config);
  for (int t = 0; t < kVocabSize; ++t) {
    w.token_embedding(t, t) = 1.0f;
    if (family_of(t) >= 0) w.token_embedding(t, family_of(t)) = kFamilyWeight;
  }

  const std::string kicked = "He kicked the bucket";
  switch (spec.recipe) {
    case Recipe::kSingleHead:
      plant_idiom_head(w, vocab, 0, 0, 3.0f);
      break;
    case Recipe::kReception:
      plant_head(w, vocab, 0, 0, {{{kicked, 3, kBucket}, {kicked, 2, kThe}, 0}},
                 {{{{{kicked, 2, kThe}, 1.0f}, {{kicked, 3, kBucket}, -1.0f}}, 2, kFeature, 2.0f}});
      plant_head(w, vocab, 1, 0, {{{kicked, 3, kFeature}, {kicked, 1, kKicked}, 0}},
                 {{{{{kicked, 1, kKicked}, 1.0f}}, 2, kDied, 4.0f}});
      break;
    case Recipe::kSuppressor:
      plant_idiom_head(w, vocab, 0, 0, 4.5f);
      plant_head(w, vocab, 0, 1, {{{kicked, 3, kBucket}, {kicked, 3, kBucket}, 0}},
                 {{{{{kicked, 3, kBucket}, 1.0f}}, 2, kDied, -1.5f}});
      break;
    case Recipe::kDiagonal:
      plant_head(w, vocab, 0, 0, {{{kicked, 3, kBucket}, {kicked, 3, kBucket}, 0}},
                 {{{{{kicked, 3, kBucket}, 1.0f}}, 2, kDied, 3.0f}});
      break;
    case Recipe::kStepMargin:
      plant_idiom_head(w, vocab, 3, 0, 3.0f);
      break;
    case Recipe::kOrthogonalQk: {
      const std::string hit = "He hit the sack";
      plant_head(w, vocab, 0, 0,
                 {{{kicked, 3, kBucket}, {kicked, 1, kKicked}, 0},
                  {{hit, 3, kSack}, {hit, 1, kHit}, 1}},
                 {{{{{kicked, 1, kKicked}, 1.0f}}, 2, kDied, 3.0f},
                  {{{{hit, 1, kHit}, 1.0f}}, 3, kSlept, 3.0f}});
      break;
    }
  }
  w.validate();

  ExperimentSpec exp;
  exp.name = spec.name;
  exp.idiom = spec.idiom;
  exp.meaning = spec.meaning;
  for (const auto& c : spec.corruptions) exp.corruptions.push_back({c.text, c.position, c.tau});
  check_experiment(exp, vocab, w.config);

  const int n_tokens = tokenize(spec.idiom, vocab).size();
  const CircuitGraph universe(w.config, n_tokens, spec.design_layer);
  for (const auto& c : spec.corruptions) {
    for (const auto& e : c.planted) universe.index_of(e);
    for (const auto& e : c.suppressors) {
      require(std::find(c.planted.begin(), c.planted.end(), e) != c.planted.end(), spec,
              "suppressor edges must be planted");
    }
  }
  return {spec, std::move(w), vocab, std::move(exp)};
}

json edge_to_json(const EdgeId& edge) {
  return {{"type", to_string(edge.etype)}, {"src", node_to_json(edge.src)},
          {"dst", node_to_json(edge.dst)}};
}

EdgeId edge_from_json(const json& j) {
  return {node_from_json(j.at("src")), node_from_json(j.at("dst")),
          parse_edge_type(j.at("type").get<std::string>())};
}

json planted_to_json(const PlantedSpec& spec) {
  json j;
  j["name"] = spec.name;
  j["recipe"] = to_string(spec.recipe);
  j["design_layer"] = spec.design_layer;
  j["idiom"] = spec.idiom;
  j["meaning"] = spec.meaning;
  j["notes"] = spec.notes;
  j["corruptions"] = json::array();
  for (const auto& c : spec.corruptions) {
    json jc = {{"string", c.text}, {"position", c.position}, {"tau", c.tau}};
    jc["planted"] = json::array();
    for (const auto& e : c.planted) jc["planted"].push_back(edge_to_json(e));
    jc["suppressors"] = json::array();
    for (const auto& e : c.suppressors) jc["suppressors"].push_back(edge_to_json(e));
    j["corruptions"].push_back(std::move(jc));
  }
  return j;
}

PlantedSpec planted_from_json(const json& j) {
  try {
    PlantedSpec s = planted_spec(parse_recipe(j.at("recipe").get<std::string>()));
    s.name = j.at("name").get<std::string>();
    s.design_layer = j.at("design_layer").get<int>();
    s.idiom = j.at("idiom").get<std::string>();
    s.meaning = j.at("meaning").get<std::string>();
    s.notes = j.value("notes", std::string());
    s.corruptions.clear();
    for (const auto& jc : j.at("corruptions")) {
      PlantedCorruption c;
      c.text = jc.at("string").get<std::string>();
      c.position = jc.at("position").get<int>();
      c.tau = jc.at("tau").get<double>();
      for (const auto& e : jc.at("planted")) c.planted.push_back(edge_from_json(e));
      for (const auto& e : jc.value("suppressors", json::array())) {
        c.suppressors.push_back(edge_from_json(e));
      }
      s.corruptions.push_back(std::move(c));
    }
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, fmt::format("planted spec: {}", e.what()));
  }
}

void save_fixture(const PlantedModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_model(model.weights, dir / "model.ptc");
  save_vocabulary(model.vocab, dir / "vocab.tsv");
  save_experiment(model.experiment, dir / "experiment.json");
  std::ofstream out(dir / "planted.json");
  if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", (dir / "planted.json").string()));
  out << planted_to_json(model.spec).dump(2) << '\n';
}

PlantedModel load_fixture(const std::filesystem::path& dir) {
  std::ifstream in(dir / "planted.json");
  if (!in) throw Error(ErrorCode::kIo, fmt::format("no planted.json in {}", dir.string()));
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, fmt::format("planted.json: {}", e.what()));
  }
  auto spec = planted_from_json(j);
  auto weights = load_model(dir / "model.ptc");
  spec.config = weights.config;
  return {std::move(spec), std::move(weights), load_vocabulary(dir / "vocab.tsv"),
          load_experiment(dir / "experiment.json")};
}

}  // namespace patchwork
