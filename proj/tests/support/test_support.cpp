// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0

#include "test_support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <sys/wait.h>
#include <unistd.h>

#include "patchwork/container.hpp"
#include "patchwork/experiment.hpp"

namespace patchwork::testing {

namespace fs = std::filesystem;

fs::path data_dir() { return fs::path(PATCHWORK_TEST_DATA); }
fs::path fixture_dir(std::string_view name) { return data_dir() / "fixtures" / std::string(name); }
fs::path reference_dir() { return data_dir() / "reference"; }

fs::path scratch_dir(std::string_view tag) {
  static std::atomic<int> counter{0};
  const auto dir = fs::temp_directory_path() /
                   ("patchwork_" + std::string(tag) + "_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter++));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

ModelConfig random_config(std::mt19937& rng) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  ModelConfig c;
  c.n_layers = pick(1, 4);
  c.n_heads = pick(1, 4);
  c.d_head = 2 * pick(1, 4);
  c.d_model = pick(4, 16);
  c.d_mlp = pick(2, 16);
  c.vocab_size = pick(4, 12);
  c.max_seq = 8;
  c.norm_kind = pick(0, 1) ? NormKind::kRms : NormKind::kLayer;
  c.positional_kind = static_cast<PositionalKind>(pick(0, 2));
  return c;
}

Weights random_weights(const ModelConfig& config, std::uint32_t seed, float scale) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  auto fill = [&](std::span<float> xs, float s) {
    for (auto& x : xs) x = s * normal(rng);
  };
  auto fill_scale = [&](std::vector<float>& xs) {
    for (auto& x : xs) x = 1.0f + 0.1f * normal(rng);
  };
  Weights w = Weights::zeros(config);
  fill(w.token_embedding.data(), 1.0f);
  if (config.positional_kind == PositionalKind::kLearned) fill(w.positional.data(), 0.5f);
  for (auto& b : w.blocks) {
    fill_scale(b.ln1);
    fill_scale(b.ln2);
    for (auto* heads : {&b.attn.W_Q, &b.attn.W_K, &b.attn.W_V, &b.attn.W_O}) {
      for (auto& m : *heads) fill(m.data(), scale);
    }
    fill(b.mlp.W_in.data(), scale);
    fill(b.mlp.b_in, 0.1f);
    fill(b.mlp.W_out.data(), scale);
    fill(b.mlp.b_out, 0.1f);
  }
  fill_scale(w.ln_final);
  fill(w.unembedding.data(), scale);
  w.validate();
  return w;
}

TokenSequence make_tokens(const std::vector<TokenId>& ids) {
  TokenSequence seq;
  seq.ids = ids;
  for (auto id : ids) seq.text_spans.push_back("<" + std::to_string(id) + ">");
  return seq;
}

TokenSequence random_tokens(const ModelConfig& config, int n_tokens, std::mt19937& rng) {
  std::uniform_int_distribution<int> pick(0, config.vocab_size - 1);
  std::vector<TokenId> ids(n_tokens);
  for (auto& id : ids) id = pick(rng);
  return make_tokens(ids);
}

namespace {

void fold(double& worst, std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw std::runtime_error("cache shapes differ");
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
  }
}

}  // namespace

double max_abs_diff(const ActivationCache& a, const ActivationCache& b) {
  if (a.resid.size() != b.resid.size() || a.layers.size() != b.layers.size()) {
    throw std::runtime_error("cache depths differ");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.resid.size(); ++i) fold(worst, a.resid[i].data(), b.resid[i].data());
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    const auto& x = a.layers[l];
    const auto& y = b.layers[l];
    fold(worst, x.q.data(), y.q.data());
    fold(worst, x.k.data(), y.k.data());
    fold(worst, x.v.data(), y.v.data());
    fold(worst, x.pattern.data(), y.pattern.data());
    fold(worst, x.z.data(), y.z.data());
    fold(worst, x.mlp_out.data(), y.mlp_out.data());
  }
  fold(worst, a.logits.data(), b.logits.data());
  return worst;
}

PatchSet random_patch_set(const CircuitGraph& graph, std::mt19937& rng, double p) {
  std::bernoulli_distribution coin(p);
  PatchSet set(graph);
  for (std::size_t i = 0; i < graph.num_edges(); ++i) {
    if (coin(rng)) set.insert_index(i);
  }
  return set;
}

Circuit random_circuit(std::mt19937& rng, double keep, const std::string& corruption) {
  ModelConfig config;
  config.n_layers = 2;
  config.n_heads = 3;
  config.d_model = 4;
  config.d_head = 2;
  config.vocab_size = 4;
  config.max_seq = 4;
  const CircuitGraph graph(config, 4, 1);

  Circuit c;
  c.n_layers = 2;
  c.n_heads = 3;
  c.n_tokens = 4;
  c.layer = 1;
  c.idiom = "He kicked the bucket";
  c.meaning = "He died";
  c.tokens = {"He", " kicked", " the", " bucket"};
  c.corruptions.push_back({corruption, 1, 0.01, std::nullopt, std::nullopt});

  // A small magnitude pool makes |d| ties across circuits common.
  static constexpr double kMagnitudes[] = {0.011, 0.02, 0.05, 0.05, 0.1, 0.2};
  std::bernoulli_distribution coin(keep);
  std::bernoulli_distribution negative(0.3);
  std::uniform_int_distribution<int> magnitude(0, 5);
  for (std::size_t i = 0; i < graph.num_edges(); ++i) {
    if (!coin(rng)) continue;
    const double d = kMagnitudes[magnitude(rng)];
    c.edges.emplace(graph.edge(i), negative(rng) ? -d : d);
  }
  return c;
}

PlantedModel shipped_fixture(std::string_view name) { return load_fixture(fixture_dir(name)); }

std::string cli_path() {
#ifdef PATCHWORK_CLI
  return PATCHWORK_CLI;
#else
  return {};
#endif
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

}  // namespace

CliResult run_cli(const std::vector<std::string>& args) {
  const auto dir = scratch_dir("cli_io");
  std::string cmd = shell_quote(cli_path());
  for (const auto& a : args) cmd += " " + shell_quote(a);
  cmd += " >" + shell_quote((dir / "out").string()) + " 2>" + shell_quote((dir / "err").string());
  CliResult r;
  const int raw = std::system(cmd.c_str());
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = read_file(dir / "out");
  r.err = read_file(dir / "err");
  fs::remove_all(dir);
  return r;
}

}  // namespace patchwork::testing
