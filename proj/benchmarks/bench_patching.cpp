// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <random>
#include <span>

#include "patchwork/discovery.hpp"
#include "patchwork/fixtures.hpp"
#include "patchwork/patching.hpp"

using namespace patchwork;

namespace {

ModelConfig bench_config(int layers, int heads) {
  ModelConfig c;
  c.n_layers = layers;
  c.n_heads = heads;
  c.d_model = 64;
  c.d_head = 16;
  c.d_mlp = 128;
  c.vocab_size = 64;
  c.max_seq = 16;
  return c;
}

Weights gaussian(const ModelConfig& c) {
  std::mt19937 rng(7);
  std::normal_distribution<float> n(0.0f, 0.1f);
  auto fill = [&](std::span<float> xs) {
    for (auto& x : xs) x = n(rng);
  };
  Weights w = Weights::zeros(c);
  fill(w.token_embedding.data());
  fill(w.positional.data());
  for (auto& b : w.blocks) {
    for (auto* heads : {&b.attn.W_Q, &b.attn.W_K, &b.attn.W_V, &b.attn.W_O}) {
      for (auto& m : *heads) fill(m.data());
    }
    fill(b.mlp.W_in.data());
    fill(b.mlp.W_out.data());
  }
  fill(w.unembedding.data());
  return w;
}

TokenSequence tokens(int n, int offset) {
  TokenSequence s;
  for (int i = 0; i < n; ++i) {
    s.ids.push_back((i * 7 + offset) % 64);
    s.text_spans.push_back("t");
  }
  return s;
}

void BM_Forward(benchmark::State& state) {
  const auto c = bench_config(static_cast<int>(state.range(0)), 4);
  const auto w = gaussian(c);
  const auto t = tokens(8, 0);
  for (auto _ : state) benchmark::DoNotOptimize(forward(w, t));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(2)->Arg(4);

void BM_ForwardWithPatches(benchmark::State& state) {
  const auto c = bench_config(static_cast<int>(state.range(0)), 4);
  const auto w = gaussian(c);
  const auto clean = tokens(8, 0);
  const auto corrupt = tokens(8, 3);
  const auto cache = forward(w, corrupt);
  const auto g = build_graph(c, 8, c.n_layers - 1);
  PatchSet p(g);
  for (std::size_t i = 0; i < g.num_edges(); i += 5) p.insert_index(i);
  for (auto _ : state) benchmark::DoNotOptimize(forward_with_patches(w, clean, cache, p));
}
BENCHMARK(BM_ForwardWithPatches)->Arg(1)->Arg(2)->Arg(4);

void BM_DiscoverFixture(benchmark::State& state, const char* name) {
  const auto fx = load_fixture(std::string(PATCHWORK_FIXTURES) + "/" + name);
  const auto problem = prepare_problem(fx.weights, fx.vocab, fx.experiment, 0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(discover_circuit(problem, fx.experiment.corruptions[0].tau));
  }
}
BENCHMARK_CAPTURE(BM_DiscoverFixture, single_head, "single_head");
BENCHMARK_CAPTURE(BM_DiscoverFixture, reception, "reception");
BENCHMARK_CAPTURE(BM_DiscoverFixture, step_margin, "step_margin");

}  // namespace

BENCHMARK_MAIN();
