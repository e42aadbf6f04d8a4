// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0
//
// One line per acceptance criterion. Exit status is nonzero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "patchwork/analysis.hpp"
#include "patchwork/discovery.hpp"
#include "patchwork/experiment.hpp"
#include "patchwork/oracle.hpp"
#include "patchwork/patching.hpp"
#include "test_support.hpp"

using namespace patchwork;
namespace pt = patchwork::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome ok(std::string detail) { return {true, std::move(detail)}; }
Outcome bad(std::string detail) { return {false, std::move(detail)}; }

std::set<EdgeId> edge_set(const Circuit& c) {
  std::set<EdgeId> s;
  for (const auto& [e, d] : c.edges) s.insert(e);
  return s;
}

// 1. forward_with_patches with nothing patched is bit-identical to forward.
Outcome empty_patch_identity() {
  std::mt19937 rng(101);
  for (int m = 0; m < 10; ++m) {
    const auto config = pt::random_config(rng);
    const auto w = pt::random_weights(config, 1000 + m);
    const auto clean = pt::random_tokens(config, config.max_seq, rng);
    const auto corrupt = pt::random_tokens(config, config.max_seq, rng);
    const auto g = build_graph(config, static_cast<int>(clean.size()), config.n_layers - 1);
    const auto plain = forward(w, clean);
    const auto patched = forward_with_patches(w, clean, forward(w, corrupt), PatchSet(g));
    if (pt::max_abs_diff(plain, patched) != 0.0) {
      return bad(fmt::format("model {} differs by {:.3g}", m, pt::max_abs_diff(plain, patched)));
    }
  }
  return ok("10 models bit-identical");
}

// 2. Identical clean and corrupt strings: any patch set is neutral.
Outcome self_corruption() {
  std::mt19937 rng(202);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto config = pt::random_config(rng);
    const auto w = pt::random_weights(config, 2000 + trial);
    const auto tokens = pt::random_tokens(config, 1 + static_cast<int>(rng() % config.max_seq), rng);
    const auto g = build_graph(config, static_cast<int>(tokens.size()), config.n_layers - 1);
    const auto cache = forward(w, tokens);
    const double p = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
    const auto patched = forward_with_patches(w, tokens, cache, pt::random_patch_set(g, rng, p));
    worst = std::max(worst, pt::max_abs_diff(cache, patched));
  }
  if (worst > 1e-6) return bad(fmt::format("max-abs {:.3g} > 1e-6", worst));
  return ok(fmt::format("100 patch sets, max-abs {:.3g}", worst));
}

// 3. Oracle single-edge effects match the engine: the first visited node of
// the discovery loop, and every edge patched alone.
Outcome oracle_agreement() {
  double worst = 0.0;
  std::size_t compared = 0;
  for (const char* name : {"single_head", "reception"}) {
    const auto fx = pt::shipped_fixture(name);
    for (std::size_t i = 0; i < fx.experiment.corruptions.size(); ++i) {
      const auto report = brute_force_edge_effects(fx.weights, fx.vocab, fx.experiment, i);
      const auto problem = prepare_problem(fx.weights, fx.vocab, fx.experiment, i, report.layer);
      if (report.effects.size() != problem.graph.num_edges()) {
        return bad(fmt::format("{}: oracle covers {} of {} edges", name, report.effects.size(),
                               problem.graph.num_edges()));
      }
      DiscoveryTrace trace;
      discover_circuit(problem, 1e-9, &trace);
      const auto first = trace.evaluations.front().edge.dst;
      for (const auto& ev : trace.evaluations) {
        if (ev.edge.dst != first) break;
        const double d = report.effects[problem.graph.index_of(ev.edge)].d;
        worst = std::max(worst, std::abs(d - ev.d));
        ++compared;
      }
      const double base = evaluate_patches(problem, PatchSet(problem.graph));
      for (std::size_t e = 0; e < report.effects.size(); ++e) {
        PatchSet one(problem.graph);
        one.insert_index(e);
        worst = std::max(worst, std::abs(base - evaluate_patches(problem, one) - report.effects[e].d));
        ++compared;
      }
    }
  }
  if (worst > 1e-6) return bad(fmt::format("max |d diff| {:.3g} > 1e-6", worst));
  return ok(fmt::format("{} comparisons, max |d diff| {:.3g}", compared, worst));
}

// 4. Each fixture recovers its planted edge set exactly.
Outcome planted_recovery() {
  std::size_t runs = 0;
  bool saw_negative = false;
  for (const auto& spec : fixture_catalog()) {
    const auto fx = pt::shipped_fixture(spec.name);
    for (std::size_t i = 0; i < spec.corruptions.size(); ++i) {
      const auto& pc = spec.corruptions[i];
      const auto c = discover_circuit(fx.weights, fx.vocab, fx.experiment, i, pc.tau);
      const auto got = edge_set(c);
      const std::set<EdgeId> want(pc.planted.begin(), pc.planted.end());
      if (got != want) {
        return bad(fmt::format("{} corruption {}: {} edges, {} planted", spec.name, i, got.size(),
                               want.size()));
      }
      for (const auto& s : pc.suppressors) {
        if (c.edges.at(s) >= 0.0) return bad(fmt::format("{}: suppressor d >= 0", spec.name));
        saw_negative = true;
      }
      ++runs;
    }
  }
  if (!saw_negative) return bad("no fixture exercised a negative edge");
  return ok(fmt::format("{} corruptions, precision = recall = 1", runs));
}

// 5. Patching the Q edge of a self-attending head leaves the output alone.
Outcome q_diagonal() {
  const auto fx = pt::shipped_fixture("diagonal");
  const auto problem = prepare_problem(fx.weights, fx.vocab, fx.experiment, 0);
  const int n_layers = fx.weights.config.n_layers;
  const auto clean = forward(fx.weights, problem.clean);
  double worst = 0.0;
  for (int h = 0; h < fx.weights.config.n_heads; ++h) {
    for (int t = 0; t < problem.graph.n_tokens(); ++t) {
      PatchSet q(problem.graph);
      q.insert(EdgeId::query(0, h, t));
      const auto patched = forward_with_patches(fx.weights, problem.clean, problem.corrupt_cache, q);
      const auto a = clean.final_resid(n_layers);
      const auto b = patched.final_resid(n_layers);
      for (std::size_t k = 0; k < a.size(); ++k) {
        worst = std::max(worst, static_cast<double>(std::abs(a[k] - b[k])));
      }
    }
  }
  if (worst > 1e-5) return bad(fmt::format("final activations moved by {:.3g}", worst));
  return ok(fmt::format("max change {:.3g}", worst));
}

// 6. Merge is commutative, associative and idempotent; prune is idempotent.
Outcome merge_prune_algebra() {
  std::mt19937 rng(606);
  for (int trial = 0; trial < 1000; ++trial) {
    const double keep = std::uniform_real_distribution<double>(0.0, 0.4)(rng);
    const auto a = pt::random_circuit(rng, keep, "He booted the bucket");
    const auto b = pt::random_circuit(rng, keep, "He kicked a bucket");
    const auto c = pt::random_circuit(rng, keep, "He kicked the pail");
    if (merge_circuits({a, b}) != merge_circuits({b, a})) return bad(fmt::format("commutativity, case {}", trial));
    if (merge_circuits({merge_circuits({a, b}), c}) != merge_circuits({a, merge_circuits({b, c})})) {
      return bad(fmt::format("associativity, case {}", trial));
    }
    if (merge_circuits({a, a}) != a) return bad(fmt::format("idempotence, case {}", trial));
    const auto m = merge_circuits({a, b, c});
    const auto p = prune_circuit(m);
    if (prune_circuit(p) != p) return bad(fmt::format("prune idempotence, case {}", trial));
  }
  return ok("1000 random triples");
}

// 7. Threshold endpoints of the sweep.
Outcome sweep_endpoints() {
  std::size_t checked = 0;
  for (const auto& spec : fixture_catalog()) {
    const auto fx = pt::shipped_fixture(spec.name);
    for (std::size_t i = 0; i < spec.corruptions.size(); ++i) {
      const auto report = brute_force_edge_effects(fx.weights, fx.vocab, fx.experiment, i);
      const auto problem = prepare_problem(fx.weights, fx.vocab, fx.experiment, i, report.layer);
      const auto lo = report.min_positive_abs();
      if (!lo) return bad(fmt::format("{}: oracle found no effect", spec.name));
      const double low = 0.5 * *lo;
      const double high = 1.01 * report.max_abs();
      const auto sweep = threshold_sweep(problem, {low, high}, 2);
      const auto kept = edge_set(sweep.circuits.front());
      for (const auto& e : report.effects) {
        if (e.d != 0.0 && !kept.count(e.edge)) {
          return bad(fmt::format("{}: tau {:.3g} dropped {} (d = {:.3g})", spec.name, low,
                                 to_string(e.edge), e.d));
        }
      }
      if (sweep.points.back().edge_count != 0) {
        return bad(fmt::format("{}: tau {:.3g} kept {} edges", spec.name, high,
                               sweep.points.back().edge_count));
      }
      ++checked;
    }
  }
  return ok(fmt::format("{} corruptions", checked));
}

// 8. Layer selection on the step-margin fixture.
Outcome layer_selection() {
  const auto fx = pt::shipped_fixture("step_margin");
  const auto curves = layerwise_similarity(fx.experiment, fx.weights, fx.vocab);
  const int L = select_layer(curves, 0.02);
  if (L != fx.spec.design_layer) return bad(fmt::format("L = {}, designed {}", L, fx.spec.design_layer));
  int previous = select_layer(curves, 0.001);
  for (int k = 1; k < 10; ++k) {
    const double eps = 0.001 * std::pow(2.0, k);
    const int next = select_layer(curves, eps);
    if (next > previous) return bad(fmt::format("L rises from {} to {} at eps {}", previous, next, eps));
    previous = next;
  }
  return ok(fmt::format("L = {} at eps 0.02, non-increasing over 10 eps values", L));
}

// 9. Reference-format checks.
Outcome reference_formats() {
  const auto effects = parse_head_effects_csv(pt::read_file(pt::reference_dir() / "idiom_head_effects.csv"));
  const auto table = format_head_effect_table(head_effect_table(effects));
  if (table != pt::read_file(pt::reference_dir() / "idiom_head_table.txt")) {
    return bad("formatted table differs from the expected text");
  }
  const auto sweep = parse_sweep_csv(pt::read_file(pt::reference_dir() / "sweep_cake_cupcake.csv"));
  const double step = sweep.points[1].tau - sweep.points[0].tau;
  const auto s = suggest_threshold(sweep.points);
  if (std::abs(s.tau - 0.007) > step + 1e-12) return bad(fmt::format("tau* = {}", s.tau));
  return ok(fmt::format("table byte-exact, tau* = {:.4f}", s.tau));
}

// 10. Two CLI runs of the whole pipeline write identical bytes.
Outcome cli_determinism() {
  if (pt::cli_path().empty()) return bad("command-line tool not built");
  std::vector<std::string> listings[2];
  std::vector<std::string> contents[2];
  for (int run = 0; run < 2; ++run) {
    const auto out = pt::scratch_dir(fmt::format("accept_run{}", run));
    const auto fx = pt::fixture_dir("reception");
    const std::vector<std::string> model{"--model", (fx / "model.ptc").string(), "--vocab",
                                         (fx / "vocab.tsv").string(), "--experiment",
                                         (fx / "experiment.json").string()};
    auto args = std::vector<std::string>{"discover", "--out", out.string()};
    args.insert(args.end(), model.begin(), model.end());
    if (pt::run_cli(args).status != 0) return bad("discover failed");
    args = {"merge", "--out", out.string(), "--circuit", (out / "circuit_0.json").string(),
            "--circuit", (out / "circuit_1.json").string()};
    if (pt::run_cli(args).status != 0) return bad("merge failed");
    args = {"prune", "--out", out.string(), "--circuit", (out / "merged.json").string()};
    args.insert(args.end(), model.begin(), model.end());
    if (pt::run_cli(args).status != 0) return bad("prune failed");
    args = {"render", "--out", out.string(), "--circuit", (out / "pruned.json").string()};
    if (pt::run_cli(args).status != 0) return bad("render failed");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(out)) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      listings[run].push_back(f.filename().string());
      contents[run].push_back(pt::read_file(f));
    }
    std::filesystem::remove_all(out);
  }
  if (listings[0] != listings[1]) return bad("runs wrote different file sets");
  if (listings[0].size() != 5) return bad(fmt::format("expected 5 files, got {}", listings[0].size()));
  for (std::size_t i = 0; i < contents[0].size(); ++i) {
    if (contents[0][i] != contents[1][i]) return bad(listings[0][i] + " differs");
  }
  return ok("5 files byte-identical across two runs");
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;  // 0 = no runtime bound
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "empty-patch identity", 5.0, empty_patch_identity},
      {2, "self-corruption neutrality", 30.0, self_corruption},
      {3, "oracle agreement", 60.0, oracle_agreement},
      {4, "planted recovery", 0.0, planted_recovery},
      {5, "Q-diagonal rule", 0.0, q_diagonal},
      {6, "merge/prune algebra", 0.0, merge_prune_algebra},
      {7, "sweep endpoints", 0.0, sweep_endpoints},
      {8, "layer selection", 0.0, layer_selection},
      {9, "reference formats", 0.0, reference_formats},
      {10, "end-to-end determinism", 0.0, cli_determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = bad(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (o.pass && c.budget_s > 0.0 && secs >= c.budget_s) {
      o = bad(fmt::format("{} but took {:.2f} s (limit {} s)", o.detail, secs, c.budget_s));
    }
    failures += !o.pass;
    std::cout << fmt::format("[{}] {:2d} {:<28} {:7.3f}s  {}\n", o.pass ? "PASS" : "FAIL", c.id, c.name,
                             secs, o.detail);
  }
  std::cout << fmt::format("{} of {} criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
