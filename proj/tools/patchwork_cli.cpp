// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0
//
// patchwork: command-line front end for circuit discovery.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "patchwork/analysis.hpp"
#include "patchwork/circuit.hpp"
#include "patchwork/container.hpp"
#include "patchwork/discovery.hpp"
#include "patchwork/error.hpp"
#include "patchwork/experiment.hpp"
#include "patchwork/oracle.hpp"
#include "patchwork/render.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace patchwork;

namespace {

struct Options {
  std::string model, vocab, experiment;
  std::optional<double> tau;
  std::string tau_grid = "0.001:0.02:0.001";
  std::optional<int> layer;
  std::optional<double> epsilon;
  std::optional<std::size_t> corruption;
  std::string out;
  std::string format;
  unsigned threads = 0;
  std::vector<std::string> circuits;
  std::string sweep;
  std::string effects;
  std::string qk_config;
  double floor = kDisplayFloor;
};

struct Inputs {
  Weights weights;
  Vocabulary vocab;
  ExperimentSpec spec;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open {}", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require_flag(const std::string& value, const char* flag) {
  if (value.empty()) throw Error(ErrorCode::kInvalidArgument, fmt::format("{} is required", flag));
}

Inputs load_inputs(const Options& o) {
  require_flag(o.model, "--model");
  require_flag(o.vocab, "--vocab");
  require_flag(o.experiment, "--experiment");
  Inputs in{load_model(o.model), load_vocabulary(o.vocab), load_experiment(o.experiment)};
  if (o.epsilon) in.spec.epsilon = *o.epsilon;
  if (o.layer) in.spec.layer = *o.layer;
  check_experiment(in.spec, in.vocab, in.weights.config);
  return in;
}

std::vector<std::size_t> corruption_indices(const Options& o, const ExperimentSpec& spec) {
  if (o.corruption) {
    if (*o.corruption >= spec.corruptions.size()) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("--corruption {} but the experiment has {}", *o.corruption,
                              spec.corruptions.size()));
    }
    return {*o.corruption};
  }
  std::vector<std::size_t> all(spec.corruptions.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return all;
}

// Writes into --out when given, otherwise to stdout.
void emit(const Options& o, const std::string& name, const std::string& text) {
  if (o.out.empty()) {
    std::cout << text;
    return;
  }
  fs::create_directories(o.out);
  const auto path = fs::path(o.out) / name;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  f << text;
  std::cerr << path.string() << '\n';
}

std::string format_or(const Options& o, const std::string& fallback) {
  return o.format.empty() ? fallback : o.format;
}

void require_format(const std::string& format, std::initializer_list<const char*> allowed,
                    const char* command) {
  for (const char* a : allowed) {
    if (format == a) return;
  }
  throw Error(ErrorCode::kInvalidArgument,
              fmt::format("{} does not support --format {}", command, format));
}

double tau_for(const Options& o, const ExperimentSpec& spec, std::size_t i) {
  return o.tau ? *o.tau : spec.corruptions[i].tau;
}

void cmd_similarity(const Options& o) {
  const auto in = load_inputs(o);
  const auto format = format_or(o, "json");
  require_format(format, {"json", "csv"}, "similarity");
  const auto curves = layerwise_similarity(in.spec, in.weights, in.vocab);
  const int layer = in.spec.layer ? *in.spec.layer : select_layer(curves, in.spec.epsilon);
  if (format == "csv") {
    std::string out = "resid_index,idiom";
    for (std::size_t c = 0; c < curves.corruptions.size(); ++c) out += fmt::format(",corruption_{}", c);
    out += ",margin\n";
    for (std::size_t i = 0; i < curves.idiom.size(); ++i) {
      out += fmt::format("{},{}", i, curves.idiom[i]);
      for (const auto& c : curves.corruptions) out += fmt::format(",{}", c[i]);
      out += fmt::format(",{}\n", curves.margin[i]);
    }
    emit(o, "similarity.csv", out);
    return;
  }
  json j;
  j["idiom"] = curves.idiom;
  j["corruptions"] = curves.corruptions;
  j["margin"] = curves.margin;
  j["epsilon"] = in.spec.epsilon;
  j["layer"] = layer;
  j["reports"] = json::array();
  for (std::size_t i = 0; i < in.spec.corruptions.size(); ++i) {
    j["reports"].push_back(report_to_json(validate_corruption(in.spec, i, in.weights, in.vocab)));
  }
  emit(o, "similarity.json", j.dump(2) + "\n");
}

void cmd_discover(const Options& o) {
  const auto in = load_inputs(o);
  require_format(format_or(o, "json"), {"json"}, "discover");
  json all = json::array();
  for (auto i : corruption_indices(o, in.spec)) {
    const auto problem = prepare_problem(in.weights, in.vocab, in.spec, i);
    const auto circuit = discover_circuit(problem, tau_for(o, in.spec, i));
    if (o.out.empty()) {
      all.push_back(circuit_to_json(circuit));
    } else {
      emit(o, fmt::format("circuit_{}.json", i), serialize_circuit(circuit));
    }
  }
  if (o.out.empty()) std::cout << all.dump(2) << '\n';
}

void cmd_sweep(const Options& o) {
  const auto in = load_inputs(o);
  const auto format = format_or(o, "csv");
  require_format(format, {"csv", "svg"}, "sweep");
  const auto grid = parse_tau_grid(o.tau_grid);
  for (auto i : corruption_indices(o, in.spec)) {
    const auto problem = prepare_problem(in.weights, in.vocab, in.spec, i);
    const auto sweep = threshold_sweep(problem, grid, o.threads);
    if (format == "svg") {
      emit(o, fmt::format("sweep_{}.svg", i),
           export_sweep_chart(sweep.points, in.spec.corruptions[i].text));
    } else {
      emit(o, fmt::format("sweep_{}.csv", i), sweep_to_csv(sweep));
    }
  }
}

void cmd_suggest(const Options& o) {
  require_flag(o.sweep, "--sweep");
  require_format(format_or(o, "json"), {"json"}, "suggest-tau");
  const auto sweep = parse_sweep_csv(read_file(o.sweep));
  const auto s = suggest_threshold(sweep.points);
  json j;
  j["tau"] = s.tau;
  j["flags"] = s.flags;
  j["tail_end_tau"] = s.tail_end ? json(sweep.points[*s.tail_end].tau) : json(nullptr);
  j["jump_tau"] = s.jump ? json(sweep.points[*s.jump].tau) : json(nullptr);
  emit(o, "suggestion.json", j.dump(2) + "\n");
}

std::vector<Circuit> load_circuits(const Options& o) {
  if (o.circuits.empty()) throw Error(ErrorCode::kInvalidArgument, "--circuit is required");
  std::vector<Circuit> out;
  for (const auto& path : o.circuits) out.push_back(load_circuit(path));
  return out;
}

void cmd_merge(const Options& o) {
  require_format(format_or(o, "json"), {"json"}, "merge");
  emit(o, "merged.json", serialize_circuit(merge_circuits(load_circuits(o))));
}

void cmd_prune(const Options& o) {
  require_format(format_or(o, "json"), {"json"}, "prune");
  const auto circuits = load_circuits(o);
  if (circuits.size() != 1) throw Error(ErrorCode::kInvalidArgument, "prune takes one --circuit");
  auto pruned = prune_circuit(circuits.front());
  // With the model at hand, record how faithful the pruned circuit still is.
  if (!o.model.empty()) {
    const auto in = load_inputs(o);
    for (auto& record : pruned.corruptions) {
      for (std::size_t i = 0; i < in.spec.corruptions.size(); ++i) {
        if (in.spec.corruptions[i].text != record.text) continue;
        const auto problem = prepare_problem(in.weights, in.vocab, in.spec, i, pruned.layer);
        record.cos_pruned = evaluate_circuit(problem, pruned);
      }
    }
  }
  emit(o, "pruned.json", serialize_circuit(pruned));
}

json qk_to_json(const QkMatrix& m) {
  json j;
  j["query_tokens"] = m.query_tokens;
  j["key_tokens"] = m.key_tokens;
  j["cells"] = json::array();
  for (const auto& row : m.cells) {
    json jr = json::array();
    for (const auto& c : row) {
      json jc = {{"dot", c.dot}};
      if (c.corrupted) jc["corrupted"] = {c.corrupted->first, c.corrupted->second};
      jr.push_back(jc);
    }
    j["cells"].push_back(jr);
  }
  return j;
}

void cmd_analyze(const Options& o) {
  const auto format = format_or(o, "text");
  require_format(format, {"text", "csv", "json"}, "analyze");

  if (!o.qk_config.empty()) {
    // {"template": "He _ the _", "layer": 0, "head": 0, "query_slot": 1,
    //  "fills": [{"first": "kicked", "second": "bucket",
    //             "first_corruptions": [...], "second_corruptions": [...]}]}
    require_flag(o.model, "--model");
    require_flag(o.vocab, "--vocab");
    const auto weights = load_model(o.model);
    const auto vocab = load_vocabulary(o.vocab);
    json cfg;
    try {
      cfg = json::parse(read_file(o.qk_config));
      std::vector<QkFill> fills;
      for (const auto& f : cfg.at("fills")) {
        fills.push_back({f.at("first").get<std::string>(), f.at("second").get<std::string>(),
                         f.value("first_corruptions", std::vector<std::string>{}),
                         f.value("second_corruptions", std::vector<std::string>{})});
      }
      const auto m = qk_dot_products(weights, vocab, cfg.value("template", std::string("He _ the _")),
                                     fills, cfg.at("layer").get<int>(), cfg.at("head").get<int>(),
                                     cfg.value("query_slot", 1));
      if (format == "csv") emit(o, "qk.csv", qk_matrix_csv(m));
      else if (format == "json") emit(o, "qk.json", qk_to_json(m).dump(2) + "\n");
      else emit(o, "qk.txt", format_qk_matrix(m));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kConfig, fmt::format("qk config: {}", e.what()));
    }
    return;
  }

  std::vector<HeadEffect> effects;
  std::vector<Circuit> circuits;
  if (!o.effects.empty()) effects = parse_head_effects_csv(read_file(o.effects));
  if (!o.circuits.empty()) circuits = load_circuits(o);
  if (effects.empty() && circuits.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "analyze needs --circuit, --effects or --qk-config");
  }
  for (const auto& c : circuits) {
    if (c.n_layers != circuits.front().n_layers || c.n_heads != circuits.front().n_heads) {
      throw Error(ErrorCode::kIncompatibleCircuits, "circuits come from different model shapes");
    }
    auto e = head_effects(c.idiom, c);
    effects.insert(effects.end(), e.begin(), e.end());
  }
  const auto table = head_effect_table(effects, o.floor);

  if (format == "text") {
    emit(o, "analysis.txt", format_head_effect_table(table));
    return;
  }
  if (format == "csv") {
    emit(o, "analysis.csv", head_effect_table_csv(table));
    return;
  }
  json j;
  j["table"] = head_effect_table_csv(table);
  j["circuits"] = json::array();
  for (std::size_t k = 0; k < circuits.size(); ++k) {
    const auto& c = circuits[k];
    json jc;
    jc["source"] = o.circuits[k];
    jc["antagonists"] = json::array();
    for (const auto& [edge, d] : antagonistic_components(c)) {
      jc["antagonists"].push_back({{"edge", to_string(edge)}, {"d", d}});
    }
    if (c.corruptions.size() == 1) {
      jc["augmented_reception"] = json::array();
      for (const auto& n : detect_augmented_reception(c, c.corruptions.front().position)) {
        jc["augmented_reception"].push_back(node_to_json(n));
      }
    }
    j["circuits"].push_back(jc);
  }
  emit(o, "analysis.json", j.dump(2) + "\n");
}

void cmd_render(const Options& o) {
  if (!o.sweep.empty()) {
    require_format(format_or(o, "svg"), {"svg"}, "render --sweep");
    const auto sweep = parse_sweep_csv(read_file(o.sweep));
    emit(o, "sweep.svg", export_sweep_chart(sweep.points));
    return;
  }
  require_format(format_or(o, "dot"), {"dot"}, "render");
  const auto circuits = load_circuits(o);
  if (circuits.size() != 1) throw Error(ErrorCode::kInvalidArgument, "render takes one --circuit");
  emit(o, "circuit.dot", render_graph(circuits.front()));
}

void cmd_oracle(const Options& o) {
  const auto in = load_inputs(o);
  const auto format = format_or(o, "json");
  require_format(format, {"json", "csv"}, "oracle");
  for (auto i : corruption_indices(o, in.spec)) {
    const auto report = brute_force_edge_effects(in.weights, in.vocab, in.spec, i, in.spec.layer);
    if (format == "csv") {
      std::string out = "type,src,dst,d\n";
      for (const auto& e : report.effects) {
        out += fmt::format("{},{},{},{}\n", to_string(e.edge.etype), to_string(e.edge.src),
                           to_string(e.edge.dst), e.d);
      }
      emit(o, fmt::format("oracle_{}.csv", i), out);
    } else {
      json j;
      j["layer"] = report.layer;
      j["base_metric"] = report.base_metric;
      j["effects"] = json::array();
      for (const auto& e : report.effects) {
        j["effects"].push_back({{"type", to_string(e.edge.etype)},
                                {"src", node_to_json(e.edge.src)},
                                {"dst", node_to_json(e.edge.dst)},
                                {"d", e.d}});
      }
      emit(o, fmt::format("oracle_{}.json", i), j.dump(2) + "\n");
    }
  }
}

int fail(const std::string& code, const std::string& message, int status) {
  json j;
  j["error"] = {{"code", code}, {"message", message}};
  std::cerr << j.dump() << '\n';
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Circuit discovery by edge-level path patching"};
  app.require_subcommand(1);
  Options o;

  auto model_flags = [&](CLI::App* sub) {
    sub->add_option("--model", o.model, "Tensor container with the model weights");
    sub->add_option("--vocab", o.vocab, "Vocabulary file (id<TAB>token per line)");
    sub->add_option("--experiment", o.experiment, "Experiment config (JSON)");
    sub->add_option("--layer", o.layer, "Evaluation layer L (default: config, else plateau)");
    sub->add_option("--epsilon", o.epsilon, "Plateau tolerance for choosing L (default 0.02)");
  };
  auto output_flags = [&](CLI::App* sub, const std::string& formats) {
    sub->add_option("--out", o.out, "Output directory (default: stdout)");
    sub->add_option("--format", o.format, "Output format: " + formats);
  };
  auto corruption_flag = [&](CLI::App* sub) {
    sub->add_option("--corruption", o.corruption, "Corruption index (default: all)");
  };

  auto* similarity = app.add_subcommand("similarity", "Layerwise meaning similarity and checks");
  model_flags(similarity);
  output_flags(similarity, "json (default), csv");

  auto* discover = app.add_subcommand("discover", "Greedy circuit discovery per corruption");
  model_flags(discover);
  corruption_flag(discover);
  discover->add_option("--tau", o.tau, "Threshold (default: per-corruption value in config)");
  output_flags(discover, "json");

  auto* sweep = app.add_subcommand("sweep", "Edge count and cosine across thresholds");
  model_flags(sweep);
  corruption_flag(sweep);
  sweep->add_option("--tau-grid", o.tau_grid, "start:stop:step or comma list")
      ->capture_default_str();
  sweep->add_option("--threads", o.threads, "Worker threads (0 = hardware)");
  output_flags(sweep, "csv (default), svg");

  auto* suggest = app.add_subcommand("suggest-tau", "Heuristic threshold from a sweep CSV");
  suggest->add_option("--sweep", o.sweep, "Sweep CSV")->required();
  output_flags(suggest, "json");

  auto* merge = app.add_subcommand("merge", "Union of per-corruption circuits");
  merge->add_option("--circuit", o.circuits, "Circuit JSON (repeat)")->required();
  output_flags(merge, "json");

  auto* prune = app.add_subcommand("prune", "Drop heads without non-Query inputs");
  prune->add_option("--circuit", o.circuits, "Circuit JSON")->required();
  model_flags(prune);
  output_flags(prune, "json");

  auto* analyze = app.add_subcommand("analyze", "Head effect table, antagonists, QK products");
  analyze->add_option("--circuit", o.circuits, "Merged circuit JSON (repeat)");
  analyze->add_option("--effects", o.effects, "Head effect CSV (idiom,layer,head,d,query_edge)");
  analyze->add_option("--floor", o.floor, "Display floor for |d|")->capture_default_str();
  analyze->add_option("--qk-config", o.qk_config, "QK dot-product config (JSON)");
  analyze->add_option("--model", o.model, "Tensor container (for --qk-config)");
  analyze->add_option("--vocab", o.vocab, "Vocabulary file (for --qk-config)");
  output_flags(analyze, "text (default), csv, json");

  auto* render = app.add_subcommand("render", "Graphviz circuit or SVG sweep chart");
  render->add_option("--circuit", o.circuits, "Circuit JSON");
  render->add_option("--sweep", o.sweep, "Sweep CSV (renders a chart instead)");
  output_flags(render, "dot (circuits), svg (sweeps)");

  auto* oracle = app.add_subcommand("oracle", "Exhaustive single-edge effects");
  model_flags(oracle);
  corruption_flag(oracle);
  output_flags(oracle, "json (default), csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("invalid_argument", e.what(), 2);
  }

  try {
    if (*similarity) cmd_similarity(o);
    else if (*discover) cmd_discover(o);
    else if (*sweep) cmd_sweep(o);
    else if (*suggest) cmd_suggest(o);
    else if (*merge) cmd_merge(o);
    else if (*prune) cmd_prune(o);
    else if (*analyze) cmd_analyze(o);
    else if (*render) cmd_render(o);
    else if (*oracle) cmd_oracle(o);
  } catch (const Error& e) {
    return fail(std::string(error_code_name(e.code())), e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
