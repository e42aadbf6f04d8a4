// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0

#include "patchwork/oracle.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "patchwork/discovery.hpp"
#include "patchwork/error.hpp"

namespace patchwork {

namespace {

using Vec = std::vector<double>;

struct LayerTrace {
  // [head][token]
  std::vector<std::vector<Vec>> q, k, v, z;
};

struct Trace {
  std::vector<std::vector<Vec>> resid;  // [index][token]
  std::vector<LayerTrace> layers;
};

Vec normed(const Vec& x, const std::vector<float>& scale, NormKind kind) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  if (kind == NormKind::kLayer) {
    for (double xi : x) mean += xi;
    mean /= n;
  }
  double var = 0.0;
  for (double xi : x) var += (xi - mean) * (xi - mean);
  const double inv = 1.0 / std::sqrt(var / n + static_cast<double>(kNormEpsilon));
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv * scale[i];
  return out;
}

Vec times(const Vec& x, const Matrix& m) {
  Vec out(m.cols(), 0.0);
  for (int r = 0; r < m.rows(); ++r) {
    if (x[r] == 0.0) continue;
    for (int c = 0; c < m.cols(); ++c) out[c] += x[r] * m(r, c);
  }
  return out;
}

void rotate(Vec& v, int position) {
  const std::size_t half = v.size() / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(static_cast<double>(kRotaryBase),
                                 -2.0 * static_cast<double>(i) / static_cast<double>(v.size()));
    const double angle = position * freq;
    const double a = v[i], b = v[i + half];
    v[i] = a * std::cos(angle) - b * std::sin(angle);
    v[i + half] = a * std::sin(angle) + b * std::cos(angle);
  }
}

double gelu_tanh(double x) {
  const double c = std::sqrt(2.0 / std::acos(-1.0));
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Trace run(const Weights& w, const std::vector<TokenId>& ids, int last_layer,
          const std::set<EdgeId>& patched, const Trace* src) {
  const auto& cfg = w.config;
  const int T = static_cast<int>(ids.size());
  const int D = cfg.d_model;
  Trace tr;
  std::vector<Vec> x(T, Vec(D));
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < D; ++i) {
      x[t][i] = w.token_embedding(ids[t], i);
      if (cfg.positional_kind == PositionalKind::kLearned) x[t][i] += w.positional(t, i);
    }
  }
  tr.resid.push_back(x);

  auto is_patched = [&](const EdgeId& e) { return src && patched.contains(e); };

  for (int l = 0; l <= last_layer; ++l) {
    const auto& block = w.blocks[l];
    LayerTrace lt;
    lt.q.assign(cfg.n_heads, std::vector<Vec>(T));
    lt.k = lt.v = lt.z = lt.q;
    std::vector<Vec> xn(T);
    for (int t = 0; t < T; ++t) xn[t] = normed(x[t], block.ln1, cfg.norm_kind);
    for (int h = 0; h < cfg.n_heads; ++h) {
      for (int t = 0; t < T; ++t) {
        lt.q[h][t] = times(xn[t], block.attn.W_Q[h]);
        lt.k[h][t] = times(xn[t], block.attn.W_K[h]);
        lt.v[h][t] = times(xn[t], block.attn.W_V[h]);
        if (cfg.positional_kind == PositionalKind::kRotary) {
          rotate(lt.q[h][t], t);
          rotate(lt.k[h][t], t);
        }
      }
    }

    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_head));
    for (int h = 0; h < cfg.n_heads; ++h) {
      for (int t = 0; t < T; ++t) {
        if (is_patched(EdgeId::head_out(l, h, t))) {
          lt.z[h][t] = src->layers[l].z[h][t];
          continue;
        }
        const Vec& cross_q = is_patched(EdgeId::query(l, h, t)) ? src->layers[l].q[h][t]
                                                                 : lt.q[h][t];
        Vec scores(t + 1);
        for (int s = 0; s < t; ++s) {
          const Vec& key = is_patched(EdgeId::key(l, h, s, t)) ? src->layers[l].k[h][s]
                                                                : lt.k[h][s];
          scores[s] = dot(cross_q, key) * scale;
        }
        scores[t] = dot(lt.q[h][t], lt.k[h][t]) * scale;
        const double top = *std::max_element(scores.begin(), scores.end());
        double total = 0.0;
        for (double& sc : scores) total += (sc = std::exp(sc - top));
        Vec mixed(cfg.d_head, 0.0);
        for (int s = 0; s <= t; ++s) {
          const Vec& value = (s < t && is_patched(EdgeId::value(l, h, s, t)))
                                 ? src->layers[l].v[h][s]
                                 : lt.v[h][s];
          for (int i = 0; i < cfg.d_head; ++i) mixed[i] += scores[s] / total * value[i];
        }
        lt.z[h][t] = times(mixed, block.attn.W_O[h]);
      }
    }

    for (int t = 0; t < T; ++t) {
      for (int h = 0; h < cfg.n_heads; ++h) {
        for (int i = 0; i < D; ++i) x[t][i] += lt.z[h][t][i];
      }
      Vec hidden = times(normed(x[t], block.ln2, cfg.norm_kind), block.mlp.W_in);
      for (int j = 0; j < cfg.d_mlp; ++j) hidden[j] = gelu_tanh(hidden[j] + block.mlp.b_in[j]);
      const Vec out = times(hidden, block.mlp.W_out);
      for (int i = 0; i < D; ++i) x[t][i] += out[i] + block.mlp.b_out[i];
    }
    tr.layers.push_back(std::move(lt));
    tr.resid.push_back(x);
  }
  return tr;
}

double final_cosine(const Trace& a, const Trace& b, int index) {
  const Vec& x = a.resid[index].back();
  const Vec& y = b.resid[index].back();
  const double nx = std::sqrt(dot(x, x));
  const double ny = std::sqrt(dot(y, y));
  if (nx == 0.0 || ny == 0.0) {
    throw Error(ErrorCode::kDegenerateVector, "zero residual in oracle metric");
  }
  return dot(x, y) / (nx * ny);
}

}  // namespace

double EdgeEffectReport::max_abs() const {
  double m = 0.0;
  for (const auto& e : effects) m = std::max(m, std::abs(e.d));
  return m;
}

std::optional<double> EdgeEffectReport::min_positive_abs() const {
  std::optional<double> m;
  for (const auto& e : effects) {
    const double a = std::abs(e.d);
    if (a > 0.0 && (!m || a < *m)) m = a;
  }
  return m;
}

double oracle_metric(const Weights& weights, const std::vector<TokenId>& clean,
                     const std::vector<TokenId>& corrupt, const std::vector<TokenId>& meaning,
                     int layer, const std::set<EdgeId>& patched) {
  if (clean.size() != corrupt.size()) {
    throw Error(ErrorCode::kLengthMismatch, "clean and corrupted runs differ in length");
  }
  if (layer < 0 || layer >= weights.config.n_layers) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("layer {} out of range", layer));
  }
  const Trace corrupt_run = run(weights, corrupt, layer, {}, nullptr);
  const Trace meaning_run = run(weights, meaning, layer, {}, nullptr);
  const Trace patched_run = run(weights, clean, layer, patched, &corrupt_run);
  return final_cosine(patched_run, meaning_run, layer + 1);
}

EdgeEffectReport brute_force_edge_effects(const Weights& weights, const Vocabulary& vocab,
                                          const ExperimentSpec& spec, std::size_t corruption_index,
                                          std::optional<int> layer) {
  if (corruption_index >= spec.corruptions.size()) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("no corruption #{}", corruption_index));
  }
  check_experiment(spec, vocab, weights.config);
  const int L = layer ? *layer : resolve_layer(spec, weights, vocab);
  const auto clean = tokenize(spec.idiom, vocab).ids;
  const auto corrupt = tokenize(spec.corruptions[corruption_index].text, vocab).ids;
  const auto meaning = tokenize(spec.meaning, vocab).ids;

  const CircuitGraph graph(weights.config, static_cast<int>(clean.size()), L);
  if (graph.num_edges() > kOracleEdgeLimit) {
    throw Error(ErrorCode::kUniverseTooLarge,
                fmt::format("{} edges exceed the oracle limit of {}", graph.num_edges(),
                            kOracleEdgeLimit));
  }

  const Trace corrupt_run = run(weights, corrupt, L, {}, nullptr);
  const Trace meaning_run = run(weights, meaning, L, {}, nullptr);
  EdgeEffectReport report;
  report.layer = L;
  report.base_metric = final_cosine(run(weights, clean, L, {}, nullptr), meaning_run, L + 1);
  for (const auto& edge : graph.edges()) {
    const Trace patched = run(weights, clean, L, {edge}, &corrupt_run);
    report.effects.push_back({edge, report.base_metric - final_cosine(patched, meaning_run, L + 1)});
  }
  return report;
}

}  // namespace patchwork
