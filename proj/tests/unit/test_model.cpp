// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "patchwork/error.hpp"
#include "patchwork/model.hpp"
#include "patchwork/tokenizer.hpp"
#include "test_support.hpp"

using namespace patchwork;
using patchwork::testing::make_tokens;
using patchwork::testing::random_config;
using patchwork::testing::random_weights;

namespace {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

// Straightforward double-precision transcription of the block equations,
// written independently of model.cpp: returns resid[0..n_layers] rows.
std::vector<Mat> reference_resid(const Weights& w, const std::vector<TokenId>& ids) {
  const auto& c = w.config;
  const int T = static_cast<int>(ids.size());
  auto norm = [&](const Vec& x, const std::vector<float>& scale) {
    const double n = static_cast<double>(x.size());
    double mean = 0.0;
    if (c.norm_kind == NormKind::kLayer) mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= n;
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) / std::sqrt(var + 1e-6) * scale[i];
    return out;
  };
  auto project = [](const Vec& x, const Matrix& m) {
    Vec out(m.cols(), 0.0);
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) out[j] += x[i] * m(i, j);
    return out;
  };
  auto rotate = [](Vec& v, int pos) {
    const std::size_t half = v.size() / 2;
    for (std::size_t i = 0; i < half; ++i) {
      const double theta = pos * std::pow(10000.0, -2.0 * i / static_cast<double>(v.size()));
      const double a = v[i], b = v[i + half];
      v[i] = a * std::cos(theta) - b * std::sin(theta);
      v[i + half] = a * std::sin(theta) + b * std::cos(theta);
    }
  };

  std::vector<Mat> resid;
  Mat x(T, Vec(c.d_model));
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < c.d_model; ++i) {
      x[t][i] = w.token_embedding(ids[t], i);
      if (c.positional_kind == PositionalKind::kLearned) x[t][i] += w.positional(t, i);
    }
  }
  resid.push_back(x);
  for (int l = 0; l < c.n_layers; ++l) {
    const auto& b = w.blocks[l];
    Mat next = x;
    for (int h = 0; h < c.n_heads; ++h) {
      Mat q(T), k(T), v(T);
      for (int t = 0; t < T; ++t) {
        const Vec n = norm(x[t], b.ln1);
        q[t] = project(n, b.attn.W_Q[h]);
        k[t] = project(n, b.attn.W_K[h]);
        v[t] = project(n, b.attn.W_V[h]);
        if (c.positional_kind == PositionalKind::kRotary) {
          rotate(q[t], t);
          rotate(k[t], t);
        }
      }
      for (int t = 0; t < T; ++t) {
        Vec scores(t + 1);
        double top = -1e300;
        for (int s = 0; s <= t; ++s) {
          scores[s] = std::inner_product(q[t].begin(), q[t].end(), k[s].begin(), 0.0) /
                      std::sqrt(static_cast<double>(c.d_head));
          top = std::max(top, scores[s]);
        }
        double sum = 0.0;
        for (auto& s : scores) sum += (s = std::exp(s - top));
        Vec mixed(c.d_head, 0.0);
        for (int s = 0; s <= t; ++s)
          for (int i = 0; i < c.d_head; ++i) mixed[i] += scores[s] / sum * v[s][i];
        const Vec out = project(mixed, b.attn.W_O[h]);
        for (int i = 0; i < c.d_model; ++i) next[t][i] += out[i];
      }
    }
    for (int t = 0; t < T; ++t) {
      Vec hidden = project(norm(next[t], b.ln2), b.mlp.W_in);
      for (int i = 0; i < c.d_mlp; ++i) {
        const double z = hidden[i] + b.mlp.b_in[i];
        hidden[i] = 0.5 * z * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (z + 0.044715 * z * z * z)));
      }
      const Vec out = project(hidden, b.mlp.W_out);
      for (int i = 0; i < c.d_model; ++i) next[t][i] += out[i] + b.mlp.b_out[i];
    }
    x = next;
    resid.push_back(x);
  }
  return resid;
}

}  // namespace

TEST_SUITE("model_core") {

TEST_CASE("tokenize: direct lookup") {
  const Vocabulary vocab({"He", " died"});
  const auto seq = tokenize("He died", vocab);
  CHECK(seq.ids == std::vector<TokenId>{0, 1});
  CHECK(seq.text() == "He died");
}

TEST_CASE("tokenize: spans reassemble the input") {
  const Vocabulary vocab({"That", " was", " a", " piece", " of", " cake"});
  const auto seq = tokenize("That was a piece of cake", vocab);
  CHECK(seq.size() == 6);
  std::string joined;
  for (const auto& s : seq.text_spans) joined += s;
  CHECK(joined == "That was a piece of cake");
}

TEST_CASE("tokenize: greedy longest match") {
  const Vocabulary vocab({"a", "ab", "abc", "b", "c"});
  CHECK(tokenize("abcab", vocab).ids == std::vector<TokenId>{2, 1});
  CHECK(tokenize("cba", vocab).ids == std::vector<TokenId>{4, 3, 0});
}

TEST_CASE("tokenize: unknown character reports its byte offset") {
  const Vocabulary vocab({"He", " died"});
  try {
    tokenize("He died!", vocab);
    FAIL("expected a tokenization error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kTokenization);
    CHECK(std::string(e.what()).find("offset 7") != std::string::npos);
  }
  CHECK_THROWS_AS(tokenize("", vocab), Error);
}

TEST_CASE("vocabulary file round trip keeps leading spaces") {
  const auto dir = patchwork::testing::scratch_dir("vocab");
  const Vocabulary vocab({"He", " kicked", " the", "  two spaces"});
  save_vocabulary(vocab, dir / "vocab.tsv");
  const auto text = patchwork::testing::read_file(dir / "vocab.tsv");
  CHECK(text.find("1\t kicked\n") != std::string::npos);
  const auto back = load_vocabulary(dir / "vocab.tsv");
  REQUIRE(back.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(back.token(i) == vocab.token(i));
}

TEST_CASE("vocabulary rejects duplicates and malformed lines") {
  CHECK_THROWS_AS(Vocabulary({"a", "a"}), Error);
  const auto dir = patchwork::testing::scratch_dir("vocab_bad");
  patchwork::testing::write_file(dir / "bad.tsv", "0\ta\nx\tb\n");
  CHECK_THROWS_AS(load_vocabulary(dir / "bad.tsv"), Error);
  CHECK_THROWS_AS(load_vocabulary(dir / "missing.tsv"), Error);
}

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.d_head = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c.d_head = 3;
  c.positional_kind = PositionalKind::kRotary;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("norms against hand-computed values") {
  const std::vector<float> x{3.0f, 4.0f}, ones{1.0f, 1.0f};
  std::vector<float> out(2);
  apply_norm(NormKind::kRms, x, ones, out);
  // rms = sqrt(12.5)
  CHECK(out[0] == doctest::Approx(0.848528).epsilon(1e-5));
  CHECK(out[1] == doctest::Approx(1.131371).epsilon(1e-5));
  const std::vector<float> y{1.0f, 3.0f}, scale{2.0f, 0.5f};
  apply_norm(NormKind::kLayer, y, scale, out);
  CHECK(out[0] == doctest::Approx(-2.0).epsilon(1e-5));
  CHECK(out[1] == doctest::Approx(0.5).epsilon(1e-5));
}

TEST_CASE("gelu tanh form") {
  CHECK(gelu(0.0f) == 0.0f);
  CHECK(gelu(1.0f) == doctest::Approx(0.8411920).epsilon(1e-6));
  CHECK(gelu(-1.0f) == doctest::Approx(-0.1588080).epsilon(1e-5));
  CHECK(gelu(10.0f) == doctest::Approx(10.0).epsilon(1e-6));
}

TEST_CASE("rotary: identity at position 0, rotation of the first pair") {
  std::vector<float> v{0.3f, -1.0f, 2.0f, 0.5f};
  const auto original = v;
  apply_rotary(v, 0);
  CHECK(v == original);
  std::vector<float> e{1.0f, 0.0f, 0.0f, 0.0f};
  apply_rotary(e, 1);
  CHECK(e[0] == doctest::Approx(std::cos(1.0)));
  CHECK(e[2] == doctest::Approx(std::sin(1.0)));
  CHECK(e[1] == 0.0f);
  CHECK(e[3] == 0.0f);
}

TEST_CASE("rotary: dot product depends only on the relative offset") {
  std::mt19937 rng(11);
  std::normal_distribution<float> n;
  std::vector<float> q(8), k(8);
  for (auto& x : q) x = n(rng);
  for (auto& x : k) x = n(rng);
  auto dot_at = [&](int pq, int pk) {
    auto a = q, b = k;
    apply_rotary(a, pq);
    apply_rotary(b, pk);
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
  };
  CHECK(dot_at(5, 2) == doctest::Approx(dot_at(3, 0)).epsilon(1e-5));
  CHECK(dot_at(7, 7) == doctest::Approx(dot_at(0, 0)).epsilon(1e-5));
}

TEST_CASE("forward: causality, normalisation and residual recomposition") {
  std::mt19937 rng(1234);
  for (int trial = 0; trial < 20; ++trial) {
    const auto config = random_config(rng);
    const auto w = random_weights(config, 100 + trial);
    const auto tokens = patchwork::testing::random_tokens(config, 1 + trial % config.max_seq, rng);
    const auto cache = forward(w, tokens);
    const int T = tokens.size();
    REQUIRE(cache.computed_layers() == config.n_layers);
    REQUIRE(cache.logits.rows() == T);
    for (int l = 0; l < config.n_layers; ++l) {
      const auto& act = cache.layers[l];
      for (int h = 0; h < config.n_heads; ++h) {
        for (int i = 0; i < T; ++i) {
          double sum = 0.0;
          for (int j = 0; j < T; ++j) {
            if (j > i) CHECK(act.pattern(h, i, j) == 0.0f);
            sum += act.pattern(h, i, j);
          }
          CHECK(std::abs(sum - 1.0) <= 1e-5);
        }
      }
      for (int t = 0; t < T; ++t) {
        double worst = 0.0, scale = 0.0;
        for (int d = 0; d < config.d_model; ++d) {
          double delta = cache.resid[l + 1](t, d) - cache.resid[l](t, d) - act.mlp_out(t, d);
          for (int h = 0; h < config.n_heads; ++h) delta -= act.z(h, t, d);
          worst = std::max(worst, std::abs(delta));
          scale = std::max(scale, static_cast<double>(std::abs(cache.resid[l + 1](t, d))));
        }
        CHECK(worst <= 1e-5 * (1.0 + scale));
      }
    }
  }
}

TEST_CASE("forward matches an independent double-precision recomputation") {
  std::mt19937 rng(77);
  for (int trial = 0; trial < 12; ++trial) {
    auto config = random_config(rng);
    config.positional_kind = static_cast<PositionalKind>(trial % 3);
    const auto w = random_weights(config, 900 + trial);
    const auto tokens = patchwork::testing::random_tokens(config, config.max_seq, rng);
    const auto cache = forward(w, tokens);
    const auto ref = reference_resid(w, tokens.ids);
    for (int l = 0; l <= config.n_layers; ++l) {
      for (int t = 0; t < tokens.size(); ++t) {
        for (int d = 0; d < config.d_model; ++d) {
          const double want = ref[l][t][d];
          CHECK(std::abs(cache.resid[l](t, d) - want) <= 1e-4 * (1.0 + std::abs(want)));
        }
      }
    }
  }
}

TEST_CASE("forward is deterministic and rejects long sequences") {
  std::mt19937 rng(5);
  const auto config = random_config(rng);
  const auto w = random_weights(config, 5);
  const auto tokens = patchwork::testing::random_tokens(config, config.max_seq, rng);
  CHECK(forward(w, tokens) == forward(w, tokens));
  auto long_seq = tokens;
  long_seq.ids.push_back(0);
  long_seq.text_spans.push_back("x");
  try {
    forward(w, long_seq);
    FAIL("expected kSequenceTooLong");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kSequenceTooLong);
  }
}

TEST_CASE("copy head of the reception fixture attends to token 1") {
  const auto fx = patchwork::testing::shipped_fixture("reception");
  const auto tokens = tokenize(fx.experiment.idiom, fx.vocab);
  const auto cache = forward(fx.weights, tokens);
  const int last = tokens.size() - 1;
  const auto& act = cache.layers[1];
  CHECK(act.pattern(0, last, 1) >= 0.99f);

  // Direct matmul oracle: softmax of q . k / sqrt(d_head) over the cached vectors.
  const int dh = fx.weights.config.d_head;
  std::vector<double> scores(last + 1);
  double top = -1e300;
  for (int s = 0; s <= last; ++s) {
    double dot = 0.0;
    for (int i = 0; i < dh; ++i) dot += static_cast<double>(act.q(0, last, i)) * act.k(0, s, i);
    scores[s] = dot / std::sqrt(static_cast<double>(dh));
    top = std::max(top, scores[s]);
  }
  double sum = 0.0;
  for (auto& s : scores) sum += (s = std::exp(s - top));
  for (int s = 0; s <= last; ++s) CHECK(std::abs(scores[s] / sum - act.pattern(0, last, s)) <= 1e-5);
}

TEST_CASE("embedding_cosine") {
  ModelConfig c;
  c.vocab_size = 3;
  c.d_model = 2;
  Weights w = Weights::zeros(c);
  w.token_embedding(0, 0) = 1.0f;
  w.token_embedding(1, 1) = 2.0f;
  CHECK(embedding_cosine(0, 0, w) == 1.0);
  CHECK(embedding_cosine(0, 1, w) == 0.0);
  try {
    embedding_cosine(0, 2, w);
    FAIL("expected kDegenerateVector");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerateVector);
  }
}

TEST_CASE("layer_cosine") {
  ActivationCache a, b;
  a.n_tokens = b.n_tokens = 1;
  a.resid.assign(1, Matrix(1, 2));
  b.resid.assign(1, Matrix(1, 2));
  a.resid[0](0, 0) = 1.0f;
  b.resid[0](0, 1) = 1.0f;
  CHECK(layer_cosine(a, b, 0) == 0.0);
  CHECK(layer_cosine(a, a, 0) == 1.0);

  const auto fx = patchwork::testing::shipped_fixture("single_head");
  const auto idiom = forward(fx.weights, tokenize(fx.experiment.idiom, fx.vocab));
  const auto meaning = forward(fx.weights, tokenize(fx.experiment.meaning, fx.vocab));
  for (int l = 0; l <= fx.weights.config.n_layers; ++l) {
    CHECK(layer_cosine(idiom, idiom, l) == doctest::Approx(1.0).epsilon(1e-12));
    // separate arithmetic path
    const auto x = idiom.final_resid(l);
    const auto y = meaning.final_resid(l);
    long double dot = 0, xx = 0, yy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      dot += static_cast<long double>(x[i]) * y[i];
      xx += static_cast<long double>(x[i]) * x[i];
      yy += static_cast<long double>(y[i]) * y[i];
    }
    const double want = static_cast<double>(dot / std::sqrt(xx * yy));
    CHECK(std::abs(layer_cosine(idiom, meaning, l) - want) <= 1e-6);
  }
}

}  // TEST_SUITE
