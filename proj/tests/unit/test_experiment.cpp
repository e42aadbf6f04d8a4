// Copyright 2026 The Patchwork Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "patchwork/error.hpp"
#include "patchwork/experiment.hpp"
#include "test_support.hpp"

using namespace patchwork;
using nlohmann::json;

namespace {

const CheckResult* find_check(const CorruptionReport& r, const std::string& name) {
  for (const auto& c : r.checks) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("config parse and serialise round trip") {
  const auto j = json::parse(R"({
    "name": "kick",
    "idiom": "He kicked the bucket",
    "meaning": "He died",
    "layer": 0,
    "epsilon": 0.03,
    "corruptions": [{"string": "He booted the bucket", "position": 1, "tau": 0.05}]
  })");
  const auto spec = parse_experiment(j);
  CHECK(spec.name == "kick");
  CHECK(spec.layer == 0);
  CHECK(spec.epsilon == 0.03);
  CHECK(spec.cosine_floor == kDefaultCosineFloor);
  REQUIRE(spec.corruptions.size() == 1);
  CHECK(spec.corruptions[0] == CorruptionSpec{"He booted the bucket", 1, 0.05});
  const auto again = parse_experiment(experiment_to_json(spec));
  CHECK(again.corruptions == spec.corruptions);
  CHECK(again.layer == spec.layer);

  const auto dir = patchwork::testing::scratch_dir("experiment");
  save_experiment(spec, dir / "e.json");
  CHECK(load_experiment(dir / "e.json").idiom == spec.idiom);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse_experiment(json::parse(R"({"idiom": "x"})")), Error);
  CHECK_THROWS_AS(parse_experiment(json::parse(
                      R"({"idiom": "a", "meaning": "b", "epsilon": -1, "corruptions": []})")),
                  Error);
  CHECK_THROWS_AS(load_experiment("/nonexistent.json"), Error);

  const auto fx = patchwork::testing::shipped_fixture("single_head");
  auto spec = fx.experiment;
  CHECK_NOTHROW(check_experiment(spec, fx.vocab, fx.weights.config));
  spec.corruptions[0].position = 2;
  CHECK_THROWS_AS(check_experiment(spec, fx.vocab, fx.weights.config), Error);
  spec = fx.experiment;
  spec.corruptions[0].text = "He booted a bucket";
  CHECK_THROWS_AS(check_experiment(spec, fx.vocab, fx.weights.config), Error);
  spec = fx.experiment;
  spec.corruptions[0].tau = 0.0;
  CHECK_THROWS_AS(check_experiment(spec, fx.vocab, fx.weights.config), Error);
  spec = fx.experiment;
  spec.layer = fx.weights.config.n_layers;
  CHECK_THROWS_AS(check_experiment(spec, fx.vocab, fx.weights.config), Error);
}

TEST_CASE("candidate_corruptions: duplicate embedding ranks first, ties by id") {
  std::mt19937 rng(3);
  ModelConfig c;
  c.vocab_size = 8;
  c.d_model = 6;
  auto w = patchwork::testing::random_weights(c, 31);
  for (int i = 0; i < c.d_model; ++i) w.token_embedding(5, i) = w.token_embedding(2, i);
  const auto from2 = candidate_corruptions(2, 3, w);
  REQUIRE(from2.size() == 3);
  CHECK(from2[0].id == 5);
  CHECK(from2[0].cosine == doctest::Approx(1.0));
  // Token 7 also duplicated: the tie between 2 and 5 goes to the lower id.
  for (int i = 0; i < c.d_model; ++i) w.token_embedding(7, i) = w.token_embedding(2, i);
  const auto from7 = candidate_corruptions(7, 2, w);
  CHECK(from7[0].id == 2);
  CHECK(from7[1].id == 5);
}

TEST_CASE("candidate_corruptions: full ranking is a sorted permutation") {
  ModelConfig c;
  c.vocab_size = 10;
  c.d_model = 4;
  const auto w = patchwork::testing::random_weights(c, 4);
  const auto all = candidate_corruptions(3, 9, w);
  std::set<TokenId> ids;
  for (std::size_t i = 0; i < all.size(); ++i) {
    ids.insert(all[i].id);
    if (i) CHECK(all[i - 1].cosine >= all[i].cosine);
  }
  CHECK(ids.size() == 9);
  CHECK_FALSE(ids.count(3));
  CHECK_THROWS_AS(candidate_corruptions(3, 10, w), Error);
  CHECK_THROWS_AS(candidate_corruptions(3, 0, w), Error);
}

TEST_CASE("similarity of the meaning string with itself is all ones") {
  const auto fx = patchwork::testing::shipped_fixture("reception");
  auto spec = fx.experiment;
  spec.idiom = spec.meaning;
  spec.corruptions.clear();
  const auto curves = layerwise_similarity(spec, fx.weights, fx.vocab);
  REQUIRE(curves.idiom.size() == static_cast<std::size_t>(fx.weights.config.n_layers + 1));
  for (double v : curves.idiom) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("select_layer rules") {
  CHECK(select_layer(std::vector<double>{0.3, 0.3, 0.3, 0.3}, 0.02) == 0);
  // step appears in the output of block 4 (residual index 5)
  CHECK(select_layer(std::vector<double>{0.1, 0.1, 0.1, 0.1, 0.1, 0.5, 0.5, 0.5}, 0.02) == 4);
  // steadily rising curve never plateaus: last block
  CHECK(select_layer(std::vector<double>{0.0, 0.1, 0.2, 0.3}, 0.02) == 2);
  CHECK_THROWS_AS(select_layer(std::vector<double>{}, 0.02), Error);
  CHECK_THROWS_AS(select_layer(std::vector<double>{0.1}, 0.0), Error);
}

TEST_CASE("select_layer is monotone in epsilon") {
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> margin(6);
    for (auto& m : margin) m = u(rng);
    int previous = select_layer(margin, 1e-4);
    for (double eps = 2e-4; eps < 1.0; eps *= 1.7) {
      const int L = select_layer(margin, eps);
      CHECK(L <= previous);
      previous = L;
    }
  }
}

TEST_CASE("step-margin fixture: margin jumps at the designed block and is flat after") {
  const auto fx = patchwork::testing::shipped_fixture("step_margin");
  const auto curves = layerwise_similarity(fx.experiment, fx.weights, fx.vocab);
  const int design = fx.spec.design_layer;
  const auto& m = curves.margin;
  for (int i = 1; i <= design; ++i) CHECK(std::abs(m[i] - m[i - 1]) < 1e-6);
  CHECK(m[design + 1] - m[design] > 0.1);
  for (std::size_t i = design + 2; i < m.size(); ++i) CHECK(std::abs(m[i] - m[i - 1]) < 1e-6);
  CHECK(select_layer(curves, 0.02) == design);
}

TEST_CASE("validate_corruption reports") {
  const auto fx = patchwork::testing::shipped_fixture("single_head");
  auto spec = fx.experiment;
  const auto ok = validate_corruption(spec, 0, fx.weights, fx.vocab);
  CHECK(ok.passed);
  CHECK(ok.manual_review.find("manual review required") == 0);

  spec.corruptions.push_back({"He booted a bucket", 1, 0.1});
  const auto two = validate_corruption(spec, 2, fx.weights, fx.vocab);
  CHECK_FALSE(two.passed);
  REQUIRE(find_check(two, "single-token corruption"));
  CHECK_FALSE(find_check(two, "single-token corruption")->passed);

  spec.corruptions.push_back({spec.idiom, 1, 0.1});
  const auto same = validate_corruption(spec, 3, fx.weights, fx.vocab);
  CHECK_FALSE(same.passed);
  CHECK(find_check(same, "single-token corruption")->detail == "corruption identical to original");

  spec.corruptions.push_back({"He slept the bucket", 1, 0.1});
  const auto far = validate_corruption(spec, 4, fx.weights, fx.vocab);
  CHECK_FALSE(far.passed);
  CHECK_FALSE(find_check(far, "embedding cosine")->passed);

  const auto j = report_to_json(ok);
  CHECK(j["passed"] == true);
  CHECK(j["checks"].is_array());
}

}  // TEST_SUITE
