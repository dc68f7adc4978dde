#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/reference.hpp"
#include "tmlm/engine.hpp"
#include "tmlm/error.hpp"
#include "tmlm/rng.hpp"

using namespace tmlm;

namespace {

std::vector<float> random_vec(std::size_t n, Xoshiro256& rng, double scale = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal() * scale);
  return v;
}

ref::Vec widen(const std::vector<float>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = ref::toy_config();
  CHECK_NOTHROW(c.validate());
  CHECK(ModelConfig::from_json(c.to_json()) == c);
  c.n_kv_heads = 3;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = ref::toy_config();
  c.d_head = 15;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("embed") {
  const Model m = ref::random_model(ref::toy_config(2, 8, 2, 2, 16, 20), 1);
  const Matrix none = embed(m, std::vector<TokenId>{});
  CHECK(none.rows() == 0);
  CHECK(none.cols() == 8);

  const Matrix twice = embed(m, std::vector<TokenId>{5, 5});
  CHECK(std::equal(twice.row(0).begin(), twice.row(0).end(), twice.row(1).begin()));

  Xoshiro256 rng(4);
  std::vector<TokenId> ids;
  for (int i = 0; i < 30; ++i) ids.push_back(static_cast<TokenId>(rng.below(20)));
  const Matrix e = embed(m, ids);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto want = m.weights.token_embedding.row(ids[i]);
    CHECK(std::equal(want.begin(), want.end(), e.row(i).begin()));
  }
  CHECK_THROWS_AS(embed(m, std::vector<TokenId>{20}), VocabularyError);
}

TEST_CASE("attention_block on a single position is the value path") {
  for (std::size_t kv : {2u, 1u}) {
    const ModelConfig c = ref::toy_config(1, 8, 2, kv, 16, 10);
    const Model m = ref::random_model(c, 2);
    const auto& lw = m.weights.layer(1);
    Xoshiro256 rng(3);
    const auto x = random_vec(8, rng);
    const auto out = attention_block(c, lw, x, Matrix(0, 8), 0);

    // Softmax over one score is 1, so every head returns its kv head's value.
    const auto v = matvec(lw.w_v, x);
    std::vector<float> concat;
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      const std::size_t kvh = h / (c.n_heads / c.n_kv_heads);
      concat.insert(concat.end(), v.begin() + kvh * c.d_head, v.begin() + (kvh + 1) * c.d_head);
    }
    CHECK(ref::max_abs_diff(out, matvec(lw.w_o, concat)) <= 1e-6);
  }
}

TEST_CASE("attention_block with zero values is zero") {
  const ModelConfig c = ref::toy_config(1, 8, 2, 2, 16, 10);
  Model m = ref::random_model(c, 5);
  auto& lw = m.weights.layer(1);
  lw.w_v = Matrix(lw.w_v.rows(), lw.w_v.cols());
  Xoshiro256 rng(6);
  Matrix hist(0, 8);
  for (int i = 0; i < 4; ++i) hist.append_row(random_vec(8, rng));
  for (float v : attention_block(c, lw, random_vec(8, rng), hist, 4)) CHECK(v == 0.0f);
}

TEST_CASE("attention_block matches the naive reference") {
  for (std::size_t kv : {2u, 1u}) {
    const ModelConfig c = ref::toy_config(1, 8, 2, kv, 16, 10);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Model m = ref::random_model(c, seed);
      Xoshiro256 rng(seed + 100);
      Matrix hist(0, 8);
      std::vector<ref::Vec> ref_hist;
      for (int i = 0; i < 4; ++i) {
        const auto r = random_vec(8, rng);
        hist.append_row(r);
        ref_hist.push_back(widen(r));
      }
      const auto x = random_vec(8, rng);
      const auto got = attention_block(c, m.weights.layer(1), x, hist, 4);
      const auto want = ref::attention(c, m.weights.layer(1), widen(x), ref_hist, 4);
      CHECK(ref::max_abs_diff(got, want) <= 1e-5);
    }
  }
}

TEST_CASE("decoder_layer") {
  const ModelConfig c = ref::toy_config(1, 8, 2, 2, 16, 10);
  const Model m = ref::random_model(c, 8);
  const auto& lw = m.weights.layer(1);
  Xoshiro256 rng(9);
  Matrix h1(0, 8), h2(0, 8);
  std::vector<ref::Vec> ref_h1;
  for (int i = 0; i < 5; ++i) {
    const auto a = random_vec(8, rng);
    h1.append_row(a);
    ref_h1.push_back(widen(a));
    h2.append_row(random_vec(8, rng));
  }
  const auto x = random_vec(8, rng);

  CHECK(decoder_layer(c, lw, x, h1, 5, true) == decoder_layer(c, lw, x, h2, 5, true));
  CHECK(decoder_layer(c, lw, x, h1, 5, false) != decoder_layer(c, lw, x, h2, 5, false));
  CHECK(ref::max_abs_diff(decoder_layer(c, lw, x, h1, 5, false), ref::layer(c, lw, widen(x), ref_h1, 5, false)) <= 1e-5);
  CHECK(ref::max_abs_diff(decoder_layer(c, lw, x, h1, 5, true), ref::layer(c, lw, widen(x), ref_h1, 5, true)) <= 1e-5);

  LayerWeights zero = lw;
  for (auto* w : {&zero.w_q, &zero.w_k, &zero.w_v, &zero.w_o, &zero.w_gate, &zero.w_up, &zero.w_down}) {
    *w = Matrix(w->rows(), w->cols());
  }
  CHECK(decoder_layer(c, zero, x, h1, 5, false) == x);
}

TEST_CASE("forward_prompt matches the naive reference") {
  const ModelConfig c = ref::toy_config(3, 16, 4, 2, 32, 30);
  const Model m = ref::random_model(c, 10);
  Xoshiro256 rng(11);
  for (int t = 0; t < 5; ++t) {
    std::vector<TokenId> toks;
    for (std::size_t n = 1 + rng.below(8); n > 0; --n) toks.push_back(static_cast<TokenId>(rng.below(30)));
    const auto got = forward_prompt(m, toks, InterventionPlan(c.n_layers));
    const auto want = ref::forward(m, toks);
    CHECK(ref::max_abs_diff(got.logits, want.logits) <= 1e-4);
    CHECK(got.trace.n_tokens() == toks.size());
    CHECK(got.trace.n_layers() == 3);
  }
}

TEST_CASE("empty plan is bit-identical to the default plan") {
  const ModelConfig c = ref::toy_config(2, 16, 2, 2, 32, 30);
  const Model m = ref::random_model(c, 12);
  const std::vector<TokenId> toks{1, 2, 3, 4};
  CHECK(forward_prompt(m, toks, InterventionPlan()).logits == forward_prompt(m, toks, InterventionPlan(2)).logits);
}
