#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "support/reference.hpp"
#include "tmlm/cache.hpp"
#include "tmlm/datasets.hpp"
#include "tmlm/engine.hpp"
#include "tmlm/metrics.hpp"
#include "tmlm/rng.hpp"
#include "tmlm/runner.hpp"
#include "tmlm/tokenizer.hpp"
#include "tmlm/weights_io.hpp"

using namespace tmlm;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

InterventionSpec spec_of(InterventionKind k) {
  InterventionSpec s;
  s.kind = std::move(k);
  return s;
}

std::vector<TokenId> random_tokens(Xoshiro256& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> t;
  for (std::size_t i = 0; i < n; ++i) t.push_back(static_cast<TokenId>(rng.below(vocab)));
  return t;
}

GenerationOptions greedy(std::size_t max_new, CachePolicy cache = CachePolicy::automatic) {
  GenerationOptions o;
  o.max_new = max_new;
  o.cache = cache;
  o.keep_logits = true;
  return o;
}

double max_diff(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) return INFINITY;
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, double(std::abs(a[i] - b[i])));
  return d;
}

double max_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  return max_diff(a.data(), b.data());
}

Model toy_model() { return make_toy_model(ref::toy_config(4, 64, 4, 4, 128, 64), 1234); }

bool identical(const GenerationResult& a, const GenerationResult& b) {
  return a.generated_tokens == b.generated_tokens && *a.per_step_logits == *b.per_step_logits;
}

Outcome vacuous_identity() {
  Outcome out;
  const Model m = toy_model();
  Xoshiro256 rng(1);
  const InterventionPlan none(4);
  for (int i = 0; i < 50; ++i) {
    const auto prompt = random_tokens(rng, 2 + rng.below(11), 64);
    const auto base = generate(m, prompt, none, greedy(8));
    out.require(identical(base, generate(m, prompt, resolve(spec_of(Freeze{4}), m, prompt), greedy(8))),
                "freeze k=4 differs on prompt " + std::to_string(i));

    const auto donor = random_tokens(rng, prompt.size(), 64);
    Patch p{4, {}, {"", donor, {}}};
    for (std::size_t j = 0; j + 1 < prompt.size(); ++j) {
      p.targets.push_back(j);
      p.donor.positions.push_back(j);
    }
    out.require(identical(base, generate(m, prompt, resolve(spec_of(p), m, prompt), greedy(8))),
                "patch at layer 4 differs on prompt " + std::to_string(i));

    const std::vector<TokenId> one{prompt.front()};
    const auto base1 = generate(m, one, none, greedy(1));
    for (std::size_t k = 1; k <= 4; ++k) {
      for (const auto& s : {spec_of(Freeze{k}), spec_of(ShuffleNoise{k, 7}), spec_of(RandomNoise{k, 7})}) {
        out.require(identical(base1, generate(m, one, resolve(s, m, one), greedy(1))),
                    s.name() + " k=" + std::to_string(k) + " differs on a 1-token prompt");
      }
    }
  }
  return out;
}

Outcome cache_equivalence() {
  Outcome out;
  const Model m = toy_model();
  Xoshiro256 rng(2);
  for (int i = 0; i < 20; ++i) {
    const auto prompt = random_tokens(rng, 2 + rng.below(11), 64);
    const auto plan = resolve(spec_of(Freeze{2}), m, prompt);
    const auto none = generate(m, prompt, plan, greedy(20, CachePolicy::none));
    const auto standard = generate(m, prompt, plan, greedy(20, CachePolicy::standard));
    const auto aware = generate(m, prompt, plan, greedy(20, CachePolicy::freeze_aware));
    out.require(none.generated_tokens.size() == 20, "short generation");
    out.require(none.generated_tokens == standard.generated_tokens && none.generated_tokens == aware.generated_tokens,
                "token sequences differ on prompt " + std::to_string(i));
    const double d = std::max(max_diff(*none.per_step_logits, *standard.per_step_logits),
                              max_diff(*none.per_step_logits, *aware.per_step_logits));
    out.require(d <= 1e-5, "logit diff " + std::to_string(d) + " on prompt " + std::to_string(i));
  }
  return out;
}

Outcome embedding_patch() {
  Outcome out;
  const Model m = toy_model();
  Xoshiro256 rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto prompt = random_tokens(rng, 1 + rng.below(12), 64);
    const std::size_t p = rng.below(prompt.size());
    const auto t = static_cast<TokenId>(rng.below(64));
    const Patch patch{0, {p}, {"", {t}, {0}}};
    auto substituted = prompt;
    substituted[p] = t;
    const auto got = forward_prompt(m, prompt, resolve(spec_of(patch), m, prompt)).logits;
    const auto want = forward_prompt(m, substituted, InterventionPlan(4)).logits;
    const double d = max_diff(got, want);
    out.require(d <= 1e-6, "logit diff " + std::to_string(d) + " on triple " + std::to_string(i));
  }
  return out;
}

Outcome skip_context_independence() {
  Outcome out;
  const Model m = toy_model();
  Xoshiro256 rng(4);
  const TokenId last = 17;
  std::vector<float> first;
  for (int i = 0; i < 20; ++i) {
    auto ctx = random_tokens(rng, rng.below(12), 64);
    ctx.push_back(last);
    const auto logits = forward_prompt(m, ctx, resolve(spec_of(SkipAttention{1}), m, ctx)).logits;
    if (first.empty()) first = logits;
    const double d = max_diff(first, logits);
    out.require(d <= 1e-6, "logit diff " + std::to_string(d) + " on context " + std::to_string(i));
  }
  return out;
}

double canonical_norm(std::vector<float> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (float x : v) s += double(x) * double(x);
  return std::sqrt(s);
}

Outcome noise_invariants() {
  Outcome out;
  Xoshiro256 rng(5);
  for (int i = 0; i < 1000; ++i) {
    std::vector<float> x(1 + rng.below(256));
    for (auto& v : x) v = static_cast<float>(rng.normal() * 3.0);
    const std::uint64_t seed = rng.next();
    Xoshiro256 a(seed), b(seed);
    const auto y = make_shuffle_noise(x, a);
    out.require(y == make_shuffle_noise(x, b), "shuffle not seed-deterministic");
    auto sx = x, sy = y;
    std::sort(sx.begin(), sx.end());
    std::sort(sy.begin(), sy.end());
    out.require(sx == sy, "shuffle changed the multiset");
    out.require(canonical_norm(x) == canonical_norm(y), "shuffle changed the norm");
  }
  for (int i = 0; i < 1000; ++i) {
    const std::size_t d = 1 + rng.below(256);
    const float target = static_cast<float>(0.01 + rng.uniform() * 100.0);
    const std::uint64_t seed = rng.next();
    Xoshiro256 a(seed), b(seed);
    const auto v = make_gaussian_noise(d, target, a);
    out.require(v == make_gaussian_noise(d, target, b), "gaussian not seed-deterministic");
    const double rel = std::abs(canonical_norm(v) - double(target)) / double(target);
    out.require(v.size() == d && rel <= 1e-5, "gaussian norm off by " + std::to_string(rel));
  }
  return out;
}

int eval_left_to_right(const ArithmeticInstance& inst, bool& in_range) {
  int acc = inst.terms[0];
  in_range = acc >= 0 && acc <= 9;
  for (std::size_t i = 0; i < inst.ops.size(); ++i) {
    acc = inst.ops[i] == '+' ? acc + inst.terms[i + 1] : acc - inst.terms[i + 1];
    in_range = in_range && acc >= 0 && acc <= 9;
  }
  return acc;
}

std::size_t brute_force_count(int n_terms) {
  std::size_t n = 0;
  std::function<void(int, int)> walk = [&](int depth, int acc) {
    if (depth == n_terms) {
      ++n;
      return;
    }
    for (int t = 0; t <= 9; ++t) {
      if (acc + t <= 9) walk(depth + 1, acc + t);
      if (acc - t >= 0) walk(depth + 1, acc - t);
    }
  };
  for (int a = 0; a <= 9; ++a) walk(1, a);
  return n;
}

Outcome dataset_combinatorics() {
  Outcome out;
  const Tokenizer tok = Tokenizer::arithmetic();
  // Every partial result r in [0, 9] extends in 11 ways: r+1 additions plus 10-r subtractions.
  const std::size_t closed[2] = {10 * 11, 10 * 11 * 11};
  for (int n_terms : {2, 3}) {
    const auto items = gen_arithmetic(n_terms, tok);
    out.require(items.size() == closed[n_terms - 2], std::to_string(n_terms) + "-term count " + std::to_string(items.size()));
    out.require(items.size() == brute_force_count(n_terms), "count disagrees with brute force");
    for (const auto& it : items) {
      bool in_range = false;
      const int value = eval_left_to_right(it, in_range);
      out.require(it.terms.size() == static_cast<std::size_t>(n_terms), "wrong term count");
      out.require(std::all_of(it.terms.begin(), it.terms.end(), [](int t) { return t >= 0 && t <= 9; }), "term not a digit");
      out.require(in_range, "intermediate out of range in " + it.prompt);
      out.require(it.answer == std::to_string(value), "wrong answer for " + it.prompt);
      std::string prompt = std::to_string(it.terms[0]);
      for (std::size_t i = 0; i < it.ops.size(); ++i) prompt += std::string(" ") + it.ops[i] + " " + std::to_string(it.terms[i + 1]);
      out.require(it.prompt == prompt + " =", "prompt format " + it.prompt);
      out.require(tok.encode(it.answer).size() == 1, "answer not a single token");
      for (int t : it.terms) out.require(tok.encode(std::to_string(t)).size() == 1, "digit not a single token");
    }
  }
  return out;
}

std::size_t brute_lcs(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t best = 0;
  for (unsigned mask = 0; mask < (1u << a.size()); ++mask) {
    const auto len = static_cast<std::size_t>(__builtin_popcount(mask));
    if (len <= best) continue;
    std::size_t j = 0;
    bool ok = true;
    for (std::size_t i = 0; i < a.size() && ok; ++i) {
      if (!(mask >> i & 1u)) continue;
      while (j < b.size() && b[j] != a[i]) ++j;
      if (j == b.size()) ok = false;
      ++j;
    }
    if (ok) best = len;
  }
  return best;
}

Outcome metric_oracles() {
  Outcome out;
  std::vector<std::vector<int>> seqs{{}};
  for (std::size_t begin = 0, len = 1; len <= 6; ++len) {
    const std::size_t end = seqs.size();
    for (std::size_t i = begin; i < end; ++i) {
      for (int s = 0; s < 3; ++s) {
        auto next = seqs[i];
        next.push_back(s);
        seqs.push_back(next);
      }
    }
    begin = end;
  }
  std::vector<std::string> text;
  for (const auto& s : seqs) {
    std::string t;
    for (int x : s) t += std::string(t.empty() ? "" : " ") + "abc"[x];
    text.push_back(t);
  }
  for (std::size_t i = 0; i < seqs.size() && out.ok; ++i) {
    for (std::size_t j = 0; j < seqs.size(); ++j) {
      const std::size_t lcs = brute_lcs(seqs[i], seqs[j]);
      double p = 0.0, r = 0.0, f = 0.0;
      if (lcs > 0) {
        p = double(lcs) / double(seqs[i].size());
        r = double(lcs) / double(seqs[j].size());
        f = 2 * p * r / (p + r);
      }
      const auto got = rougeL(text[i], text[j]);
      if (std::abs(got.precision - p) > 1e-12 || std::abs(got.recall - r) > 1e-12 || std::abs(got.f1 - f) > 1e-12) {
        out.require(false, "rougeL mismatch on '" + text[i] + "' vs '" + text[j] + "'");
        break;
      }
    }
  }
  out.require(exact_match(" Rome\n", "rome") == 1, "exact_match normalization");
  out.require(exact_match("Paris", "Rome") == 0, "exact_match mismatch");
  out.require(exact_match("New  Delhi", "New Delhi") == 1, "exact_match whitespace");
  const auto same = rouge1("the cat sat", "the cat sat");
  out.require(same.precision == 1 && same.recall == 1 && same.f1 == 1, "rouge1 identical");
  const auto cat = rouge1("the cat sat", "the cat ran");
  out.require(std::abs(cat.precision - 2.0 / 3) < 1e-12 && std::abs(cat.recall - 2.0 / 3) < 1e-12 &&
                  std::abs(cat.f1 - 2.0 / 3) < 1e-12,
              "rouge1 the cat sat");
  const auto disjoint = rouge1("a b", "c d");
  out.require(disjoint.precision == 0 && disjoint.recall == 0 && disjoint.f1 == 0, "rouge1 disjoint");
  const auto l = rougeL("a b c d", "a c b d");
  out.require(std::abs(l.f1 - 0.75) < 1e-12, "rougeL a b c d");
  return out;
}

Outcome cache_accounting() {
  Outcome out;
  const ModelConfig worked = ref::toy_config(4, 8, 2, 2, 16, 16);
  const auto base = cache_stats(worked, CacheMode::standard, 4, 10);
  const auto frozen = cache_stats(worked, CacheMode::freeze_aware, 2, 10);
  out.require(base.floats_stored == 640 && frozen.floats_stored == 400 && frozen.floats_baseline_equivalent == 640 &&
                  frozen.saving_ratio == 0.375,
              "worked example");
  {
    const Model m = ref::random_model(worked, 1);
    const std::vector<TokenId> prompt{1, 2, 3, 4, 5};
    const auto g = generate(m, prompt, resolve(spec_of(Freeze{2}), m, prompt), greedy(6, CachePolicy::freeze_aware));
    out.require(g.cache_floats_allocated == 400, "worked example allocates " + std::to_string(g.cache_floats_allocated));
  }

  Xoshiro256 rng(8);
  for (int t = 0; t < 10; ++t) {
    const std::size_t L = 1 + rng.below(6);
    const std::size_t kv = 1 + rng.below(3);
    const std::size_t h = kv * (1 + rng.below(2));
    const std::size_t dh = 2 * (1 + rng.below(4));
    const ModelConfig c = ref::toy_config(L, h * dh, h, kv, 16, 20);
    const Model m = ref::random_model(c, t);
    const std::size_t k = 1 + rng.below(L);
    const auto prompt = random_tokens(rng, 1 + rng.below(8), 20);
    const std::size_t max_new = 1 + rng.below(8);
    const std::size_t n = prompt.size() + max_new - 1;
    const std::size_t kv_dim = kv * dh;

    const auto fz = generate(m, prompt, resolve(spec_of(Freeze{k}), m, prompt), greedy(max_new, CachePolicy::freeze_aware));
    const auto sk = generate(m, prompt, resolve(spec_of(SkipAttention{k}), m, prompt), greedy(max_new, CachePolicy::skip_aware));
    const auto st = generate(m, prompt, InterventionPlan(L), greedy(max_new, CachePolicy::standard));
    const std::string tuple = "(L=" + std::to_string(L) + ", k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")";
    out.require(fz.cache_floats_allocated == 2 * n * k * kv_dim + n * c.d_model &&
                    fz.cache_stats.floats_stored == fz.cache_floats_allocated,
                "freeze_aware " + tuple);
    out.require(sk.cache_floats_allocated == 2 * n * (k - 1) * kv_dim &&
                    sk.cache_stats.floats_stored == sk.cache_floats_allocated,
                "skip_aware " + tuple);
    out.require(st.cache_floats_allocated == 2 * n * L * kv_dim && st.cache_stats.floats_stored == st.cache_floats_allocated,
                "standard " + tuple);
  }
  return out;
}

Outcome sweep_determinism() {
  Outcome out;
  const Model m = toy_model();
  const Tokenizer tok = Tokenizer::arithmetic().padded_to(64);
  const auto data = load_eval_set({}, tok);
  SweepConfig cfg;
  cfg.manipulations = {"freeze", "shuffle", "random", "skip_attn"};
  cfg.seed = 1234;
  cfg.max_new = 4;
  auto render = [&](std::size_t threads) {
    cfg.threads = threads;
    std::ostringstream s;
    write_sweep_csv(s, run_sweep(m, tok, data, cfg));
    return s.str();
  };
  const auto a = render(1);
  out.require(a == render(1), "two single-thread runs differ");
  out.require(a == render(4), "1 and 4 threads differ");
  out.require(std::count(a.begin(), a.end(), '\n') == 1 + 1 + 16, "unexpected row count");
  return out;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    Outcome (*run)();
    double budget_s;
  };
  const Criterion criteria[] = {
      {1, "vacuous-manipulation identity", vacuous_identity, 10.0},
      {2, "cache equivalence", cache_equivalence, 30.0},
      {3, "patch-at-embedding equivalence", embedding_patch, 0.0},
      {4, "skip-attention context independence", skip_context_independence, 0.0},
      {5, "noise invariants", noise_invariants, 0.0},
      {6, "dataset combinatorics", dataset_combinatorics, 0.0},
      {7, "metric oracles", metric_oracles, 0.0},
      {8, "cache accounting", cache_accounting, 0.0},
      {9, "sweep determinism", sweep_determinism, 300.0},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.ok = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (o.ok && c.budget_s > 0.0 && secs > c.budget_s) {
      o.ok = false;
      o.detail = "over the " + std::to_string(static_cast<int>(c.budget_s)) + " s budget";
    }
    std::printf("%s criterion %d: %s (%.2f s)%s%s\n", o.ok ? "PASS" : "FAIL", c.id, c.name, secs,
                o.detail.empty() ? "" : " - ", o.detail.c_str());
    failures += o.ok ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
