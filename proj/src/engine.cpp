#include "tmlm/engine.hpp"

#include <chrono>
#include <cmath>

#include "tmlm/error.hpp"
#include "tmlm/rng.hpp"

namespace tmlm {

CachePolicy parse_cache_policy(const std::string& s) {
  if (s == "none") return CachePolicy::none;
  if (s == "standard") return CachePolicy::standard;
  if (s == "freeze_aware") return CachePolicy::freeze_aware;
  if (s == "skip_aware") return CachePolicy::skip_aware;
  if (s == "auto" || s == "automatic") return CachePolicy::automatic;
  throw ParseError("unknown cache policy '" + s + "' (none, standard, freeze_aware, skip_aware, auto)");
}

Session::Session(const Model& model, InterventionPlan plan, CachePolicy policy)
    : model_(model),
      plan_(std::move(plan)),
      policy_(policy),
      trace_(model.config.n_layers, model.config.d_model) {
  const auto& c = model_.config;
  if (plan_.n_layers() == 0 && plan_.empty()) plan_ = InterventionPlan(c.n_layers);
  if (plan_.n_layers() != c.n_layers) {
    throw ValidationError("plan built for " + std::to_string(plan_.n_layers()) + " layers, model has " +
                          std::to_string(c.n_layers));
  }
  if (policy_ == CachePolicy::automatic) {
    if (plan_.freeze_layer()) {
      policy_ = CachePolicy::freeze_aware;
    } else if (plan_.skip_from()) {
      policy_ = CachePolicy::skip_aware;
    } else {
      policy_ = CachePolicy::standard;
    }
  }
  switch (policy_) {
    case CachePolicy::none: break;
    case CachePolicy::standard: cache_ = KVStore::standard(c); break;
    case CachePolicy::freeze_aware:
      if (!plan_.freeze_layer()) throw MisuseError("freeze_aware cache requires a freeze plan");
      cache_ = KVStore::freeze_aware(c, *plan_.freeze_layer());
      break;
    case CachePolicy::skip_aware:
      if (!plan_.skip_from()) throw MisuseError("skip_aware cache requires a skip-attention plan");
      cache_ = KVStore::skip_aware(c, *plan_.skip_from());
      break;
    case CachePolicy::automatic: break;
  }
}

void Session::store_state(std::size_t layer, std::size_t position, std::span<const float> x, bool replace) {
  if (replace) {
    trace_.states[layer].set_row(position, x);
  } else {
    trace_.states[layer].append_row(x);
  }
}

std::vector<float> Session::feed(TokenId token, Role role) {
  settle_last();
  const auto& c = model_.config;
  const std::size_t p = n_tokens();
  if (p >= c.max_seq_len) {
    throw LengthError("context overflow: position " + std::to_string(p) + " exceeds max_seq_len " +
                      std::to_string(c.max_seq_len));
  }
  if (token >= c.vocab_size) {
    throw VocabularyError("token id " + std::to_string(token) + " out of range for vocabulary of " +
                          std::to_string(c.vocab_size));
  }
  const auto emb = model_.weights.token_embedding.row(token);
  std::vector<float> x(emb.begin(), emb.end());
  if (const auto* ov = plan_.overwrite(0, p)) {
    x = *ov;
    trace_.mark(0, p);
  }
  store_state(0, p, x, false);
  x = run_layers(p, std::move(x), 1, role, false);

  if (cache_ && cache_->mode() == CacheMode::freeze_aware) {
    cache_->append_frozen(trace_.states[cache_->mode_layer()].row(p));
  }
  if (cache_) cache_->commit_position();
  last_role_ = role;
  last_settled_ = role == Role::history;
  if (role == Role::history) return {};
  return compute_logits(model_, x);
}

void Session::settle_last() {
  if (last_settled_) return;
  last_settled_ = true;
  const auto& rule = plan_.history_noise();
  if (!rule || n_tokens() == 0) return;
  const std::size_t p = n_tokens() - 1;
  if (p < rule->first_position) return;
  auto x = noise_for_position(rule->kind, trace_.states[rule->layer].row(p), rule->seed, p);
  store_state(rule->layer, p, x, true);
  trace_.mark(rule->layer, p);
  if (rule->layer < model_.config.n_layers) run_layers(p, std::move(x), rule->layer + 1, Role::history, true);
}

std::vector<float> Session::run_layers(std::size_t p, std::vector<float> x, std::size_t first_layer, Role role,
                                       bool replace) {
  const auto& c = model_.config;
  const auto& rule = plan_.history_noise();
  for (std::size_t l = first_layer; l <= c.n_layers; ++l) {
    const auto& lw = model_.weights.layer(l);
    const bool cached = cache_ && cache_->caches_layer(l);
    if (cached && replace) cache_->pop_standard(l);

    if (plan_.skips_attention(l)) {
      if (cached) {
        // A standard cache still holds this layer's K/V even though no
        // attention reads them.
        const auto kv = project_kv(c, lw, rms_norm(x, lw.attn_norm_gain, c.norm_eps), p);
        cache_->append_standard(l, kv.k, kv.v);
      }
      x = feed_forward_residual(c, lw, x);
      trace_.mark(l, p);
    } else {
      const auto normed = rms_norm(x, lw.attn_norm_gain, c.norm_eps);
      const auto self = project_kv(c, lw, normed, p);
      std::vector<float> attn;
      if (!cache_) {
        const Matrix hist = history_inputs(plan_, l, p, trace_);
        Matrix hk(0, c.kv_dim());
        Matrix hv(0, c.kv_dim());
        for (std::size_t j = 0; j < p; ++j) {
          const auto kv = project_kv(c, lw, rms_norm(hist.row(j), lw.attn_norm_gain, c.norm_eps), j);
          hk.append_row(kv.k);
          hv.append_row(kv.v);
        }
        attn = attend(c, lw, normed, p, hk, hv, p, self);
      } else if (cached) {
        attn = attend(c, lw, normed, p, cache_->keys(l), cache_->values(l), p, self);
      } else if (cache_->mode() == CacheMode::freeze_aware) {
        const auto [hk, hv] = cache_->frozen_view(l, lw, p);
        attn = attend(c, lw, normed, p, hk, hv, p, self);
      } else {
        throw MisuseError("layer " + std::to_string(l) + " has no cached history in " + to_string(cache_->mode()) +
                          " mode");
      }
      add_inplace(x, attn);
      x = feed_forward_residual(c, lw, x);

      if (cached) {
        const std::size_t src = plan_.history_source(l);
        if (src == l - 1) {
          cache_->append_standard(l, self.k, self.v);
        } else {
          // Later tokens read this position's frozen state at this layer.
          const auto kv = project_kv(c, lw, rms_norm(trace_.states[src].row(p), lw.attn_norm_gain, c.norm_eps), p);
          cache_->append_standard(l, kv.k, kv.v);
        }
      }
    }

    if (const auto* ov = plan_.overwrite(l, p)) {
      x = *ov;
      trace_.mark(l, p);
    } else if (role == Role::history && rule && rule->layer == l && p >= rule->first_position) {
      x = noise_for_position(rule->kind, x, rule->seed, p);
      trace_.mark(l, p);
    }
    if (plan_.freeze_layer() && l > *plan_.freeze_layer() && l < c.n_layers) trace_.mark(l, p);
    store_state(l, p, x, replace);
  }
  return x;
}

ForwardResult forward_prompt(const Model& model, std::span<const TokenId> tokens, const InterventionPlan& plan) {
  if (tokens.size() > model.config.max_seq_len) {
    throw LengthError("prompt of " + std::to_string(tokens.size()) + " tokens exceeds max_seq_len " +
                      std::to_string(model.config.max_seq_len));
  }
  plan.validate(model.config, tokens.size());
  Session session(model, plan, CachePolicy::none);
  ForwardResult r;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Role role = i + 1 == tokens.size() ? Role::current : Role::history;
    auto logits = session.feed(tokens[i], role);
    if (role == Role::current) r.logits = std::move(logits);
  }
  r.trace = session.take_trace();
  return r;
}

TokenId argmax(std::span<const float> logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

namespace {

TokenId pick(std::span<const float> logits, const DecodePolicy& decode, Xoshiro256& rng) {
  if (decode.kind == DecodePolicy::Kind::greedy) return argmax(logits);
  if (!(decode.temperature > 0.0f)) throw ValidationError("sampling temperature must be positive");
  std::vector<float> p(logits.begin(), logits.end());
  softmax_inplace(p, 1.0f / decode.temperature);
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(p.size() - 1);
}

}  // namespace

GenerationResult generate(const Model& model, std::span<const TokenId> prompt, const InterventionPlan& plan,
                          const GenerationOptions& options) {
  if (prompt.empty()) throw ValidationError("generate needs a non-empty prompt");
  if (prompt.size() > model.config.max_seq_len) {
    throw LengthError("prompt of " + std::to_string(prompt.size()) + " tokens exceeds max_seq_len " +
                      std::to_string(model.config.max_seq_len));
  }
  plan.validate(model.config, prompt.size());

  GenerationResult result;
  result.prompt_tokens.assign(prompt.begin(), prompt.end());
  if (options.keep_logits) result.per_step_logits = Matrix(0, model.config.vocab_size);
  Xoshiro256 rng(options.decode.seed);
  const auto start = std::chrono::steady_clock::now();

  auto accept = [&](const std::vector<float>& logits) {
    if (result.per_step_logits) result.per_step_logits->append_row(logits);
    const TokenId t = pick(logits, options.decode, rng);
    if (options.stop.contains(t)) {
      result.stopped = true;
      return false;
    }
    result.generated_tokens.push_back(t);
    return result.generated_tokens.size() < options.max_new;
  };

  if (options.cache == CachePolicy::none) {
    // Oracle route: every step recomputes the whole sequence without a cache.
    std::vector<TokenId> seq(prompt.begin(), prompt.end());
    std::optional<Session> last;
    for (std::size_t step = 0; step < options.max_new; ++step) {
      last.emplace(model, plan, CachePolicy::none);
      std::vector<float> logits;
      for (std::size_t i = 0; i < seq.size(); ++i) {
        logits = last->feed(seq[i], i + 1 == seq.size() ? Role::current : Role::history);
      }
      if (!accept(logits)) break;
      seq.push_back(result.generated_tokens.back());
    }
    if (options.keep_trace && last) result.trace = last->trace();
  } else {
    Session session(model, plan, options.cache);
    std::vector<float> logits;
    for (std::size_t i = 0; i < prompt.size(); ++i) {
      logits = session.feed(prompt[i], i + 1 == prompt.size() ? Role::current : Role::history);
    }
    if (options.max_new > 0) {
      while (accept(logits)) logits = session.feed(result.generated_tokens.back(), Role::current);
    }
    if (session.cache()) {
      result.cache_stats = session.cache()->stats();
      result.cache_floats_allocated = session.cache()->floats_allocated();
    }
    if (options.keep_trace) result.trace = session.trace();
  }

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.tokens_per_second = secs > 0.0 ? static_cast<double>(result.generated_tokens.size()) / secs : 0.0;
  return result;
}

}  // namespace tmlm
