#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "tmlm/cache.hpp"
#include "tmlm/interventions.hpp"
#include "tmlm/model.hpp"

namespace tmlm {

/// How a session sources history keys/values.
///   none       recompute from the trace at every layer of every position
///   standard   per-layer K/V cache for every layer
///   freeze_aware / skip_aware  see KVStore; require a matching plan
///   automatic  freeze_aware for freeze plans, skip_aware for skip plans,
///              standard otherwise
enum class CachePolicy { none, standard, freeze_aware, skip_aware, automatic };

CachePolicy parse_cache_policy(const std::string& s);

/// Whether the position being fed is history (its logits are not needed and
/// history-only rules apply to it) or the current token.
enum class Role { history, current };

/// One forward-pass session: owns its trace and cache, borrows the model.
/// Positions are fed strictly in order.
class Session {
 public:
  Session(const Model& model, InterventionPlan plan, CachePolicy policy = CachePolicy::automatic);

  /// Processes the next position through all layers. Returns the logits for
  /// `Role::current` and an empty vector for `Role::history`.
  std::vector<float> feed(TokenId token, Role role);

  /// Applies history-only rules (AllHistory noise) to the last position fed
  /// as current, now that later positions will read it as history.
  void settle_last();

  std::size_t n_tokens() const { return trace_.n_tokens(); }
  const ForwardTrace& trace() const { return trace_; }
  ForwardTrace take_trace() { return std::move(trace_); }
  const std::optional<KVStore>& cache() const { return cache_; }
  const InterventionPlan& plan() const { return plan_; }
  CachePolicy policy() const { return policy_; }

 private:
  /// Runs layers first_layer..L for `position` starting from input `x`
  /// (= X^(first_layer-1)). With `replace`, trace rows already exist and are
  /// overwritten instead of appended.
  std::vector<float> run_layers(std::size_t position, std::vector<float> x, std::size_t first_layer, Role role,
                                bool replace);
  void store_state(std::size_t layer, std::size_t position, std::span<const float> x, bool replace);

  const Model& model_;
  InterventionPlan plan_;
  CachePolicy policy_;
  ForwardTrace trace_;
  std::optional<KVStore> cache_;
  Role last_role_ = Role::history;
  bool last_settled_ = true;
};

struct ForwardResult {
  ForwardTrace trace;
  std::vector<float> logits;
};

/// Full prompt pass without caching: every position but the last is fed as
/// history, the last as current.
ForwardResult forward_prompt(const Model& model, std::span<const TokenId> tokens, const InterventionPlan& plan);

struct DecodePolicy {
  enum class Kind { greedy, temperature };
  Kind kind = Kind::greedy;
  float temperature = 1.0f;
  std::uint64_t seed = 0;

  static DecodePolicy greedy() { return {}; }
  static DecodePolicy sampled(float t, std::uint64_t seed) { return {Kind::temperature, t, seed}; }
};

struct GenerationOptions {
  std::size_t max_new = 16;
  DecodePolicy decode;
  std::set<TokenId> stop;
  CachePolicy cache = CachePolicy::automatic;
  bool keep_logits = false;
  bool keep_trace = false;
};

struct GenerationResult {
  std::vector<TokenId> prompt_tokens;
  std::vector<TokenId> generated_tokens;
  std::optional<Matrix> per_step_logits;
  CacheStats cache_stats;
  std::size_t cache_floats_allocated = 0;
  std::optional<ForwardTrace> trace;
  double tokens_per_second = 0.0;
  bool stopped = false;
};

/// Autoregressive continuation of `prompt` under `plan`. With
/// CachePolicy::none each step re-runs the whole sequence from scratch.
GenerationResult generate(const Model& model, std::span<const TokenId> prompt, const InterventionPlan& plan,
                          const GenerationOptions& options);

/// Index of the largest logit; ties go to the lowest index.
TokenId argmax(std::span<const float> logits);

}  // namespace tmlm
