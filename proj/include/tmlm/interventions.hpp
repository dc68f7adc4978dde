#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "tmlm/model.hpp"
#include "tmlm/rng.hpp"

namespace tmlm {

class Tokenizer;

/// Which history rows the noise manipulations replace. PromptOnly noises
/// the prompt tokens that precede the first answer token; AllHistory also
/// noises the last prompt token and every generated token once they become
/// history.
enum class HistoryScope { prompt_only, all_history };

struct Freeze {
  std::size_t k = 0;
};

struct ShuffleNoise {
  std::size_t k = 0;
  std::uint64_t seed = 0;
};

struct RandomNoise {
  std::size_t k = 0;
  std::uint64_t seed = 0;
};

struct DonorRef {
  std::string prompt_text;  // as given in JSON; tokenized by bind_tokens
  std::vector<TokenId> prompt_tokens;
  std::vector<std::size_t> positions;
};

/// Overwrites the states X^layer at `targets` with the donor prompt's
/// X^layer at `donor.positions`. Layer 0 patches embeddings.
struct Patch {
  std::size_t layer = 0;
  std::vector<std::size_t> targets;
  DonorRef donor;
};

struct SkipAttention {
  std::size_t from_layer = 0;
};

using InterventionKind = std::variant<Freeze, ShuffleNoise, RandomNoise, Patch, SkipAttention>;

struct InterventionSpec {
  InterventionKind kind;
  HistoryScope scope = HistoryScope::prompt_only;

  /// Short name used in CSVs: freeze, shuffle, random, patch, skip_attn.
  std::string name() const;
  /// The layer the manipulation is indexed by (k, patch layer, or s).
  std::size_t layer() const;
};

/// Parses the JSON spec format, e.g. {"kind":"freeze","k":16}. Errors name
/// the offending field.
InterventionSpec parse_spec(const nlohmann::json& j);
InterventionSpec parse_spec(const std::string& text);
nlohmann::json spec_to_json(const InterventionSpec& spec);

/// Tokenizes a patch spec's donor prompt text. No-op for other kinds.
void bind_tokens(InterventionSpec& spec, const Tokenizer& tokenizer);

/// Checks the spec against a model of `n_layers` and a prompt of `prompt_len`.
void validate_spec(const InterventionSpec& spec, std::size_t n_layers, std::size_t prompt_len);

// ---------------------------------------------------------------------------
// Plans

struct PassThrough {};
struct ReadFrozen {
  std::size_t source_layer = 0;
};
struct Overwrite {
  const std::vector<float>* vector = nullptr;
};
struct SkipAttnLayer {};

using PlanAction = std::variant<PassThrough, ReadFrozen, Overwrite, SkipAttnLayer>;

enum class NoiseKind { shuffle, gaussian };

/// Noise applied lazily, at layer k, to positions >= first_position once
/// they become history (AllHistory scope).
struct NoiseRule {
  NoiseKind kind = NoiseKind::shuffle;
  std::size_t layer = 0;
  std::uint64_t seed = 0;
  std::size_t first_position = 0;
};

/// Concrete per-(layer, position) actions for one run:
///   ReadFrozen(k) at (l, p): readers of p's history row at layer l use X^k[p].
///   Overwrite(v) at (l, p): X^l[p] is replaced by v when p is processed.
///   SkipAttnLayer at (l, p): block l has no attention sub-layer for p.
class InterventionPlan {
 public:
  InterventionPlan() = default;
  explicit InterventionPlan(std::size_t n_layers) : n_layers_(n_layers) {}

  std::size_t n_layers() const { return n_layers_; }

  PlanAction action(std::size_t layer, std::size_t position) const;

  /// Freeze layer k when layers above k read frozen history.
  std::optional<std::size_t> freeze_layer() const { return freeze_; }
  std::optional<std::size_t> skip_from() const { return skip_from_; }
  bool skips_attention(std::size_t layer) const { return skip_from_ && layer >= *skip_from_; }
  /// Source layer history rows are read from at `layer` (layer - 1 unless frozen).
  std::size_t history_source(std::size_t layer) const;
  const std::vector<float>* overwrite(std::size_t layer, std::size_t position) const;
  const std::optional<NoiseRule>& history_noise() const { return history_noise_; }
  std::size_t overwrite_count() const { return overwrites_.size(); }
  bool empty() const { return !freeze_ && !skip_from_ && overwrites_.empty() && !history_noise_; }

  void set_freeze(std::size_t k);
  void set_skip_from(std::size_t s);
  void add_overwrite(std::size_t layer, std::size_t position, std::vector<float> v);
  void set_history_noise(NoiseRule rule);

  /// Throws ValidationError if the plan references layers above L, positions
  /// at or beyond `n_positions`, or vectors of the wrong width.
  void validate(const ModelConfig& config, std::size_t n_positions) const;

 private:
  std::size_t n_layers_ = 0;
  std::optional<std::size_t> freeze_;
  std::optional<std::size_t> skip_from_;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<float>> overwrites_;
  std::optional<NoiseRule> history_noise_;
};

/// Resolves a spec into a plan for `prompt`. Noise and patch specs need
/// forward passes (genuine layer-k states, donor states); those run
/// without interventions.
InterventionPlan resolve(const InterventionSpec& spec, const Model& model, std::span<const TokenId> prompt);

/// Uniform random permutation of x (Fisher-Yates over `rng`).
std::vector<float> make_shuffle_noise(std::span<const float> x, Xoshiro256& rng);

/// d standard-normal samples rescaled to L2 norm `target_norm`.
std::vector<float> make_gaussian_noise(std::size_t d, float target_norm, Xoshiro256& rng);

/// Noise replacing `genuine` at `position`, drawn from a stream derived from
/// (seed, position) so every route that needs it reproduces the same vector.
std::vector<float> noise_for_position(NoiseKind kind, std::span<const float> genuine, std::uint64_t seed,
                                      std::size_t position);

/// History rows layer `layer` reads when processing `position`: X^(l-1) rows
/// for pass-through, X^k rows for frozen layers. Flags redirected reads in
/// the trace's modified mask.
Matrix history_inputs(const InterventionPlan& plan, std::size_t layer, std::size_t position, ForwardTrace& trace);

}  // namespace tmlm
