#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tmlm/datasets.hpp"
#include "tmlm/engine.hpp"
#include "tmlm/interventions.hpp"
#include "tmlm/tokenizer.hpp"

namespace tmlm {

enum class MetricKind { exact_match, rouge };

/// Which dataset a sweep evaluates. kind: arithmetic2, arithmetic3,
/// capitals, squad, cnn. `path` is needed for capitals/squad/cnn.
struct DatasetRef {
  std::string kind = "arithmetic2";
  std::string path;
  std::size_t sample_n = 0;  // 0 = all (squad/cnn only)
  std::uint64_t seed = 0;
  std::size_t limit = 0;  // truncate after loading; 0 = no limit
};

struct EvalSet {
  std::string name;
  MetricKind metric = MetricKind::exact_match;
  std::vector<QAPair> items;
  std::vector<PatchPair> patch_pairs;  // capitals only
};

EvalSet load_eval_set(const DatasetRef& ref, const Tokenizer& tokenizer);

struct SweepConfig {
  std::string model_path;
  std::string tokenizer_path;
  DatasetRef dataset;
  /// Subset of {freeze, shuffle, random, skip_attn, patch}; baseline is
  /// always evaluated once.
  std::vector<std::string> manipulations = {"freeze", "shuffle", "random", "skip_attn"};
  std::size_t layer_start = 1;
  std::size_t layer_end = 0;  // 0 = L
  std::size_t layer_step = 1;
  DecodePolicy decode;
  std::uint64_t seed = 0;
  std::size_t max_new = 4;
  HistoryScope scope = HistoryScope::prompt_only;
  std::string output_dir = ".";
  std::size_t threads = 0;  // 0 = TMLM_THREADS or 1
  bool record_timing = false;

  static SweepConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// One CSV row. `layer` is empty for the baseline.
struct ResultRow {
  std::string manipulation;
  std::optional<std::size_t> layer;
  std::string metric;
  double value = 0.0;
  std::size_t n_instances = 0;
  std::size_t n_errors = 0;
  std::size_t floats_stored = 0;
  double saving_ratio = 0.0;
  std::optional<double> wall_time;
};

inline constexpr const char* kSweepCsvHeader =
    "manipulation,layer,metric,value,n_instances,n_errors,floats_stored,saving_ratio,wall_time";

/// Threads to use when the config leaves it at 0: $TMLM_THREADS, else 1.
std::size_t resolve_threads(std::size_t requested);

/// Layers the sweep visits, validated against [1, n_layers].
std::vector<std::size_t> sweep_layers(const SweepConfig& config, std::size_t n_layers);

/// Evaluates baseline plus every (manipulation, layer) cell. Rows come back
/// in a fixed order (baseline, then manipulations in config order, layers
/// ascending) regardless of thread count.
std::vector<ResultRow> run_sweep(const Model& model, const Tokenizer& tokenizer, const EvalSet& data,
                                 const SweepConfig& config);

void write_sweep_csv(std::ostream& out, const std::vector<ResultRow>& rows);

struct PatchRow {
  std::size_t layer = 0;
  double frac_original = 0.0;
  double frac_donor = 0.0;
  double frac_other = 0.0;
  std::size_t n_pairs = 0;
  std::size_t n_errors = 0;
};

inline constexpr const char* kPatchCsvHeader =
    "layer,frac_original_answer,frac_donor_answer,frac_other,n_pairs,n_errors";

/// For each layer, patches every pair's country tokens with the donor's and
/// classifies the greedy answer as original, donor, or other.
std::vector<PatchRow> patch_experiment(const Model& model, const Tokenizer& tokenizer,
                                       const std::vector<PatchPair>& pairs, const std::vector<std::size_t>& layers,
                                       std::size_t max_new, std::size_t threads = 1);

void write_patch_csv(std::ostream& out, const std::vector<PatchRow>& rows);

/// Stop tokens for free generation: newline and <eos> when the vocabulary has them.
std::set<TokenId> default_stop_tokens(const Tokenizer& tokenizer);

struct RunOutput {
  std::string text;
  GenerationResult generation;
};

RunOutput run_once(const Model& model, const Tokenizer& tokenizer, const std::string& prompt,
                   const std::optional<InterventionSpec>& spec, const GenerationOptions& options);

/// Per-layer L2 norms of every position's state plus the modified mask.
nlohmann::json trace_summary(const ForwardTrace& trace);

}  // namespace tmlm
