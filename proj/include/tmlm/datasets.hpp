#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tmlm/tokenizer.hpp"

namespace tmlm {

struct QAPair {
  std::string prompt;
  std::string answer;
  /// Token span [begin, end) of the question's subject (the country name for
  /// capitals), used as patch targets.
  std::optional<std::pair<std::size_t, std::size_t>> subject_span;
};

struct ArithmeticInstance {
  std::vector<int> terms;
  std::vector<char> ops;  // '+' or '-'
  std::string prompt;     // e.g. "1 + 2 + 3 ="
  std::string answer;     // single digit
};

/// Every 2- or 3-term exercise over single digits whose left-to-right
/// intermediate and final results stay in [0, 9], in lexicographic order of
/// (term, op, term, ...) with '+' before '-'. Throws ValidationError if the
/// tokenizer does not encode each digit as one token.
std::vector<ArithmeticInstance> gen_arithmetic(int n_terms, const Tokenizer& tokenizer);

struct CapitalPair {
  std::string country;
  std::string capital;
};

/// TSV rows `country<TAB>capital`; blank lines and lines starting with '#'
/// are skipped.
std::vector<CapitalPair> load_capitals(const std::filesystem::path& path);

/// One-shot prompt: the exemplar line, then the question for the query
/// country followed by `answer_cue`.
struct CapitalsTemplate {
  std::string question_prefix = "What is the capital of ";
  std::string question_suffix = "?";
  std::string exemplar_country = "France";
  std::string exemplar_capital = "Paris";
  std::string answer_cue;

  std::string exemplar_line() const;
};

std::string format_capitals_prompt(const CapitalPair& pair, const CapitalsTemplate& tpl = {});

/// Prompts for every pair except the exemplar country. When a tokenizer is
/// given, subject_span is filled where the country's tokens are separable.
std::vector<QAPair> capitals_dataset(const std::vector<CapitalPair>& pairs, const CapitalsTemplate& tpl = {},
                                     const Tokenizer* tokenizer = nullptr);

/// Token span of the country name inside its formatted prompt, if the
/// tokenization of the prompt splits exactly at the name's boundaries.
std::optional<std::pair<std::size_t, std::size_t>> country_span(const CapitalPair& pair, const CapitalsTemplate& tpl,
                                                                 const Tokenizer& tokenizer);

/// JSONL with `context`, `question`, `answer`. Seeded uniform sample without
/// replacement of `sample_n` records (0 = all).
std::vector<QAPair> load_jsonl_qa(const std::filesystem::path& path, std::size_t sample_n, std::uint64_t seed);

/// JSONL with `article`, `summary`.
std::vector<QAPair> load_jsonl_summarization(const std::filesystem::path& path, std::size_t sample_n,
                                             std::uint64_t seed);

/// Seeded uniform sample of `n` indices from [0, total) without replacement.
std::vector<std::size_t> sample_indices(std::size_t total, std::size_t n, std::uint64_t seed);

struct PatchPair {
  QAPair base;
  QAPair donor;
  std::string base_country;
  std::string donor_country;
  std::vector<std::size_t> target_positions;
  std::vector<std::size_t> donor_positions;
};

struct PatchPairs {
  std::vector<PatchPair> pairs;
  std::vector<std::string> dropped;  // countries without a same-length partner
};

/// Pairs countries whose name spans have equal token counts: each
/// equal-length group is shuffled and every country takes the next one in
/// the shuffled cycle as donor, so nobody is paired with itself.
PatchPairs build_patch_pairs(const std::vector<CapitalPair>& capitals, const Tokenizer& tokenizer, std::uint64_t seed,
                             const CapitalsTemplate& tpl = {});

nlohmann::json to_json(const QAPair& q);
nlohmann::json to_json(const PatchPair& p);

}  // namespace tmlm
