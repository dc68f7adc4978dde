#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace tmlm {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Trim, ASCII casefold, strip leading/trailing ASCII punctuation, collapse
/// internal whitespace runs to one space.
std::string normalize_answer(std::string_view s);

/// 1 iff the normalized strings are equal.
int exact_match(std::string_view pred, std::string_view gold);

/// Casefolded whitespace tokens with ASCII punctuation removed; tokens that
/// become empty are dropped.
std::vector<std::string> rouge_tokens(std::string_view s);

/// Clipped unigram overlap. Both sides empty scores (0, 0, 0).
RougeScore rouge1(std::string_view pred, std::string_view ref);

/// Longest-common-subsequence F-measure.
RougeScore rougeL(std::string_view pred, std::string_view ref);

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

/// Text before the first newline.
std::string first_line(std::string_view s);

}  // namespace tmlm
