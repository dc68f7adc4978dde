#include "tmlm/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

namespace tmlm {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

char fold(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

RougeScore score(std::size_t overlap, std::size_t n_pred, std::size_t n_ref) {
  RougeScore s;
  if (n_pred > 0) s.precision = static_cast<double>(overlap) / static_cast<double>(n_pred);
  if (n_ref > 0) s.recall = static_cast<double>(overlap) / static_cast<double>(n_ref);
  if (s.precision + s.recall > 0.0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

}  // namespace

std::string normalize_answer(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && (is_space(s[b]) || is_punct(s[b]))) ++b;
  while (e > b && (is_space(s[e - 1]) || is_punct(s[e - 1]))) --e;
  std::string out;
  bool in_space = false;
  for (std::size_t i = b; i < e; ++i) {
    if (is_space(s[i])) {
      in_space = true;
      continue;
    }
    if (in_space) out += ' ';
    in_space = false;
    out += fold(s[i]);
  }
  return out;
}

int exact_match(std::string_view pred, std::string_view gold) {
  return normalize_answer(pred) == normalize_answer(gold) ? 1 : 0;
}

std::vector<std::string> rouge_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : s) {
    if (is_space(c)) {
      flush();
    } else if (!is_punct(c)) {
      cur += fold(c);
    }
  }
  flush();
  return out;
}

RougeScore rouge1(std::string_view pred, std::string_view ref) {
  const auto p = rouge_tokens(pred);
  const auto r = rouge_tokens(ref);
  std::map<std::string, std::size_t> ref_counts;
  for (const auto& t : r) ++ref_counts[t];
  std::size_t overlap = 0;
  for (const auto& t : p) {
    auto it = ref_counts.find(t);
    if (it != ref_counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return score(overlap, p.size(), r.size());
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeScore rougeL(std::string_view pred, std::string_view ref) {
  const auto p = rouge_tokens(pred);
  const auto r = rouge_tokens(ref);
  return score(lcs_length(p, r), p.size(), r.size());
}

std::string first_line(std::string_view s) {
  const auto nl = s.find('\n');
  return std::string(nl == std::string_view::npos ? s : s.substr(0, nl));
}

}  // namespace tmlm
