#include "tmlm/datasets.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <numeric>

#include "tmlm/error.hpp"
#include "tmlm/rng.hpp"

namespace tmlm {

std::vector<ArithmeticInstance> gen_arithmetic(int n_terms, const Tokenizer& tokenizer) {
  if (n_terms != 2 && n_terms != 3) throw ValidationError("arithmetic exercises have 2 or 3 terms");
  for (int d = 0; d <= 9; ++d) {
    if (!tokenizer.is_single_token(std::to_string(d))) {
      throw ValidationError("tokenizer does not encode digit " + std::to_string(d) + " as a single token");
    }
  }

  std::vector<ArithmeticInstance> out;
  ArithmeticInstance cur;
  std::function<void(int)> extend = [&](int value) {
    if (static_cast<int>(cur.terms.size()) == n_terms) {
      ArithmeticInstance inst = cur;
      inst.prompt = std::to_string(inst.terms[0]);
      for (std::size_t i = 0; i < inst.ops.size(); ++i) {
        inst.prompt += std::string(" ") + inst.ops[i] + " " + std::to_string(inst.terms[i + 1]);
      }
      inst.prompt += " =";
      inst.answer = std::to_string(value);
      out.push_back(std::move(inst));
      return;
    }
    for (char op : {'+', '-'}) {
      for (int t = 0; t <= 9; ++t) {
        const int next = op == '+' ? value + t : value - t;
        // Intermediates are digits, so each renders as one token (checked above).
        if (next < 0 || next > 9) continue;
        cur.ops.push_back(op);
        cur.terms.push_back(t);
        extend(next);
        cur.ops.pop_back();
        cur.terms.pop_back();
      }
    }
  };
  for (int first = 0; first <= 9; ++first) {
    cur.terms = {first};
    cur.ops.clear();
    extend(first);
  }
  return out;
}

std::vector<CapitalPair> load_capitals(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open capitals file " + path.string());
  std::vector<CapitalPair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size() ||
        line.find('\t', tab + 1) != std::string::npos) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 'country<TAB>capital'");
    }
    out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

std::string CapitalsTemplate::exemplar_line() const {
  return question_prefix + exemplar_country + question_suffix + " " + exemplar_capital + "\n";
}

std::string format_capitals_prompt(const CapitalPair& pair, const CapitalsTemplate& tpl) {
  return tpl.exemplar_line() + tpl.question_prefix + pair.country + tpl.question_suffix + tpl.answer_cue;
}

namespace {

bool starts_with(const std::vector<TokenId>& v, const std::vector<TokenId>& prefix) {
  return prefix.size() <= v.size() && std::equal(prefix.begin(), prefix.end(), v.begin());
}

}  // namespace

std::optional<std::pair<std::size_t, std::size_t>> country_span(const CapitalPair& pair, const CapitalsTemplate& tpl,
                                                                 const Tokenizer& tokenizer) {
  try {
    const std::string prefix = tpl.exemplar_line() + tpl.question_prefix;
    const auto t_prefix = tokenizer.encode(prefix);
    const auto t_with = tokenizer.encode(prefix + pair.country);
    const auto t_full = tokenizer.encode(format_capitals_prompt(pair, tpl));
    if (!starts_with(t_with, t_prefix) || !starts_with(t_full, t_with) || t_with.size() == t_prefix.size()) {
      return std::nullopt;
    }
    return std::make_pair(t_prefix.size(), t_with.size());
  } catch (const VocabularyError&) {
    return std::nullopt;
  }
}

std::vector<QAPair> capitals_dataset(const std::vector<CapitalPair>& pairs, const CapitalsTemplate& tpl,
                                     const Tokenizer* tokenizer) {
  std::vector<QAPair> out;
  for (const auto& p : pairs) {
    if (p.country == tpl.exemplar_country) continue;
    QAPair q{format_capitals_prompt(p, tpl), p.capital, std::nullopt};
    if (tokenizer) q.subject_span = country_span(p, tpl, *tokenizer);
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<std::size_t> sample_indices(std::size_t total, std::size_t n, std::uint64_t seed) {
  if (n > total) {
    throw ValidationError("cannot sample " + std::to_string(n) + " records from a corpus of " + std::to_string(total));
  }
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Xoshiro256 rng(seed);
  // Partial Fisher-Yates from the front: position i takes a uniform pick of
  // the remaining indices.
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(total - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  return idx;
}

namespace {

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path, const std::vector<std::string>& fields) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    for (const auto& f : fields) {
      if (!j.contains(f) || !j[f].is_string()) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": missing string field '" + f + "'");
      }
    }
    out.push_back(std::move(j));
  }
  return out;
}

template <typename Make>
std::vector<QAPair> sample_records(const std::vector<nlohmann::json>& records, std::size_t sample_n,
                                   std::uint64_t seed, Make make) {
  const std::size_t n = sample_n == 0 ? records.size() : sample_n;
  std::vector<QAPair> out;
  for (auto i : sample_indices(records.size(), n, seed)) out.push_back(make(records[i]));
  return out;
}

}  // namespace

std::vector<QAPair> load_jsonl_qa(const std::filesystem::path& path, std::size_t sample_n, std::uint64_t seed) {
  const auto records = read_jsonl(path, {"context", "question", "answer"});
  return sample_records(records, sample_n, seed, [](const nlohmann::json& j) {
    return QAPair{j["context"].get<std::string>() + "\nQuestion: " + j["question"].get<std::string>() + "\nAnswer:",
                  j["answer"].get<std::string>(), std::nullopt};
  });
}

std::vector<QAPair> load_jsonl_summarization(const std::filesystem::path& path, std::size_t sample_n,
                                             std::uint64_t seed) {
  const auto records = read_jsonl(path, {"article", "summary"});
  return sample_records(records, sample_n, seed, [](const nlohmann::json& j) {
    return QAPair{"Article: " + j["article"].get<std::string>() + "\nSummary:", j["summary"].get<std::string>(),
                  std::nullopt};
  });
}

PatchPairs build_patch_pairs(const std::vector<CapitalPair>& capitals, const Tokenizer& tokenizer, std::uint64_t seed,
                             const CapitalsTemplate& tpl) {
  PatchPairs result;
  struct Entry {
    const CapitalPair* pair;
    QAPair qa;
  };
  std::map<std::size_t, std::vector<Entry>> by_length;
  for (const auto& c : capitals) {
    if (c.country == tpl.exemplar_country) continue;
    auto span = country_span(c, tpl, tokenizer);
    if (!span) {
      result.dropped.push_back(c.country);
      continue;
    }
    by_length[span->second - span->first].push_back({&c, QAPair{format_capitals_prompt(c, tpl), c.capital, span}});
  }

  Xoshiro256 rng(seed);
  for (auto& [len, group] : by_length) {
    if (group.size() < 2) {
      for (const auto& e : group) result.dropped.push_back(e.pair->country);
      continue;
    }
    fisher_yates(std::span<Entry>(group), rng);
    for (std::size_t i = 0; i < group.size(); ++i) {
      const Entry& base = group[i];
      const Entry& donor = group[(i + 1) % group.size()];
      PatchPair pp{base.qa, donor.qa, base.pair->country, donor.pair->country, {}, {}};
      for (std::size_t t = 0; t < len; ++t) {
        pp.target_positions.push_back(base.qa.subject_span->first + t);
        pp.donor_positions.push_back(donor.qa.subject_span->first + t);
      }
      result.pairs.push_back(std::move(pp));
    }
  }
  return result;
}

nlohmann::json to_json(const QAPair& q) {
  nlohmann::json j{{"prompt", q.prompt}, {"answer", q.answer}};
  if (q.subject_span) j["subject_span"] = {q.subject_span->first, q.subject_span->second};
  return j;
}

nlohmann::json to_json(const PatchPair& p) {
  nlohmann::json j = to_json(p.base);
  j["patch"] = {{"base_country", p.base_country},
                {"donor_country", p.donor_country},
                {"donor_prompt", p.donor.prompt},
                {"donor_answer", p.donor.answer},
                {"target_positions", p.target_positions},
                {"donor_positions", p.donor_positions}};
  return j;
}

}  // namespace tmlm
