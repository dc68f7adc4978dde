#include "tmlm/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <limits>

#include "tmlm/error.hpp"

namespace tmlm {

namespace {

std::string encode_utf8(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xc0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3f));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xe0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
    out += static_cast<char>(0x80 | (cp & 0x3f));
  } else {
    out += static_cast<char>(0xf0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3f));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
    out += static_cast<char>(0x80 | (cp & 0x3f));
  }
  return out;
}

/// Length of the UTF-8 sequence starting at s[i]; 1 for invalid lead bytes.
std::size_t utf8_length(std::string_view s, std::size_t i) {
  const auto c = static_cast<unsigned char>(s[i]);
  std::size_t n = 1;
  if (c >= 0xf0) {
    n = 4;
  } else if (c >= 0xe0) {
    n = 3;
  } else if (c >= 0xc0) {
    n = 2;
  }
  return std::min(n, s.size() - i);
}

std::vector<std::string> split_code_points(std::string_view s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const std::size_t n = utf8_length(s, i);
    out.emplace_back(s.substr(i, n));
    i += n;
  }
  return out;
}

struct ByteTables {
  std::array<std::string, 256> to_symbol;
  std::unordered_map<std::string, unsigned char> to_byte;
};

const ByteTables& byte_tables() {
  static const ByteTables tables = [] {
    ByteTables t;
    std::array<bool, 256> printable{};
    for (int b = '!'; b <= '~'; ++b) printable[b] = true;
    for (int b = 0xa1; b <= 0xac; ++b) printable[b] = true;
    for (int b = 0xae; b <= 0xff; ++b) printable[b] = true;
    char32_t next = 256;
    for (int b = 0; b < 256; ++b) {
      const char32_t cp = printable[b] ? static_cast<char32_t>(b) : next++;
      t.to_symbol[b] = encode_utf8(cp);
      t.to_byte[t.to_symbol[b]] = static_cast<unsigned char>(b);
    }
    return t;
  }();
  return tables;
}

}  // namespace

std::string byte_to_symbol(unsigned char b) { return byte_tables().to_symbol[b]; }

void Tokenizer::index() {
  ids_.clear();
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    if (!ids_.emplace(pieces_[i], static_cast<TokenId>(i)).second) {
      throw VocabularyError("duplicate vocabulary entry '" + pieces_[i] + "'");
    }
  }
  for (const auto& s : specials_) {
    if (!ids_.contains(s)) throw VocabularyError("special token '" + s + "' missing from vocabulary");
  }
  merge_rank_.clear();
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const auto& [a, b] = merges_[r];
    if (!ids_.contains(a) || !ids_.contains(b) || !ids_.contains(a + b)) {
      throw VocabularyError("merge (" + a + ", " + b + ") references tokens missing from the vocabulary");
    }
    merge_rank_.emplace(merges_[r], r);
  }
}

Tokenizer Tokenizer::char_level(std::string_view alphabet, std::vector<std::string> specials) {
  Tokenizer t;
  t.kind_ = Kind::char_level;
  t.pieces_ = split_code_points(alphabet);
  for (const auto& s : specials) t.pieces_.push_back(s);
  t.specials_ = std::move(specials);
  t.index();
  return t;
}

Tokenizer Tokenizer::byte_bpe(std::map<std::string, TokenId> vocab, std::vector<std::pair<std::string, std::string>> merges,
                              std::vector<std::string> specials) {
  Tokenizer t;
  t.kind_ = Kind::byte_bpe;
  t.pieces_.assign(vocab.size(), {});
  std::vector<bool> seen(vocab.size(), false);
  for (const auto& [piece, id] : vocab) {
    if (id >= vocab.size() || seen[id]) {
      throw VocabularyError("vocabulary ids must be dense and unique in [0, " + std::to_string(vocab.size()) + ")");
    }
    seen[id] = true;
    t.pieces_[id] = piece;
  }
  t.merges_ = std::move(merges);
  t.specials_ = std::move(specials);
  t.index();
  return t;
}

Tokenizer Tokenizer::arithmetic() { return char_level("0123456789+-= \n", {"<eos>"}); }

Tokenizer Tokenizer::ascii_text() {
  std::string alphabet;
  for (char c = ' '; c <= '~'; ++c) alphabet += c;
  alphabet += '\n';
  return char_level(alphabet, {"<eos>"});
}

Tokenizer Tokenizer::padded_to(std::size_t n) const {
  Tokenizer t = *this;
  for (std::size_t i = t.pieces_.size(); i < n; ++i) {
    t.pieces_.push_back("<unused_" + std::to_string(i) + ">");
    t.specials_.push_back(t.pieces_.back());
  }
  t.index();
  return t;
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  try {
    const auto kind = j.at("kind").get<std::string>();
    std::map<std::string, TokenId> vocab = j.at("vocab").get<std::map<std::string, TokenId>>();
    std::vector<std::string> specials = j.value("special", std::vector<std::string>{});
    std::vector<std::pair<std::string, std::string>> merges;
    for (const auto& m : j.value("merges", nlohmann::json::array())) {
      if (m.is_array() && m.size() == 2) {
        merges.emplace_back(m[0].get<std::string>(), m[1].get<std::string>());
      } else if (m.is_string()) {
        const auto s = m.get<std::string>();
        const auto sp = s.find(' ');
        if (sp == std::string::npos) throw ParseError("tokenizer merge '" + s + "' is not a pair");
        merges.emplace_back(s.substr(0, sp), s.substr(sp + 1));
      } else {
        throw ParseError("tokenizer merges must be [left, right] pairs");
      }
    }
    if (kind == "byte_bpe") return byte_bpe(std::move(vocab), std::move(merges), std::move(specials));
    if (kind != "char") throw ParseError("unknown tokenizer kind '" + kind + "' (char, byte_bpe)");
    if (!merges.empty()) throw ParseError("char tokenizer cannot have merges");

    Tokenizer t;
    t.kind_ = Kind::char_level;
    t.pieces_.assign(vocab.size(), {});
    std::vector<bool> seen(vocab.size(), false);
    for (const auto& [piece, id] : vocab) {
      if (id >= vocab.size() || seen[id]) {
        throw VocabularyError("vocabulary ids must be dense and unique in [0, " + std::to_string(vocab.size()) + ")");
      }
      seen[id] = true;
      t.pieces_[id] = piece;
    }
    t.specials_ = std::move(specials);
    t.index();
    for (const auto& p : t.pieces_) {
      const bool special = std::find(t.specials_.begin(), t.specials_.end(), p) != t.specials_.end();
      if (!special && split_code_points(p).size() != 1) {
        throw VocabularyError("char tokenizer entry '" + p + "' is not a single character");
      }
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("tokenizer JSON: ") + e.what());
  }
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open tokenizer file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json Tokenizer::to_json() const {
  nlohmann::json vocab = nlohmann::json::object();
  for (std::size_t i = 0; i < pieces_.size(); ++i) vocab[pieces_[i]] = i;
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& [a, b] : merges_) merges.push_back({a, b});
  return {{"kind", kind_ == Kind::byte_bpe ? "byte_bpe" : "char"},
          {"vocab", vocab},
          {"merges", merges},
          {"special", specials_}};
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write tokenizer file " + path.string());
  out << to_json().dump(1) << "\n";
}

std::optional<TokenId> Tokenizer::token_id(std::string_view piece) const {
  auto it = ids_.find(std::string(piece));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Tokenizer::piece(TokenId id) const {
  if (id >= pieces_.size()) {
    throw VocabularyError("token id " + std::to_string(id) + " out of range for vocabulary of " +
                          std::to_string(pieces_.size()));
  }
  return pieces_[id];
}

bool Tokenizer::is_special(TokenId id) const {
  return id < pieces_.size() && std::find(specials_.begin(), specials_.end(), pieces_[id]) != specials_.end();
}

void Tokenizer::encode_segment(std::string_view text, std::vector<TokenId>& out) const {
  if (text.empty()) return;
  if (kind_ == Kind::char_level) {
    for (const auto& cp : split_code_points(text)) {
      auto it = ids_.find(cp);
      if (it == ids_.end()) throw VocabularyError("character '" + cp + "' is not in the tokenizer alphabet");
      out.push_back(it->second);
    }
    return;
  }

  std::vector<std::string> symbols;
  symbols.reserve(text.size());
  for (unsigned char b : text) symbols.push_back(byte_to_symbol(b));
  // Repeatedly merge the lowest-ranked adjacent pair, leftmost on ties.
  while (symbols.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    std::size_t best_at = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = merge_rank_.find({symbols[i], symbols[i + 1]});
      if (it != merge_rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best_at = i;
      }
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    symbols[best_at] += symbols[best_at + 1];
    symbols.erase(symbols.begin() + static_cast<std::ptrdiff_t>(best_at) + 1);
  }
  for (const auto& s : symbols) {
    auto it = ids_.find(s);
    if (it == ids_.end()) throw VocabularyError("byte symbol '" + s + "' is not in the vocabulary");
    out.push_back(it->second);
  }
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  std::size_t seg_start = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::string* match = nullptr;
    for (const auto& s : specials_) {
      if (!s.empty() && text.substr(i, s.size()) == s && (!match || s.size() > match->size())) match = &s;
    }
    if (match) {
      encode_segment(text.substr(seg_start, i - seg_start), out);
      out.push_back(ids_.at(*match));
      i += match->size();
      seg_start = i;
    } else {
      ++i;
    }
  }
  encode_segment(text.substr(seg_start), out);
  return out;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  const auto& tables = byte_tables();
  for (TokenId id : ids) {
    const std::string& p = piece(id);
    if (kind_ == Kind::char_level || is_special(id)) {
      out += p;
      continue;
    }
    for (const auto& cp : split_code_points(p)) {
      auto it = tables.to_byte.find(cp);
      if (it != tables.to_byte.end()) {
        out += static_cast<char>(it->second);
      } else {
        out += cp;
      }
    }
  }
  return out;
}

bool Tokenizer::is_single_token(std::string_view text) const {
  try {
    return encode(text).size() == 1;
  } catch (const VocabularyError&) {
    return false;
  }
}

}  // namespace tmlm
