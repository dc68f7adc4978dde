#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tmlm/model.hpp"

namespace tmlm {

/// Char-level or byte-level BPE tokenizer.
///
/// File format (JSON): {"kind": "char"|"byte_bpe", "vocab": {token: id},
/// "merges": [[left, right], ...], "special": [token, ...]}. Ids must be
/// dense in [0, vocab_size). For byte_bpe, vocab strings use the GPT-2
/// byte-to-unicode alphabet; special tokens are matched verbatim in the input
/// text and never split.
class Tokenizer {
 public:
  enum class Kind { char_level, byte_bpe };

  /// One token per UTF-8 code point of `alphabet` (in order), then the specials.
  static Tokenizer char_level(std::string_view alphabet, std::vector<std::string> specials = {});
  static Tokenizer byte_bpe(std::map<std::string, TokenId> vocab, std::vector<std::pair<std::string, std::string>> merges,
                            std::vector<std::string> specials = {});

  /// Digits, "+", "-", "=", space and newline, plus "<eos>".
  static Tokenizer arithmetic();
  /// Printable ASCII, newline and "<eos>".
  static Tokenizer ascii_text();

  /// Copy with special entries "<unused_i>" appended until the vocabulary has
  /// `n` ids, so every id a model of that vocabulary emits decodes.
  Tokenizer padded_to(std::size_t n) const;

  static Tokenizer from_json(const nlohmann::json& j);
  static Tokenizer load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;

  Kind kind() const { return kind_; }
  std::size_t vocab_size() const { return pieces_.size(); }

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;
  bool is_single_token(std::string_view text) const;

  std::optional<TokenId> token_id(std::string_view piece) const;
  const std::string& piece(TokenId id) const;
  bool is_special(TokenId id) const;

 private:
  Tokenizer() = default;
  void index();
  void encode_segment(std::string_view text, std::vector<TokenId>& out) const;

  Kind kind_ = Kind::char_level;
  std::vector<std::string> pieces_;  // id -> piece
  std::unordered_map<std::string, TokenId> ids_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::pair<std::string, std::string>, std::size_t> merge_rank_;
  std::vector<std::string> specials_;
};

/// GPT-2 byte <-> printable code point mapping used by byte_bpe vocabularies.
std::string byte_to_symbol(unsigned char b);

}  // namespace tmlm
