#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tmlm/tokenizer.hpp"

// Byte-level BPE over all 256 byte symbols plus the given merges, in rank order.
inline tmlm::Tokenizer bpe_fixture(const std::vector<std::pair<std::string, std::string>>& merges,
                                   const std::vector<std::string>& specials = {}) {
  std::map<std::string, tmlm::TokenId> vocab;
  tmlm::TokenId next = 0;
  for (int b = 0; b < 256; ++b) vocab[tmlm::byte_to_symbol(static_cast<unsigned char>(b))] = next++;
  for (const auto& [a, b] : merges) {
    if (!vocab.contains(a + b)) vocab[a + b] = next++;
  }
  for (const auto& s : specials) vocab[s] = next++;
  return tmlm::Tokenizer::byte_bpe(vocab, merges, specials);
}
