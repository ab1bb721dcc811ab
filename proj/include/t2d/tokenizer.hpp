#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "t2d/common.hpp"

namespace t2d {

using TokenId = std::uint32_t;

struct TokenSequence {
  std::vector<TokenId> tokens;
  bool truncated = false;
  bool empty_input = false;

  std::size_t size() const { return tokens.size(); }
};

// Lowercase, strip punctuation, split on whitespace. Vocabulary keeps words
// seen at least `min_count` times, most frequent first, capped at
// `max_size` entries (UNK included). Id 0 is always UNK.
class Tokenizer {
 public:
  static constexpr TokenId kUnk = 0;
  static constexpr std::string_view kUnkText = "<unk>";

  Tokenizer() : words_{std::string(kUnkText)} { index_.emplace(words_[0], kUnk); }

  static std::vector<std::string> words_of(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
      if (std::isalnum(c) || c >= 0x80) {
        cur += static_cast<char>(std::tolower(c));
      } else if (std::isspace(c)) {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
      }
      // other punctuation is dropped without splitting ("don't" -> "dont")
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
  }

  // `always` words are admitted regardless of frequency (prompt templates).
  static Tokenizer build(const std::vector<std::string>& corpus, std::size_t min_count = 2,
                         std::size_t max_size = 50000,
                         const std::vector<std::string>& always = {}) {
    std::map<std::string, std::size_t> counts;
    for (const auto& doc : corpus) {
      for (auto& w : words_of(doc)) ++counts[w];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked;
    for (auto& [w, c] : counts) {
      if (c >= min_count) ranked.emplace_back(w, c);
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    Tokenizer tok;
    for (const auto& text : always) {
      for (auto& w : words_of(text)) tok.add(w);
    }
    for (auto& [w, c] : ranked) {
      if (tok.words_.size() >= max_size) break;
      tok.add(w);
    }
    return tok;
  }

  static Tokenizer from_words(const std::vector<std::string>& words) {
    if (words.empty() || words[0] != kUnkText) {
      throw IntegrityError("tokenizer vocabulary must start with " + std::string(kUnkText));
    }
    Tokenizer tok;
    for (std::size_t k = 1; k < words.size(); ++k) tok.add(words[k]);
    if (tok.size() != words.size()) throw IntegrityError("tokenizer vocabulary has duplicates");
    return tok;
  }

  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  TokenId id_of(std::string_view word) const {
    auto it = index_.find(std::string(word));
    return it == index_.end() ? kUnk : it->second;
  }

  // Word ids without the empty-input rule or truncation.
  std::vector<TokenId> ids(std::string_view text) const {
    std::vector<TokenId> out;
    for (auto& w : words_of(text)) out.push_back(id_of(w));
    return out;
  }

  TokenSequence tokenize(std::string_view text, std::size_t max_len) const {
    if (max_len == 0) throw ContractViolation("max_len must be positive");
    TokenSequence seq;
    seq.tokens = ids(text);
    if (seq.tokens.empty()) {
      seq.tokens.push_back(kUnk);
      seq.empty_input = true;
    }
    if (seq.tokens.size() > max_len) {
      seq.tokens.resize(max_len);
      seq.truncated = true;
    }
    return seq;
  }

  std::string detokenize(const std::vector<TokenId>& ids) const {
    std::string out;
    for (auto id : ids) {
      if (!out.empty()) out += ' ';
      out += id < words_.size() ? words_[id] : std::string(kUnkText);
    }
    return out;
  }

 private:
  void add(const std::string& w) {
    if (index_.emplace(w, static_cast<TokenId>(words_.size())).second) words_.push_back(w);
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace t2d
