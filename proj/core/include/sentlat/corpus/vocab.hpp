#pragma once

#include <atomic>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sentlat/corpus/example.hpp"

namespace sentlat::corpus {

// Reserved ids. These never move.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kEnc = 3;  // summarizing position read as the sentence embedding
inline constexpr int kLat = 4;  // end of question block in the latent model
inline constexpr int kSep = 5;
inline constexpr int kUnk = 6;
inline constexpr int kAnswer = 7;  // "###"
inline constexpr int kNumSpecials = 8;

/// Splits on whitespace and peels off punctuation into single-character
/// tokens. '#' is not punctuation here, so "###" survives intact.
std::vector<std::string> split_words(std::string_view text);

/// Inverse of split_words on normalized text: no space before closing
/// punctuation.
std::string join_words(std::span<const std::string> words);

/// join_words(split_words(text)).
std::string normalize_text(std::string_view text);

class Vocab {
 public:
  /// Specials followed by the sorted unique words of all questions, steps and answers.
  static Vocab build(const std::vector<ReasoningExample>& examples);
  /// Takes the full ordered token list; the first kNumSpecials entries must be the specials.
  static Vocab from_tokens(std::vector<std::string> tokens);

  Vocab(const Vocab& other);
  Vocab& operator=(const Vocab& other);
  Vocab(Vocab&&) noexcept;
  Vocab& operator=(Vocab&&) noexcept;
  Vocab();

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Unknown words map to kUnk and bump the warning counter.
  int id(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::string& token(int id) const;

  std::vector<int> encode(std::string_view text) const;
  /// Specials other than "###" are dropped.
  std::string decode(std::span<const int> ids) const;

  std::size_t unknown_count() const { return unknown_.load(); }
  void reset_unknown_count() { unknown_ = 0; }

  static const std::vector<std::string>& special_tokens();

 private:
  struct Raw {};
  explicit Vocab(Raw) {}

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  mutable std::atomic<std::size_t> unknown_{0};
};

}  // namespace sentlat::corpus
