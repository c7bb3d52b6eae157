#include "sentlat/corpus/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>

namespace sentlat::corpus {

namespace {

bool is_punct(char c) {
  switch (c) {
    case '.': case ',': case ':': case ';': case '?': case '!':
    case '(': case ')': case '[': case ']': case '"':
      return true;
    default:
      return false;
  }
}

bool closes(const std::string& w) {
  return w.size() == 1 && (w[0] == '.' || w[0] == ',' || w[0] == ':' || w[0] == ';' ||
                           w[0] == '?' || w[0] == '!' || w[0] == ')' || w[0] == ']');
}

bool opens(const std::string& w) { return w.size() == 1 && (w[0] == '(' || w[0] == '['); }

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

std::string join_words(std::span<const std::string> words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0 && !closes(words[i]) && !opens(words[i - 1])) out.push_back(' ');
    out += words[i];
  }
  return out;
}

std::string normalize_text(std::string_view text) {
  const auto w = split_words(text);
  return join_words(w);
}

const std::vector<std::string>& Vocab::special_tokens() {
  static const std::vector<std::string> s = {"<pad>", "<bos>", "<eos>", "<enc>",
                                             "<lat>", "<sep>", "<unk>", "###"};
  return s;
}

Vocab::Vocab() : Vocab(from_tokens(special_tokens())) {}

Vocab::Vocab(const Vocab& other) : tokens_(other.tokens_), index_(other.index_), unknown_(other.unknown_.load()) {}

Vocab& Vocab::operator=(const Vocab& other) {
  tokens_ = other.tokens_;
  index_ = other.index_;
  unknown_ = other.unknown_.load();
  return *this;
}

Vocab::Vocab(Vocab&& other) noexcept
    : tokens_(std::move(other.tokens_)), index_(std::move(other.index_)), unknown_(other.unknown_.load()) {}

Vocab& Vocab::operator=(Vocab&& other) noexcept {
  tokens_ = std::move(other.tokens_);
  index_ = std::move(other.index_);
  unknown_ = other.unknown_.load();
  return *this;
}

Vocab Vocab::build(const std::vector<ReasoningExample>& examples) {
  std::set<std::string> words;
  auto add = [&](std::string_view text) {
    for (auto& w : split_words(text)) words.insert(std::move(w));
  };
  for (const auto& ex : examples) {
    add(ex.question);
    for (const auto& s : ex.steps) add(s);
    add(ex.answer);
  }
  std::vector<std::string> tokens = special_tokens();
  for (const auto& w : words) {
    if (std::find(tokens.begin(), tokens.begin() + kNumSpecials, w) == tokens.begin() + kNumSpecials) {
      tokens.push_back(w);
    }
  }
  return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  const auto& specials = special_tokens();
  if (tokens.size() < specials.size() || !std::equal(specials.begin(), specials.end(), tokens.begin())) {
    throw std::invalid_argument("vocabulary must start with the reserved special tokens");
  }
  Vocab v{Raw{}};
  v.index_.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!v.index_.emplace(tokens[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary entry '" + tokens[i] + "'");
    }
  }
  v.tokens_ = std::move(tokens);
  return v;
}

int Vocab::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) {
    ++unknown_;
    return kUnk;
  }
  return it->second;
}

bool Vocab::contains(std::string_view word) const { return index_.count(std::string(word)) > 0; }

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

std::vector<int> Vocab::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::vector<std::string> words;
  for (int i : ids) {
    if (i < kNumSpecials && i != kAnswer && i != kUnk) continue;
    words.push_back(token(i));
  }
  return join_words(words);
}

}  // namespace sentlat::corpus
