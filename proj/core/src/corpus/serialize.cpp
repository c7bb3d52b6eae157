#include "sentlat/corpus/serialize.hpp"

#include <algorithm>

namespace sentlat::corpus {

std::vector<int> question_tokens(const Vocab& vocab, const ReasoningExample& ex) { return vocab.encode(ex.question); }

std::vector<std::vector<int>> step_tokens(const Vocab& vocab, const ReasoningExample& ex) {
  std::vector<std::vector<int>> out;
  out.reserve(ex.steps.size());
  for (const auto& s : ex.steps) out.push_back(vocab.encode(s));
  return out;
}

TokenSequence serialize_lm(const Vocab& vocab, const ReasoningExample& ex, LmFormat format) {
  TokenSequence seq;
  auto push = [&](int id, bool target) {
    seq.ids.push_back(id);
    seq.targets.push_back(target ? 1 : 0);
  };
  for (int id : question_tokens(vocab, ex)) push(id, false);
  push(kSep, false);
  const auto steps = step_tokens(vocab, ex);
  const std::size_t first = format == LmFormat::cot ? 0 : steps.size() - 1;
  for (std::size_t i = first; i < steps.size(); ++i) {
    for (int id : steps[i]) push(id, true);
    push(i + 1 == steps.size() ? kEos : kSep, true);
  }
  return seq;
}

std::vector<int> lm_prompt(const Vocab& vocab, const ReasoningExample& ex) {
  auto ids = question_tokens(vocab, ex);
  ids.push_back(kSep);
  return ids;
}

std::optional<std::vector<int>> answer_tokens(std::span<const int> ids) {
  auto it = std::find(ids.begin(), ids.end(), kAnswer);
  if (it == ids.end()) return std::nullopt;
  std::vector<int> out;
  for (++it; it != ids.end() && *it != kEos && *it != kSep; ++it) out.push_back(*it);
  return out;
}

std::string step_text(const Vocab& vocab, std::span<const int> ids) { return vocab.decode(ids); }

}  // namespace sentlat::corpus
