#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sentlat/corpus/example.hpp"
#include "sentlat/corpus/vocab.hpp"

namespace sentlat::corpus {

/// Token ids plus a per-position flag: targets[i] != 0 means ids[i] is
/// predicted from the prefix ids[0..i).
struct TokenSequence {
  std::vector<int> ids;
  std::vector<std::uint8_t> targets;
};

enum class LmFormat { cot, nocot };

std::vector<int> question_tokens(const Vocab& vocab, const ReasoningExample& ex);
std::vector<std::vector<int>> step_tokens(const Vocab& vocab, const ReasoningExample& ex);

/// cot:   q <sep> s1 <sep> s2 ... <sep> ### a <eos>, targets after the first <sep>
/// nocot: q <sep> ### a <eos>, targets on the answer step and <eos>
TokenSequence serialize_lm(const Vocab& vocab, const ReasoningExample& ex, LmFormat format);

/// q <sep>: the generation prompt for both formats.
std::vector<int> lm_prompt(const Vocab& vocab, const ReasoningExample& ex);

/// Tokens following the first answer marker, or nullopt without a marker.
std::optional<std::vector<int>> answer_tokens(std::span<const int> ids);

/// Decoded text of a step; "" for an empty id list.
std::string step_text(const Vocab& vocab, std::span<const int> ids);

}  // namespace sentlat::corpus
