#pragma once

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sentlat::corpus {

inline constexpr std::string_view kAnswerMarker = "###";

/// A question, its ordered reasoning steps, and the final answer. The last
/// step is always the answer step "### <answer>".
struct ReasoningExample {
  std::string question;
  std::vector<std::string> steps;
  std::string answer;

  /// Throws std::invalid_argument describing the first violated invariant.
  void validate() const;
  bool operator==(const ReasoningExample&) const = default;
};

bool is_answer_step(std::string_view step);

/// Text after the answer marker, trimmed. Returns empty when there is no marker.
std::string answer_from_step(std::string_view step);

/// Trim and collapse interior whitespace; optionally case-fold ASCII.
std::string normalize_answer(std::string_view text, bool casefold = false);

class CorpusFormatError : public std::runtime_error {
 public:
  CorpusFormatError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// One JSON object per line: {"question": str, "steps": [str...], "answer": str}.
void write_jsonl(const std::filesystem::path& path, const std::vector<ReasoningExample>& examples);
std::vector<ReasoningExample> read_jsonl(const std::filesystem::path& path);

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

struct DatasetSplits {
  std::vector<ReasoningExample> train;
  std::vector<ReasoningExample> valid;
  std::vector<ReasoningExample> test;
};

using SplitKey = std::function<std::string(const ReasoningExample&)>;

/// Assigns every example to a split by hashing its key, so equal keys always
/// land in the same split. The default key is the question text, which for
/// generated corpora encodes the (initial, goal) or graph instance.
DatasetSplits split_dataset(const std::vector<ReasoningExample>& examples, SplitRatios ratios,
                            const SplitKey& key = {}, std::uint64_t seed = 0);

/// Stable 64-bit FNV-1a digest of the split's serialized contents.
std::string split_fingerprint(const std::vector<ReasoningExample>& examples);

}  // namespace sentlat::corpus
