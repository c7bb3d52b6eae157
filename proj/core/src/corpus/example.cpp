#include "sentlat/corpus/example.hpp"

#include <nlohmann/json.hpp>

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace sentlat::corpus {

namespace {

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

void ReasoningExample::validate() const {
  if (steps.empty()) throw std::invalid_argument("example has no steps");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (trim(steps[i]).empty()) throw std::invalid_argument("step " + std::to_string(i) + " is empty");
  }
  if (!is_answer_step(steps.back())) {
    throw std::invalid_argument("last step must start with the answer marker: '" + steps.back() + "'");
  }
}

bool is_answer_step(std::string_view step) {
  step = trim(step);
  return step.substr(0, kAnswerMarker.size()) == kAnswerMarker;
}

std::string answer_from_step(std::string_view step) {
  step = trim(step);
  if (step.substr(0, kAnswerMarker.size()) != kAnswerMarker) return {};
  return normalize_answer(step.substr(kAnswerMarker.size()));
}

std::string normalize_answer(std::string_view text, bool casefold) {
  std::string out;
  bool pending_space = false;
  for (char c : trim(text)) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = true;
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(casefold ? static_cast<char>(std::tolower(static_cast<unsigned char>(c))) : c);
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<ReasoningExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& ex : examples) {
    nlohmann::ordered_json j;
    j["question"] = ex.question;
    j["steps"] = ex.steps;
    j["answer"] = ex.answer;
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<ReasoningExample> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<ReasoningExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw CorpusFormatError(lineno, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw CorpusFormatError(lineno, "record is not an object");
    ReasoningExample ex;
    for (const char* field : {"question", "steps", "answer"}) {
      if (!j.contains(field)) throw CorpusFormatError(lineno, std::string("missing field \"") + field + "\"");
    }
    if (!j["question"].is_string()) throw CorpusFormatError(lineno, "field \"question\" must be a string");
    if (!j["answer"].is_string()) throw CorpusFormatError(lineno, "field \"answer\" must be a string");
    if (!j["steps"].is_array()) throw CorpusFormatError(lineno, "field \"steps\" must be an array");
    ex.question = j["question"].get<std::string>();
    ex.answer = j["answer"].get<std::string>();
    for (const auto& s : j["steps"]) {
      if (!s.is_string()) throw CorpusFormatError(lineno, "field \"steps\" must hold strings");
      ex.steps.push_back(s.get<std::string>());
    }
    try {
      ex.validate();
    } catch (const std::invalid_argument& e) {
      throw CorpusFormatError(lineno, e.what());
    }
    out.push_back(std::move(ex));
  }
  return out;
}

DatasetSplits split_dataset(const std::vector<ReasoningExample>& examples, SplitRatios ratios,
                            const SplitKey& key, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9) {
    throw std::invalid_argument("split ratios must be non-negative and sum to 1");
  }
  DatasetSplits out;
  const std::string seed_text = std::to_string(seed) + "/";
  for (const auto& ex : examples) {
    const std::string k = key ? key(ex) : ex.question;
    const std::uint64_t h = fnv1a(k, fnv1a(seed_text));
    // Top 53 bits -> uniform in [0, 1).
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    if (u < ratios.train) {
      out.train.push_back(ex);
    } else if (u < ratios.train + ratios.valid) {
      out.valid.push_back(ex);
    } else {
      out.test.push_back(ex);
    }
  }
  auto check = [](const std::vector<ReasoningExample>& s, double r, const char* name) {
    if (r > 0 && s.empty()) throw std::invalid_argument(std::string("split '") + name + "' is empty");
  };
  check(out.train, ratios.train, "train");
  check(out.valid, ratios.valid, "valid");
  check(out.test, ratios.test, "test");
  return out;
}

std::string split_fingerprint(const std::vector<ReasoningExample>& examples) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& ex : examples) {
    h = fnv1a(ex.question, h);
    for (const auto& s : ex.steps) h = fnv1a(s, fnv1a("\x1f", h));
    h = fnv1a(ex.answer, fnv1a("\x1e", h));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace sentlat::corpus
