#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sentlat/corpus/vocab.hpp"
#include "sentlat/embed/encdec.hpp"
#include "sentlat/infer/classifier.hpp"
#include "sentlat/latent/latent_model.hpp"

namespace sentlat::infer {

enum class InferenceMode { discretized, continuous };
enum class HaltReason { answer, max_steps, empty_step };

std::string to_string(InferenceMode m);
std::string to_string(HaltReason r);
InferenceMode parse_inference_mode(const std::string& s);

/// Everything inference needs. The input encoder re-encodes decoded steps in
/// discretized mode; the output encdec decodes predictions.
struct Bundle {
  const corpus::Vocab* vocab = nullptr;
  const latent::LatentModel* latent = nullptr;
  const embed::EncDec* input_encdec = nullptr;
  const embed::EncDec* output_encdec = nullptr;
  const TerminationClassifier* classifier = nullptr;

  void validate() const;
};

/// Where a perturbation hook is called.
enum class Site { lang_input, lang_output, latent };
std::string to_string(Site s);
Site parse_site(const std::string& s);

struct InferenceOptions {
  InferenceMode mode = InferenceMode::continuous;
  std::size_t max_steps = 16;
  bool use_oracle = true;
  // Decode every prediction for display; these decodes are counted apart
  // from the decoder calls the inference itself needs.
  bool decode_steps = false;
  // Keep the residual stream of every layer at each prediction position.
  bool capture_layers = false;
  std::size_t max_sentence_tokens = 48;
  // Called on predictions (lang_output, latent) and mapped inputs (lang_input).
  std::function<void(Site, std::span<float>)> perturb;
};

struct InferenceCounters {
  nn::ForwardCounters latent, encoder, decoder, display;
  std::uint64_t decoder_calls = 0;
  std::uint64_t encoder_calls = 0;
  std::uint64_t halt_checks = 0;
  std::uint64_t classifier_calls = 0;
};

struct InferenceTrace {
  InferenceMode mode = InferenceMode::continuous;
  std::string question;
  std::vector<std::vector<float>> predicted;  // hat h_t, t = 1..halt_step
  std::vector<std::vector<float>> mapped;     // h_t fed back, t = 1..halt_step-1
  std::vector<std::string> decoded;           // per prediction, when decoded
  // [t][layer] residual row at the prediction position (capture_layers).
  std::vector<std::vector<std::vector<float>>> layer_states;
  std::size_t halt_step = 0;
  HaltReason halt_reason = HaltReason::max_steps;
  std::string final_text;
  InferenceCounters counters;
};

/// Text state that discretized mapping carries between steps.
struct MapContext {
  std::vector<int> question;
  std::vector<std::vector<int>> decoded_steps;
};

struct MapResult {
  std::vector<float> h;
  std::vector<int> decoded;  // empty in continuous mode
};

/// Continuous: identity. Discretized: decode hat h_t to text and re-encode it
/// with the input encoder; a semantic encoder sees the step alone, a
/// contextual one sees q and the steps decoded before it. The decoded step is
/// appended to `ctx`. Returns nullopt when the decode is empty.
std::optional<MapResult> map_embedding(InferenceMode mode, std::span<const float> h_hat, const Bundle& bundle,
                                       MapContext& ctx, InferenceCounters* counters = nullptr,
                                       std::size_t max_sentence_tokens = 48);

/// Oracle: halt iff the first decoded token is the answer marker (one token decoded).
bool oracle_should_halt(const embed::EncDec& decoder, std::span<const float> h,
                        nn::ForwardCounters* counters = nullptr);

/// proj_out(ln_f(row)) for one residual row.
std::vector<float> readout_row(const latent::LatentModel& lat, std::span<const float> residual_row);

InferenceTrace run_inference(const Bundle& bundle, const std::string& question, const InferenceOptions& opt);

/// Marker-stripped, normalized answer of a halted trace; throws for traces
/// that did not halt on an answer.
std::string extract_final_answer(const InferenceTrace& trace, bool casefold = false);

struct InferenceEval {
  double accuracy = 0;  // percentage
  std::size_t n = 0;
  std::size_t correct = 0;
  std::size_t unhalted = 0;  // ended by max_steps or an empty step
  double mean_steps = 0;
  InferenceCounters totals;
  std::vector<InferenceTrace> traces;  // kept on request
};

/// Runs every example and scores the extracted answer against the gold one.
InferenceEval evaluate_inference(const Bundle& bundle, const std::vector<corpus::ReasoningExample>& examples,
                                 const InferenceOptions& opt, bool keep_traces = false);

/// Writes one JSON object per line.
void write_trace_jsonl(std::ostream& out, const InferenceTrace& trace);

}  // namespace sentlat::infer
