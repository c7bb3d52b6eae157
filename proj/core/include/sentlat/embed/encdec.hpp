#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sentlat/autodiff/adam.hpp"
#include "sentlat/corpus/example.hpp"
#include "sentlat/corpus/vocab.hpp"
#include "sentlat/nn/transformer.hpp"

namespace sentlat::embed {

enum class EmbeddingType { semantic, contextual };
enum class Provenance { semantic, contextual, predicted };
enum class EmbedMode { semantic, ctx_base, ctx_contrastive };

std::string to_string(EmbeddingType t);
std::string to_string(EmbedMode m);
EmbeddingType parse_embedding_type(const std::string& s);
EmbedMode parse_embed_mode(const std::string& s);
EmbeddingType embedding_type_of(EmbedMode m);

struct SentenceEmbedding {
  std::vector<float> h;
  Provenance tag = Provenance::semantic;
};

struct EmbedTrainConfig {
  EmbedMode mode = EmbedMode::semantic;
  double tau = 0.1;
  double contrastive_weight = 1.0;

  void validate() const;
};

/// One parameter set that both encodes (reads the hidden state at a trailing
/// <enc> marker) and decodes (conditions generation on an embedding item).
struct EncDec {
  nn::Transformer<float> model;
  EmbeddingType type = EmbeddingType::semantic;

  std::size_t dim() const { return model.config().d_model; }
};

/// x is the encoder input (without the trailing marker), y the target step.
struct SentencePair {
  std::vector<int> x;
  std::vector<int> y;
};

/// Encoder input for step `i` (0-based): the step itself for semantic
/// embeddings, q <sep> s_1 ... <sep> s_i-1 for contextual ones.
std::vector<int> encoder_input(const corpus::Vocab& vocab, const corpus::ReasoningExample& ex, std::size_t i,
                               EmbeddingType type);

std::vector<SentencePair> build_semantic_pairs(const corpus::Vocab& vocab, const corpus::ReasoningExample& ex);
std::vector<SentencePair> build_contextual_pairs(const corpus::Vocab& vocab, const corpus::ReasoningExample& ex);
std::vector<SentencePair> build_pairs(const corpus::Vocab& vocab, const corpus::ReasoningExample& ex,
                                      EmbeddingType type);

/// h_N of `x <enc>`: the final-LayerNorm hidden state at the marker.
SentenceEmbedding encode_sentence(const EncDec& encdec, std::span<const int> x,
                                  nn::ForwardCounters* counters = nullptr);

/// Differentiable batch encoding, one row per input. Inputs where one is a
/// prefix of the next share a packed segment; their markers are private rows.
ad::Tensor<float> encode_batch(const nn::Transformer<float>& model, const std::vector<std::vector<int>>& xs);

/// Greedy decoding of [h] <bos> ... until <eos> or max_len tokens.
std::vector<int> decode_from_embedding(const EncDec& encdec, std::span<const float> h, std::size_t max_len,
                                       nn::ForwardCounters* counters = nullptr);

/// Teacher-forced CE of each y_b (plus <eos>) given [h_b] <bos>; mean over
/// all target tokens in the batch.
ad::Tensor<float> decoder_loss(const nn::Transformer<float>& model, const ad::Tensor<float>& h,
                               const std::vector<std::vector<int>>& ys);

/// Mean over anchors of -log softmax(cos(a_i, c_j) / tau)[positive_i].
template <std::floating_point T>
ad::Tensor<T> info_nce(const ad::Tensor<T>& anchors, const ad::Tensor<T>& candidates,
                       std::span<const int> positives, double tau);

/// Candidate rows with duplicates (bitwise equal rows) removed, and each
/// input row's index into them.
std::pair<ad::Tensor<float>, std::vector<int>> unique_rows(const ad::Tensor<float>& rows);

struct EmbedStepResult {
  double ce = 0;
  double infonce = 0;
  double total = 0;
  // Only one distinct candidate: InfoNCE is identically zero.
  bool degenerate_batch = false;
};

/// One optimizer step on `encdec` (optim must own its parameters).
EmbedStepResult embed_train_step(EncDec& encdec, const std::vector<SentencePair>& batch,
                                 const EmbedTrainConfig& cfg, ad::Adam<float>& optim,
                                 const EncDec* frozen_semantic = nullptr);

/// Percentage of pairs whose greedy decode of encode(x) equals y token for token.
double eval_pair_em(const EncDec& encdec, const std::vector<SentencePair>& pairs, std::size_t max_len = 48);

/// Restoration EM over every step of the examples.
double eval_semantic_em(const EncDec& encdec, const corpus::Vocab& vocab,
                        const std::vector<corpus::ReasoningExample>& examples);

struct RolloutStats {
  double accuracy = 0;  // percentage
  std::size_t n = 0;
  std::size_t unterminated = 0;
  std::size_t max_steps_used = 0;
};

/// Encode the running context, decode the next step, append, repeat until an
/// answer step or max_steps.
RolloutStats eval_contextual_rollout(const EncDec& encdec, const corpus::Vocab& vocab,
                                     const std::vector<corpus::ReasoningExample>& examples, std::size_t max_steps);

}  // namespace sentlat::embed
