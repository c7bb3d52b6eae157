#pragma once

#include <string>
#include <vector>

#include "sentlat/autodiff/adam.hpp"
#include "sentlat/corpus/example.hpp"
#include "sentlat/corpus/serialize.hpp"
#include "sentlat/nn/transformer.hpp"

namespace sentlat::nn {

/// Mean next-token cross-entropy over target positions of all sequences,
/// which are packed without padding. Throws std::invalid_argument when no
/// position is a target.
template <std::floating_point T>
ad::Tensor<T> lm_loss(const Transformer<T>& model, const std::vector<corpus::TokenSequence>& batch);

/// One Adam step on lm_loss. Returns the loss value.
double train_lm_step(const Transformer<float>& model, const std::vector<corpus::TokenSequence>& batch,
                     ad::Adam<float>& optim);

struct RolloutResult {
  std::string answer;
  bool correct = false;
  bool missing_marker = false;  // budget ran out before "###"
  std::vector<int> generated;
  ForwardCounters counters;
};

/// Greedy generation from "q <sep>"; the answer is the text after the first
/// answer marker, compared to the gold answer after normalization.
RolloutResult eval_token_rollout(const Transformer<float>& model, const corpus::Vocab& vocab,
                                 const corpus::ReasoningExample& ex, corpus::LmFormat format,
                                 std::size_t max_new_tokens = 160);

}  // namespace sentlat::nn
