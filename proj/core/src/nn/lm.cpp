#include "sentlat/nn/lm.hpp"

namespace sentlat::nn {

template <std::floating_point T>
ad::Tensor<T> lm_loss(const Transformer<T>& model, const std::vector<corpus::TokenSequence>& batch) {
  PackedInput<T> in;
  std::vector<std::size_t> rows;
  std::vector<int> targets;
  for (const auto& seq : batch) {
    if (seq.ids.size() != seq.targets.size()) throw std::invalid_argument("target mask length mismatch");
    if (seq.ids.size() < 2) continue;
    std::vector<InputItem<T>> items;
    // The last token is never an input to a prediction.
    for (std::size_t i = 0; i + 1 < seq.ids.size(); ++i) items.push_back(InputItem<T>::token(seq.ids[i]));
    const std::size_t start = in.add_segment(items);
    for (std::size_t i = 1; i < seq.ids.size(); ++i) {
      if (!seq.targets[i]) continue;
      rows.push_back(start + i - 1);
      targets.push_back(seq.ids[i]);
    }
  }
  if (targets.empty()) throw std::invalid_argument("lm_loss: empty loss mask");
  auto res = model.forward(in);
  auto logits = model.logits(ad::gather_rows(res.hidden, std::span<const std::size_t>(rows)));
  return ad::cross_entropy_from_logits(logits, std::span<const int>(targets));
}

double train_lm_step(const Transformer<float>& model, const std::vector<corpus::TokenSequence>& batch,
                     ad::Adam<float>& optim) {
  auto loss = lm_loss(model, batch);
  ad::backward(loss);
  optim.step();
  return loss.item();
}

RolloutResult eval_token_rollout(const Transformer<float>& model, const corpus::Vocab& vocab,
                                 const corpus::ReasoningExample& ex, corpus::LmFormat format,
                                 std::size_t max_new_tokens) {
  (void)format;  // both formats share the prompt; the model decides whether to reason first
  const auto prompt = corpus::lm_prompt(vocab, ex);
  std::vector<InputItem<float>> items;
  for (int id : prompt) items.push_back(InputItem<float>::token(id));
  RolloutResult r;
  r.generated = greedy_generate(model, items, corpus::kEos, max_new_tokens, &r.counters);
  const auto ans = corpus::answer_tokens(r.generated);
  if (!ans) {
    r.missing_marker = true;
    return r;
  }
  r.answer = corpus::normalize_answer(vocab.decode(*ans));
  r.correct = r.answer == corpus::normalize_answer(ex.answer);
  return r;
}

template ad::Tensor<float> lm_loss<float>(const Transformer<float>&, const std::vector<corpus::TokenSequence>&);
template ad::Tensor<double> lm_loss<double>(const Transformer<double>&, const std::vector<corpus::TokenSequence>&);

}  // namespace sentlat::nn
