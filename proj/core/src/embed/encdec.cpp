#include "sentlat/embed/encdec.hpp"

#include <cmath>
#include <cstring>
#include <map>
#include <stdexcept>
#include <unordered_map>

#include "sentlat/corpus/serialize.hpp"

namespace sentlat::embed {

using ad::Tensor;
using nn::InputItem;

std::string to_string(EmbeddingType t) { return t == EmbeddingType::semantic ? "semantic" : "contextual"; }

std::string to_string(EmbedMode m) {
  switch (m) {
    case EmbedMode::semantic:
      return "semantic";
    case EmbedMode::ctx_base:
      return "ctx_base";
    case EmbedMode::ctx_contrastive:
      return "ctx_contrastive";
  }
  return "?";
}

EmbeddingType parse_embedding_type(const std::string& s) {
  if (s == "semantic") return EmbeddingType::semantic;
  if (s == "contextual") return EmbeddingType::contextual;
  throw std::invalid_argument("unknown embedding type \"" + s + "\" (semantic | contextual)");
}

EmbedMode parse_embed_mode(const std::string& s) {
  if (s == "semantic") return EmbedMode::semantic;
  if (s == "ctx_base") return EmbedMode::ctx_base;
  if (s == "ctx_contrastive") return EmbedMode::ctx_contrastive;
  throw std::invalid_argument("unknown embedding mode \"" + s + "\" (semantic | ctx_base | ctx_contrastive)");
}

EmbeddingType embedding_type_of(EmbedMode m) {
  return m == EmbedMode::semantic ? EmbeddingType::semantic : EmbeddingType::contextual;
}

void EmbedTrainConfig::validate() const {
  if (!(tau > 0)) throw std::invalid_argument("tau must be positive");
  if (contrastive_weight < 0) throw std::invalid_argument("contrastive weight must be non-negative");
}

std::vector<int> encoder_input(const corpus::Vocab& vocab, const corpus::ReasoningExample& ex, std::size_t i,
                               EmbeddingType type) {
  const auto steps = corpus::step_tokens(vocab, ex);
  if (i >= steps.size()) throw std::out_of_range("step index past the end of the example");
  if (type == EmbeddingType::semantic) return steps[i];
  auto x = corpus::question_tokens(vocab, ex);
  for (std::size_t k = 0; k < i; ++k) {
    x.push_back(corpus::kSep);
    x.insert(x.end(), steps[k].begin(), steps[k].end());
  }
  return x;
}

std::vector<SentencePair> build_semantic_pairs(const corpus::Vocab& vocab, const corpus::ReasoningExample& ex) {
  ex.validate();
  std::vector<SentencePair> out;
  for (auto& s : corpus::step_tokens(vocab, ex)) out.push_back({s, s});
  return out;
}

std::vector<SentencePair> build_contextual_pairs(const corpus::Vocab& vocab, const corpus::ReasoningExample& ex) {
  ex.validate();
  const auto steps = corpus::step_tokens(vocab, ex);
  std::vector<SentencePair> out;
  auto x = corpus::question_tokens(vocab, ex);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    out.push_back({x, steps[i]});
    x.push_back(corpus::kSep);
    x.insert(x.end(), steps[i].begin(), steps[i].end());
  }
  return out;
}

std::vector<SentencePair> build_pairs(const corpus::Vocab& vocab, const corpus::ReasoningExample& ex,
                                      EmbeddingType type) {
  return type == EmbeddingType::semantic ? build_semantic_pairs(vocab, ex) : build_contextual_pairs(vocab, ex);
}

SentenceEmbedding encode_sentence(const EncDec& encdec, std::span<const int> x, nn::ForwardCounters* counters) {
  if (x.empty()) throw std::invalid_argument("cannot encode an empty token sequence");
  std::vector<InputItem<float>> items;
  items.reserve(x.size() + 1);
  for (int id : x) items.push_back(InputItem<float>::token(id));
  items.push_back(InputItem<float>::token(corpus::kEnc));
  nn::ForwardOptions<float> opt;
  opt.counters = counters;
  const auto res = encdec.model.forward_mixed(items, opt);
  const std::size_t d = encdec.dim();
  const auto hidden = res.hidden.data();
  SentenceEmbedding out;
  out.h.assign(hidden.end() - static_cast<std::ptrdiff_t>(d), hidden.end());
  out.tag = encdec.type == EmbeddingType::semantic ? Provenance::semantic : Provenance::contextual;
  return out;
}

namespace {

bool is_prefix(const std::vector<int>& a, const std::vector<int>& b) {
  return a.size() <= b.size() && std::equal(a.begin(), a.end(), b.begin());
}

}  // namespace

Tensor<float> encode_batch(const nn::Transformer<float>& model, const std::vector<std::vector<int>>& xs) {
  if (xs.empty()) throw std::invalid_argument("encode_batch: empty batch");
  nn::PackedInput<float> in;
  std::vector<std::size_t> rows(xs.size());
  std::size_t k = 0;
  while (k < xs.size()) {
    if (xs[k].empty()) throw std::invalid_argument("cannot encode an empty token sequence");
    std::size_t end = k + 1;
    while (end < xs.size() && is_prefix(xs[end - 1], xs[end])) ++end;
    const auto& longest = xs[end - 1];
    std::vector<InputItem<float>> items;
    std::vector<std::uint8_t> priv;
    std::vector<std::size_t> marker_at;
    std::size_t member = k;
    for (std::size_t i = 0; i <= longest.size(); ++i) {
      while (member < end && xs[member].size() == i) {
        marker_at.push_back(items.size());
        items.push_back(InputItem<float>::token(corpus::kEnc));
        priv.push_back(1);
        ++member;
      }
      if (i < longest.size()) {
        items.push_back(InputItem<float>::token(longest[i]));
        priv.push_back(0);
      }
    }
    const std::size_t start = in.add_segment(items, priv);
    for (std::size_t m = 0; m < marker_at.size(); ++m) rows[k + m] = start + marker_at[m];
    k = end;
  }
  const auto res = model.forward(in);
  return ad::gather_rows(res.hidden, std::span<const std::size_t>(rows));
}

std::vector<int> decode_from_embedding(const EncDec& encdec, std::span<const float> h, std::size_t max_len,
                                       nn::ForwardCounters* counters) {
  if (h.size() != encdec.dim()) throw ad::DimensionError("embedding length does not match the decoder width");
  const std::vector<InputItem<float>> prefix = {InputItem<float>::embedding(h),
                                                InputItem<float>::token(corpus::kBos)};
  return nn::greedy_generate(encdec.model, prefix, corpus::kEos, max_len, counters);
}

Tensor<float> decoder_loss(const nn::Transformer<float>& model, const Tensor<float>& h,
                           const std::vector<std::vector<int>>& ys) {
  if (h.rows() != ys.size()) throw ad::DimensionError("decoder_loss: one embedding per target required");
  nn::PackedInput<float> in;
  std::vector<std::size_t> rows;
  std::vector<int> targets;
  for (std::size_t b = 0; b < ys.size(); ++b) {
    std::vector<InputItem<float>> items;
    items.push_back(InputItem<float>::embedding(h, b));
    items.push_back(InputItem<float>::token(corpus::kBos));
    for (int id : ys[b]) items.push_back(InputItem<float>::token(id));
    const std::size_t start = in.add_segment(items);
    // Row start+1+j predicts y_j; the last row predicts <eos>.
    for (std::size_t j = 0; j <= ys[b].size(); ++j) {
      rows.push_back(start + 1 + j);
      targets.push_back(j < ys[b].size() ? ys[b][j] : corpus::kEos);
    }
  }
  const auto res = model.forward(in);
  const auto logits = model.logits(ad::gather_rows(res.hidden, std::span<const std::size_t>(rows)));
  return ad::cross_entropy_from_logits(logits, std::span<const int>(targets));
}

template <std::floating_point T>
Tensor<T> info_nce(const Tensor<T>& anchors, const Tensor<T>& candidates, std::span<const int> positives,
                   double tau) {
  if (!(tau > 0)) throw std::invalid_argument("info_nce: tau must be positive");
  if (anchors.cols() != candidates.cols()) throw ad::DimensionError("info_nce: anchor/candidate width mismatch");
  if (positives.size() != anchors.rows()) throw ad::DimensionError("info_nce: one positive index per anchor");
  const auto sims = ad::matmul_nt(ad::normalize_rows(anchors), ad::normalize_rows(candidates));
  return ad::cross_entropy_from_logits(ad::scale(sims, static_cast<T>(1.0 / tau)), positives);
}

std::pair<Tensor<float>, std::vector<int>> unique_rows(const Tensor<float>& rows) {
  const std::size_t n = rows.rows(), d = rows.cols();
  std::map<std::vector<float>, int> seen;
  std::vector<std::size_t> keep;
  std::vector<int> index(n);
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<float> key(rows.data().begin() + static_cast<std::ptrdiff_t>(r * d),
                           rows.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
    auto [it, inserted] = seen.emplace(std::move(key), static_cast<int>(keep.size()));
    if (inserted) keep.push_back(r);
    index[r] = it->second;
  }
  return {ad::gather_rows(rows, std::span<const std::size_t>(keep)), index};
}

EmbedStepResult embed_train_step(EncDec& encdec, const std::vector<SentencePair>& batch,
                                 const EmbedTrainConfig& cfg, ad::Adam<float>& optim,
                                 const EncDec* frozen_semantic) {
  cfg.validate();
  if (batch.empty()) throw std::invalid_argument("embed_train_step: empty batch");
  const bool contrastive = cfg.mode == EmbedMode::ctx_contrastive;
  if (contrastive && frozen_semantic == nullptr) {
    throw std::invalid_argument("contrastive mode needs a frozen semantic encoder");
  }
  std::vector<std::vector<int>> xs, ys;
  for (const auto& p : batch) {
    xs.push_back(p.x);
    ys.push_back(p.y);
  }
  const auto h = encode_batch(encdec.model, xs);
  const auto ce = decoder_loss(encdec.model, h, ys);
  EmbedStepResult r;
  auto total = ce;
  if (contrastive) {
    const auto z = encode_batch(frozen_semantic->model, ys).detach();
    auto [cand, pos] = unique_rows(z);
    r.degenerate_batch = cand.rows() == 1;
    const auto nce = info_nce(h, cand, std::span<const int>(pos), cfg.tau);
    r.infonce = nce.item();
    total = ad::add(ce, ad::scale(nce, static_cast<float>(cfg.contrastive_weight)));
  }
  ad::backward(total);
  optim.step();
  r.ce = ce.item();
  r.total = total.item();
  return r;
}

double eval_pair_em(const EncDec& encdec, const std::vector<SentencePair>& pairs, std::size_t max_len) {
  if (pairs.empty()) return 0.0;
  std::map<std::vector<int>, std::vector<int>> memo;
  std::size_t hits = 0;
  for (const auto& p : pairs) {
    auto it = memo.find(p.x);
    if (it == memo.end()) {
      const auto h = encode_sentence(encdec, p.x);
      it = memo.emplace(p.x, decode_from_embedding(encdec, h.h, max_len)).first;
    }
    if (it->second == p.y) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(pairs.size());
}

double eval_semantic_em(const EncDec& encdec, const corpus::Vocab& vocab,
                        const std::vector<corpus::ReasoningExample>& examples) {
  std::vector<SentencePair> pairs;
  for (const auto& ex : examples) {
    auto p = build_semantic_pairs(vocab, ex);
    pairs.insert(pairs.end(), p.begin(), p.end());
  }
  return eval_pair_em(encdec, pairs);
}

RolloutStats eval_contextual_rollout(const EncDec& encdec, const corpus::Vocab& vocab,
                                     const std::vector<corpus::ReasoningExample>& examples, std::size_t max_steps) {
  RolloutStats st;
  std::size_t correct = 0;
  for (const auto& ex : examples) {
    auto ctx = corpus::question_tokens(vocab, ex);
    bool done = false;
    for (std::size_t t = 1; t <= max_steps; ++t) {
      st.max_steps_used = std::max(st.max_steps_used, t);
      const auto h = encode_sentence(encdec, ctx);
      const auto y = decode_from_embedding(encdec, h.h, 48);
      if (!y.empty() && y.front() == corpus::kAnswer) {
        const auto answer = corpus::normalize_answer(corpus::answer_from_step(vocab.decode(y)));
        if (answer == corpus::normalize_answer(ex.answer)) ++correct;
        done = true;
        break;
      }
      if (ctx.size() + y.size() + 2 >= encdec.model.config().max_positions) break;
      ctx.push_back(corpus::kSep);
      ctx.insert(ctx.end(), y.begin(), y.end());
    }
    if (!done) ++st.unterminated;
    ++st.n;
  }
  st.accuracy = st.n ? 100.0 * static_cast<double>(correct) / static_cast<double>(st.n) : 0.0;
  return st;
}

template Tensor<float> info_nce<float>(const Tensor<float>&, const Tensor<float>&, std::span<const int>, double);
template Tensor<double> info_nce<double>(const Tensor<double>&, const Tensor<double>&, std::span<const int>, double);

}  // namespace sentlat::embed
