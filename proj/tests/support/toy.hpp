#pragma once

// Small models and corpora shared by the module tests.

#include <set>
#include <stdexcept>
#include <vector>

#include "sentlat/autodiff/adam.hpp"
#include "sentlat/corpus/blocksworld.hpp"
#include "sentlat/corpus/serialize.hpp"
#include "sentlat/corpus/vocab.hpp"
#include "sentlat/embed/encdec.hpp"
#include "sentlat/infer/inference.hpp"
#include "sentlat/latent/latent_model.hpp"
#include "sentlat/nn/transformer.hpp"

namespace toy {

using namespace sentlat;

inline nn::TransformerConfig config(std::size_t vocab, std::size_t d = 32, std::size_t layers = 2,
                                    std::size_t max_positions = 128) {
  nn::TransformerConfig c;
  c.n_layers = layers;
  c.n_heads = 2;
  c.d_model = d;
  c.d_ff = 2 * d;
  c.vocab_size = vocab;
  c.max_positions = max_positions;
  return c;
}

struct Corpus {
  std::vector<corpus::ReasoningExample> examples;
  corpus::Vocab vocab;
};

inline Corpus blocks(std::size_t n, std::uint64_t seed = 1) {
  Corpus c;
  c.examples = corpus::gen_blocksworld(3, n, seed);
  c.vocab = corpus::Vocab::build(c.examples);
  return c;
}

inline embed::EncDec encdec(const corpus::Vocab& v, embed::EmbeddingType type, std::uint64_t seed = 7,
                            std::size_t d = 32) {
  return {nn::Transformer<float>(config(v.size(), d), seed), type};
}

/// Trains until eval_pair_em hits 100 on `pairs` or the step budget runs out.
inline double overfit(embed::EncDec& ed, const std::vector<embed::SentencePair>& pairs, std::size_t max_steps,
                      double lr = 3e-3, embed::EmbedMode mode = embed::EmbedMode::semantic) {
  ad::AdamConfig ac;
  ac.lr = lr;
  ac.clip_norm = 1.0;
  ad::Adam<float> opt(ed.model.parameters(), ac);
  embed::EmbedTrainConfig cfg;
  cfg.mode = mode;
  double em = 0;
  for (std::size_t s = 1; s <= max_steps; ++s) {
    embed::embed_train_step(ed, pairs, cfg, opt);
    if (s % 50 == 0) {
      em = embed::eval_pair_em(ed, pairs);
      if (em == 100.0) break;
    }
  }
  return em;
}

inline std::vector<embed::SentencePair> unique_semantic_pairs(const Corpus& c, std::size_t limit) {
  std::set<std::vector<int>> seen;
  std::vector<embed::SentencePair> out;
  for (const auto& ex : c.examples)
    for (auto& p : embed::build_semantic_pairs(c.vocab, ex))
      if (seen.insert(p.x).second && out.size() < limit) out.push_back(p);
  return out;
}

/// Semantic encdec and latent model that memorize six toy problems; built once per binary.
struct Fixture {
  Corpus corpus;
  embed::EncDec sem;
  std::vector<latent::LatentExample> train;
  latent::LatentModel lat;

  infer::Bundle bundle() const { return {&corpus.vocab, &lat, &sem, &sem, nullptr}; }
};

inline const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture f{blocks(6, 21), {}, {}, {}};
    f.sem = encdec(f.corpus.vocab, embed::EmbeddingType::semantic, 3);
    if (overfit(f.sem, unique_semantic_pairs(f.corpus, 1000), 3000) != 100.0) {
      throw std::runtime_error("fixture encdec failed to overfit");
    }
    f.sem.model.set_trainable(false);
    for (const auto& ex : f.corpus.examples) f.train.push_back(latent::prepare_example(f.corpus.vocab, ex, f.sem, f.sem));
    f.lat = latent::LatentModel(nn::Transformer<float>(config(f.corpus.vocab.size(), 32), 5), 32, 32, 6);
    ad::AdamConfig ac;
    ac.lr = 3e-3;
    ac.clip_norm = 1.0;
    ad::Adam<float> opt(f.lat.parameters(), ac);
    std::vector<const latent::LatentExample*> batch;
    for (auto& e : f.train) batch.push_back(&e);
    // Train past 100% teacher-forced EM so free-running predictions stay on track.
    for (int s = 0; s < 1500; ++s) latent::latent_train_step(f.lat, f.sem, batch, {}, opt);
    return f;
  }();
  return f;
}

}  // namespace toy
