#include <benchmark/benchmark.h>

#include <random>

#include "sentlat/autodiff/ops.hpp"
#include "sentlat/corpus/blocksworld.hpp"
#include "sentlat/corpus/serialize.hpp"
#include "sentlat/corpus/vocab.hpp"
#include "sentlat/cost/cost_model.hpp"
#include "sentlat/embed/encdec.hpp"
#include "sentlat/nn/lm.hpp"
#include "sentlat/nn/transformer.hpp"

using namespace sentlat;

namespace {

nn::TransformerConfig dims(std::size_t d, std::size_t vocab = 64) {
  nn::TransformerConfig c;
  c.n_layers = 4;
  c.n_heads = 4;
  c.d_model = d;
  c.d_ff = 4 * d;
  c.vocab_size = vocab;
  c.max_positions = 256;
  return c;
}

ad::Tensor<float> random(std::size_t r, std::size_t c, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n;
  std::vector<float> v(r * c);
  for (auto& x : v) x = n(rng);
  return ad::Tensor<float>::from({r, c}, std::move(v), grad);
}

void BM_Matmul(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto a = random(n, n, 1), b = random(n, n, 2);
  for (auto _ : st) benchmark::DoNotOptimize(ad::matmul(a, b));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_MatmulBackward(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto a = random(n, n, 1, true), b = random(n, n, 2, true);
  for (auto _ : st) {
    ad::backward(ad::sum(ad::matmul(a, b)));
    a.node()->grad.clear();
    b.node()->grad.clear();
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(128);

// One packed forward over a batch of 16 sequences of 64 tokens.
void BM_TransformerForward(benchmark::State& st) {
  const nn::Transformer<float> m(dims(static_cast<std::size_t>(st.range(0))), 1);
  nn::PackedInput<float> in;
  for (int s = 0; s < 16; ++s) {
    std::vector<nn::InputItem<float>> seq;
    for (int i = 0; i < 64; ++i) seq.push_back(nn::InputItem<float>::token(8 + (i * 7 + s) % 50));
    in.add_segment(seq);
  }
  for (auto _ : st) benchmark::DoNotOptimize(m.forward(in));
  st.SetItemsProcessed(st.iterations() * 16 * 64);
}
BENCHMARK(BM_TransformerForward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_LmTrainStep(benchmark::State& st) {
  const auto ex = corpus::gen_blocksworld(3, 32, 1);
  const auto vocab = corpus::Vocab::build(ex);
  const nn::Transformer<float> m(dims(128, vocab.size()), 1);
  std::vector<corpus::TokenSequence> batch;
  std::size_t tokens = 0;
  for (const auto& e : ex) {
    batch.push_back(corpus::serialize_lm(vocab, e, corpus::LmFormat::cot));
    tokens += batch.back().ids.size();
  }
  ad::Adam<float> opt(m.parameters(), {});
  for (auto _ : st) benchmark::DoNotOptimize(nn::train_lm_step(m, batch, opt));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(tokens));
}
BENCHMARK(BM_LmTrainStep)->Unit(benchmark::kMillisecond);

// Incremental decoding with the KV cache versus recomputing the prefix.
void BM_GreedyDecodeCached(benchmark::State& st) {
  const nn::Transformer<float> m(dims(128), 1);
  std::vector<nn::InputItem<float>> prefix;
  for (int i = 0; i < 40; ++i) prefix.push_back(nn::InputItem<float>::token(8 + i % 50));
  for (auto _ : st) benchmark::DoNotOptimize(nn::greedy_generate(m, prefix, -1, 32));
}
BENCHMARK(BM_GreedyDecodeCached)->Unit(benchmark::kMillisecond);

void BM_EncodeContextualBatch(benchmark::State& st) {
  const auto ex = corpus::gen_blocksworld(3, 8, 2);
  const auto vocab = corpus::Vocab::build(ex);
  const nn::Transformer<float> m(dims(128, vocab.size()), 1);
  std::vector<std::vector<int>> xs;
  for (const auto& e : ex)
    for (std::size_t i = 0; i < e.steps.size(); ++i)
      xs.push_back(embed::encoder_input(vocab, e, i, embed::EmbeddingType::contextual));
  for (auto _ : st) benchmark::DoNotOptimize(embed::encode_batch(m, xs));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(xs.size()));
}
BENCHMARK(BM_EncodeContextualBatch)->Unit(benchmark::kMillisecond);

void BM_AttnPairsClosedForm(benchmark::State& st) {
  const cost::CostParams p{146, 8, static_cast<std::uint64_t>(st.range(0))};
  for (auto _ : st) benchmark::DoNotOptimize(cost::attn_pairs(cost::CostMode::cot, p));
}
BENCHMARK(BM_AttnPairsClosedForm)->Arg(10)->Arg(1000);

void BM_AttnPairsBruteForce(benchmark::State& st) {
  const cost::CostParams p{146, 8, static_cast<std::uint64_t>(st.range(0))};
  for (auto _ : st) benchmark::DoNotOptimize(cost::brute_force_pairs(cost::CostMode::cot, p));
}
BENCHMARK(BM_AttnPairsBruteForce)->Arg(10)->Arg(100);

void BM_BlocksworldSolve(benchmark::State& st) {
  const int n = static_cast<int>(st.range(0));
  for (auto _ : st) benchmark::DoNotOptimize(corpus::gen_blocksworld(n, 20, 3));
}
BENCHMARK(BM_BlocksworldSolve)->Arg(3)->Arg(5)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
