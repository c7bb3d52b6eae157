#include "sentlat/latent/latent_model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "sentlat/corpus/serialize.hpp"

namespace sentlat::latent {

using ad::Tensor;
using nn::InputItem;

std::string to_string(Objective o) { return o == Objective::ce ? "ce" : "mse"; }

Objective parse_objective(const std::string& s) {
  if (s == "ce") return Objective::ce;
  if (s == "mse") return Objective::mse;
  throw std::invalid_argument("unknown latent objective \"" + s + "\" (ce | mse)");
}

void LatentTrainConfig::validate() const {
  if (lambda < 0) throw std::invalid_argument("lambda must be non-negative");
  if (!(tau > 0)) throw std::invalid_argument("tau must be positive");
  if (self_feed < 0 || self_feed > 1) throw std::invalid_argument("self_feed must be in [0, 1]");
  if (self_feed_rounds == 0) throw std::invalid_argument("self_feed_rounds must be positive");
}

LatentModel::LatentModel(nn::Transformer<float> core, std::size_t d_in, std::size_t d_out, std::uint64_t seed)
    : core_(std::move(core)) {
  const std::size_t d = core_.config().d_model;
  if (d_in == 0 || d_out == 0) throw std::invalid_argument("projection widths must be positive");
  std::mt19937_64 rng(seed);
  // Inputs arrive LayerNorm-scaled (entries ~1); proj_in brings them to the
  // scale of token embeddings. proj_out starts as the identity when widths match.
  std::normal_distribution<double> in_dist(0.0, 0.02 / std::sqrt(static_cast<double>(d_in)));
  std::vector<float> w_in(d_in * d);
  for (auto& v : w_in) v = static_cast<float>(in_dist(rng));
  std::vector<float> w_out(d * d_out, 0.0f);
  if (d == d_out) {
    for (std::size_t i = 0; i < d; ++i) w_out[i * d_out + i] = 1.0f;
  } else {
    std::normal_distribution<double> out_dist(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    for (auto& v : w_out) v = static_cast<float>(out_dist(rng));
  }
  w_in_ = Tensor<float>::from({d_in, d}, std::move(w_in), true);
  b_in_ = Tensor<float>::zeros({d}, true);
  w_out_ = Tensor<float>::from({d, d_out}, std::move(w_out), true);
  b_out_ = Tensor<float>::zeros({d_out}, true);
}

std::vector<std::pair<std::string, Tensor<float>>> LatentModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor<float>>> out;
  for (auto& [n, t] : core_.named_parameters()) out.emplace_back("core." + n, t);
  out.emplace_back("proj_in.w", w_in_);
  out.emplace_back("proj_in.b", b_in_);
  out.emplace_back("proj_out.w", w_out_);
  out.emplace_back("proj_out.b", b_out_);
  return out;
}

std::vector<Tensor<float>> LatentModel::parameters() const {
  std::vector<Tensor<float>> out;
  for (auto& [n, t] : named_parameters()) out.push_back(t);
  return out;
}

Tensor<float> LatentModel::project_in(const Tensor<float>& h) const {
  // Unit-RMS rows: the core sees the direction of an embedding, not its norm.
  const auto unit = ad::scale(ad::normalize_rows(h), std::sqrt(static_cast<float>(h.cols())));
  return ad::add_row(ad::matmul(unit, w_in_), b_in_);
}

Tensor<float> LatentModel::readout(const Tensor<float>& residual_rows) const {
  return ad::add_row(ad::matmul(core_.final_norm(residual_rows), w_out_), b_out_);
}

std::vector<InputItem<float>> LatentModel::question_items(std::span<const int> q_tokens) {
  std::vector<InputItem<float>> items;
  items.reserve(q_tokens.size() + 1);
  for (int id : q_tokens) items.push_back(InputItem<float>::token(id));
  items.push_back(InputItem<float>::token(corpus::kLat));
  return items;
}

LatentExample prepare_example(const corpus::Vocab& vocab, const corpus::ReasoningExample& ex,
                              const embed::EncDec& input_encoder, const embed::EncDec& output_encoder) {
  LatentExample le;
  le.question = corpus::question_tokens(vocab, ex);
  le.steps = corpus::step_tokens(vocab, ex);
  auto encode_all = [&](const embed::EncDec& enc) {
    std::vector<std::vector<int>> xs;
    for (std::size_t i = 0; i < le.steps.size(); ++i) xs.push_back(embed::encoder_input(vocab, ex, i, enc.type));
    if (enc.type == embed::EmbeddingType::semantic) {
      // One independent encoding per step; the shared-prefix packing only applies to contexts.
      std::vector<float> rows;
      for (const auto& x : xs) {
        const auto e = embed::encode_sentence(enc, x);
        rows.insert(rows.end(), e.h.begin(), e.h.end());
      }
      return Tensor<float>::from({xs.size(), enc.dim()}, std::move(rows));
    }
    return embed::encode_batch(enc.model, xs).detach();
  };
  le.gold_in = encode_all(input_encoder);
  le.gold_out = &input_encoder == &output_encoder ? le.gold_in : encode_all(output_encoder);
  return le;
}

namespace {

// Packs one example into `in` and returns the rows that carry its predictions.
void pack_example(const LatentModel& lat, std::span<const int> q_tokens, const Tensor<float>& projected,
                  std::size_t first_row, std::size_t n, nn::PackedInput<float>& in, std::vector<std::size_t>& rows) {
  auto items = LatentModel::question_items(q_tokens);
  for (std::size_t t = 0; t + 1 < n; ++t) items.push_back(InputItem<float>::embedding(projected, first_row + t));
  const std::size_t start = in.add_segment(items);
  const std::size_t lat_row = start + q_tokens.size();
  for (std::size_t t = 0; t < n; ++t) rows.push_back(lat_row + t);
  (void)lat;
}

}  // namespace

Tensor<float> teacher_forced_predict(const LatentModel& lat, std::span<const int> q_tokens,
                                     const Tensor<float>& gold_in) {
  if (gold_in.rows() == 0) throw std::invalid_argument("teacher_forced_predict: no gold embeddings");
  if (gold_in.cols() != lat.d_in()) throw ad::DimensionError("gold embedding width does not match proj_in");
  const std::size_t n = gold_in.rows();
  nn::PackedInput<float> in;
  std::vector<std::size_t> rows;
  const auto projected = lat.project_in(gold_in);
  pack_example(lat, q_tokens, projected, 0, n, in, rows);
  const auto res = lat.core().forward(in);
  return lat.readout(ad::gather_rows(res.residual, std::span<const std::size_t>(rows)));
}

Tensor<float> teacher_forced_batch(const LatentModel& lat, const std::vector<const LatentExample*>& batch) {
  if (batch.empty()) throw std::invalid_argument("teacher_forced_batch: empty batch");
  std::vector<Tensor<float>> inputs;
  for (const auto* ex : batch) {
    if (ex->gold_in.cols() != lat.d_in()) throw ad::DimensionError("gold embedding width does not match proj_in");
    inputs.push_back(ex->gold_in);
  }
  const auto projected = lat.project_in(ad::concat_rows(std::span<const Tensor<float>>(inputs)));
  nn::PackedInput<float> in;
  std::vector<std::size_t> rows;
  std::size_t offset = 0;
  for (const auto* ex : batch) {
    const std::size_t n = ex->gold_in.rows();
    pack_example(lat, ex->question, projected, offset, n, in, rows);
    offset += n;
  }
  const auto res = lat.core().forward(in);
  return lat.readout(ad::gather_rows(res.residual, std::span<const std::size_t>(rows)));
}

namespace {

struct Losses {
  Tensor<float> ce, nce, mse, total;
};

Losses compute_losses(const LatentModel& lat, const embed::EncDec& decoder,
                      const std::vector<const LatentExample*>& batch, const LatentTrainConfig& cfg) {
  cfg.validate();
  if (decoder.dim() != lat.d_out()) throw ad::DimensionError("proj_out width does not match the decoder");
  const auto pred = teacher_forced_batch(lat, batch);
  std::vector<std::vector<int>> ys;
  std::vector<Tensor<float>> golds;
  for (const auto* ex : batch) {
    if (ex->steps.size() != ex->gold_in.rows()) throw std::invalid_argument("one gold embedding per step required");
    ys.insert(ys.end(), ex->steps.begin(), ex->steps.end());
    golds.push_back(ex->gold_out);
  }
  const auto gold = ad::concat_rows(std::span<const Tensor<float>>(golds)).detach();
  Losses l;
  l.ce = embed::decoder_loss(decoder.model, pred, ys);
  auto [cand, pos] = embed::unique_rows(gold);
  l.nce = embed::info_nce(pred, cand, std::span<const int>(pos), cfg.tau);
  l.mse = ad::mse(pred, gold);
  const auto base = cfg.objective == Objective::ce ? l.ce : l.mse;
  l.total = cfg.lambda == 0.0 ? base : ad::add(base, ad::scale(l.nce, static_cast<float>(cfg.lambda)));
  return l;
}

LatentStepResult summarize(const Losses& l) {
  LatentStepResult r;
  r.ce = l.ce.item();
  r.infonce = l.nce.item();
  r.mse = l.mse.item();
  r.total = l.total.item();
  return r;
}

}  // namespace

std::vector<LatentExample> self_fed_inputs(const LatentModel& lat, const std::vector<const LatentExample*>& batch,
                                           const LatentTrainConfig& cfg, std::mt19937_64& rng) {
  if (lat.d_in() != lat.d_out()) throw ad::DimensionError("self-feeding needs d_in == d_out");
  std::vector<LatentExample> fed;
  fed.reserve(batch.size());
  for (const auto* ex : batch) fed.push_back(*ex);
  std::bernoulli_distribution coin(cfg.self_feed);
  // Decide the substituted positions once; each round refreshes their values
  // from predictions made on the previous round's inputs.
  std::vector<std::vector<std::uint8_t>> pick(fed.size());
  for (std::size_t b = 0; b < fed.size(); ++b) {
    const std::size_t n = fed[b].gold_in.rows();
    pick[b].resize(n, 0);
    for (std::size_t t = 0; t + 1 < n; ++t) pick[b][t] = coin(rng);
  }
  for (std::size_t round = 0; round < cfg.self_feed_rounds; ++round) {
    std::vector<const LatentExample*> ptrs;
    for (const auto& e : fed) ptrs.push_back(&e);
    const auto pred = teacher_forced_batch(lat, ptrs).detach();
    std::size_t offset = 0;
    for (std::size_t b = 0; b < fed.size(); ++b) {
      const std::size_t n = fed[b].gold_in.rows(), d = fed[b].gold_in.cols();
      std::vector<float> rows(fed[b].gold_in.data().begin(), fed[b].gold_in.data().end());
      for (std::size_t t = 0; t + 1 < n; ++t) {
        if (!pick[b][t]) continue;
        const auto src = pred.data().subspan((offset + t) * d, d);
        std::copy(src.begin(), src.end(), rows.begin() + static_cast<std::ptrdiff_t>(t * d));
      }
      fed[b].gold_in = Tensor<float>::from({n, d}, std::move(rows));
      offset += n;
    }
  }
  return fed;
}

LatentStepResult latent_train_step(const LatentModel& lat, const embed::EncDec& decoder,
                                   const std::vector<const LatentExample*>& batch, const LatentTrainConfig& cfg,
                                   ad::Adam<float>& optim, std::mt19937_64* rng) {
  std::vector<LatentExample> fed;
  std::vector<const LatentExample*> used = batch;
  if (cfg.self_feed > 0) {
    if (!rng) throw std::invalid_argument("self_feed needs an rng");
    fed = self_fed_inputs(lat, batch, cfg, *rng);
    used.clear();
    for (const auto& e : fed) used.push_back(&e);
  }
  const auto l = compute_losses(lat, decoder, used, cfg);
  ad::backward(l.total);
  for (const auto& [name, t] : decoder.model.named_parameters()) {
    if (t.has_grad()) throw std::logic_error("gradient reached frozen decoder parameter " + name);
  }
  optim.step();
  return summarize(l);
}

LatentStepResult latent_losses(const LatentModel& lat, const embed::EncDec& decoder,
                               const std::vector<const LatentExample*>& batch, const LatentTrainConfig& cfg) {
  return summarize(compute_losses(lat, decoder, batch, cfg));
}

double teacher_forced_em(const LatentModel& lat, const embed::EncDec& decoder,
                         const std::vector<LatentExample>& examples) {
  std::size_t hits = 0, total = 0;
  for (const auto& ex : examples) {
    const auto pred = teacher_forced_predict(lat, ex.question, ex.gold_in);
    for (std::size_t t = 0; t < ex.steps.size(); ++t) {
      const auto row = pred.data().subspan(t * pred.cols(), pred.cols());
      if (embed::decode_from_embedding(decoder, row, ex.steps[t].size() + 4) == ex.steps[t]) ++hits;
      ++total;
    }
  }
  return total ? 100.0 * static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

}  // namespace sentlat::latent
