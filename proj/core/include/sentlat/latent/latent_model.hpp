#pragma once

#include <random>
#include <string>
#include <vector>

#include "sentlat/autodiff/adam.hpp"
#include "sentlat/corpus/example.hpp"
#include "sentlat/corpus/vocab.hpp"
#include "sentlat/embed/encdec.hpp"
#include "sentlat/nn/transformer.hpp"

namespace sentlat::latent {

enum class Objective { ce, mse };

std::string to_string(Objective o);
Objective parse_objective(const std::string& s);

struct LatentTrainConfig {
  double lambda = 1.0;  // InfoNCE weight
  double tau = 0.1;
  Objective objective = Objective::ce;
  embed::EmbeddingType input_type = embed::EmbeddingType::contextual;
  embed::EmbeddingType output_type = embed::EmbeddingType::contextual;
  // Scheduled sampling: probability that an input embedding is replaced by
  // the model's own (detached) prediction of it. Needs d_in == d_out and an
  // rng; `self_feed_rounds` repeats the substitution so errors can compound.
  double self_feed = 0.0;
  std::size_t self_feed_rounds = 1;

  void validate() const;
};

/// Transformer core over [question tokens, <lat>, proj_in(h_1), ...] with
/// affine maps into (proj_in) and out of (proj_out) the core width.
class LatentModel {
 public:
  LatentModel() = default;
  LatentModel(nn::Transformer<float> core, std::size_t d_in, std::size_t d_out, std::uint64_t seed);

  const nn::Transformer<float>& core() const { return core_; }
  std::size_t d_in() const { return w_in_.rows(); }
  std::size_t d_out() const { return w_out_.cols(); }

  /// Core parameters prefixed "core." plus the projections.
  std::vector<std::pair<std::string, ad::Tensor<float>>> named_parameters() const;
  std::vector<ad::Tensor<float>> parameters() const;

  /// [n x d_in] -> [n x d_lat]
  ad::Tensor<float> project_in(const ad::Tensor<float>& h) const;
  /// Residual rows [n x d_lat] -> predictions [n x d_out]: proj_out(ln_f(row)).
  /// The single readout path for training, inference and the lens.
  ad::Tensor<float> readout(const ad::Tensor<float>& residual_rows) const;

  /// Items for the question block: tokens followed by <lat>.
  static std::vector<nn::InputItem<float>> question_items(std::span<const int> q_tokens);

 private:
  nn::Transformer<float> core_;
  ad::Tensor<float> w_in_, b_in_, w_out_, b_out_;
};

/// A training example with its gold embeddings precomputed by frozen encoders.
struct LatentExample {
  std::vector<int> question;
  ad::Tensor<float> gold_in;   // [n x d_in]
  ad::Tensor<float> gold_out;  // [n x d_out]
  std::vector<std::vector<int>> steps;
};

LatentExample prepare_example(const corpus::Vocab& vocab, const corpus::ReasoningExample& ex,
                              const embed::EncDec& input_encoder, const embed::EncDec& output_encoder);

/// All n predictions of one example from a single causal pass: hat h_1 is read
/// at <lat>, hat h_t at the item holding h_t-1.
ad::Tensor<float> teacher_forced_predict(const LatentModel& lat, std::span<const int> q_tokens,
                                         const ad::Tensor<float>& gold_in);

/// Same, packed over a batch; rows are concatenated in example order.
ad::Tensor<float> teacher_forced_batch(const LatentModel& lat, const std::vector<const LatentExample*>& batch);

struct LatentStepResult {
  double ce = 0;
  double infonce = 0;
  double mse = 0;
  double total = 0;
};

/// One optimizer step on the latent model. The decoder is only read; a
/// gradient on any of its parameters is a logic error.
LatentStepResult latent_train_step(const LatentModel& lat, const embed::EncDec& decoder,
                                   const std::vector<const LatentExample*>& batch, const LatentTrainConfig& cfg,
                                   ad::Adam<float>& optim, std::mt19937_64* rng = nullptr);

/// Copies of `batch` whose input embeddings are partly replaced by the
/// model's predictions (see LatentTrainConfig::self_feed).
std::vector<LatentExample> self_fed_inputs(const LatentModel& lat, const std::vector<const LatentExample*>& batch,
                                           const LatentTrainConfig& cfg, std::mt19937_64& rng);

/// Losses without an optimizer step (validation).
LatentStepResult latent_losses(const LatentModel& lat, const embed::EncDec& decoder,
                               const std::vector<const LatentExample*>& batch, const LatentTrainConfig& cfg);

/// Percentage of teacher-forced predictions that decode exactly to their gold step.
double teacher_forced_em(const LatentModel& lat, const embed::EncDec& decoder,
                         const std::vector<LatentExample>& examples);

}  // namespace sentlat::latent
