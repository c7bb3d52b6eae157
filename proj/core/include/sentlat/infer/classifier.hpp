#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sentlat/autodiff/tensor.hpp"

namespace sentlat::infer {

/// d -> 192 -> GELU -> 48 -> GELU -> 1 logit. A positive logit means "halt".
class TerminationClassifier {
 public:
  static constexpr std::size_t kHidden1 = 192;
  static constexpr std::size_t kHidden2 = 48;

  TerminationClassifier() = default;
  TerminationClassifier(std::size_t d, std::uint64_t seed);

  std::size_t input_dim() const { return w1_.rows(); }
  std::vector<std::pair<std::string, ad::Tensor<float>>> named_parameters() const;
  std::vector<ad::Tensor<float>> parameters() const;

  /// [n x d] -> [n x 1]
  ad::Tensor<float> forward(const ad::Tensor<float>& x) const;
  float logit(std::span<const float> h) const;
  bool should_halt(std::span<const float> h) const { return logit(h) > 0.0f; }

  /// Multiply-adds of one evaluation.
  static std::uint64_t macs(std::size_t d) { return d * kHidden1 + kHidden1 * kHidden2 + kHidden2; }

 private:
  ad::Tensor<float> w1_, b1_, w2_, b2_, w3_, b3_;
};

struct ClassifierTrainConfig {
  std::size_t epochs = 60;
  std::size_t batch = 128;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  // Positive examples are reweighted so both classes contribute equally.
  bool balance = true;
};

/// BCE-with-logits training on (embedding, is_answer) pairs. Throws when the
/// labels contain a single class.
TerminationClassifier train_classifier(const std::vector<std::vector<float>>& x, const std::vector<std::uint8_t>& y,
                                       const ClassifierTrainConfig& cfg);

/// Percentage of inputs whose thresholded prediction matches the label.
double classifier_accuracy(const TerminationClassifier& clf, const std::vector<std::vector<float>>& x,
                           const std::vector<std::uint8_t>& y);

}  // namespace sentlat::infer
