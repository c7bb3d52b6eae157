#include "sentlat/infer/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "sentlat/autodiff/adam.hpp"
#include "sentlat/autodiff/ops.hpp"

namespace sentlat::infer {

using ad::Tensor;

namespace {

Tensor<float> dense(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  std::vector<float> v(in * out);
  for (auto& x : v) x = static_cast<float>(dist(rng));
  return Tensor<float>::from({in, out}, std::move(v), true);
}

}  // namespace

TerminationClassifier::TerminationClassifier(std::size_t d, std::uint64_t seed) {
  if (d == 0) throw std::invalid_argument("classifier input width must be positive");
  std::mt19937_64 rng(seed);
  w1_ = dense(d, kHidden1, rng);
  b1_ = Tensor<float>::zeros({kHidden1}, true);
  w2_ = dense(kHidden1, kHidden2, rng);
  b2_ = Tensor<float>::zeros({kHidden2}, true);
  w3_ = dense(kHidden2, 1, rng);
  b3_ = Tensor<float>::zeros({1}, true);
}

std::vector<std::pair<std::string, Tensor<float>>> TerminationClassifier::named_parameters() const {
  return {{"fc1.w", w1_}, {"fc1.b", b1_}, {"fc2.w", w2_}, {"fc2.b", b2_}, {"fc3.w", w3_}, {"fc3.b", b3_}};
}

std::vector<Tensor<float>> TerminationClassifier::parameters() const {
  return {w1_, b1_, w2_, b2_, w3_, b3_};
}

Tensor<float> TerminationClassifier::forward(const Tensor<float>& x) const {
  if (x.cols() != input_dim()) throw ad::DimensionError("classifier input width mismatch");
  auto h = ad::gelu(ad::add_row(ad::matmul(x, w1_), b1_));
  h = ad::gelu(ad::add_row(ad::matmul(h, w2_), b2_));
  return ad::add_row(ad::matmul(h, w3_), b3_);
}

float TerminationClassifier::logit(std::span<const float> h) const {
  const auto x = Tensor<float>::from({1, h.size()}, std::vector<float>(h.begin(), h.end()));
  return forward(x).item();
}

namespace {

Tensor<float> stack(const std::vector<std::vector<float>>& x, std::span<const std::size_t> idx) {
  const std::size_t d = x[idx[0]].size();
  std::vector<float> v;
  v.reserve(idx.size() * d);
  for (std::size_t i : idx) {
    if (x[i].size() != d) throw ad::DimensionError("classifier inputs of unequal width");
    v.insert(v.end(), x[i].begin(), x[i].end());
  }
  return Tensor<float>::from({idx.size(), d}, std::move(v));
}

}  // namespace

TerminationClassifier train_classifier(const std::vector<std::vector<float>>& x, const std::vector<std::uint8_t>& y,
                                       const ClassifierTrainConfig& cfg) {
  if (x.empty() || x.size() != y.size()) throw std::invalid_argument("classifier data and labels must align");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < y.size(); ++i) (y[i] ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty()) throw std::invalid_argument("classifier training set has a single class");
  TerminationClassifier clf(x.front().size(), cfg.seed);
  ad::AdamConfig ac;
  ac.lr = cfg.lr;
  ad::Adam<float> opt(clf.parameters(), ac);
  std::mt19937_64 rng(cfg.seed + 1);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = neg;
    if (cfg.balance) {
      // Oversample the minority class up to the majority count.
      const auto& minority = pos.size() < neg.size() ? pos : neg;
      const auto& majority = pos.size() < neg.size() ? neg : pos;
      order = majority;
      for (std::size_t k = 0; k < majority.size(); ++k) order.push_back(minority[k % minority.size()]);
    } else {
      order.insert(order.end(), pos.begin(), pos.end());
    }
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += cfg.batch) {
      const std::size_t e = std::min(order.size(), s + cfg.batch);
      std::span<const std::size_t> idx(order.data() + s, e - s);
      std::vector<float> labels;
      for (std::size_t i : idx) labels.push_back(y[i] ? 1.0f : 0.0f);
      const auto loss = ad::bce_with_logits(clf.forward(stack(x, idx)), std::span<const float>(labels));
      ad::backward(loss);
      opt.step();
    }
  }
  return clf;
}

double classifier_accuracy(const TerminationClassifier& clf, const std::vector<std::vector<float>>& x,
                           const std::vector<std::uint8_t>& y) {
  if (x.empty()) return 0.0;
  std::vector<std::size_t> all(x.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto logits = clf.forward(stack(x, all));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if ((logits.data()[i] > 0.0f) == (y[i] != 0)) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(x.size());
}

}  // namespace sentlat::infer
