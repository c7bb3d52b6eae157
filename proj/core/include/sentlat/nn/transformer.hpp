#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sentlat/autodiff/ops.hpp"
#include "sentlat/autodiff/tensor.hpp"

namespace sentlat::nn {

struct TransformerConfig {
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_model = 128;
  std::size_t d_ff = 512;
  std::size_t vocab_size = 0;
  std::size_t max_positions = 256;

  void validate() const;
  bool operator==(const TransformerConfig&) const = default;
};

class SequenceOverflow : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// One input position: a token id looked up in the embedding table, or a row
/// of an existing tensor fed in directly (gradients flow back into it).
template <std::floating_point T>
struct InputItem {
  int token_id = -1;
  ad::Tensor<T> source;
  std::size_t row = 0;

  static InputItem token(int id) {
    InputItem it;
    it.token_id = id;
    return it;
  }
  static InputItem embedding(ad::Tensor<T> src, std::size_t r = 0) {
    InputItem it;
    it.source = std::move(src);
    it.row = r;
    return it;
  }
  /// Constant vector input.
  static InputItem embedding(std::span<const T> values) {
    return embedding(ad::Tensor<T>::from({1, values.size()}, std::vector<T>(values.begin(), values.end())));
  }
  bool is_token() const { return token_id >= 0; }
};

template <std::floating_point T>
struct KVCache {
  std::vector<std::vector<T>> keys;    // per layer, [length x d] row-major
  std::vector<std::vector<T>> values;  // per layer
  std::size_t length = 0;

  void clear() {
    for (auto& k : keys) k.clear();
    for (auto& v : values) v.clear();
    length = 0;
  }
};

/// Residual stream after the embedding layer and after each block:
/// n_layers + 1 entries, each [rows x d].
template <std::floating_point T>
struct HiddenStateTrace {
  std::vector<ad::Tensor<T>> layers;
};

/// Work done by forward passes: attention (query, strictly earlier key)
/// pairs, rows pushed through the MLP, and rows whose logits were actually
/// used to pick a token.
struct ForwardCounters {
  std::uint64_t attention_pairs = 0;
  std::uint64_t mlp_tokens = 0;
  std::uint64_t forward_calls = 0;
  std::uint64_t lm_head_rows = 0;

  void reset() { *this = {}; }
  ForwardCounters& operator+=(const ForwardCounters& o) {
    attention_pairs += o.attention_pairs;
    mlp_tokens += o.mlp_tokens;
    forward_calls += o.forward_calls;
    lm_head_rows += o.lm_head_rows;
    return *this;
  }
};

/// Several independent sequences packed into one matrix.
template <std::floating_point T>
struct PackedInput {
  std::vector<InputItem<T>> items;
  std::vector<std::size_t> positions;
  ad::AttentionLayout layout;

  /// Appends one sequence. Private rows see the sequence so far but are
  /// skipped by later rows, and do not advance the position counter.
  /// Returns the row index of the first item.
  std::size_t add_segment(std::span<const InputItem<T>> seq, std::span<const std::uint8_t> is_private = {},
                          std::size_t first_position = 0);
  std::size_t rows() const { return items.size(); }
};

template <std::floating_point T>
struct ForwardResult {
  ad::Tensor<T> residual;  // last block output, before the final LayerNorm
  ad::Tensor<T> hidden;    // after the final LayerNorm
  ad::Tensor<T> logits;    // only filled by forward_mixed
  std::optional<HiddenStateTrace<T>> trace;
};

template <std::floating_point T>
struct ForwardOptions {
  bool capture = false;
  KVCache<T>* cache = nullptr;  // single-segment inputs only
  ForwardCounters* counters = nullptr;
};

/// Pre-norm GPT-2 style decoder with learned positions and a tied output head.
template <std::floating_point T>
class Transformer {
 public:
  Transformer() = default;
  Transformer(TransformerConfig cfg, std::uint64_t seed);

  const TransformerConfig& config() const { return cfg_; }

  std::vector<std::pair<std::string, ad::Tensor<T>>> named_parameters() const;
  std::vector<ad::Tensor<T>> parameters() const;
  void set_trainable(bool on);
  /// Independent copy of every parameter.
  Transformer clone() const;

  /// Full forward over a packed batch. With a cache, new keys/values of
  /// non-private rows are appended to it.
  ForwardResult<T> forward(const PackedInput<T>& in, const ForwardOptions<T>& opt = {}) const;

  /// Single sequence; positions continue from the cache length. Also returns logits.
  ForwardResult<T> forward_mixed(std::span<const InputItem<T>> items, const ForwardOptions<T>& opt = {},
                                 std::span<const std::uint8_t> is_private = {}) const;

  ad::Tensor<T> final_norm(const ad::Tensor<T>& residual) const;
  /// hidden · wteᵀ
  ad::Tensor<T> logits(const ad::Tensor<T>& hidden) const;

  const ad::Tensor<T>& token_embeddings() const { return wte_; }
  KVCache<T> make_cache() const;

 private:
  struct Block {
    ad::Tensor<T> ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o;
    ad::Tensor<T> ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
  };

  TransformerConfig cfg_;
  ad::Tensor<T> wte_, wpe_;
  std::vector<Block> blocks_;
  ad::Tensor<T> lnf_g_, lnf_b_;
};

/// Argmax decoding (lowest id on ties) from a prefix until `stop_token` or
/// `max_len` generated tokens. The stop token is not included in the result.
std::vector<int> greedy_generate(const Transformer<float>& model, std::span<const InputItem<float>> prefix,
                                 int stop_token, std::size_t max_len, ForwardCounters* counters = nullptr);

/// Index of the maximum, lowest index on ties.
int argmax(std::span<const float> row);

/// FNV-1a over parameter names and raw bytes; equal iff bitwise equal (modulo hash collisions).
std::uint64_t parameter_fingerprint(const std::vector<std::pair<std::string, ad::Tensor<float>>>& params);

}  // namespace sentlat::nn
