#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sentlat/autodiff/tensor.hpp"

namespace sentlat::ad {

// All matrix ops view rank-2 tensors as [rows x cols]. Rank-1 tensors are
// accepted where a single row (bias, gain) is expected. No other broadcasting.

template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// a · bᵀ for a [m x k], b [n x k].
template <std::floating_point T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <std::floating_point T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

/// Elementwise product.
template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& a, T factor);

/// Adds `bias` (length = cols) to every row of `a`.
template <std::floating_point T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& bias);

template <std::floating_point T>
Tensor<T> sum(const Tensor<T>& a);

template <std::floating_point T>
Tensor<T> mean(const Tensor<T>& a);

template <std::floating_point T>
Tensor<T> softmax_rows(const Tensor<T>& x);

template <std::floating_point T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5));

/// GELU, tanh form: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
inline constexpr double kGeluCubic = 0.044715;
inline constexpr double kSqrtTwoOverPi = 0.7978845608028654;

template <std::floating_point T>
Tensor<T> gelu(const Tensor<T>& x);

/// Mean negative log-likelihood over rows with mask != 0.
/// Throws std::invalid_argument when every row is masked, and
/// std::out_of_range for an unmasked target outside [0, V).
template <std::floating_point T>
Tensor<T> cross_entropy_from_logits(const Tensor<T>& logits, std::span<const int> targets,
                                    std::span<const std::uint8_t> mask = {});

/// Mean binary cross-entropy on raw logits [m x 1] against 0/1 labels.
template <std::floating_point T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> labels);

/// Mean squared error between equally shaped tensors.
template <std::floating_point T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b);

/// Each row scaled to unit L2 norm (norm floored at eps).
template <std::floating_point T>
Tensor<T> normalize_rows(const Tensor<T>& x, T eps = T(1e-8));

/// Rows of `table` selected by index (repeats allowed); [k x cols].
template <std::floating_point T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> rows);

template <std::floating_point T>
struct RowRef {
  Tensor<T> source;
  std::size_t row = 0;
};

/// Builds a matrix whose i-th row is copied from refs[i]. Gradients are
/// scattered back to the source rows.
template <std::floating_point T>
Tensor<T> stack_rows(std::span<const RowRef<T>> refs);

template <std::floating_point T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts);

/// Row layout of a packed batch for causal attention. Rows of a segment are
/// contiguous. A query row attends to every earlier row of its segment that
/// is not private, and to itself. Private rows are invisible to later rows
/// (they branch off the shared prefix without extending it).
struct AttentionLayout {
  struct Segment {
    std::size_t start = 0;
    std::size_t length = 0;
  };
  std::vector<Segment> segments;
  std::vector<std::uint8_t> is_private;  // empty = none private

  static AttentionLayout single(std::size_t n);
  bool row_private(std::size_t r) const { return !is_private.empty() && is_private[r] != 0; }
};

/// Constant keys/values preceding the only segment (KV cache), [len x d].
template <std::floating_point T>
struct AttentionPrefix {
  std::span<const T> keys;
  std::span<const T> values;
  std::size_t length = 0;
};

/// Multi-head causal self-attention on fused projections.
/// qkv is [N x 3d] laid out as [Q | K | V]; the result is [N x d] (pre output
/// projection). Scores are scaled by 1/√(d/heads).
template <std::floating_point T>
Tensor<T> causal_attention(const Tensor<T>& qkv, std::size_t n_heads, const AttentionLayout& layout,
                           const AttentionPrefix<T>& prefix = {});

}  // namespace sentlat::ad
