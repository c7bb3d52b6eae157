#pragma once

#include <cstdint>
#include <vector>

#include "sentlat/autodiff/tensor.hpp"

namespace sentlat::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW style); 0 disables
  double clip_norm = 0.0;     // global gradient-norm clip; 0 disables
  // When false, a parameter without a gradient is an error.
  bool allow_missing_grad = false;
};

/// Adam with bias correction. Moment buffers are owned per parameter, in the
/// order the parameters were registered.
template <std::floating_point T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamConfig cfg);

  /// Applies one update from the parameters' current grads, then clears them.
  /// Returns the pre-clip global gradient norm.
  double step();
  void zero_grad();

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  std::int64_t steps() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<Tensor<T>>& params() const { return params_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  AdamConfig cfg_;
  std::int64_t step_ = 0;
};

}  // namespace sentlat::ad
