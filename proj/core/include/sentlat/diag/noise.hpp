#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include "sentlat/corpus/example.hpp"
#include "sentlat/infer/inference.hpp"

namespace sentlat::diag {

/// Gaussian noise with probability p; the standard deviation is sigma times
/// the RMS of the vector it is added to.
struct NoiseConfig {
  infer::Site site = infer::Site::latent;
  double p = 0.5;
  double sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// h' = h + eps with probability p, eps ~ N(0, (sigma * RMS(h))^2 I); in place.
void inject_noise(std::span<float> h, const NoiseConfig& cfg, std::mt19937_64& rng);

/// Sites on the language path run in discretized mode, the latent site in continuous mode.
infer::InferenceMode mode_for_site(infer::Site site);

struct RobustnessPoint {
  infer::Site site = infer::Site::latent;
  double sigma = 0;
  double mean = 0;  // accuracy percentage over seeds
  double std = 0;   // population standard deviation over seeds
  std::vector<double> per_seed;
};

struct RobustnessOptions {
  double p = 0.5;
  std::size_t max_steps = 16;
  bool use_oracle = true;
};

struct RobustnessResult {
  std::vector<RobustnessPoint> points;
  double baseline_discretized = 0;
  double baseline_continuous = 0;
};

/// Accuracy for every (site, sigma) cell, averaged over seeds. Each cell
/// owns an RNG seeded from (seed, site, sigma index).
RobustnessResult robustness_sweep(const infer::Bundle& bundle, const std::vector<corpus::ReasoningExample>& examples,
                                  const std::vector<infer::Site>& sites, const std::vector<double>& sigmas,
                                  const std::vector<std::uint64_t>& seeds, const RobustnessOptions& opt);

/// sigma,site,mean,std
void write_robustness_csv(std::ostream& out, const RobustnessResult& r);
void write_robustness_jsonl(std::ostream& out, const RobustnessResult& r);

}  // namespace sentlat::diag
