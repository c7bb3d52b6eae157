#include "sentlat/diag/noise.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <ostream>
#include <stdexcept>

namespace sentlat::diag {

void NoiseConfig::validate() const {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("noise probability must lie in [0, 1]");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("noise sigma must be finite and >= 0");
}

void inject_noise(std::span<float> h, const NoiseConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  if (h.empty()) return;
  std::bernoulli_distribution fire(cfg.p);
  // Draw the coin even when sigma is 0 so sweeps share a stream shape.
  if (!fire(rng) || cfg.sigma == 0.0) return;
  double sq = 0;
  for (float v : h) sq += static_cast<double>(v) * v;
  const double rms = std::sqrt(sq / static_cast<double>(h.size()));
  std::normal_distribution<double> eps(0.0, cfg.sigma * rms);
  if (cfg.sigma * rms == 0.0) return;
  for (auto& v : h) v = static_cast<float>(v + eps(rng));
}

infer::InferenceMode mode_for_site(infer::Site site) {
  return site == infer::Site::latent ? infer::InferenceMode::continuous : infer::InferenceMode::discretized;
}

namespace {

std::uint64_t cell_seed(std::uint64_t seed, infer::Site site, std::size_t sigma_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(site), static_cast<std::uint32_t>(sigma_index)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace

RobustnessResult robustness_sweep(const infer::Bundle& bundle, const std::vector<corpus::ReasoningExample>& examples,
                                  const std::vector<infer::Site>& sites, const std::vector<double>& sigmas,
                                  const std::vector<std::uint64_t>& seeds, const RobustnessOptions& opt) {
  if (seeds.empty()) throw std::invalid_argument("robustness sweep needs at least one seed");
  if (examples.empty()) throw std::invalid_argument("robustness sweep needs examples");
  RobustnessResult res;
  infer::InferenceOptions base;
  base.max_steps = opt.max_steps;
  base.use_oracle = opt.use_oracle;
  base.mode = infer::InferenceMode::discretized;
  res.baseline_discretized = infer::evaluate_inference(bundle, examples, base).accuracy;
  base.mode = infer::InferenceMode::continuous;
  res.baseline_continuous = infer::evaluate_inference(bundle, examples, base).accuracy;

  for (auto site : sites) {
    for (std::size_t si = 0; si < sigmas.size(); ++si) {
      RobustnessPoint pt;
      pt.site = site;
      pt.sigma = sigmas[si];
      for (auto seed : seeds) {
        NoiseConfig nc{site, opt.p, sigmas[si], seed};
        nc.validate();
        std::mt19937_64 rng(cell_seed(seed, site, si));
        infer::InferenceOptions io = base;
        io.mode = mode_for_site(site);
        io.perturb = [&](infer::Site s, std::span<float> h) {
          if (s == site) inject_noise(h, nc, rng);
        };
        pt.per_seed.push_back(infer::evaluate_inference(bundle, examples, io).accuracy);
      }
      double mean = 0;
      for (double a : pt.per_seed) mean += a;
      mean /= static_cast<double>(pt.per_seed.size());
      double var = 0;
      for (double a : pt.per_seed) var += (a - mean) * (a - mean);
      pt.mean = mean;
      pt.std = std::sqrt(var / static_cast<double>(pt.per_seed.size()));
      res.points.push_back(std::move(pt));
    }
  }
  return res;
}

void write_robustness_csv(std::ostream& out, const RobustnessResult& r) {
  out << "sigma,site,mean,std\n";
  for (const auto& p : r.points) out << p.sigma << ',' << infer::to_string(p.site) << ',' << p.mean << ',' << p.std << '\n';
}

void write_robustness_jsonl(std::ostream& out, const RobustnessResult& r) {
  out << nlohmann::json{{"baseline_discretized", r.baseline_discretized},
                        {"baseline_continuous", r.baseline_continuous}}
             .dump()
      << '\n';
  for (const auto& p : r.points) {
    out << nlohmann::json{{"site", infer::to_string(p.site)},
                          {"sigma", p.sigma},
                          {"mean", p.mean},
                          {"std", p.std},
                          {"per_seed", p.per_seed}}
               .dump()
        << '\n';
  }
}

}  // namespace sentlat::diag
