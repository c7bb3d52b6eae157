#include <gtest/gtest.h>

#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>

#include "sentlat/diag/lens.hpp"
#include "sentlat/diag/noise.hpp"
#include "toy.hpp"

using namespace sentlat;
using toy::fixture;

namespace {

std::vector<float> random_vector(std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.5f, 2.0f);
  std::vector<float> h(d);
  for (auto& v : h) v = n(rng);
  return h;
}

}  // namespace

TEST(Noise, ZeroSigmaOrZeroProbabilityIsIdentity) {
  const auto h = random_vector(32, 1);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    auto a = h, b = h;
    diag::inject_noise(a, {infer::Site::latent, 0.5, 0.0, 0}, rng);
    diag::inject_noise(b, {infer::Site::latent, 0.0, 3.0, 0}, rng);
    EXPECT_EQ(a, h);
    EXPECT_EQ(b, h);
  }
}

TEST(Noise, ExpectedEnergyMatchesPSigmaSquared) {
  const auto h = random_vector(64, 3);
  double hh = 0;
  for (float v : h) hh += double(v) * v;
  for (double p : {0.5, 1.0, 0.2})
    for (double sigma : {0.1, 0.7}) {
      std::mt19937_64 rng(17);
      const diag::NoiseConfig cfg{infer::Site::lang_output, p, sigma, 0};
      double acc = 0;
      const int draws = 10000;
      for (int i = 0; i < draws; ++i) {
        auto x = h;
        diag::inject_noise(x, cfg, rng);
        for (std::size_t k = 0; k < x.size(); ++k) acc += (double(x[k]) - h[k]) * (double(x[k]) - h[k]);
      }
      const double ratio = acc / draws / hh;
      EXPECT_NEAR(ratio, p * sigma * sigma, 0.1 * p * sigma * sigma) << "p=" << p << " sigma=" << sigma;
    }
}

TEST(Noise, ReproduciblePerSeed) {
  const auto h = random_vector(16, 4);
  const diag::NoiseConfig cfg{infer::Site::latent, 0.5, 1.0, 0};
  std::mt19937_64 r1(9), r2(9);
  for (int i = 0; i < 20; ++i) {
    auto a = h, b = h;
    diag::inject_noise(a, cfg, r1);
    diag::inject_noise(b, cfg, r2);
    EXPECT_EQ(a, b);
  }
}

TEST(Noise, Validation) {
  std::mt19937_64 rng(0);
  std::vector<float> h(4, 1.0f);
  EXPECT_THROW(diag::inject_noise(h, {infer::Site::latent, 1.5, 0.1, 0}, rng), std::invalid_argument);
  EXPECT_THROW(diag::inject_noise(h, {infer::Site::latent, 0.5, -0.1, 0}, rng), std::invalid_argument);
  EXPECT_EQ(diag::mode_for_site(infer::Site::latent), infer::InferenceMode::continuous);
  EXPECT_EQ(diag::mode_for_site(infer::Site::lang_input), infer::InferenceMode::discretized);
  EXPECT_EQ(diag::mode_for_site(infer::Site::lang_output), infer::InferenceMode::discretized);
}

TEST(Robustness, ZeroSigmaReproducesBaselines) {
  const auto& f = fixture();
  diag::RobustnessOptions opt;
  const auto res = diag::robustness_sweep(f.bundle(), f.corpus.examples,
                                          {infer::Site::lang_input, infer::Site::lang_output, infer::Site::latent},
                                          {0.0, 0.5}, {1, 2}, opt);
  ASSERT_EQ(res.points.size(), 6u);
  for (const auto& p : res.points) {
    ASSERT_EQ(p.per_seed.size(), 2u);
    if (p.sigma != 0.0) continue;
    const double base = p.site == infer::Site::latent ? res.baseline_continuous : res.baseline_discretized;
    EXPECT_EQ(p.mean, base) << infer::to_string(p.site);
    EXPECT_EQ(p.std, 0.0);
  }
  std::ostringstream csv, jsonl;
  diag::write_robustness_csv(csv, res);
  EXPECT_EQ(csv.str().rfind("sigma,site,mean,std\n", 0), 0u);
  diag::write_robustness_jsonl(jsonl, res);
  std::istringstream lines(jsonl.str());
  std::size_t n = 0;
  for (std::string line; std::getline(lines, line); ++n) EXPECT_NO_THROW((void)nlohmann::json::parse(line));
  EXPECT_EQ(n, 7u);
}

TEST(Robustness, SweepIsDeterministic) {
  const auto& f = fixture();
  const std::vector<corpus::ReasoningExample> ex(f.corpus.examples.begin(), f.corpus.examples.begin() + 3);
  const auto a = diag::robustness_sweep(f.bundle(), ex, {infer::Site::latent}, {1.0}, {5}, {});
  const auto b = diag::robustness_sweep(f.bundle(), ex, {infer::Site::latent}, {1.0}, {5}, {});
  EXPECT_EQ(a.points[0].per_seed, b.points[0].per_seed);
}

TEST(Lens, FinalLayerReproducesTraceDecodes) {
  const auto& f = fixture();
  const std::size_t last = f.lat.core().config().n_layers;
  for (const auto& ex : f.corpus.examples) {
    const auto rep = diag::sentence_lens(f.bundle(), ex.question, {0, 1, last}, 12);
    ASSERT_EQ(rep.steps.size(), rep.trace.halt_step);
    for (const auto& s : rep.steps) {
      ASSERT_EQ(s.layers.size(), 3u);
      EXPECT_EQ(s.layers.back().layer, last);
      EXPECT_EQ(s.layers.back().text, s.decoded);
    }
    EXPECT_EQ(rep.steps.back().decoded, rep.trace.final_text);
  }
}

TEST(Lens, ConvergenceAndErrors) {
  const auto& f = fixture();
  const std::size_t last = f.lat.core().config().n_layers;
  std::vector<diag::LensReport> reps;
  for (const auto& ex : f.corpus.examples) reps.push_back(diag::sentence_lens(f.bundle(), ex.question, {0, 1, last}, 12));
  const auto conv = diag::lens_convergence(reps);
  ASSERT_EQ(conv.size(), 3u);
  EXPECT_EQ(conv.back(), 0.0);
  for (double v : conv) EXPECT_LE(v, 1.0);
  EXPECT_THROW(diag::sentence_lens(f.bundle(), f.corpus.examples[0].question, {last + 1}, 4), std::out_of_range);
  std::ostringstream out;
  diag::write_lens_jsonl(out, reps[0]);
  const auto j = nlohmann::json::parse(out.str());
  EXPECT_EQ(j["steps"].size(), reps[0].steps.size());
}
