#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sentlat/infer/inference.hpp"
#include "sentlat/nn/transformer.hpp"

namespace sentlat::cost {

/// The four attention schedules: token CoT, contextual embedding mode
/// (decode L tokens, chain over retained tokens), language-grounded
/// (latent chain plus decode and re-encode), and pure latent.
enum class CostMode { cot, contextual, language_grounded, latent };
enum class EncoderKind { semantic, contextual };

std::string to_string(CostMode m);
CostMode parse_cost_mode(const std::string& s);
const std::vector<CostMode>& all_cost_modes();

/// Prompt tokens, tokens per sentence, reasoning steps.
struct CostParams {
  std::uint64_t n0 = 0;
  std::uint64_t l = 1;
  std::uint64_t r = 1;
  void validate() const;
};

/// Same quantities as dataset averages.
struct CostStats {
  double n0 = 0;
  double l = 1;
  double r = 1;
};

/// Closed forms; pairs are (query, strictly earlier key).
std::uint64_t attn_pairs(CostMode mode, const CostParams& p);
double attn_pairs(CostMode mode, const CostStats& s);

/// Item-by-item simulation of each schedule. Throws std::length_error when
/// the simulation would exceed `budget` iterations.
std::uint64_t brute_force_pairs(CostMode mode, const CostParams& p, std::uint64_t budget = 50'000'000);

std::uint64_t mlp_tokens(CostMode mode, const CostParams& p, EncoderKind lg_encoder = EncoderKind::semantic);
double mlp_tokens(CostMode mode, const CostStats& s, EncoderKind lg_encoder = EncoderKind::semantic);

struct ModelDims {
  std::size_t n_layers = 0;
  std::size_t d_model = 0;
  std::size_t d_ff = 0;
  std::size_t n_heads = 0;
  std::size_t vocab = 0;

  void validate() const;
  static ModelDims from(const nn::TransformerConfig& c);
  /// 12 layers, d 768, d_ff 3072, 12 heads, 50257 tokens.
  static ModelDims gpt2_small();
};

/// 2 FLOPs per multiply-add, everywhere.
inline constexpr double kFlopsPerMac = 2.0;

/// Raw work on one model.
struct WorkCounts {
  double attention_pairs = 0;
  double mlp_tokens = 0;
  double lm_head_rows = 0;
  double classifier_evals = 0;
  double extra_macs = 0;  // projections between spaces
};

struct CostComponent {
  std::string name;
  WorkCounts work;
  double attention_flops = 0;   // pairs * (QK^T + AV) per layer
  double projection_flops = 0;  // tokens * (QKV + O) per layer
  double mlp_flops = 0;         // tokens * feed-forward per layer
  double head_flops = 0;        // rows * d * V
  double other_flops = 0;       // classifier and projection MACs
  double flops = 0;
};

struct CostReport {
  std::string mode;
  double attention_pairs = 0;
  double mlp_tokens = 0;
  double flops = 0;
  std::vector<CostComponent> components;

  void add(CostComponent c);
};

/// FLOPs of one block of work on a model with `dims`.
CostComponent flops_component(const std::string& name, const WorkCounts& w, const ModelDims& dims,
                              std::size_t classifier_input = 0);

/// Single-component report.
CostReport flops_estimate(const WorkCounts& w, const ModelDims& dims);

enum class Pipeline { cot, discretized, continuous, language_grounded };
enum class HaltMode { oracle, classifier };

std::string to_string(Pipeline p);
Pipeline parse_pipeline(const std::string& s);

struct PipelineDims {
  ModelDims lm;      // token CoT model and latent core
  ModelDims encdec;  // sentence encoder/decoder
};

/// Analytic end-to-end inference cost from dataset averages, with prompt
/// prefill, halt checks and the final decode as explicit line items.
/// discretized follows the contextual schedule (decoded tokens stay in the
/// context; the first decoded token doubles as the halt check).
CostReport pipeline_cost(Pipeline p, const CostStats& s, const PipelineDims& dims, HaltMode halt = HaltMode::oracle);

/// Measured cost of one inference run from its counters.
CostReport trace_cost(const infer::InferenceCounters& c, const ModelDims& latent_core, const ModelDims& encdec,
                      std::size_t d_in, std::size_t d_out, std::size_t classifier_input = 0);

}  // namespace sentlat::cost
