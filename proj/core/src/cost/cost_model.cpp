#include "sentlat/cost/cost_model.hpp"

#include <stdexcept>

#include "sentlat/infer/classifier.hpp"

namespace sentlat::cost {

std::string to_string(CostMode m) {
  switch (m) {
    case CostMode::cot:
      return "cot";
    case CostMode::contextual:
      return "contextual";
    case CostMode::language_grounded:
      return "language_grounded";
    case CostMode::latent:
      return "latent";
  }
  return "?";
}

CostMode parse_cost_mode(const std::string& s) {
  for (auto m : all_cost_modes())
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown cost mode \"" + s + "\" (cot | contextual | language_grounded | latent)");
}

const std::vector<CostMode>& all_cost_modes() {
  static const std::vector<CostMode> modes = {CostMode::cot, CostMode::contextual, CostMode::language_grounded,
                                              CostMode::latent};
  return modes;
}

void CostParams::validate() const {
  if (l < 1) throw std::invalid_argument("L must be at least 1");
  if (r < 1) throw std::invalid_argument("R must be at least 1");
}

// The same polynomials serve integer and averaged inputs.
double attn_pairs(CostMode mode, const CostStats& s) {
  const double n0 = s.n0, L = s.l, R = s.r;
  const double chain = R * n0 + R * (R - 1) / 2;  // sum_t (N0 + t - 1)
  switch (mode) {
    case CostMode::cot:
      // sum_t sum_j [N0 + (t-1)L + (j-1)]
      return R * L * n0 + L * L * R * (R - 1) / 2 + R * L * (L - 1) / 2;
    case CostMode::contextual:
      // R decodes of sum_j j, plus sum_t (N0 + (t-1)L)
      return R * L * (L + 1) / 2 + R * n0 + L * R * (R - 1) / 2;
    case CostMode::language_grounded:
      return chain + R * (L * (L + 1) / 2 + L * (L - 1) / 2);
    case CostMode::latent:
      return chain;
  }
  throw std::invalid_argument("unknown cost mode");
}

std::uint64_t attn_pairs(CostMode mode, const CostParams& p) {
  p.validate();
  const std::uint64_t n0 = p.n0, L = p.l, R = p.r;
  const std::uint64_t chain = R * n0 + R * (R - 1) / 2;
  switch (mode) {
    case CostMode::cot:
      return R * L * n0 + L * L * (R * (R - 1) / 2) + R * (L * (L - 1) / 2);
    case CostMode::contextual:
      return R * (L * (L + 1) / 2) + R * n0 + L * (R * (R - 1) / 2);
    case CostMode::language_grounded:
      return chain + R * (L * (L + 1) / 2 + L * (L - 1) / 2);
    case CostMode::latent:
      return chain;
  }
  throw std::invalid_argument("unknown cost mode");
}

std::uint64_t brute_force_pairs(CostMode mode, const CostParams& p, std::uint64_t budget) {
  p.validate();
  std::uint64_t work = 0, pairs = 0;
  auto tick = [&] {
    if (++work > budget) throw std::length_error("brute_force_pairs: simulation budget exceeded");
  };
  // `context` counts items a new query can see.
  switch (mode) {
    case CostMode::cot: {
      std::uint64_t context = p.n0;
      for (std::uint64_t t = 0; t < p.r; ++t)
        for (std::uint64_t j = 0; j < p.l; ++j) {
          tick();
          pairs += context++;
        }
      break;
    }
    case CostMode::contextual: {
      std::uint64_t retained = p.n0;
      for (std::uint64_t t = 0; t < p.r; ++t) {
        tick();
        pairs += retained;  // query that predicts the next latent
        std::uint64_t dec = 1;  // the latent being decoded
        for (std::uint64_t j = 0; j < p.l; ++j) {
          tick();
          pairs += dec++;
        }
        retained += p.l;
      }
      break;
    }
    case CostMode::language_grounded: {
      std::uint64_t chain = p.n0;
      for (std::uint64_t t = 0; t < p.r; ++t) {
        tick();
        pairs += chain++;
        std::uint64_t dec = 1;
        for (std::uint64_t j = 0; j < p.l; ++j) {
          tick();
          pairs += dec++;
        }
        std::uint64_t enc = 0;
        for (std::uint64_t j = 0; j < p.l; ++j) {
          tick();
          pairs += enc++;
        }
      }
      break;
    }
    case CostMode::latent: {
      std::uint64_t chain = p.n0;
      for (std::uint64_t t = 0; t < p.r; ++t) {
        tick();
        pairs += chain++;
      }
      break;
    }
  }
  return pairs;
}

double mlp_tokens(CostMode mode, const CostStats& s, EncoderKind lg_encoder) {
  const double n0 = s.n0, L = s.l, R = s.r;
  switch (mode) {
    case CostMode::cot:
    case CostMode::contextual:
      return L * R;
    case CostMode::language_grounded:
      if (lg_encoder == EncoderKind::semantic) return 2 * L * R + R;
      // decode L per step, re-encode the growing context sum_t (N0 + tL), plus the latents
      return L * R + (R * n0 + L * R * (R + 1) / 2) + R;
    case CostMode::latent:
      return R;
  }
  throw std::invalid_argument("unknown cost mode");
}

std::uint64_t mlp_tokens(CostMode mode, const CostParams& p, EncoderKind lg_encoder) {
  p.validate();
  const std::uint64_t n0 = p.n0, L = p.l, R = p.r;
  switch (mode) {
    case CostMode::cot:
    case CostMode::contextual:
      return L * R;
    case CostMode::language_grounded:
      if (lg_encoder == EncoderKind::semantic) return 2 * L * R + R;
      return L * R + (R * n0 + L * (R * (R + 1) / 2)) + R;
    case CostMode::latent:
      return R;
  }
  throw std::invalid_argument("unknown cost mode");
}

void ModelDims::validate() const {
  if (!n_layers || !d_model || !d_ff || !n_heads || !vocab) throw std::invalid_argument("model dims must be positive");
}

ModelDims ModelDims::from(const nn::TransformerConfig& c) {
  return {c.n_layers, c.d_model, c.d_ff, c.n_heads, c.vocab_size};
}

ModelDims ModelDims::gpt2_small() { return {12, 768, 3072, 12, 50257}; }

void CostReport::add(CostComponent c) {
  attention_pairs += c.work.attention_pairs;
  mlp_tokens += c.work.mlp_tokens;
  flops += c.flops;
  components.push_back(std::move(c));
}

CostComponent flops_component(const std::string& name, const WorkCounts& w, const ModelDims& dims,
                              std::size_t classifier_input) {
  dims.validate();
  const double d = static_cast<double>(dims.d_model), f = static_cast<double>(dims.d_ff);
  const double layers = static_cast<double>(dims.n_layers), V = static_cast<double>(dims.vocab);
  CostComponent c;
  c.name = name;
  c.work = w;
  c.attention_flops = w.attention_pairs * kFlopsPerMac * 2 * d * layers;
  c.projection_flops = w.mlp_tokens * kFlopsPerMac * 4 * d * d * layers;
  c.mlp_flops = w.mlp_tokens * kFlopsPerMac * 2 * d * f * layers;
  c.head_flops = w.lm_head_rows * kFlopsPerMac * d * V;
  const double clf_macs =
      classifier_input ? static_cast<double>(infer::TerminationClassifier::macs(classifier_input)) : 0.0;
  c.other_flops = kFlopsPerMac * (w.classifier_evals * clf_macs + w.extra_macs);
  c.flops = c.attention_flops + c.projection_flops + c.mlp_flops + c.head_flops + c.other_flops;
  return c;
}

CostReport flops_estimate(const WorkCounts& w, const ModelDims& dims) {
  CostReport r;
  r.mode = "custom";
  r.add(flops_component("total", w, dims));
  return r;
}

std::string to_string(Pipeline p) {
  switch (p) {
    case Pipeline::cot:
      return "cot";
    case Pipeline::discretized:
      return "discretized";
    case Pipeline::continuous:
      return "continuous";
    case Pipeline::language_grounded:
      return "language_grounded";
  }
  return "?";
}

Pipeline parse_pipeline(const std::string& s) {
  for (auto p : {Pipeline::cot, Pipeline::discretized, Pipeline::continuous, Pipeline::language_grounded})
    if (to_string(p) == s) return p;
  throw std::invalid_argument("unknown pipeline \"" + s + "\" (cot | discretized | continuous | language_grounded)");
}

CostReport pipeline_cost(Pipeline p, const CostStats& s, const PipelineDims& dims, HaltMode halt) {
  CostReport rep;
  rep.mode = to_string(p);
  const double n0 = s.n0, L = s.l, R = s.r;
  const WorkCounts prefill{n0 * (n0 - 1) / 2, n0, 0, 0, 0};
  rep.add(flops_component("prefill", prefill, dims.lm));
  switch (p) {
    case Pipeline::cot:
      rep.add(flops_component("generation", {attn_pairs(CostMode::cot, s), L * R, L * R, 0, 0}, dims.lm));
      break;
    case Pipeline::discretized:
      rep.add(flops_component("contextual_steps", {attn_pairs(CostMode::contextual, s), L * R, L * R, 0, 0},
                              dims.lm));
      break;
    case Pipeline::continuous: {
      const double proj = static_cast<double>(dims.encdec.d_model * dims.lm.d_model * 2);
      rep.add(flops_component("latent_chain", {attn_pairs(CostMode::latent, s), R, 0, 0, R * proj}, dims.lm));
      if (halt == HaltMode::oracle) {
        // [h] <bos> -> first token, once per step.
        rep.add(flops_component("halt_checks", {R, 2 * R, R, 0, 0}, dims.encdec));
      } else {
        rep.add(flops_component("classifier", {0, 0, 0, R, 0}, dims.encdec, dims.encdec.d_model));
      }
      // [h] <bos> y_1..y_L, predicting y_1..y_L and <eos>.
      rep.add(flops_component("final_decode", {(L + 2) * (L + 1) / 2, L + 2, L + 1, 0, 0}, dims.encdec));
      break;
    }
    case Pipeline::language_grounded: {
      rep.add(flops_component("latent_chain", {attn_pairs(CostMode::latent, s), R, 0, 0, 0}, dims.lm));
      rep.add(flops_component("decode_reencode", {R * (L * (L + 1) / 2 + L * (L - 1) / 2), 2 * L * R, L * R, 0, 0},
                              dims.encdec));
      break;
    }
  }
  return rep;
}

CostReport trace_cost(const infer::InferenceCounters& c, const ModelDims& latent_core, const ModelDims& encdec,
                      std::size_t d_in, std::size_t d_out, std::size_t classifier_input) {
  CostReport rep;
  rep.mode = "measured";
  auto work = [](const nn::ForwardCounters& f) {
    return WorkCounts{static_cast<double>(f.attention_pairs), static_cast<double>(f.mlp_tokens),
                      static_cast<double>(f.lm_head_rows), 0, 0};
  };
  auto lat = work(c.latent);
  // proj_in on every fed-back item, proj_out on every prediction.
  const double fed = c.latent.forward_calls > 0 ? static_cast<double>(c.latent.forward_calls - 1) : 0.0;
  lat.extra_macs = fed * static_cast<double>(d_in * latent_core.d_model) +
                   static_cast<double>(c.halt_checks) * static_cast<double>(latent_core.d_model * d_out);
  rep.add(flops_component("latent", lat, latent_core));
  rep.add(flops_component("encoder", work(c.encoder), encdec));
  rep.add(flops_component("decoder", work(c.decoder), encdec));
  if (c.classifier_calls) {
    rep.add(flops_component("classifier", {0, 0, 0, static_cast<double>(c.classifier_calls), 0}, encdec,
                            classifier_input));
  }
  return rep;
}

}  // namespace sentlat::cost
