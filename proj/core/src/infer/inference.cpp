#include "sentlat/infer/inference.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <ostream>
#include <stdexcept>

#include "sentlat/corpus/serialize.hpp"

namespace sentlat::infer {

using ad::Tensor;
using nn::InputItem;

std::string to_string(InferenceMode m) { return m == InferenceMode::discretized ? "discretized" : "continuous"; }

std::string to_string(HaltReason r) {
  switch (r) {
    case HaltReason::answer:
      return "answer";
    case HaltReason::max_steps:
      return "max_steps";
    case HaltReason::empty_step:
      return "empty_step";
  }
  return "?";
}

InferenceMode parse_inference_mode(const std::string& s) {
  if (s == "discretized") return InferenceMode::discretized;
  if (s == "continuous") return InferenceMode::continuous;
  throw std::invalid_argument("unknown inference mode \"" + s + "\" (discretized | continuous)");
}

std::string to_string(Site s) {
  switch (s) {
    case Site::lang_input:
      return "lang_input";
    case Site::lang_output:
      return "lang_output";
    case Site::latent:
      return "latent";
  }
  return "?";
}

Site parse_site(const std::string& s) {
  if (s == "lang_input") return Site::lang_input;
  if (s == "lang_output") return Site::lang_output;
  if (s == "latent") return Site::latent;
  throw std::invalid_argument("unknown noise site \"" + s + "\" (lang_input | lang_output | latent)");
}

void Bundle::validate() const {
  if (!vocab || !latent || !output_encdec) throw std::invalid_argument("inference bundle is incomplete");
  if (output_encdec->dim() != latent->d_out()) throw ad::DimensionError("proj_out width does not match the decoder");
  if (input_encdec && input_encdec->dim() != latent->d_in()) {
    throw ad::DimensionError("proj_in width does not match the input encoder");
  }
}

bool oracle_should_halt(const embed::EncDec& decoder, std::span<const float> h, nn::ForwardCounters* counters) {
  const auto first = embed::decode_from_embedding(decoder, h, 1, counters);
  return !first.empty() && first.front() == corpus::kAnswer;
}

std::vector<float> readout_row(const latent::LatentModel& lat, std::span<const float> residual_row) {
  const auto row = Tensor<float>::from({1, residual_row.size()}, {residual_row.begin(), residual_row.end()});
  const auto out = lat.readout(row);
  return {out.data().begin(), out.data().end()};
}

std::optional<MapResult> map_embedding(InferenceMode mode, std::span<const float> h_hat, const Bundle& bundle,
                                       MapContext& ctx, InferenceCounters* counters,
                                       std::size_t max_sentence_tokens) {
  MapResult r;
  if (mode == InferenceMode::continuous) {
    r.h.assign(h_hat.begin(), h_hat.end());
    return r;
  }
  if (!bundle.input_encdec) throw std::invalid_argument("discretized mapping needs an input encoder");
  const auto raw = embed::decode_from_embedding(*bundle.output_encdec, h_hat, max_sentence_tokens,
                                                counters ? &counters->decoder : nullptr);
  if (counters) ++counters->decoder_calls;
  // Through text, as a reader would see it.
  r.decoded = bundle.vocab->encode(bundle.vocab->decode(raw));
  if (r.decoded.empty()) return std::nullopt;
  std::vector<int> x;
  if (bundle.input_encdec->type == embed::EmbeddingType::semantic) {
    x = r.decoded;
  } else {
    x = ctx.question;
    for (const auto& s : ctx.decoded_steps) {
      x.push_back(corpus::kSep);
      x.insert(x.end(), s.begin(), s.end());
    }
  }
  r.h = embed::encode_sentence(*bundle.input_encdec, x, counters ? &counters->encoder : nullptr).h;
  if (counters) ++counters->encoder_calls;
  ctx.decoded_steps.push_back(r.decoded);
  return r;
}

namespace {

std::vector<float> last_row(const Tensor<float>& t) {
  const std::size_t d = t.cols();
  return {t.data().end() - static_cast<std::ptrdiff_t>(d), t.data().end()};
}

}  // namespace

InferenceTrace run_inference(const Bundle& bundle, const std::string& question, const InferenceOptions& opt) {
  bundle.validate();
  if (opt.max_steps == 0) throw std::invalid_argument("max_steps must be positive");
  if (!opt.use_oracle && !bundle.classifier) throw std::invalid_argument("classifier halting needs a classifier");
  const auto& lat = *bundle.latent;
  const auto& out = *bundle.output_encdec;
  InferenceTrace tr;
  tr.mode = opt.mode;
  tr.question = question;
  auto& c = tr.counters;

  MapContext ctx;
  ctx.question = bundle.vocab->encode(question);
  if (ctx.question.empty()) throw std::invalid_argument("empty question");
  auto cache = lat.core().make_cache();
  nn::ForwardOptions<float> fo;
  fo.cache = &cache;
  fo.counters = &c.latent;
  fo.capture = opt.capture_layers;
  auto res = lat.core().forward_mixed(latent::LatentModel::question_items(ctx.question), fo);
  const Site out_site = opt.mode == InferenceMode::discretized ? Site::lang_output : Site::latent;

  for (std::size_t t = 1;; ++t) {
    auto h_hat = readout_row(lat, last_row(res.residual));
    if (opt.capture_layers) {
      std::vector<std::vector<float>> layers;
      for (const auto& l : res.trace->layers) layers.push_back(last_row(l));
      tr.layer_states.push_back(std::move(layers));
    }
    if (opt.perturb) opt.perturb(out_site, h_hat);
    tr.predicted.push_back(h_hat);
    if (opt.decode_steps && opt.mode == InferenceMode::continuous) {
      const auto ids = embed::decode_from_embedding(out, h_hat, opt.max_sentence_tokens, &c.display);
      tr.decoded.push_back(bundle.vocab->decode(ids));
    }

    ++c.halt_checks;
    bool halt;
    if (opt.use_oracle) {
      halt = oracle_should_halt(out, h_hat, &c.decoder);
      ++c.decoder_calls;
    } else {
      halt = bundle.classifier->should_halt(h_hat);
      ++c.classifier_calls;
    }
    if (halt) {
      tr.halt_reason = HaltReason::answer;
      tr.halt_step = t;
      break;
    }
    if (t == opt.max_steps) {
      tr.halt_reason = HaltReason::max_steps;
      tr.halt_step = t;
      break;
    }
    auto mapped = map_embedding(opt.mode, h_hat, bundle, ctx, &c, opt.max_sentence_tokens);
    if (!mapped) {
      tr.halt_reason = HaltReason::empty_step;
      tr.halt_step = t;
      if (opt.mode == InferenceMode::discretized) tr.decoded.push_back("");
      break;
    }
    if (opt.mode == InferenceMode::discretized) {
      tr.decoded.push_back(bundle.vocab->decode(mapped->decoded));
      if (opt.perturb) opt.perturb(Site::lang_input, mapped->h);
    }
    if (cache.length + 1 > lat.core().config().max_positions) {
      tr.halt_reason = HaltReason::max_steps;
      tr.halt_step = t;
      break;
    }
    const auto x = lat.project_in(Tensor<float>::from({1, mapped->h.size()}, mapped->h));
    tr.mapped.push_back(std::move(mapped->h));
    const InputItem<float> item = InputItem<float>::embedding(x, 0);
    res = lat.core().forward_mixed(std::span<const InputItem<float>>(&item, 1), fo);
  }

  // The last prediction is always decoded in full: it carries the answer.
  const auto final_ids =
      embed::decode_from_embedding(out, tr.predicted.back(), opt.max_sentence_tokens, &c.decoder);
  ++c.decoder_calls;
  tr.final_text = bundle.vocab->decode(final_ids);
  if (tr.decoded.size() < tr.predicted.size() && (opt.decode_steps || opt.mode == InferenceMode::discretized)) {
    tr.decoded.push_back(tr.final_text);
  }
  return tr;
}

std::string extract_final_answer(const InferenceTrace& trace, bool casefold) {
  if (trace.halt_reason != HaltReason::answer) {
    throw std::runtime_error("trace ended by " + to_string(trace.halt_reason) + ", not by an answer");
  }
  return corpus::normalize_answer(corpus::answer_from_step(trace.final_text), casefold);
}

namespace {

void accumulate(InferenceCounters& into, const InferenceCounters& c) {
  into.latent += c.latent;
  into.encoder += c.encoder;
  into.decoder += c.decoder;
  into.display += c.display;
  into.decoder_calls += c.decoder_calls;
  into.encoder_calls += c.encoder_calls;
  into.halt_checks += c.halt_checks;
  into.classifier_calls += c.classifier_calls;
}

}  // namespace

InferenceEval evaluate_inference(const Bundle& bundle, const std::vector<corpus::ReasoningExample>& examples,
                                 const InferenceOptions& opt, bool keep_traces) {
  InferenceEval ev;
  double steps = 0;
  for (const auto& ex : examples) {
    auto tr = run_inference(bundle, ex.question, opt);
    ++ev.n;
    steps += static_cast<double>(tr.halt_step);
    if (tr.halt_reason == HaltReason::answer) {
      if (extract_final_answer(tr) == corpus::normalize_answer(ex.answer)) ++ev.correct;
    } else {
      ++ev.unhalted;
    }
    accumulate(ev.totals, tr.counters);
    if (keep_traces) ev.traces.push_back(std::move(tr));
  }
  if (ev.n) {
    ev.accuracy = 100.0 * static_cast<double>(ev.correct) / static_cast<double>(ev.n);
    ev.mean_steps = steps / static_cast<double>(ev.n);
  }
  return ev;
}

namespace {

nlohmann::json counters_json(const nn::ForwardCounters& c) {
  return {{"attention_pairs", c.attention_pairs},
          {"mlp_tokens", c.mlp_tokens},
          {"forward_calls", c.forward_calls},
          {"lm_head_rows", c.lm_head_rows}};
}

}  // namespace

void write_trace_jsonl(std::ostream& os, const InferenceTrace& trace) {
  nlohmann::json steps = nlohmann::json::array();
  for (std::size_t t = 0; t < trace.predicted.size(); ++t) {
    double sq = 0;
    for (float v : trace.predicted[t]) sq += static_cast<double>(v) * v;
    nlohmann::json s = {{"t", t + 1}, {"norm", std::sqrt(sq)}};
    if (t < trace.decoded.size()) s["decoded"] = trace.decoded[t];
    steps.push_back(std::move(s));
  }
  const auto& c = trace.counters;
  nlohmann::json j = {{"question", trace.question},
                      {"mode", to_string(trace.mode)},
                      {"steps", steps},
                      {"halt_step", trace.halt_step},
                      {"halt_reason", to_string(trace.halt_reason)},
                      {"final_text", trace.final_text},
                      {"counters",
                       {{"latent", counters_json(c.latent)},
                        {"encoder", counters_json(c.encoder)},
                        {"decoder", counters_json(c.decoder)},
                        {"decoder_calls", c.decoder_calls},
                        {"encoder_calls", c.encoder_calls},
                        {"halt_checks", c.halt_checks},
                        {"classifier_calls", c.classifier_calls}}}};
  os << j.dump() << '\n';
}

}  // namespace sentlat::infer
