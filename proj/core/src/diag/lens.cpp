#include "sentlat/diag/lens.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "sentlat/corpus/vocab.hpp"

namespace sentlat::diag {

LensReport sentence_lens(const infer::Bundle& bundle, const std::string& question, const std::vector<std::size_t>& layers,
                         std::size_t max_steps) {
  bundle.validate();
  const std::size_t n_layers = bundle.latent->core().config().n_layers;
  for (std::size_t l : layers) {
    if (l > n_layers) {
      throw std::out_of_range("lens layer " + std::to_string(l) + " outside [0, " + std::to_string(n_layers) + "]");
    }
  }
  infer::InferenceOptions opt;
  opt.mode = infer::InferenceMode::continuous;
  opt.max_steps = max_steps;
  opt.decode_steps = true;
  opt.capture_layers = true;
  LensReport rep;
  rep.question = question;
  rep.trace = infer::run_inference(bundle, question, opt);
  for (std::size_t t = 0; t < rep.trace.layer_states.size(); ++t) {
    LensStep step;
    step.t = t + 1;
    step.decoded = rep.trace.decoded.at(t);
    for (std::size_t l : layers) {
      // Same readout and decode calls the engine uses for hat h_t.
      const auto h = infer::readout_row(*bundle.latent, rep.trace.layer_states[t][l]);
      const auto ids = embed::decode_from_embedding(*bundle.output_encdec, h, opt.max_sentence_tokens);
      step.layers.push_back({l, bundle.vocab->decode(ids)});
    }
    rep.steps.push_back(std::move(step));
  }
  return rep;
}

namespace {

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

double normalized_edit_distance(const std::string& a, const std::string& b) {
  const auto x = words(a), y = words(b);
  if (x.empty() && y.empty()) return 0.0;
  std::vector<std::size_t> prev(y.size() + 1), cur(y.size() + 1);
  for (std::size_t j = 0; j <= y.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= x.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= y.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x[i - 1] == y[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[y.size()]) / static_cast<double>(std::max(x.size(), y.size()));
}

}  // namespace

std::vector<double> lens_convergence(const std::vector<LensReport>& reports) {
  std::vector<double> sum;
  std::size_t count = 0;
  for (const auto& r : reports) {
    for (const auto& s : r.steps) {
      if (sum.empty()) sum.assign(s.layers.size(), 0.0);
      for (std::size_t k = 0; k < s.layers.size() && k < sum.size(); ++k) {
        sum[k] += normalized_edit_distance(s.layers[k].text, s.decoded);
      }
      ++count;
    }
  }
  for (auto& v : sum) v /= static_cast<double>(std::max<std::size_t>(count, 1));
  return sum;
}

void write_lens_jsonl(std::ostream& out, const LensReport& report) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : report.steps) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& e : s.layers) layers.push_back({{"layer", e.layer}, {"text", e.text}});
    steps.push_back({{"t", s.t}, {"decoded", s.decoded}, {"layers", layers}});
  }
  nlohmann::json j = {{"question", report.question},
                      {"halt_step", report.trace.halt_step},
                      {"halt_reason", infer::to_string(report.trace.halt_reason)},
                      {"final_text", report.trace.final_text},
                      {"steps", steps}};
  out << j.dump() << '\n';
}

}  // namespace sentlat::diag
