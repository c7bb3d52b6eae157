#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "sentlat/infer/inference.hpp"

namespace sentlat::diag {

struct LensEntry {
  std::size_t layer = 0;  // 0 = embedding layer, n_layers = last block
  std::string text;
};

struct LensStep {
  std::size_t t = 0;
  std::vector<LensEntry> layers;
  std::string decoded;  // the trace's own decoding of hat h_t
};

struct LensReport {
  std::string question;
  std::vector<LensStep> steps;
  infer::InferenceTrace trace;
};

/// Continuous inference with every requested layer's residual at each
/// prediction position pushed through ln_f, proj_out and the decoder.
LensReport sentence_lens(const infer::Bundle& bundle, const std::string& question, const std::vector<std::size_t>& layers,
                         std::size_t max_steps);

/// Mean normalized token edit distance between each layer's decode and the
/// final decode, per requested layer (a convergence probe).
std::vector<double> lens_convergence(const std::vector<LensReport>& reports);

void write_lens_jsonl(std::ostream& out, const LensReport& report);

}  // namespace sentlat::diag
