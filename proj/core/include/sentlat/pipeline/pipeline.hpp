#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sentlat/corpus/example.hpp"
#include "sentlat/corpus/vocab.hpp"
#include "sentlat/embed/encdec.hpp"
#include "sentlat/infer/classifier.hpp"
#include "sentlat/infer/inference.hpp"
#include "sentlat/latent/latent_model.hpp"
#include "sentlat/pipeline/checkpoint.hpp"
#include "sentlat/pipeline/config.hpp"
#include "sentlat/pipeline/metrics.hpp"

namespace sentlat::pipeline {

/// A stage or regime needs a checkpoint that is absent or of the wrong kind.
class PrerequisiteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  corpus::DatasetSplits splits;
  corpus::Vocab vocab;  // built over all three splits
};

/// Generated corpora are split by question hash; jsonl corpora come pre-split.
Dataset load_dataset(const DataConfig& d, std::uint64_t seed);

struct RunOptions {
  std::filesystem::path out = "runs/default";
  bool resume = false;       // reuse stage checkpoints whose config snapshot matches
  std::size_t threads = 1;   // evaluation fan-out
  std::ostream* log = nullptr;
};

/// Trained models of one experiment, owned together so a Bundle can point into them.
struct LoadedBundle {
  embed::EncDec input, output;
  latent::LatentModel latent;
  std::optional<infer::TerminationClassifier> classifier;

  infer::Bundle view(const corpus::Vocab& vocab) const;
};

class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, RunOptions opt);

  const ExperimentConfig& config() const { return cfg_; }
  const RunOptions& options() const { return opt_; }
  const Dataset& data() const;
  const MetricsLog& metrics() const { return metrics_; }

  /// Runs the configured stages in order.
  void run();
  void run_stage(Stage s);

  std::filesystem::path sft_path(const std::string& format) const;
  std::filesystem::path encdec_path(const std::string& mode) const;
  std::filesystem::path latent_path() const;
  std::filesystem::path classifier_path() const;
  std::filesystem::path metrics_path() const { return metrics_.path(); }

  /// Loaders check the stage tag and vocabulary; a missing file is a PrerequisiteError.
  nn::Transformer<float> load_sft(const std::string& format) const;
  embed::EncDec load_encdec(const std::string& mode) const;
  latent::LatentModel load_latent() const;
  infer::TerminationClassifier load_classifier() const;
  LoadedBundle load_bundle(bool with_classifier) const;

  /// Examples of a split ("train" | "valid" | "test"), truncated to `limit` when nonzero.
  std::vector<corpus::ReasoningExample> split(const std::string& name, std::size_t limit = 0) const;

  /// The eval stage: one record per regime (plus restoration EM), each
  /// appended to the metrics log and returned.
  std::vector<nlohmann::json> evaluate();

 private:
  void train_sft();
  void train_encdec();
  void train_latent();
  void train_classifier();

  bool reusable(const std::filesystem::path& path, Stage s) const;
  Checkpoint open(const std::filesystem::path& path, Stage s, const std::string& what) const;
  Checkpoint make_checkpoint(Stage s, const std::vector<std::pair<std::string, ad::Tensor<float>>>& params,
                             nlohmann::json meta, const std::string& rng_state) const;
  const std::vector<corpus::ReasoningExample>& selection_split() const;
  void say(const std::string& line) const;

  ExperimentConfig cfg_;
  RunOptions opt_;
  MetricsLog metrics_;
  mutable std::optional<Dataset> data_;
};

/// Learning rate after `step` of `total` updates.
double scheduled_lr(const Schedule& s, std::size_t step, std::size_t total);

}  // namespace sentlat::pipeline
