#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sentlat/corpus/example.hpp"
#include "sentlat/corpus/logic_graph.hpp"
#include "sentlat/nn/transformer.hpp"

namespace sentlat::pipeline {

/// Schema violation; the message names the offending key path.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Stage { sft, encdec, latent, classifier, eval };
std::string to_string(Stage s);
Stage parse_stage(const std::string& s);
/// Position in the fixed pipeline order.
int stage_rank(Stage s);

struct Dims {
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_model = 128;
  std::size_t d_ff = 512;

  nn::TransformerConfig transformer(std::size_t vocab, std::size_t max_positions) const;
  bool operator==(const Dims&) const = default;
};

struct BlocksworldSize {
  int blocks = 3;
  std::size_t count = 3000;
};

struct DataConfig {
  std::string source = "blocksworld";  // blocksworld | logic_graph | jsonl
  std::vector<BlocksworldSize> blocksworld{{3, 3000}};
  int name_pool = 6;
  corpus::LogicGraphParams logic_graph;
  std::size_t logic_graph_count = 3000;
  // jsonl source: explicit splits
  std::string train_path, valid_path, test_path;
  corpus::SplitRatios split;
  std::size_t max_positions = 256;
};

/// Optimizer schedule shared by the trained stages. `patience` counts
/// validation rounds without improvement before stopping (0 disables);
/// `valid_limit` caps the validation examples (0 = all).
struct Schedule {
  std::size_t epochs = 10;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::string lr_schedule = "cosine";  // constant | cosine
  std::size_t warmup_steps = 100;
  double clip_norm = 1.0;
  double weight_decay = 0.0;
  std::size_t eval_every = 0;  // steps between validations; 0 = once per epoch
  std::size_t patience = 3;
  std::size_t valid_limit = 200;
};

struct SftConfig {
  Schedule schedule;
  std::vector<std::string> formats{"cot"};  // cot | nocot
  std::size_t max_new_tokens = 160;
};

struct EmbedConfig {
  Schedule schedule;
  std::vector<std::string> modes{"semantic", "ctx_base"};  // semantic | ctx_base | ctx_contrastive
  std::string init = "sft";                                  // sft | fresh
  double tau = 0.1;
  double contrastive_weight = 1.0;
};

struct LatentConfig {
  Schedule schedule;
  std::string input = "ctx_base";  // embedding mode of the encoder feeding the core
  std::string output = "ctx_base";  // embedding mode of the decoder reading predictions
  std::string init = "sft";         // sft (when dims match) | fresh
  double lambda = 1.0;
  double tau = 0.1;
  std::string objective = "ce";
  std::string select_mode = "continuous";
  double self_feed = 0.0;  // scheduled-sampling probability
  std::size_t self_feed_rounds = 1;  // inference mode scored for checkpoint selection
};

struct ClassifierConfig {
  std::size_t epochs = 60;
  std::size_t batch = 128;
  double lr = 1e-3;
};

struct EvalConfig {
  std::vector<std::string> regimes{"cot", "discretized", "continuous"};  // + no-cot
  std::string split = "test";   // test | valid
  std::string halt = "oracle";  // oracle | classifier
  std::size_t max_steps = 16;
  std::size_t limit = 0;  // 0 = whole split
  bool restoration = true;
  bool trace_dump = false;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::vector<Stage> stages{Stage::sft, Stage::encdec, Stage::latent, Stage::classifier, Stage::eval};
  // validation: select checkpoints on the validation split; test: the
  // best-on-test protocol of the original experiments.
  std::string selection = "validation";
  DataConfig data;
  Dims sft_dims, encdec_dims, latent_dims;
  SftConfig sft;
  EmbedConfig embed;
  LatentConfig latent;
  ClassifierConfig classifier;
  EvalConfig eval;

  /// Throws ConfigError for out-of-range values and unknown enum strings.
  void validate() const;
};

/// Strict parse: every key must be known; missing keys keep their defaults.
/// The result is validated.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

/// The config subtree a stage depends on; equal snapshots make a stage
/// checkpoint reusable on --resume.
nlohmann::json stage_snapshot(const ExperimentConfig& c, Stage s);

}  // namespace sentlat::pipeline
