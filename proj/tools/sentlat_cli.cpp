// sentlat: command-line front end for the staged pipeline and the diagnostics.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sentlat/cost/cost_model.hpp"
#include "sentlat/diag/lens.hpp"
#include "sentlat/diag/noise.hpp"
#include "sentlat/pipeline/pipeline.hpp"

using namespace sentlat;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool resume = false;
  std::size_t threads = 0;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Experiment config (JSON)");
  app->add_option("--seed", c.seed, "Override the config seed");
  app->add_option("--out", c.out, "Output directory (env SENTLAT_OUT)");
  app->add_flag("--resume", c.resume, "Reuse stage checkpoints whose config matches");
  app->add_option("--threads", c.threads, "Evaluation threads (env SENTLAT_THREADS)");
}

pipeline::Pipeline make_pipeline(const Common& c) {
  auto cfg = c.config.empty() ? pipeline::ExperimentConfig{} : pipeline::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  pipeline::RunOptions opt;
  if (!c.out.empty()) {
    opt.out = c.out;
  } else if (const char* e = std::getenv("SENTLAT_OUT")) {
    opt.out = e;
  }
  if (c.threads) {
    opt.threads = c.threads;
  } else if (const char* e = std::getenv("SENTLAT_THREADS")) {
    opt.threads = std::max(1, std::atoi(e));
  }
  opt.resume = c.resume;
  opt.log = &std::cerr;
  cfg.validate();
  return pipeline::Pipeline(cfg, opt);
}

int cost_command(const std::string& mode, double n0, double l, double r, const std::string& preset,
                 const std::string& config) {
  cost::ModelDims lm, ed;
  if (preset == "gpt2-small") {
    lm = ed = cost::ModelDims::gpt2_small();
  } else if (preset == "config") {
    const auto cfg = config.empty() ? pipeline::ExperimentConfig{} : pipeline::load_config(config);
    // Vocabulary size only enters the LM-head term; use the generator's.
    const auto ds = pipeline::load_dataset(cfg.data, cfg.seed);
    lm = cost::ModelDims::from(cfg.latent_dims.transformer(ds.vocab.size(), cfg.data.max_positions));
    ed = cost::ModelDims::from(cfg.encdec_dims.transformer(ds.vocab.size(), cfg.data.max_positions));
  } else {
    throw CLI::ValidationError("--dims-preset", "expected gpt2-small or config");
  }
  json out = {{"n0", n0}, {"l", l}, {"r", r}, {"dims_preset", preset}};
  const bool integral = n0 == std::floor(n0) && l == std::floor(l) && r == std::floor(r);
  const std::vector<std::string> schedules{"cot", "contextual", "language_grounded", "latent"};
  const std::vector<std::string> pipelines{"cot", "discretized", "continuous", "language_grounded"};
  auto schedule_entry = [&](const std::string& m) {
    const auto cm = cost::parse_cost_mode(m);
    if (integral) {
      const cost::CostParams p{static_cast<std::uint64_t>(n0), static_cast<std::uint64_t>(l),
                               static_cast<std::uint64_t>(r)};
      return json{{"attn_pairs", cost::attn_pairs(cm, p)}, {"mlp_tokens", cost::mlp_tokens(cm, p)}};
    }
    const cost::CostStats s{n0, l, r};
    return json{{"attn_pairs", cost::attn_pairs(cm, s)}, {"mlp_tokens", cost::mlp_tokens(cm, s)}};
  };
  auto pipeline_entry = [&](const std::string& m) {
    const auto rep = cost::pipeline_cost(cost::parse_pipeline(m), {n0, l, r}, {lm, ed});
    json comps = json::array();
    for (const auto& c : rep.components) comps.push_back({{"name", c.name}, {"flops", c.flops}});
    return json{{"gflops", rep.flops / 1e9}, {"attention_pairs", rep.attention_pairs}, {"mlp_tokens", rep.mlp_tokens},
                {"components", comps}};
  };
  if (mode == "all") {
    for (const auto& m : schedules) out["schedules"][m] = schedule_entry(m);
    for (const auto& m : pipelines) out["pipelines"][m] = pipeline_entry(m);
  } else {
    bool known = false;
    if (std::find(schedules.begin(), schedules.end(), mode) != schedules.end()) {
      out["schedules"][mode] = schedule_entry(mode);
      known = true;
    }
    if (std::find(pipelines.begin(), pipelines.end(), mode) != pipelines.end()) {
      out["pipelines"][mode] = pipeline_entry(mode);
      known = true;
    }
    if (!known) throw CLI::ValidationError("--mode", "unknown mode " + mode);
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sentence-level latent reasoning toolkit"};
  app.require_subcommand(1);

  Common common;
  struct StageCmd {
    const char* name;
    const char* help;
    pipeline::Stage stage;
  };
  const StageCmd stage_cmds[] = {{"train-sft", "Supervised token-level training (CoT / no-CoT)", pipeline::Stage::sft},
                                 {"train-embed", "Train the sentence encoder-decoders", pipeline::Stage::encdec},
                                 {"train-latent", "Train the latent model", pipeline::Stage::latent},
                                 {"train-classifier", "Train the termination classifier", pipeline::Stage::classifier},
                                 {"eval", "Evaluate the configured regimes", pipeline::Stage::eval}};
  std::map<CLI::App*, pipeline::Stage> stage_of;
  for (const auto& s : stage_cmds) {
    auto* sub = app.add_subcommand(s.name, s.help);
    add_common(sub, common);
    stage_of[sub] = s.stage;
  }
  auto* run = app.add_subcommand("run", "Run every stage listed in the config");
  add_common(run, common);

  auto* gen = app.add_subcommand("gen-data", "Write the train/valid/test corpus as JSONL");
  add_common(gen, common);

  std::string question, split = "test", mode = "continuous", trace_out;
  std::size_t limit = 0, max_steps = 16;
  bool classifier_halt = false;
  auto* infer_cmd = app.add_subcommand("infer", "Run latent inference and print traces as JSONL");
  add_common(infer_cmd, common);
  infer_cmd->add_option("--question", question, "Question text (default: the split's questions)");
  infer_cmd->add_option("--split", split, "train | valid | test");
  infer_cmd->add_option("--limit", limit, "Examples to run (0 = all)");
  infer_cmd->add_option("--mode", mode, "continuous | discretized");
  infer_cmd->add_option("--max-steps", max_steps);
  infer_cmd->add_flag("--classifier", classifier_halt, "Halt with the trained classifier instead of the oracle");

  double n0 = 0, l = 1, r = 1;
  std::string cost_mode = "all", preset = "gpt2-small";
  auto* cost_cmd = app.add_subcommand("cost", "Analytic attention pairs, MLP tokens and FLOPs");
  cost_cmd->add_option("--config", common.config, "Config supplying model dims for --dims-preset config");
  cost_cmd->add_option("--mode", cost_mode,
                       "cot | contextual | language_grounded | latent | discretized | continuous | all");
  cost_cmd->add_option("--n0", n0, "Prompt tokens")->check(CLI::NonNegativeNumber);
  cost_cmd->add_option("--l", l, "Tokens per sentence")->check(CLI::PositiveNumber);
  cost_cmd->add_option("--r", r, "Reasoning steps")->check(CLI::PositiveNumber);
  cost_cmd->add_option("--dims-preset", preset, "gpt2-small | config");

  std::vector<std::size_t> layers;
  auto* lens_cmd = app.add_subcommand("lens", "Decode every layer of the latent model at each step");
  add_common(lens_cmd, common);
  lens_cmd->add_option("--layers", layers, "Layers to decode (default: all)")->delimiter(',');
  lens_cmd->add_option("--split", split);
  lens_cmd->add_option("--limit", limit)->default_val(20);
  lens_cmd->add_option("--max-steps", max_steps);
  lens_cmd->add_option("--trace-out", trace_out, "JSONL path (default: <out>/lens.jsonl)");

  std::vector<double> sigmas{0.0, 0.25, 0.5, 1.0};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<std::string> sites{"lang_input", "lang_output", "latent"};
  double p = 0.5;
  auto* rob_cmd = app.add_subcommand("robustness", "Noise-injection sweep over sites and scales");
  add_common(rob_cmd, common);
  rob_cmd->add_option("--sigmas", sigmas)->delimiter(',');
  rob_cmd->add_option("--seeds", seeds)->delimiter(',');
  rob_cmd->add_option("--sites", sites)->delimiter(',');
  rob_cmd->add_option("--p", p, "Per-step injection probability");
  rob_cmd->add_option("--split", split);
  rob_cmd->add_option("--limit", limit)->default_val(100);

  CLI11_PARSE(app, argc, argv);

  try {
    if (cost_cmd->parsed()) return cost_command(cost_mode, n0, l, r, preset, common.config);

    auto pipe = make_pipeline(common);
    for (auto& [sub, stage] : stage_of) {
      if (sub->parsed()) {
        pipe.run_stage(stage);
        return 0;
      }
    }
    if (run->parsed()) {
      pipe.run();
      return 0;
    }
    if (gen->parsed()) {
      const auto& d = pipe.data();
      const auto dir = pipe.options().out;
      corpus::write_jsonl(dir / "train.jsonl", d.splits.train);
      corpus::write_jsonl(dir / "valid.jsonl", d.splits.valid);
      corpus::write_jsonl(dir / "test.jsonl", d.splits.test);
      std::ofstream vocab(dir / "vocab.txt");
      for (const auto& t : d.vocab.tokens()) vocab << t << '\n';
      std::cout << json{{"train", d.splits.train.size()}, {"valid", d.splits.valid.size()},
                        {"test", d.splits.test.size()}, {"vocab", d.vocab.size()},
                        {"test_hash", corpus::split_fingerprint(d.splits.test)}}
                       .dump()
                << '\n';
      return 0;
    }

    const auto bundle = pipe.load_bundle(classifier_halt);
    const auto view = bundle.view(pipe.data().vocab);
    const auto examples = pipe.split(split, limit);
    if (infer_cmd->parsed()) {
      infer::InferenceOptions io;
      io.mode = infer::parse_inference_mode(mode);
      io.max_steps = max_steps;
      io.use_oracle = !classifier_halt;
      io.decode_steps = true;
      std::vector<std::string> questions;
      if (!question.empty()) {
        questions.push_back(question);
      } else {
        for (const auto& ex : examples) questions.push_back(ex.question);
      }
      for (const auto& q : questions) infer::write_trace_jsonl(std::cout, infer::run_inference(view, q, io));
      return 0;
    }
    if (lens_cmd->parsed()) {
      if (layers.empty())
        for (std::size_t i = 0; i <= bundle.latent.core().config().n_layers; ++i) layers.push_back(i);
      std::vector<diag::LensReport> reps;
      const fs::path path = trace_out.empty() ? pipe.options().out / "lens.jsonl" : fs::path(trace_out);
      std::ofstream out(path);
      for (const auto& ex : examples) {
        reps.push_back(diag::sentence_lens(view, ex.question, layers, max_steps));
        diag::write_lens_jsonl(out, reps.back());
      }
      const auto conv = diag::lens_convergence(reps);
      json summary = json::array();
      for (std::size_t i = 0; i < layers.size(); ++i) summary.push_back({{"layer", layers[i]}, {"distance", conv[i]}});
      std::cout << json{{"lens", path.string()}, {"convergence", summary}}.dump(2) << '\n';
      return 0;
    }
    if (rob_cmd->parsed()) {
      std::vector<infer::Site> site_list;
      for (const auto& s : sites) site_list.push_back(infer::parse_site(s));
      diag::RobustnessOptions ro;
      ro.p = p;
      ro.max_steps = pipe.config().eval.max_steps;
      const auto res = diag::robustness_sweep(view, examples, site_list, sigmas, seeds, ro);
      std::ofstream csv(pipe.options().out / "robustness.csv"), jl(pipe.options().out / "robustness.jsonl");
      diag::write_robustness_csv(csv, res);
      diag::write_robustness_jsonl(jl, res);
      diag::write_robustness_csv(std::cout, res);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
