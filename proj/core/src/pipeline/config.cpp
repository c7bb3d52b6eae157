#include "sentlat/pipeline/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace sentlat::pipeline {

using nlohmann::json;

std::string to_string(Stage s) {
  switch (s) {
    case Stage::sft: return "sft";
    case Stage::encdec: return "encdec";
    case Stage::latent: return "latent";
    case Stage::classifier: return "classifier";
    case Stage::eval: return "eval";
  }
  return "?";
}

Stage parse_stage(const std::string& s) {
  for (Stage st : {Stage::sft, Stage::encdec, Stage::latent, Stage::classifier, Stage::eval}) {
    if (to_string(st) == s) return st;
  }
  throw ConfigError("unknown stage \"" + s + "\" (sft | encdec | latent | classifier | eval)");
}

int stage_rank(Stage s) { return static_cast<int>(s); }

nn::TransformerConfig Dims::transformer(std::size_t vocab, std::size_t max_positions) const {
  nn::TransformerConfig c;
  c.n_layers = n_layers;
  c.n_heads = n_heads;
  c.d_model = d_model;
  c.d_ff = d_ff;
  c.vocab_size = vocab;
  c.max_positions = max_positions;
  return c;
}

namespace {

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_integer() || (!it->is_number_unsigned() && it->get<std::int64_t>() < 0)) throw ConfigError(at(key) + " must be a non-negative integer");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_integer()) throw ConfigError(at(key) + " must be an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError(at(key) + " must be a number");
      }
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(at(key) + ": " + e.what());
    }
  }

  /// Nested object, or nullptr when absent.
  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string at(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key " + at(it.key().c_str()));
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_dims(const json& j, const std::string& path, Dims& d) {
  Reader r(j, path);
  r.get("n_layers", d.n_layers);
  r.get("n_heads", d.n_heads);
  r.get("d_model", d.d_model);
  r.get("d_ff", d.d_ff);
  r.finish();
}

void read_schedule(Reader& r, Schedule& s) {
  r.get("epochs", s.epochs);
  r.get("batch", s.batch);
  r.get("lr", s.lr);
  r.get("lr_schedule", s.lr_schedule);
  r.get("warmup_steps", s.warmup_steps);
  r.get("clip_norm", s.clip_norm);
  r.get("weight_decay", s.weight_decay);
  r.get("eval_every", s.eval_every);
  r.get("patience", s.patience);
  r.get("valid_limit", s.valid_limit);
}

void read_data(const json& j, DataConfig& d) {
  Reader r(j, "data");
  r.get("source", d.source);
  if (const json* bw = r.sub("blocksworld")) {
    if (!bw->is_array()) throw ConfigError("data.blocksworld must be an array of {blocks, count}");
    d.blocksworld.clear();
    for (std::size_t i = 0; i < bw->size(); ++i) {
      Reader e((*bw)[i], "data.blocksworld[" + std::to_string(i) + "]");
      BlocksworldSize s;
      e.get("blocks", s.blocks);
      e.get("count", s.count);
      e.finish();
      d.blocksworld.push_back(s);
    }
  }
  r.get("name_pool", d.name_pool);
  if (const json* lg = r.sub("logic_graph")) {
    Reader e(*lg, "data.logic_graph");
    e.get("depth", d.logic_graph.depth);
    e.get("branching", d.logic_graph.branching);
    e.get("n_distractors", d.logic_graph.n_distractors);
    e.get("count", d.logic_graph_count);
    e.finish();
  }
  r.get("train_path", d.train_path);
  r.get("valid_path", d.valid_path);
  r.get("test_path", d.test_path);
  if (const json* sp = r.sub("split")) {
    Reader e(*sp, "data.split");
    e.get("train", d.split.train);
    e.get("valid", d.split.valid);
    e.get("test", d.split.test);
    e.finish();
  }
  r.get("max_positions", d.max_positions);
  r.finish();
}

json dims_json(const Dims& d) {
  return {{"n_layers", d.n_layers}, {"n_heads", d.n_heads}, {"d_model", d.d_model}, {"d_ff", d.d_ff}};
}

json schedule_json(const Schedule& s) {
  return {{"epochs", s.epochs},
          {"batch", s.batch},
          {"lr", s.lr},
          {"lr_schedule", s.lr_schedule},
          {"warmup_steps", s.warmup_steps},
          {"clip_norm", s.clip_norm},
          {"weight_decay", s.weight_decay},
          {"eval_every", s.eval_every},
          {"patience", s.patience},
          {"valid_limit", s.valid_limit}};
}

void check_one_of(const std::string& key, const std::string& v, std::initializer_list<const char*> allowed) {
  for (const char* a : allowed) {
    if (v == a) return;
  }
  std::string list;
  for (const char* a : allowed) list += (list.empty() ? "" : " | ") + std::string(a);
  throw ConfigError(key + ": \"" + v + "\" is not one of " + list);
}

void check_schedule(const std::string& key, const Schedule& s) {
  if (s.epochs == 0) throw ConfigError(key + ".epochs must be positive");
  if (s.batch == 0) throw ConfigError(key + ".batch must be positive");
  if (!(s.lr > 0)) throw ConfigError(key + ".lr must be positive");
  if (s.clip_norm < 0) throw ConfigError(key + ".clip_norm must be non-negative");
  if (s.weight_decay < 0) throw ConfigError(key + ".weight_decay must be non-negative");
  check_one_of(key + ".lr_schedule", s.lr_schedule, {"constant", "cosine"});
}

void check_dims(const std::string& key, const Dims& d) {
  if (d.n_layers == 0 || d.n_heads == 0 || d.d_model == 0 || d.d_ff == 0)
    throw ConfigError(key + ": every dimension must be positive");
  if (d.d_model % d.n_heads != 0) throw ConfigError(key + ": d_model must be divisible by n_heads");
}

}  // namespace

void ExperimentConfig::validate() const {
  if (stages.empty()) throw ConfigError("stages must not be empty");
  for (std::size_t i = 1; i < stages.size(); ++i) {
    if (stage_rank(stages[i]) <= stage_rank(stages[i - 1]))
      throw ConfigError("stages must be listed once each, in pipeline order");
  }
  check_one_of("selection", selection, {"validation", "test"});

  check_one_of("data.source", data.source, {"blocksworld", "logic_graph", "jsonl"});
  if (data.source == "blocksworld") {
    if (data.blocksworld.empty()) throw ConfigError("data.blocksworld must list at least one size");
    for (const auto& s : data.blocksworld) {
      if (s.blocks < 2) throw ConfigError("data.blocksworld.blocks must be at least 2");
      if (s.count == 0) throw ConfigError("data.blocksworld.count must be positive");
    }
    if (data.name_pool < 1 || data.name_pool > 26) throw ConfigError("data.name_pool must be in [1, 26]");
  }
  if (data.source == "logic_graph" && data.logic_graph_count == 0)
    throw ConfigError("data.logic_graph.count must be positive");
  if (data.source == "jsonl" && (data.train_path.empty() || data.valid_path.empty() || data.test_path.empty()))
    throw ConfigError("data: the jsonl source needs train_path, valid_path and test_path");
  const auto& sp = data.split;
  if (sp.train <= 0 || sp.valid < 0 || sp.test < 0 || std::abs(sp.train + sp.valid + sp.test - 1.0) > 1e-9)
    throw ConfigError("data.split ratios must be non-negative, with train > 0, and sum to 1");
  if (data.max_positions < 16) throw ConfigError("data.max_positions must be at least 16");

  check_dims("model.sft", sft_dims);
  check_dims("model.encdec", encdec_dims);
  check_dims("model.latent", latent_dims);

  check_schedule("sft", sft.schedule);
  if (sft.formats.empty()) throw ConfigError("sft.formats must not be empty");
  for (const auto& f : sft.formats) check_one_of("sft.formats", f, {"cot", "nocot"});

  check_schedule("embed", embed.schedule);
  if (embed.modes.empty()) throw ConfigError("embed.modes must not be empty");
  for (const auto& m : embed.modes) check_one_of("embed.modes", m, {"semantic", "ctx_base", "ctx_contrastive"});
  check_one_of("embed.init", embed.init, {"sft", "fresh"});
  if (!(embed.tau > 0)) throw ConfigError("embed.tau must be positive");
  if (embed.contrastive_weight < 0) throw ConfigError("embed.contrastive_weight must be non-negative");
  if (embed.init == "sft" && !(encdec_dims == sft_dims))
    throw ConfigError("embed.init = sft requires model.encdec to equal model.sft");

  check_schedule("latent", latent.schedule);
  check_one_of("latent.input", latent.input, {"semantic", "ctx_base", "ctx_contrastive"});
  check_one_of("latent.output", latent.output, {"semantic", "ctx_base", "ctx_contrastive"});
  check_one_of("latent.init", latent.init, {"sft", "fresh"});
  check_one_of("latent.objective", latent.objective, {"ce", "mse"});
  check_one_of("latent.select_mode", latent.select_mode, {"continuous", "discretized", "teacher_forced"});
  if (latent.lambda < 0) throw ConfigError("latent.lambda must be non-negative");
  if (!(latent.tau > 0)) throw ConfigError("latent.tau must be positive");
  if (latent.self_feed < 0 || latent.self_feed > 1) throw ConfigError("latent.self_feed must be in [0, 1]");
  if (latent.self_feed_rounds == 0) throw ConfigError("latent.self_feed_rounds must be positive");

  if (classifier.epochs == 0 || classifier.batch == 0 || !(classifier.lr > 0))
    throw ConfigError("classifier: epochs, batch and lr must be positive");

  if (eval.regimes.empty()) throw ConfigError("eval.regimes must not be empty");
  for (const auto& r : eval.regimes) check_one_of("eval.regimes", r, {"no-cot", "cot", "discretized", "continuous"});
  check_one_of("eval.split", eval.split, {"test", "valid"});
  check_one_of("eval.halt", eval.halt, {"oracle", "classifier"});
  if (eval.max_steps == 0) throw ConfigError("eval.max_steps must be positive");
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Reader r(j, "");
  r.get("seed", c.seed);
  if (const json* st = r.sub("stages")) {
    if (!st->is_array()) throw ConfigError("stages must be an array of stage names");
    c.stages.clear();
    for (const auto& s : *st) {
      if (!s.is_string()) throw ConfigError("stages must be an array of stage names");
      c.stages.push_back(parse_stage(s.get<std::string>()));
    }
  }
  r.get("selection", c.selection);
  if (const json* d = r.sub("data")) read_data(*d, c.data);
  if (const json* m = r.sub("model")) {
    Reader mr(*m, "model");
    if (const json* x = mr.sub("sft")) read_dims(*x, "model.sft", c.sft_dims);
    if (const json* x = mr.sub("encdec")) read_dims(*x, "model.encdec", c.encdec_dims);
    if (const json* x = mr.sub("latent")) read_dims(*x, "model.latent", c.latent_dims);
    mr.finish();
  }
  if (const json* s = r.sub("sft")) {
    Reader e(*s, "sft");
    read_schedule(e, c.sft.schedule);
    e.get("formats", c.sft.formats);
    e.get("max_new_tokens", c.sft.max_new_tokens);
    e.finish();
  }
  if (const json* s = r.sub("embed")) {
    Reader e(*s, "embed");
    read_schedule(e, c.embed.schedule);
    e.get("modes", c.embed.modes);
    e.get("init", c.embed.init);
    e.get("tau", c.embed.tau);
    e.get("contrastive_weight", c.embed.contrastive_weight);
    e.finish();
  }
  if (const json* s = r.sub("latent")) {
    Reader e(*s, "latent");
    read_schedule(e, c.latent.schedule);
    e.get("input", c.latent.input);
    e.get("output", c.latent.output);
    e.get("init", c.latent.init);
    e.get("lambda", c.latent.lambda);
    e.get("tau", c.latent.tau);
    e.get("objective", c.latent.objective);
    e.get("select_mode", c.latent.select_mode);
    e.get("self_feed", c.latent.self_feed);
    e.get("self_feed_rounds", c.latent.self_feed_rounds);
    e.finish();
  }
  if (const json* s = r.sub("classifier")) {
    Reader e(*s, "classifier");
    e.get("epochs", c.classifier.epochs);
    e.get("batch", c.classifier.batch);
    e.get("lr", c.classifier.lr);
    e.finish();
  }
  if (const json* s = r.sub("eval")) {
    Reader e(*s, "eval");
    e.get("regimes", c.eval.regimes);
    e.get("split", c.eval.split);
    e.get("halt", c.eval.halt);
    e.get("max_steps", c.eval.max_steps);
    e.get("limit", c.eval.limit);
    e.get("restoration", c.eval.restoration);
    e.get("trace_dump", c.eval.trace_dump);
    e.finish();
  }
  r.finish();
  c.validate();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json stages = json::array();
  for (Stage s : c.stages) stages.push_back(to_string(s));
  json bw = json::array();
  for (const auto& s : c.data.blocksworld) bw.push_back({{"blocks", s.blocks}, {"count", s.count}});
  json j;
  j["seed"] = c.seed;
  j["stages"] = stages;
  j["selection"] = c.selection;
  j["data"] = {{"source", c.data.source},
               {"blocksworld", bw},
               {"name_pool", c.data.name_pool},
               {"logic_graph",
                {{"depth", c.data.logic_graph.depth},
                 {"branching", c.data.logic_graph.branching},
                 {"n_distractors", c.data.logic_graph.n_distractors},
                 {"count", c.data.logic_graph_count}}},
               {"train_path", c.data.train_path},
               {"valid_path", c.data.valid_path},
               {"test_path", c.data.test_path},
               {"split", {{"train", c.data.split.train}, {"valid", c.data.split.valid}, {"test", c.data.split.test}}},
               {"max_positions", c.data.max_positions}};
  j["model"] = {{"sft", dims_json(c.sft_dims)}, {"encdec", dims_json(c.encdec_dims)}, {"latent", dims_json(c.latent_dims)}};
  j["sft"] = schedule_json(c.sft.schedule);
  j["sft"]["formats"] = c.sft.formats;
  j["sft"]["max_new_tokens"] = c.sft.max_new_tokens;
  j["embed"] = schedule_json(c.embed.schedule);
  j["embed"]["modes"] = c.embed.modes;
  j["embed"]["init"] = c.embed.init;
  j["embed"]["tau"] = c.embed.tau;
  j["embed"]["contrastive_weight"] = c.embed.contrastive_weight;
  j["latent"] = schedule_json(c.latent.schedule);
  j["latent"]["input"] = c.latent.input;
  j["latent"]["output"] = c.latent.output;
  j["latent"]["init"] = c.latent.init;
  j["latent"]["lambda"] = c.latent.lambda;
  j["latent"]["tau"] = c.latent.tau;
  j["latent"]["objective"] = c.latent.objective;
  j["latent"]["select_mode"] = c.latent.select_mode;
  j["latent"]["self_feed"] = c.latent.self_feed;
  j["latent"]["self_feed_rounds"] = c.latent.self_feed_rounds;
  j["classifier"] = {{"epochs", c.classifier.epochs}, {"batch", c.classifier.batch}, {"lr", c.classifier.lr}};
  j["eval"] = {{"regimes", c.eval.regimes},     {"split", c.eval.split},
               {"halt", c.eval.halt},           {"max_steps", c.eval.max_steps},
               {"limit", c.eval.limit},         {"restoration", c.eval.restoration},
               {"trace_dump", c.eval.trace_dump}};
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

json stage_snapshot(const ExperimentConfig& c, Stage s) {
  const json full = to_json(c);
  json snap = {{"seed", c.seed}, {"selection", c.selection}, {"data", full["data"]}};
  // Each stage also depends on everything upstream of it.
  switch (s) {
    case Stage::eval:
      snap["eval"] = full["eval"];
      [[fallthrough]];
    case Stage::classifier:
      snap["classifier"] = full["classifier"];
      [[fallthrough]];
    case Stage::latent:
      snap["latent"] = full["latent"];
      snap["model_latent"] = full["model"]["latent"];
      snap["eval_max_steps"] = c.eval.max_steps;  // checkpoint selection rolls out inference
      [[fallthrough]];
    case Stage::encdec:
      snap["embed"] = full["embed"];
      snap["model_encdec"] = full["model"]["encdec"];
      [[fallthrough]];
    case Stage::sft:
      snap["sft"] = full["sft"];
      snap["model_sft"] = full["model"]["sft"];
  }
  return snap;
}

}  // namespace sentlat::pipeline
