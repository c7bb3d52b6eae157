#include "sentlat/pipeline/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "sentlat/autodiff/adam.hpp"
#include "sentlat/corpus/blocksworld.hpp"
#include "sentlat/corpus/logic_graph.hpp"
#include "sentlat/corpus/serialize.hpp"
#include "sentlat/cost/cost_model.hpp"
#include "sentlat/nn/lm.hpp"

namespace sentlat::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using NamedParams = std::vector<std::pair<std::string, ad::Tensor<float>>>;

namespace {

std::uint64_t fnv(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  return h;
}

// Independent, reproducible stream per (seed, purpose).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t z = seed ^ fnv(tag);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::string vocab_hash(const corpus::Vocab& v) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& t : v.tokens()) h = fnv(t + '\n', h);
  std::ostringstream s;
  s << std::hex << h;
  return s.str();
}

std::string rng_string(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

void load_records(std::vector<TensorRecord> records, const NamedParams& params) {
  Checkpoint c;
  c.tensors = std::move(records);
  restore(c, params);
}

struct LoopResult {
  double best = -1;
  std::size_t best_step = 0;
  std::size_t steps = 0;
  bool early_stopped = false;
};

// Shuffled minibatch training with periodic validation, best-on-validation
// snapshots and patience; the best parameters are restored at the end.
template <class Step, class Score>
LoopResult train_loop(const std::string& stage, const json& tag, std::size_t n_items, const Schedule& s,
                      ad::Adam<float>& optim, std::mt19937_64& rng, const NamedParams& params, Step&& step,
                      Score&& score, const MetricsLog& log, const std::function<void(const std::string&)>& say) {
  if (n_items == 0) throw std::invalid_argument(stage + ": no training items");
  const std::size_t per_epoch = (n_items + s.batch - 1) / s.batch;
  const std::size_t total = per_epoch * s.epochs;
  const std::size_t every = s.eval_every ? s.eval_every : per_epoch;
  std::vector<std::size_t> order(n_items);
  std::iota(order.begin(), order.end(), 0);

  LoopResult res;
  std::vector<TensorRecord> best_params;
  std::size_t stale = 0;
  double loss_sum = 0;
  std::size_t loss_n = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t epoch = 1; epoch <= s.epochs && !res.early_stopped; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * s.batch, hi = std::min(n_items, lo + s.batch);
      optim.set_lr(scheduled_lr(s, res.steps, total));
      loss_sum += step(std::span<const std::size_t>(order.data() + lo, hi - lo));
      ++loss_n;
      ++res.steps;
      if (res.steps % every != 0 && res.steps != total) continue;

      const double sc = score();
      json rec = tag;
      rec["stage"] = stage;
      rec["epoch"] = epoch;
      rec["step"] = res.steps;
      rec["train_loss"] = loss_sum / static_cast<double>(loss_n);
      rec["valid_score"] = sc;
      log.append("train", rec);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::ostringstream line;
      line << stage << ' ' << tag.dump() << " epoch " << epoch << " step " << res.steps << "/" << total << " loss "
           << loss_sum / static_cast<double>(loss_n) << " valid " << sc << " (" << static_cast<int>(secs) << "s)";
      say(line.str());
      loss_sum = 0;
      loss_n = 0;
      if (sc > res.best) {
        res.best = sc;
        res.best_step = res.steps;
        best_params = capture(params);
        stale = 0;
      } else if (s.patience && ++stale >= s.patience) {
        res.early_stopped = true;
      }
      if (sc >= 100.0) res.early_stopped = true;  // nothing left to select for
      if (res.early_stopped) break;
    }
  }
  load_records(std::move(best_params), params);
  return res;
}

std::vector<corpus::ReasoningExample> head(const std::vector<corpus::ReasoningExample>& v, std::size_t limit) {
  if (limit == 0 || limit >= v.size()) return v;
  return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(limit)};
}

void add(nn::ForwardCounters& a, const nn::ForwardCounters& b) {
  a.attention_pairs += b.attention_pairs;
  a.mlp_tokens += b.mlp_tokens;
  a.forward_calls += b.forward_calls;
  a.lm_head_rows += b.lm_head_rows;
}

void add(infer::InferenceCounters& a, const infer::InferenceCounters& b) {
  add(a.latent, b.latent);
  add(a.encoder, b.encoder);
  add(a.decoder, b.decoder);
  add(a.display, b.display);
  a.decoder_calls += b.decoder_calls;
  a.encoder_calls += b.encoder_calls;
  a.halt_checks += b.halt_checks;
  a.classifier_calls += b.classifier_calls;
}

// Runs fn(lo, hi) over contiguous chunks on up to `threads` threads.
template <class Fn>
void fan_out(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t lo = 0; lo < n; lo += chunk) pool.emplace_back([&, lo] { fn(lo, std::min(n, lo + chunk)); });
  for (auto& t : pool) t.join();
}

infer::InferenceEval evaluate_parallel(const infer::Bundle& b, const std::vector<corpus::ReasoningExample>& ex,
                                       const infer::InferenceOptions& opt, bool keep, std::size_t threads) {
  const std::size_t parts = std::max<std::size_t>(1, std::min(threads, ex.size()));
  std::vector<infer::InferenceEval> res(parts);
  const std::size_t chunk = ex.empty() ? 1 : (ex.size() + parts - 1) / parts;
  fan_out(parts, parts, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t p = lo; p < hi; ++p) {
      const std::size_t a = std::min(ex.size(), p * chunk), z = std::min(ex.size(), a + chunk);
      res[p] = infer::evaluate_inference(b, {ex.begin() + a, ex.begin() + z}, opt, keep);
    }
  });
  infer::InferenceEval out;
  double steps = 0;
  for (auto& r : res) {
    out.n += r.n;
    out.correct += r.correct;
    out.unhalted += r.unhalted;
    steps += r.mean_steps * static_cast<double>(r.n);
    add(out.totals, r.totals);
    for (auto& t : r.traces) out.traces.push_back(std::move(t));
  }
  if (out.n) {
    out.accuracy = 100.0 * static_cast<double>(out.correct) / static_cast<double>(out.n);
    out.mean_steps = steps / static_cast<double>(out.n);
  }
  return out;
}

}  // namespace

double scheduled_lr(const Schedule& s, std::size_t step, std::size_t total) {
  if (s.warmup_steps && step < s.warmup_steps)
    return s.lr * static_cast<double>(step + 1) / static_cast<double>(s.warmup_steps);
  if (s.lr_schedule == "constant" || total <= s.warmup_steps) return s.lr;
  const double progress = static_cast<double>(step - s.warmup_steps) / static_cast<double>(total - s.warmup_steps);
  // Cosine decay to a tenth of the peak.
  return s.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * std::min(1.0, progress))));
}

Dataset load_dataset(const DataConfig& d, std::uint64_t seed) {
  Dataset ds;
  if (d.source == "jsonl") {
    ds.splits.train = corpus::read_jsonl(d.train_path);
    ds.splits.valid = corpus::read_jsonl(d.valid_path);
    ds.splits.test = corpus::read_jsonl(d.test_path);
  } else {
    std::vector<corpus::ReasoningExample> all;
    if (d.source == "blocksworld") {
      corpus::BlocksworldOptions bo;
      bo.name_pool = d.name_pool;
      for (const auto& s : d.blocksworld) {
        auto part = corpus::gen_blocksworld(s.blocks, s.count, derive_seed(seed, "blocks" + std::to_string(s.blocks)), bo);
        all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
      }
    } else {
      all = corpus::gen_logic_graph(d.logic_graph, d.logic_graph_count, derive_seed(seed, "logic_graph"));
    }
    ds.splits = corpus::split_dataset(all, d.split, {}, seed);
  }
  std::vector<corpus::ReasoningExample> every = ds.splits.train;
  every.insert(every.end(), ds.splits.valid.begin(), ds.splits.valid.end());
  every.insert(every.end(), ds.splits.test.begin(), ds.splits.test.end());
  ds.vocab = corpus::Vocab::build(every);
  return ds;
}

infer::Bundle LoadedBundle::view(const corpus::Vocab& vocab) const {
  return {&vocab, &latent, &input, &output, classifier ? &*classifier : nullptr};
}

Pipeline::Pipeline(ExperimentConfig cfg, RunOptions opt)
    : cfg_(std::move(cfg)), opt_(std::move(opt)), metrics_(opt_.out / "metrics.jsonl") {
  cfg_.validate();
  fs::create_directories(opt_.out);
}

const Dataset& Pipeline::data() const {
  if (!data_) data_ = load_dataset(cfg_.data, cfg_.seed);
  return *data_;
}

void Pipeline::say(const std::string& line) const {
  if (opt_.log) *opt_.log << line << std::endl;
}

fs::path Pipeline::sft_path(const std::string& format) const { return opt_.out / ("sft_" + format + ".ckpt"); }
fs::path Pipeline::encdec_path(const std::string& mode) const { return opt_.out / ("encdec_" + mode + ".ckpt"); }
fs::path Pipeline::latent_path() const { return opt_.out / "latent.ckpt"; }
fs::path Pipeline::classifier_path() const { return opt_.out / "classifier.ckpt"; }

std::vector<corpus::ReasoningExample> Pipeline::split(const std::string& name, std::size_t limit) const {
  const auto& s = data().splits;
  if (name == "train") return head(s.train, limit);
  if (name == "valid") return head(s.valid, limit);
  if (name == "test") return head(s.test, limit);
  throw std::invalid_argument("unknown split \"" + name + "\" (train | valid | test)");
}

const std::vector<corpus::ReasoningExample>& Pipeline::selection_split() const {
  return cfg_.selection == "test" ? data().splits.test : data().splits.valid;
}

void Pipeline::run() {
  for (Stage s : cfg_.stages) run_stage(s);
}

void Pipeline::run_stage(Stage s) {
  say("== stage " + to_string(s));
  switch (s) {
    case Stage::sft: train_sft(); break;
    case Stage::encdec: train_encdec(); break;
    case Stage::latent: train_latent(); break;
    case Stage::classifier: train_classifier(); break;
    case Stage::eval: evaluate(); break;
  }
}

Checkpoint Pipeline::open(const fs::path& path, Stage s, const std::string& what) const {
  if (!fs::exists(path))
    throw PrerequisiteError(what + " needs the " + to_string(s) + " checkpoint " + path.string() +
                            ", which does not exist; run the " + to_string(s) + " stage first");
  auto c = load_checkpoint(path);
  if (c.stage != to_string(s))
    throw PrerequisiteError(path.string() + " is a " + c.stage + " checkpoint, " + what + " needs " + to_string(s));
  const auto& v = data().vocab;
  if (c.meta.value("vocab_hash", "") != vocab_hash(v))
    throw PrerequisiteError(path.string() + " was trained on a different vocabulary");
  return c;
}

bool Pipeline::reusable(const fs::path& path, Stage s) const {
  if (!opt_.resume || !fs::exists(path)) return false;
  try {
    const auto c = load_checkpoint(path);
    return c.stage == to_string(s) && c.config == stage_snapshot(cfg_, s) &&
           c.meta.value("vocab_hash", "") == vocab_hash(data().vocab);
  } catch (const CheckpointError&) {
    return false;
  }
}

Checkpoint Pipeline::make_checkpoint(Stage s, const NamedParams& params, json meta, const std::string& rng) const {
  Checkpoint c;
  c.stage = to_string(s);
  c.config = stage_snapshot(cfg_, s);
  meta["vocab_size"] = data().vocab.size();
  meta["vocab_hash"] = vocab_hash(data().vocab);
  c.meta = std::move(meta);
  c.rng_state = rng;
  c.tensors = capture(params);
  return c;
}

nn::Transformer<float> Pipeline::load_sft(const std::string& format) const {
  const auto c = open(sft_path(format), Stage::sft, "loading the " + format + " language model");
  nn::Transformer<float> m(cfg_.sft_dims.transformer(data().vocab.size(), cfg_.data.max_positions), 0);
  restore(c, m.named_parameters());
  return m;
}

embed::EncDec Pipeline::load_encdec(const std::string& mode) const {
  const auto c = open(encdec_path(mode), Stage::encdec, "loading the " + mode + " encoder-decoder");
  embed::EncDec ed{nn::Transformer<float>(cfg_.encdec_dims.transformer(data().vocab.size(), cfg_.data.max_positions), 0),
                   embed::embedding_type_of(embed::parse_embed_mode(mode))};
  restore(c, ed.model.named_parameters());
  ed.model.set_trainable(false);
  return ed;
}

latent::LatentModel Pipeline::load_latent() const {
  const auto c = open(latent_path(), Stage::latent, "loading the latent model");
  const auto d_in = c.meta.at("d_in").get<std::size_t>(), d_out = c.meta.at("d_out").get<std::size_t>();
  latent::LatentModel lat(
      nn::Transformer<float>(cfg_.latent_dims.transformer(data().vocab.size(), cfg_.data.max_positions), 0), d_in,
      d_out, 0);
  restore(c, lat.named_parameters());
  return lat;
}

infer::TerminationClassifier Pipeline::load_classifier() const {
  const auto c = open(classifier_path(), Stage::classifier, "loading the termination classifier");
  infer::TerminationClassifier clf(c.meta.at("d").get<std::size_t>(), 0);
  restore(c, clf.named_parameters());
  return clf;
}

LoadedBundle Pipeline::load_bundle(bool with_classifier) const {
  LoadedBundle b{load_encdec(cfg_.latent.input), load_encdec(cfg_.latent.output), load_latent(), std::nullopt};
  if (b.latent.d_in() != b.input.dim() || b.latent.d_out() != b.output.dim())
    throw ShapeError("latent projections do not match the configured encoder-decoders");
  if (with_classifier) b.classifier = load_classifier();
  return b;
}

void Pipeline::train_sft() {
  const auto& d = data();
  const auto& sc = cfg_.sft.schedule;
  for (const auto& fmt_name : cfg_.sft.formats) {
    const auto path = sft_path(fmt_name);
    if (reusable(path, Stage::sft)) {
      say("sft " + fmt_name + ": reusing " + path.string());
      continue;
    }
    const auto fmt = fmt_name == "cot" ? corpus::LmFormat::cot : corpus::LmFormat::nocot;
    nn::Transformer<float> model(cfg_.sft_dims.transformer(d.vocab.size(), cfg_.data.max_positions),
                                 derive_seed(cfg_.seed, "sft-init-" + fmt_name));
    std::vector<corpus::TokenSequence> seqs;
    for (const auto& ex : d.splits.train) seqs.push_back(corpus::serialize_lm(d.vocab, ex, fmt));
    const auto sel = head(selection_split(), sc.valid_limit);

    ad::AdamConfig ac{.lr = sc.lr, .weight_decay = sc.weight_decay, .clip_norm = sc.clip_norm};
    ad::Adam<float> opt(model.parameters(), ac);
    std::mt19937_64 rng(derive_seed(cfg_.seed, "sft-order-" + fmt_name));
    auto step = [&](std::span<const std::size_t> idx) {
      std::vector<corpus::TokenSequence> batch;
      for (auto i : idx) batch.push_back(seqs[i]);
      return nn::train_lm_step(model, batch, opt);
    };
    auto score = [&] {
      std::size_t ok = 0;
      for (const auto& ex : sel) ok += nn::eval_token_rollout(model, d.vocab, ex, fmt, cfg_.sft.max_new_tokens).correct;
      return sel.empty() ? 0.0 : 100.0 * static_cast<double>(ok) / static_cast<double>(sel.size());
    };
    const auto r = train_loop("sft", {{"format", fmt_name}}, seqs.size(), sc, opt, rng, model.named_parameters(), step,
                              score, metrics_, [&](const std::string& l) { say(l); });
    json meta = {{"format", fmt_name}, {"best_valid_accuracy", r.best}, {"best_step", r.best_step}, {"steps", r.steps}};
    save_checkpoint(path, make_checkpoint(Stage::sft, model.named_parameters(), meta, rng_string(rng)));
    metrics_.append("stage", {{"stage", "sft"}, {"format", fmt_name}, {"best_valid_accuracy", r.best},
                              {"best_step", r.best_step}, {"steps", r.steps}, {"seed", cfg_.seed}});
  }
}

void Pipeline::train_encdec() {
  const auto& d = data();
  const auto& sc = cfg_.embed.schedule;
  for (const auto& mode_name : cfg_.embed.modes) {
    const auto path = encdec_path(mode_name);
    if (reusable(path, Stage::encdec)) {
      say("encdec " + mode_name + ": reusing " + path.string());
      continue;
    }
    const auto mode = embed::parse_embed_mode(mode_name);
    const auto type = embed::embedding_type_of(mode);
    embed::EncDec ed{cfg_.embed.init == "sft"
                         ? load_sft("cot")
                         : nn::Transformer<float>(cfg_.encdec_dims.transformer(d.vocab.size(), cfg_.data.max_positions),
                                                  derive_seed(cfg_.seed, "encdec-init-" + mode_name)),
                     type};
    std::optional<embed::EncDec> frozen_semantic;
    if (mode == embed::EmbedMode::ctx_contrastive) frozen_semantic = load_encdec("semantic");

    // Semantic items are distinct steps; contextual items are whole examples
    // whose prefixes stay adjacent so the encoder can pack them.
    std::vector<std::vector<embed::SentencePair>> items;
    if (type == embed::EmbeddingType::semantic) {
      std::set<std::vector<int>> seen;
      for (const auto& ex : d.splits.train)
        for (auto& p : embed::build_semantic_pairs(d.vocab, ex))
          if (seen.insert(p.x).second) items.push_back({std::move(p)});
    } else {
      for (const auto& ex : d.splits.train) items.push_back(embed::build_contextual_pairs(d.vocab, ex));
    }
    std::vector<embed::SentencePair> sel_pairs;
    {
      std::set<std::vector<int>> seen;
      for (const auto& ex : head(selection_split(), sc.valid_limit))
        for (auto& p : embed::build_pairs(d.vocab, ex, type))
          if (seen.insert(p.x).second) sel_pairs.push_back(std::move(p));
    }

    embed::EmbedTrainConfig ec;
    ec.mode = mode;
    ec.tau = cfg_.embed.tau;
    ec.contrastive_weight = cfg_.embed.contrastive_weight;
    ad::AdamConfig ac{.lr = sc.lr, .weight_decay = sc.weight_decay, .clip_norm = sc.clip_norm};
    ad::Adam<float> opt(ed.model.parameters(), ac);
    std::mt19937_64 rng(derive_seed(cfg_.seed, "encdec-order-" + mode_name));
    auto step = [&](std::span<const std::size_t> idx) {
      std::vector<embed::SentencePair> batch;
      for (auto i : idx) batch.insert(batch.end(), items[i].begin(), items[i].end());
      return embed::embed_train_step(ed, batch, ec, opt, frozen_semantic ? &*frozen_semantic : nullptr).total;
    };
    auto score = [&] { return embed::eval_pair_em(ed, sel_pairs); };
    const auto r = train_loop("encdec", {{"mode", mode_name}}, items.size(), sc, opt, rng, ed.model.named_parameters(),
                              step, score, metrics_, [&](const std::string& l) { say(l); });
    json meta = {{"mode", mode_name}, {"type", embed::to_string(type)}, {"best_valid_em", r.best},
                 {"best_step", r.best_step}, {"steps", r.steps}, {"init", cfg_.embed.init}};
    save_checkpoint(path, make_checkpoint(Stage::encdec, ed.model.named_parameters(), meta, rng_string(rng)));
    metrics_.append("stage", {{"stage", "encdec"}, {"mode", mode_name}, {"best_valid_em", r.best},
                              {"best_step", r.best_step}, {"steps", r.steps}, {"seed", cfg_.seed}});
  }
}

void Pipeline::train_latent() {
  const auto path = latent_path();
  if (reusable(path, Stage::latent)) {
    say("latent: reusing " + path.string());
    return;
  }
  const auto& d = data();
  const auto& sc = cfg_.latent.schedule;
  const auto in = load_encdec(cfg_.latent.input);
  const auto out = load_encdec(cfg_.latent.output);
  const auto core_cfg = cfg_.latent_dims.transformer(d.vocab.size(), cfg_.data.max_positions);
  std::string init = "fresh";
  nn::Transformer<float> core(core_cfg, derive_seed(cfg_.seed, "latent-init"));
  if (cfg_.latent.init == "sft") {
    if (cfg_.latent_dims == cfg_.sft_dims) {
      core = load_sft("cot");
      init = "sft";
    } else {
      say("latent: core dims differ from the SFT model; initializing fresh");
    }
  }
  latent::LatentModel lat(std::move(core), in.dim(), out.dim(), derive_seed(cfg_.seed, "latent-proj"));

  std::vector<latent::LatentExample> train;
  train.reserve(d.splits.train.size());
  for (const auto& ex : d.splits.train) train.push_back(latent::prepare_example(d.vocab, ex, in, out));
  const auto sel = head(selection_split(), sc.valid_limit);
  std::vector<latent::LatentExample> sel_prepared;
  if (cfg_.latent.select_mode == "teacher_forced")
    for (const auto& ex : sel) sel_prepared.push_back(latent::prepare_example(d.vocab, ex, in, out));

  latent::LatentTrainConfig lc;
  lc.lambda = cfg_.latent.lambda;
  lc.tau = cfg_.latent.tau;
  lc.objective = latent::parse_objective(cfg_.latent.objective);
  lc.input_type = in.type;
  lc.output_type = out.type;
  lc.self_feed = cfg_.latent.self_feed;
  lc.self_feed_rounds = cfg_.latent.self_feed_rounds;
  std::mt19937_64 feed_rng(derive_seed(cfg_.seed, "latent-self-feed"));
  ad::AdamConfig ac{.lr = sc.lr, .weight_decay = sc.weight_decay, .clip_norm = sc.clip_norm};
  ad::Adam<float> opt(lat.parameters(), ac);
  std::mt19937_64 rng(derive_seed(cfg_.seed, "latent-order"));
  auto step = [&](std::span<const std::size_t> idx) {
    std::vector<const latent::LatentExample*> batch;
    for (auto i : idx) batch.push_back(&train[i]);
    return latent::latent_train_step(lat, out, batch, lc, opt, &feed_rng).total;
  };
  const infer::Bundle bundle{&d.vocab, &lat, &in, &out, nullptr};
  auto score = [&] {
    if (cfg_.latent.select_mode == "teacher_forced") return latent::teacher_forced_em(lat, out, sel_prepared);
    infer::InferenceOptions io;
    io.mode = infer::parse_inference_mode(cfg_.latent.select_mode);
    io.max_steps = cfg_.eval.max_steps;
    return evaluate_parallel(bundle, sel, io, false, opt_.threads).accuracy;
  };
  const auto r = train_loop("latent", {{"input", cfg_.latent.input}, {"output", cfg_.latent.output}}, train.size(), sc,
                            opt, rng, lat.named_parameters(), step, score, metrics_,
                            [&](const std::string& l) { say(l); });
  json meta = {{"input", cfg_.latent.input}, {"output", cfg_.latent.output}, {"d_in", lat.d_in()},
               {"d_out", lat.d_out()},       {"init", init},                  {"best_valid_score", r.best},
               {"best_step", r.best_step},   {"steps", r.steps}};
  save_checkpoint(path, make_checkpoint(Stage::latent, lat.named_parameters(), meta, rng_string(rng)));
  metrics_.append("stage", {{"stage", "latent"}, {"init", init}, {"best_valid_score", r.best},
                            {"select_mode", cfg_.latent.select_mode}, {"best_step", r.best_step}, {"steps", r.steps},
                            {"seed", cfg_.seed}});
}

namespace {

// Teacher-forced predictions labelled by whether the gold step is the answer step.
void classifier_data(const latent::LatentModel& lat, const embed::EncDec& in, const embed::EncDec& out,
                     const corpus::Vocab& vocab, const std::vector<corpus::ReasoningExample>& examples,
                     std::vector<std::vector<float>>& x, std::vector<std::uint8_t>& y) {
  for (const auto& ex : examples) {
    const auto le = latent::prepare_example(vocab, ex, in, out);
    const auto pred = latent::teacher_forced_predict(lat, le.question, le.gold_in);
    for (std::size_t t = 0; t < pred.rows(); ++t) {
      const auto row = pred.data().subspan(t * pred.cols(), pred.cols());
      x.emplace_back(row.begin(), row.end());
      y.push_back(corpus::is_answer_step(ex.steps[t]) ? 1 : 0);
    }
  }
}

}  // namespace

void Pipeline::train_classifier() {
  const auto path = classifier_path();
  if (reusable(path, Stage::classifier)) {
    say("classifier: reusing " + path.string());
    return;
  }
  const auto& d = data();
  const auto b = load_bundle(false);
  std::vector<std::vector<float>> xtr, xva, xte;
  std::vector<std::uint8_t> ytr, yva, yte;
  classifier_data(b.latent, b.input, b.output, d.vocab, d.splits.train, xtr, ytr);
  classifier_data(b.latent, b.input, b.output, d.vocab, d.splits.valid, xva, yva);
  classifier_data(b.latent, b.input, b.output, d.vocab, d.splits.test, xte, yte);
  infer::ClassifierTrainConfig cc;
  cc.epochs = cfg_.classifier.epochs;
  cc.batch = cfg_.classifier.batch;
  cc.lr = cfg_.classifier.lr;
  cc.seed = derive_seed(cfg_.seed, "classifier");
  const auto clf = infer::train_classifier(xtr, ytr, cc);
  const json rec = {{"stage", "classifier"},
                    {"train_accuracy", infer::classifier_accuracy(clf, xtr, ytr)},
                    {"valid_accuracy", xva.empty() ? 0.0 : infer::classifier_accuracy(clf, xva, yva)},
                    {"test_accuracy", xte.empty() ? 0.0 : infer::classifier_accuracy(clf, xte, yte)},
                    {"n_train", xtr.size()},
                    {"n_test", xte.size()},
                    {"seed", cfg_.seed}};
  say("classifier " + rec.dump());
  json meta = rec;
  meta["d"] = clf.input_dim();
  save_checkpoint(path, make_checkpoint(Stage::classifier, clf.named_parameters(), meta, ""));
  metrics_.append("stage", rec);
}

std::vector<json> Pipeline::evaluate() {
  const auto& d = data();
  const auto examples = split(cfg_.eval.split, cfg_.eval.limit);
  const std::string hash = corpus::split_fingerprint(examples);
  std::vector<json> records;
  auto base = [&](const std::string& regime) {
    return json{{"regime", regime}, {"seed", cfg_.seed}, {"split", cfg_.eval.split}, {"split_hash", hash},
                {"n", examples.size()}};
  };
  auto dump_path = [&](const std::string& regime) { return opt_.out / ("traces_" + regime + ".jsonl"); };

  for (const auto& regime : cfg_.eval.regimes) {
    json rec = base(regime);
    if (regime == "cot" || regime == "no-cot") {
      const std::string fmt_name = regime == "cot" ? "cot" : "nocot";
      if (!fs::exists(sft_path(fmt_name)))
        throw PrerequisiteError("regime " + regime + " needs an SFT model trained with format " + fmt_name + " (" +
                                sft_path(fmt_name).string() + ")");
      const auto model = load_sft(fmt_name);
      const auto fmt = regime == "cot" ? corpus::LmFormat::cot : corpus::LmFormat::nocot;
      std::vector<nn::RolloutResult> res(examples.size());
      fan_out(examples.size(), opt_.threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i)
          res[i] = nn::eval_token_rollout(model, d.vocab, examples[i], fmt, cfg_.sft.max_new_tokens);
      });
      std::size_t correct = 0;
      double flops = 0;
      const auto dims = cost::ModelDims::from(model.config());
      std::ofstream dump;
      if (cfg_.eval.trace_dump) dump.open(dump_path(regime));
      for (std::size_t i = 0; i < res.size(); ++i) {
        correct += res[i].correct;
        const auto& c = res[i].counters;
        flops += cost::flops_component("lm",
                                       {static_cast<double>(c.attention_pairs), static_cast<double>(c.mlp_tokens),
                                        static_cast<double>(c.lm_head_rows), 0, 0},
                                       dims)
                     .flops;
        if (dump)
          dump << json{{"question", examples[i].question}, {"generated", d.vocab.decode(res[i].generated)},
                       {"answer", res[i].answer}, {"correct", res[i].correct}}
                      .dump()
               << '\n';
      }
      const double n = static_cast<double>(std::max<std::size_t>(1, examples.size()));
      rec["correct"] = correct;
      rec["accuracy"] = 100.0 * static_cast<double>(correct) / n;
      rec["flops_mean"] = flops / n;
    } else {
      const bool use_classifier = cfg_.eval.halt == "classifier";
      if (!fs::exists(latent_path()))
        throw PrerequisiteError("regime " + regime + " needs the latent checkpoint " + latent_path().string() +
                                "; the latent stage has not been run");
      if (use_classifier && !fs::exists(classifier_path()))
        throw PrerequisiteError("eval.halt = classifier needs the classifier checkpoint " + classifier_path().string());
      const auto b = load_bundle(use_classifier);
      infer::InferenceOptions io;
      io.mode = infer::parse_inference_mode(regime);
      io.max_steps = cfg_.eval.max_steps;
      io.use_oracle = !use_classifier;
      const auto ev = evaluate_parallel(b.view(d.vocab), examples, io, cfg_.eval.trace_dump, opt_.threads);
      const auto rep = cost::trace_cost(ev.totals, cost::ModelDims::from(b.latent.core().config()),
                                        cost::ModelDims::from(b.output.model.config()), b.latent.d_in(),
                                        b.latent.d_out(), use_classifier ? b.latent.d_out() : 0);
      const double n = static_cast<double>(std::max<std::size_t>(1, ev.n));
      rec["correct"] = ev.correct;
      rec["accuracy"] = ev.accuracy;
      rec["flops_mean"] = rep.flops / n;
      rec["halt"] = cfg_.eval.halt;
      rec["mean_steps"] = ev.mean_steps;
      rec["unhalted"] = ev.unhalted;
      rec["decoder_calls"] = ev.totals.decoder_calls;
      rec["halt_checks"] = ev.totals.halt_checks;
      if (cfg_.eval.trace_dump) {
        std::ofstream dump(dump_path(regime));
        for (const auto& t : ev.traces) infer::write_trace_jsonl(dump, t);
      }
    }
    say("eval " + rec.dump());
    metrics_.append("eval", rec);
    records.push_back(std::move(rec));
  }

  if (cfg_.eval.restoration) {
    for (const auto& mode : cfg_.embed.modes) {
      if (!fs::exists(encdec_path(mode))) continue;
      const auto ed = load_encdec(mode);
      std::vector<embed::SentencePair> pairs;
      for (const auto& ex : examples) {
        auto p = embed::build_pairs(d.vocab, ex, ed.type);
        pairs.insert(pairs.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
      }
      json rec = base("restoration");
      rec["mode"] = mode;
      rec["n_pairs"] = pairs.size();
      rec["em"] = embed::eval_pair_em(ed, pairs);
      say("eval " + rec.dump());
      metrics_.append("restoration", rec);
      records.push_back(std::move(rec));
    }
  }
  return records;
}

}  // namespace sentlat::pipeline
