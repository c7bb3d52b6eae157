// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//
// Criteria 4-6, 8 and 9 train real models; 6, 8 and 9 reuse the bundle that
// criterion 5 trains, so they are skipped (and fail) when 5 is not selected
// and no finished work directory exists.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "sentlat/autodiff/ops.hpp"
#include "sentlat/corpus/blocksworld.hpp"
#include "sentlat/cost/cost_model.hpp"
#include "sentlat/diag/lens.hpp"
#include "sentlat/diag/noise.hpp"
#include "sentlat/embed/encdec.hpp"
#include "sentlat/infer/classifier.hpp"
#include "sentlat/infer/inference.hpp"
#include "sentlat/latent/latent_model.hpp"
#include "sentlat/nn/lm.hpp"
#include "sentlat/pipeline/pipeline.hpp"

namespace fs = std::filesystem;
using namespace sentlat;
using gradcheck::max_relative_error;
using gradcheck::random_tensor;
using gradcheck::weighted_sum;
using T64 = ad::Tensor<double>;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Context {
  fs::path work;
  fs::path config_dir;
  std::size_t threads = 1;
  bool verbose = false;
  std::ostream* log() const { return verbose ? &std::cerr : nullptr; }
};

// ---- 1: finite differences ----

Outcome c1_gradients() {
  std::mt19937_64 rng(2024);
  std::vector<std::pair<std::string, double>> errs;
  auto check = [&](const std::string& name, const std::function<T64()>& f, std::vector<T64> in) {
    errs.emplace_back(name, max_relative_error(f, std::move(in)));
  };
  auto a = random_tensor({3, 5}, rng), b = random_tensor({5, 4}, rng), bt = random_tensor({4, 5}, rng);
  auto x = random_tensor({3, 5}, rng), y = random_tensor({3, 5}, rng), bias = random_tensor({5}, rng);
  check("matmul", [&] { return weighted_sum(ad::matmul(a, b)); }, {a, b});
  check("matmul_nt", [&] { return weighted_sum(ad::matmul_nt(a, bt)); }, {a, bt});
  check("add", [&] { return weighted_sum(ad::add(x, y)); }, {x, y});
  check("sub", [&] { return weighted_sum(ad::sub(x, y)); }, {x, y});
  check("mul", [&] { return weighted_sum(ad::mul(x, y)); }, {x, y});
  check("scale", [&] { return weighted_sum(ad::scale(x, -0.6)); }, {x});
  check("add_row", [&] { return weighted_sum(ad::add_row(x, bias)); }, {x, bias});
  check("sum", [&] { return ad::sum(ad::mul(x, x)); }, {x});
  check("mean", [&] { return ad::mean(ad::mul(x, y)); }, {x, y});
  check("softmax_rows", [&] { return weighted_sum(ad::softmax_rows(x)); }, {x});
  auto gain = random_tensor({5}, rng);
  check("layer_norm", [&] { return weighted_sum(ad::layer_norm(x, gain, bias)); }, {x, gain, bias});
  auto wide = random_tensor({4, 5}, rng, 2.0);
  check("gelu", [&] { return weighted_sum(ad::gelu(wide)); }, {wide});
  const std::vector<int> targets = {4, 0, 2};
  const std::vector<std::uint8_t> mask = {1, 0, 1};
  check("cross_entropy",
        [&] { return ad::cross_entropy_from_logits(x, std::span<const int>(targets), std::span<const std::uint8_t>(mask)); },
        {x});
  auto z = random_tensor({4, 1}, rng);
  const std::vector<double> labels = {1, 0, 1, 0};
  check("bce_with_logits", [&] { return ad::bce_with_logits(z, std::span<const double>(labels)); }, {z});
  check("mse", [&] { return ad::mse(x, y); }, {x, y});
  check("normalize_rows", [&] { return weighted_sum(ad::normalize_rows(x)); }, {x});
  const std::vector<std::size_t> idx = {2, 0, 2};
  check("gather_rows", [&] { return weighted_sum(ad::gather_rows(x, std::span<const std::size_t>(idx))); }, {x});
  check("stack_rows",
        [&] {
          std::vector<ad::RowRef<double>> refs = {{x, 1}, {y, 0}, {x, 1}};
          return weighted_sum(ad::stack_rows<double>(refs));
        },
        {x, y});
  check("concat_rows",
        [&] {
          std::vector<T64> parts = {x, y};
          return weighted_sum(ad::concat_rows<double>(parts));
        },
        {x, y});
  auto qkv = random_tensor({7, 12}, rng);
  ad::AttentionLayout layout;
  layout.segments = {{0, 4}, {4, 3}};
  layout.is_private = {0, 0, 1, 0, 0, 0, 1};
  check("causal_attention", [&] { return weighted_sum(ad::causal_attention(qkv, 2, layout)); }, {qkv});
  auto q3 = random_tensor({3, 12}, rng);
  auto pk = random_tensor({2, 4}, rng, 1.0, false), pv = random_tensor({2, 4}, rng, 1.0, false);
  ad::AttentionPrefix<double> prefix{pk.data(), pv.data(), 2};
  check("causal_attention+cache",
        [&] { return weighted_sum(ad::causal_attention(q3, 2, ad::AttentionLayout::single(3), prefix)); }, {q3});
  auto anchors = random_tensor({3, 4}, rng), cands = random_tensor({3, 4}, rng);
  const std::vector<int> pos = {2, 0, 1};
  check("info_nce", [&] { return embed::info_nce(anchors, cands, pos, 0.3); }, {anchors, cands});

  double op_worst = 0;
  std::string op_name;
  for (auto& [n, e] : errs)
    if (!(e <= op_worst)) op_worst = e, op_name = n;

  nn::TransformerConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ff = 12;
  c.vocab_size = 9;
  c.max_positions = 8;
  nn::Transformer<double> m(c, 12);
  std::normal_distribution<double> jitter(0.0, 0.3);
  for (auto& t : m.parameters())
    for (auto& v : t.mutable_data()) v += jitter(rng);
  auto ext = random_tensor({2, 8}, rng);
  const std::vector<corpus::TokenSequence> batch = {{{1, 4, 2, 7, 3}, {0, 1, 1, 1, 1}}, {{5, 6, 8}, {0, 0, 1}}};
  auto params = m.parameters();
  params.push_back(ext);
  const double e2e = max_relative_error(
      [&] {
        std::vector<nn::InputItem<double>> items = {nn::InputItem<double>::token(3), nn::InputItem<double>::embedding(ext, 0),
                                                    nn::InputItem<double>::embedding(ext, 1)};
        return ad::add(nn::lm_loss(m, batch), weighted_sum(m.forward_mixed(items).hidden));
      },
      params);
  return {op_worst < 1e-4 && e2e < 1e-3,
          fmt("%zu ops, worst %.2e (%s) < 1e-4; 2-layer transformer %.2e < 1e-3", errs.size(), op_worst,
              op_name.c_str(), e2e)};
}

// ---- 2 and 3: cost model ----

Outcome c2_cost_exactness() {
  std::size_t cells = 0, mismatches = 0;
  for (auto mode : cost::all_cost_modes())
    for (std::uint64_t n0 = 0; n0 <= 4; ++n0)
      for (std::uint64_t l = 1; l <= 6; ++l)
        for (std::uint64_t r = 1; r <= 6; ++r, ++cells)
          if (cost::attn_pairs(mode, cost::CostParams{n0, l, r}) != cost::brute_force_pairs(mode, cost::CostParams{n0, l, r}))
            ++mismatches;
  const auto cot = cost::attn_pairs(cost::CostMode::cot, cost::CostParams{2, 3, 2});
  bool latent_ok = true;
  for (std::uint64_t l = 1; l <= 6; ++l) latent_ok &= cost::attn_pairs(cost::CostMode::latent, cost::CostParams{2, l, 3}) == 9;
  return {mismatches == 0 && cot == 27 && latent_ok,
          fmt("%zu/%zu grid cells match; cot(2,3,2)=%llu (27); latent(2,L,3)=9 for L=1..6: %s", cells - mismatches, cells,
              static_cast<unsigned long long>(cot), latent_ok ? "yes" : "no")};
}

Outcome c3_cost_ratios() {
  const cost::PipelineDims dims{cost::ModelDims::gpt2_small(), cost::ModelDims::gpt2_small()};
  const cost::CostStats csqa{38.8, 10.8, 5.6}, bw{146.6, 8.0, 9.1};
  const double ratio = cost::pipeline_cost(cost::Pipeline::cot, csqa, dims).flops /
                       cost::pipeline_cost(cost::Pipeline::continuous, csqa, dims).flops;
  const double cot = cost::pipeline_cost(cost::Pipeline::cot, bw, dims).flops;
  const double disc = cost::pipeline_cost(cost::Pipeline::discretized, bw, dims).flops;
  return {ratio >= 1.5 && ratio <= 3.5 && disc < cot,
          fmt("CSQA CoT/Continuous = %.3f in [1.5, 3.5]; Blocksworld Discretized %.2f < CoT %.2f GFLOPs", ratio,
              disc / 1e9, cot / 1e9)};
}

// ---- 4: restoration ----

Outcome c4_restoration(const Context& ctx) {
  auto cfg = pipeline::load_config(ctx.config_dir / "c4_restoration.json");
  pipeline::RunOptions opt;
  opt.out = ctx.work / "c4";
  opt.threads = ctx.threads;
  opt.log = ctx.log();
  pipeline::Pipeline p(cfg, opt);
  p.run();
  const auto& d = p.data();
  const auto ed = p.load_encdec("semantic");
  std::set<std::string> train_steps;
  for (const auto& ex : d.splits.train)
    for (const auto& s : ex.steps) train_steps.insert(corpus::normalize_text(s));
  std::size_t n = 0, exact = 0, unseen = 0;
  std::map<std::vector<int>, bool> restored;
  for (const auto& ex : d.splits.test) {
    const auto toks = corpus::step_tokens(d.vocab, ex);
    for (std::size_t i = 0; i < toks.size(); ++i, ++n) {
      auto it = restored.find(toks[i]);
      if (it == restored.end())
        it = restored.emplace(toks[i], embed::decode_from_embedding(ed, embed::encode_sentence(ed, toks[i]).h, 48) == toks[i]).first;
      exact += it->second;
      unseen += !train_steps.count(corpus::normalize_text(ex.steps[i]));
    }
  }
  const double em = n ? 100.0 * double(exact) / double(n) : 0.0;
  return {em >= 99.0, fmt("held-out step EM %.2f%% >= 99 over %zu test steps (%zu unseen in train); %zu train examples",
                          em, n, unseen, d.splits.train.size())};
}

// ---- 5, 6, 8, 9: the Blocksworld pipeline ----

struct Stage5 {
  bool trained = false;
  double classifier_seconds = 0;
};

Outcome c5_pipeline(const Context& ctx, Stage5& st) {
  auto cfg = pipeline::load_config(ctx.config_dir / "c5_blocksworld.json");
  pipeline::RunOptions opt;
  opt.out = ctx.work / "c5";
  opt.threads = ctx.threads;
  opt.log = ctx.log();
  pipeline::Pipeline p(cfg, opt);
  const auto t0 = Clock::now();
  std::vector<nlohmann::json> records;
  for (auto s : cfg.stages) {
    const auto ts = Clock::now();
    if (s == pipeline::Stage::eval)
      records = p.evaluate();
    else
      p.run_stage(s);
    if (s == pipeline::Stage::classifier) st.classifier_seconds = seconds_since(ts);
  }
  const double minutes = seconds_since(t0) / 60.0;
  st.trained = true;
  std::map<std::string, double> acc;
  for (const auto& r : records)
    if (r.value("kind", "") == "eval" || r.contains("regime")) acc[r.value("regime", "")] = r.value("accuracy", 0.0);
  const double cot = acc["cot"], cont = acc["continuous"];
  std::string extra;
  if (acc.count("discretized")) extra = fmt("; discretized %.2f%%", acc["discretized"]);
  return {cot >= 90.0 && cont >= 0.8 * cot && minutes <= 45.0,
          fmt("continuous %.2f%% >= 0.8 x CoT %.2f%% = %.2f; CoT >= 90: %s%s; pipeline %.1f min <= 45", cont, cot,
              0.8 * cot, cot >= 90.0 ? "yes" : "no", extra.c_str(), minutes)};
}

pipeline::Pipeline c5_pipeline_handle(const Context& ctx) {
  pipeline::RunOptions opt;
  opt.out = ctx.work / "c5";
  opt.threads = ctx.threads;
  return pipeline::Pipeline(pipeline::load_config(ctx.config_dir / "c5_blocksworld.json"), opt);
}

bool c5_available(const Context& ctx) { return fs::exists(ctx.work / "c5" / "classifier.ckpt"); }

Outcome c6_classifier(const Context& ctx, const Stage5& st) {
  if (!c5_available(ctx)) return {false, "needs the criterion 5 bundle"};
  const auto p = c5_pipeline_handle(ctx);
  const auto b = p.load_bundle(true);
  const auto& d = p.data();
  std::size_t n = 0, right = 0;
  for (const auto& ex : d.splits.test) {
    const auto le = latent::prepare_example(d.vocab, ex, b.input, b.output);
    const auto pred = latent::teacher_forced_predict(b.latent, le.question, le.gold_in);
    for (std::size_t t = 0; t < pred.rows(); ++t, ++n) {
      const bool halt = b.classifier->should_halt(pred.data().subspan(t * pred.cols(), pred.cols()));
      right += halt == corpus::is_answer_step(ex.steps[t]);
    }
  }
  const double acc = n ? 100.0 * double(right) / double(n) : 0.0;
  const bool timed = st.trained;
  const bool in_time = !timed || st.classifier_seconds <= 120.0;
  return {acc >= 97.0 && in_time,
          fmt("held-out accuracy %.2f%% >= 97 over %zu predicted test embeddings; training %s", acc, n,
              timed ? fmt("%.0f s <= 120", st.classifier_seconds).c_str() : "not timed (reused)")};
}

Outcome c8_robustness(const Context& ctx) {
  if (!c5_available(ctx)) return {false, "needs the criterion 5 bundle"};
  const auto p = c5_pipeline_handle(ctx);
  const auto b = p.load_bundle(false);
  const auto test = p.split("test", 100);
  const std::vector<double> sigmas = {0.0, 0.25, 0.5, 1.0};
  const std::vector<infer::Site> sites = {infer::Site::lang_input, infer::Site::lang_output, infer::Site::latent};
  const auto res = diag::robustness_sweep(b.view(p.data().vocab), test, sites, sigmas, {1, 2, 3}, {});
  std::ofstream csv(ctx.work / "c5" / "robustness.csv");
  diag::write_robustness_csv(csv, res);
  std::map<std::pair<double, infer::Site>, double> mean;
  bool zero_ok = true;
  for (const auto& pt : res.points) {
    mean[{pt.sigma, pt.site}] = pt.mean;
    if (pt.sigma == 0.0) {
      const double base = pt.site == infer::Site::latent ? res.baseline_continuous : res.baseline_discretized;
      for (double v : pt.per_seed) zero_ok &= v == base;
    }
  }
  bool directional = true;
  std::string cells;
  for (double s : sigmas) {
    const double li = mean[{s, infer::Site::lang_input}], lo = mean[{s, infer::Site::lang_output}];
    const double la = mean[{s, infer::Site::latent}];
    if (s > 0) directional &= li >= la && lo >= la;
    cells += fmt(" s=%.2f: in %.1f out %.1f latent %.1f;", s, li, lo, la);
  }
  return {directional && zero_ok,
          fmt("3 seeds x %zu examples;%s sigma=0 equals baselines: %s", test.size(), cells.c_str(), zero_ok ? "yes" : "no")};
}

Outcome c9_lens(const Context& ctx) {
  if (!c5_available(ctx)) return {false, "needs the criterion 5 bundle"};
  const auto p = c5_pipeline_handle(ctx);
  const auto b = p.load_bundle(false);
  const auto bundle = b.view(p.data().vocab);
  const std::size_t last = b.latent.core().config().n_layers;
  std::size_t runs = 0, steps = 0, mismatched = 0;
  for (const auto& ex : p.split("test", 100)) {
    const auto rep = diag::sentence_lens(bundle, ex.question, {0, last / 2, last}, p.config().eval.max_steps);
    bool ok = rep.steps.size() == rep.trace.halt_step;
    for (const auto& s : rep.steps) {
      ok &= s.layers.back().layer == last && s.layers.back().text == s.decoded;
      ++steps;
    }
    if (!rep.steps.empty()) ok &= rep.steps.back().decoded == rep.trace.final_text;
    mismatched += !ok;
    ++runs;
  }
  return {runs == 100 && mismatched == 0,
          fmt("%zu/%zu runs (%zu steps) with final-layer lens == decoded step", runs - mismatched, runs, steps)};
}

// ---- 7: inference-contract invariants on untrained models ----

Outcome c7_invariants() {
  nn::TransformerConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 32;
  c.d_ff = 64;
  c.vocab_size = 40;
  c.max_positions = 128;
  const nn::Transformer<float> m(c, 3);
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> tok(8, 39);
  std::vector<int> ids(24);
  for (auto& t : ids) t = tok(rng);
  auto items = [](const std::vector<int>& v) {
    std::vector<nn::InputItem<float>> out;
    for (int id : v) out.push_back(nn::InputItem<float>::token(id));
    return out;
  };
  const auto full = m.forward_mixed(items(ids), {true});
  auto cache = m.make_cache();
  nn::ForwardOptions<float> fo;
  fo.cache = &cache;
  double kv = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto r = m.forward_mixed(items({ids[i]}), fo);
    for (std::size_t k = 0; k < c.d_model; ++k) kv = std::max(kv, double(std::abs(r.hidden.at(0, k) - full.hidden.at(i, k))));
  }
  std::size_t causal_bad = 0;
  for (std::size_t j = 0; j < ids.size(); j += 3) {
    auto alt = ids;
    alt[j] = alt[j] == 8 ? 9 : 8;
    const auto r = m.forward_mixed(items(alt), {true});
    for (std::size_t l = 0; l < full.trace->layers.size(); ++l)
      for (std::size_t i = 0; i < j * c.d_model; ++i) causal_bad += r.trace->layers[l].data()[i] != full.trace->layers[l].data()[i];
  }

  const auto data = corpus::gen_blocksworld(3, 12, 77);
  const auto vocab = corpus::Vocab::build(data);
  auto tcfg = c;
  tcfg.vocab_size = vocab.size();
  const embed::EncDec ed{nn::Transformer<float>(tcfg, 11), embed::EmbeddingType::contextual};
  const latent::LatentModel lat(nn::Transformer<float>(tcfg, 12), 32, 32, 13);
  const infer::Bundle bundle{&vocab, &lat, &ed, &ed, nullptr};
  std::size_t step1_bad = 0, calls_bad = 0, runs = 0;
  for (const auto& ex : data) {
    infer::InferenceOptions o;
    o.max_steps = 4;
    o.mode = infer::InferenceMode::discretized;
    const auto d = infer::run_inference(bundle, ex.question, o);
    o.mode = infer::InferenceMode::continuous;
    const auto ct = infer::run_inference(bundle, ex.question, o);
    step1_bad += d.predicted.at(0) != ct.predicted.at(0);
    for (std::size_t cap : {1u, 3u, 8u}) {
      o.max_steps = cap;
      o.decode_steps = true;
      const auto tr = infer::run_inference(bundle, ex.question, o);
      calls_bad += tr.counters.decoder_calls != tr.counters.halt_checks + 1;
      ++runs;
    }
  }
  return {kv <= 1e-5 && causal_bad == 0 && step1_bad == 0 && calls_bad == 0,
          fmt("KV-cache max diff %.1e <= 1e-5; causality violations %zu; step-1 mismatches %zu/%zu; "
              "decoder_calls != halt_checks+1 in %zu/%zu runs",
              kv, causal_bad, step1_bad, data.size(), calls_bad, runs)};
}

// ---- 10: InfoNCE closed forms ----

Outcome c10_infonce() {
  const std::vector<int> pos = {0};
  const double single =
      embed::info_nce(T64::from({1, 3}, {0.3, -1.2, 2.0}), T64::from({1, 3}, {5.0, 1.0, 0.0}), pos, 0.1).item();
  const double two = embed::info_nce(T64::from({1, 2}, {2.0, 0.0}), T64::from({2, 2}, {1.0, 0.0, 0.0, 3.0}), pos, 1.0).item();
  const double expect = std::log1p(std::exp(-1.0));
  return {single == 0.0 && std::abs(two - expect) <= 1e-6,
          fmt("single candidate %.3g == 0; orthogonal pair %.9f vs ln(1+e^-1) = %.9f (|diff| %.1e <= 1e-6)", single, two,
              expect, std::abs(two - expect))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sentlat acceptance suite"};
  Context ctx;
  std::string work = "acceptance_work";
  std::string config_dir = SENTLAT_CONFIG_DIR;
  std::vector<int> only;
  bool keep = false;
  app.add_option("--work", work, "Directory for trained models (wiped unless --keep)");
  app.add_option("--configs", config_dir, "Directory holding c4_restoration.json and c5_blocksworld.json");
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 10));
  app.add_flag("--keep", keep, "Reuse trained models from a previous run in --work");
  app.add_option("--threads", ctx.threads, "Evaluation threads");
  app.add_flag("-v,--verbose", ctx.verbose, "Stream training logs to stderr");
  CLI11_PARSE(app, argc, argv);
  ctx.work = work;
  ctx.config_dir = config_dir;
  if (!keep) fs::remove_all(ctx.work);
  fs::create_directories(ctx.work);

  std::set<int> want(only.begin(), only.end());
  if (want.empty())
    for (int i = 1; i <= 10; ++i) want.insert(i);

  // Budgets in seconds; 4, 5 and 6 time their own training inside the check.
  const std::map<int, std::pair<std::string, double>> info = {
      {1, {"gradient correctness", 60}},      {2, {"cost-model exactness", 10}},
      {3, {"cost-ratio reproduction", 1}},    {4, {"restoration fidelity", 900}},
      {5, {"latent reasoning end-to-end", 2700}}, {6, {"termination classifier", 0}},
      {7, {"inference-contract invariants", 120}}, {8, {"robustness directionality", 1200}},
      {9, {"SentenceLens consistency", 60}},  {10, {"InfoNCE closed forms", 1}}};

  Stage5 st5;
  int failed = 0;
  for (int id : want) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      switch (id) {
        case 1: o = c1_gradients(); break;
        case 2: o = c2_cost_exactness(); break;
        case 3: o = c3_cost_ratios(); break;
        case 4: o = c4_restoration(ctx); break;
        case 5: o = c5_pipeline(ctx, st5); break;
        case 6: o = c6_classifier(ctx, st5); break;
        case 7: o = c7_invariants(); break;
        case 8: o = c8_robustness(ctx); break;
        case 9: o = c9_lens(ctx); break;
        case 10: o = c10_infonce(); break;
      }
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    const auto& [name, budget] = info.at(id);
    // Criterion 5 checks its own pipeline time; criterion 6 times the classifier stage.
    const bool in_budget = budget == 0 || id == 5 || secs <= budget;
    const bool pass = o.pass && in_budget;
    failed += !pass;
    std::printf("C%-2d %s  %s: %s [%.1f s%s]\n", id, pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs,
                budget == 0 || id == 5 ? "" : fmt(", budget %.0f s", budget).c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(want.size()) - failed, want.size());
  return failed ? 1 : 0;
}
