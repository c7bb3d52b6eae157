#include <gtest/gtest.h>

#include <algorithm>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "sentlat/corpus/blocksworld.hpp"
#include "sentlat/corpus/example.hpp"
#include "sentlat/corpus/logic_graph.hpp"
#include "sentlat/corpus/serialize.hpp"
#include "sentlat/corpus/vocab.hpp"

using namespace sentlat::corpus;

namespace {

// ---- Independent Blocksworld oracle: a block -> support map parsed from text.

using World = std::map<std::string, std::string>;  // block -> "table" | "hand" | block below

World parse_world(const std::string& text) {
  World w;
  std::stringstream ss(text);
  std::string clause;
  while (std::getline(ss, clause, ',')) {
    std::stringstream cs(clause);
    std::string a, on, b;
    cs >> a;
    if (a == "holding") {
      cs >> b;
      w[b] = "hand";
      continue;
    }
    cs >> on >> b;
    w[a] = b;
  }
  return w;
}

std::pair<World, World> parse_question(const std::string& q) {
  const auto g = q.find(". goal: ");
  const std::string init = q.substr(std::string("init: ").size(), g - std::string("init: ").size());
  std::string goal = q.substr(g + std::string(". goal: ").size());
  goal.pop_back();  // trailing '.'
  return {parse_world(init), parse_world(goal)};
}

bool is_clear(const World& w, const std::string& x) {
  for (const auto& [b, s] : w)
    if (s == x) return false;
  return true;
}

bool hand_empty(const World& w) {
  for (const auto& [b, s] : w)
    if (s == "hand") return false;
  return true;
}

// Applies an action sentence; returns false if it is illegal.
bool simulate(World& w, const std::string& sentence) {
  std::stringstream ss(sentence);
  std::string verb, x, prep, y;
  ss >> verb >> x;
  if (!x.empty() && x.back() == '.') x.pop_back();
  ss >> prep >> y;
  if (!y.empty() && y.back() == '.') y.pop_back();
  if (!w.count(x)) return false;
  if (verb == "pickup") {
    if (!hand_empty(w) || w[x] != "table" || !is_clear(w, x)) return false;
    w[x] = "hand";
  } else if (verb == "putdown") {
    if (w[x] != "hand") return false;
    w[x] = "table";
  } else if (verb == "unstack") {
    if (prep != "from" || !hand_empty(w) || w[x] != y || !is_clear(w, x)) return false;
    w[x] = "hand";
  } else if (verb == "stack") {
    if (prep != "on" || w[x] != "hand" || !w.count(y) || w[y] == "hand" || !is_clear(w, y)) return false;
    w[x] = y;
  } else {
    return false;
  }
  return true;
}

std::vector<World> neighbours(const World& w) {
  std::vector<World> out;
  std::vector<std::string> blocks;
  for (const auto& [b, s] : w) blocks.push_back(b);
  for (const auto& x : blocks) {
    for (const std::string& verb : {"pickup", "putdown"}) {
      World n = w;
      if (simulate(n, verb + " " + x + ".")) out.push_back(n);
    }
    for (const auto& y : blocks) {
      for (const std::string& s : {"unstack " + x + " from " + y + ".", "stack " + x + " on " + y + "."}) {
        World n = w;
        if (simulate(n, s)) out.push_back(n);
      }
    }
  }
  return out;
}

std::size_t oracle_shortest(const World& a, const World& b) {
  std::map<World, std::size_t> dist{{a, 0}};
  std::deque<World> q{a};
  while (!q.empty()) {
    World cur = q.front();
    q.pop_front();
    if (cur == b) return dist[cur];
    for (auto& n : neighbours(cur)) {
      if (dist.emplace(n, dist[cur] + 1).second) q.push_back(n);
    }
  }
  return SIZE_MAX;
}

// Lah-number count of hand-empty arrangements: sum_k C(n-1,k-1) n!/k!.
std::uint64_t arrangements(int n) {
  auto fact = [](int k) {
    std::uint64_t f = 1;
    for (int i = 2; i <= k; ++i) f *= static_cast<std::uint64_t>(i);
    return f;
  };
  auto choose = [&](int a, int b) { return fact(a) / (fact(b) * fact(a - b)); };
  std::uint64_t total = 0;
  for (int k = 1; k <= n; ++k) total += choose(n - 1, k - 1) * fact(n) / fact(k);
  return total;
}

ReasoningExample make_example(int i) {
  ReasoningExample ex;
  ex.question = "question number " + std::to_string(i) + "?";
  ex.steps = {"step one " + std::to_string(i) + ".", "### " + std::to_string(i % 7)};
  ex.answer = std::to_string(i % 7);
  return ex;
}

}  // namespace

TEST(Example, ValidateRejectsMissingMarkerAndEmptySteps) {
  ReasoningExample ex{"q", {"a."}, "a"};
  EXPECT_THROW(ex.validate(), std::invalid_argument);
  ex.steps = {"  ", "### a"};
  EXPECT_THROW(ex.validate(), std::invalid_argument);
  ex.steps = {};
  EXPECT_THROW(ex.validate(), std::invalid_argument);
  ex.steps = {"### a"};
  EXPECT_NO_THROW(ex.validate());
}

TEST(Example, AnswerExtraction) {
  EXPECT_EQ(answer_from_step("### C"), "C");
  EXPECT_EQ(answer_from_step("###   42 "), "42");
  EXPECT_EQ(answer_from_step("pickup A."), "");
  EXPECT_EQ(normalize_answer("  Yumpus  ", true), "yumpus");
}

TEST(Tokenizer, PickupRoundTrip) {
  Vocab v = Vocab::build({ReasoningExample{"q", {"pickup A", "### 1"}, "1"}});
  const auto ids = v.encode("pickup A");
  ASSERT_EQ(ids.size(), 2u);
  EXPECT_EQ(v.decode(ids), "pickup A");
}

TEST(Tokenizer, AnswerMarkerIsOneReservedToken) {
  Vocab v = Vocab::build({ReasoningExample{"q", {"### C"}, "C"}});
  const auto ids = v.encode("### C");
  ASSERT_EQ(ids.size(), 2u);
  EXPECT_EQ(ids[0], kAnswer);
  EXPECT_EQ(v.token(ids[1]), "C");
}

TEST(Tokenizer, PunctuationSplitAndNormalizedRoundTrip) {
  EXPECT_EQ(split_words("unstack A from B."), (std::vector<std::string>{"unstack", "A", "from", "B", "."}));
  EXPECT_EQ(normalize_text("init:  A on B ,B on table."), "init: A on B, B on table.");
  const auto examples = gen_blocksworld(3, 50, 1);
  Vocab v = Vocab::build(examples);
  for (const auto& ex : examples) {
    EXPECT_EQ(v.decode(v.encode(ex.question)), normalize_text(ex.question));
    for (const auto& s : ex.steps) EXPECT_EQ(v.decode(v.encode(s)), s);
  }
  EXPECT_EQ(v.unknown_count(), 0u);
}

TEST(Vocab, SpecialsHaveFixedIdsAndBuildIsOrderInsensitive) {
  std::vector<ReasoningExample> xs;
  for (int i = 0; i < 20; ++i) xs.push_back(make_example(i));
  Vocab a = Vocab::build(xs);
  std::reverse(xs.begin(), xs.end());
  Vocab b = Vocab::build(xs);
  EXPECT_EQ(a.tokens(), b.tokens());
  EXPECT_EQ(a.token(kPad), "<pad>");
  EXPECT_EQ(a.token(kEnc), "<enc>");
  EXPECT_EQ(a.token(kAnswer), "###");
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.id(a.token(static_cast<int>(i))), static_cast<int>(i));
}

TEST(Vocab, UnknownMapsToUnkAndCounts) {
  Vocab v = Vocab::build({make_example(1)});
  EXPECT_EQ(v.unknown_count(), 0u);
  const auto ids = v.encode("zebra question");
  EXPECT_EQ(ids[0], kUnk);
  EXPECT_EQ(v.unknown_count(), 1u);
}

TEST(Serialize, CotAndNoCotLayouts) {
  Vocab v = Vocab::build({ReasoningExample{"Q x?", {"a b.", "### c"}, "c"}});
  ReasoningExample ex{"Q x?", {"a b.", "### c"}, "c"};
  const auto cot = serialize_lm(v, ex, LmFormat::cot);
  // Q x ? <sep> a b . <sep> ### c <eos>
  ASSERT_EQ(cot.ids.size(), 11u);
  EXPECT_EQ(cot.ids[3], kSep);
  EXPECT_EQ(cot.ids[7], kSep);
  EXPECT_EQ(cot.ids[8], kAnswer);
  EXPECT_EQ(cot.ids.back(), kEos);
  EXPECT_EQ(cot.targets, (std::vector<std::uint8_t>{0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1}));
  const auto nocot = serialize_lm(v, ex, LmFormat::nocot);
  ASSERT_EQ(nocot.ids.size(), 7u);
  EXPECT_EQ(nocot.targets, (std::vector<std::uint8_t>{0, 0, 0, 0, 1, 1, 1}));
  EXPECT_EQ(answer_tokens(cot.ids).value(), std::vector<int>{v.id("c")});
  EXPECT_FALSE(answer_tokens(std::vector<int>{4, 5}).has_value());
}

TEST(Blocksworld, IdenticalStatesNeedNoPlan) {
  BlocksworldState s{{{"A", "B"}, {"C"}}, std::nullopt};
  EXPECT_TRUE(solve_blocksworld(s, s).empty());
}

TEST(Blocksworld, TwoBlockSwap) {
  BlocksworldState init{{{"B", "A"}}, std::nullopt};  // A on B
  BlocksworldState goal{{{"A", "B"}}, std::nullopt};  // B on A
  const auto plan = solve_blocksworld(init, goal);
  std::vector<std::string> sentences;
  for (const auto& a : plan) sentences.push_back(a.sentence());
  EXPECT_EQ(sentences, (std::vector<std::string>{"unstack A from B.", "putdown A.", "pickup B.", "stack B on A."}));
}

TEST(Blocksworld, DifferentBlockSetsRejected) {
  BlocksworldState a{{{"A"}}, std::nullopt}, b{{{"B"}}, std::nullopt};
  EXPECT_THROW(solve_blocksworld(a, b), std::invalid_argument);
  BlocksworldState dup{{{"A", "A"}}, std::nullopt};
  EXPECT_THROW(dup.validate(), std::invalid_argument);
}

TEST(Blocksworld, StateCountsMatchLahSums) {
  const std::vector<std::string> names = {"A", "B", "C", "D", "E"};
  for (int n = 2; n <= 5; ++n) {
    const auto states = enumerate_states(std::span<const std::string>(names.data(), static_cast<std::size_t>(n)));
    EXPECT_EQ(states.size(), arrangements(n)) << n;
    const auto with_hand =
        enumerate_states(std::span<const std::string>(names.data(), static_cast<std::size_t>(n)), true);
    EXPECT_EQ(with_hand.size(), arrangements(n) + static_cast<std::uint64_t>(n) * arrangements(n - 1)) << n;
  }
}

TEST(Blocksworld, PairBudgetEnforced) {
  BlocksworldOptions fixed{2};
  // 3 states over two fixed names, ordered pairs with initial != goal.
  EXPECT_EQ(blocksworld_pair_budget(2, fixed), 6u);
  EXPECT_LE(blocksworld_pair_budget(2, fixed), arrangements(2) * arrangements(2));
  const auto all = gen_blocksworld(2, 6, 3, fixed);
  std::set<std::string> qs;
  for (const auto& ex : all) qs.insert(ex.question);
  EXPECT_EQ(qs.size(), 6u);
  EXPECT_THROW(gen_blocksworld(2, 7, 3, fixed), std::invalid_argument);
  EXPECT_THROW(gen_blocksworld(8, 1, 3), std::invalid_argument);
  EXPECT_THROW(gen_blocksworld(1, 1, 3), std::invalid_argument);
}

TEST(Blocksworld, GeneratedPlansValidateAndAreShortest) {
  for (int n : {3, 4}) {
    const auto examples = gen_blocksworld(n, 150, 42 + static_cast<std::uint64_t>(n));
    for (const auto& ex : examples) {
      ASSERT_NO_THROW(ex.validate());
      auto [init, goal] = parse_question(ex.question);
      ASSERT_EQ(init.size(), static_cast<std::size_t>(n));
      World w = init;
      for (std::size_t i = 0; i + 1 < ex.steps.size(); ++i) {
        ASSERT_TRUE(simulate(w, ex.steps[i])) << ex.question << " | " << ex.steps[i];
      }
      EXPECT_EQ(w, goal) << ex.question;
      const std::size_t plan_len = ex.steps.size() - 1;
      EXPECT_EQ(ex.answer, std::to_string(plan_len));
      EXPECT_EQ(ex.steps.back(), "### " + ex.answer);
      EXPECT_EQ(oracle_shortest(init, goal), plan_len) << ex.question;
    }
  }
}

TEST(Blocksworld, RegenerationIsByteIdentical) {
  EXPECT_EQ(gen_blocksworld(4, 200, 9), gen_blocksworld(4, 200, 9));
  EXPECT_NE(gen_blocksworld(4, 200, 9), gen_blocksworld(4, 200, 10));
}

TEST(Blocksworld, SevenBlockAverageSteps) {
  // Every optimal plan alternates grasp and place, so it is a sequence of
  // moves. Counting one step per move plus the answer step gives the
  // granularity the published per-sample statistic (about 9) uses.
  const auto examples = gen_blocksworld(7, 200, 7);
  double actions = 0;
  for (const auto& ex : examples) {
    const std::size_t n = ex.steps.size() - 1;
    ASSERT_EQ(n % 2, 0u) << ex.question;
    actions += static_cast<double>(n);
  }
  const double avg_actions = actions / static_cast<double>(examples.size());
  const double avg_move_steps = avg_actions / 2.0 + 1.0;
  std::printf("7-block: %.2f actions/sample, %.2f move steps/sample (answer step included)\n", avg_actions,
              avg_move_steps);
  EXPECT_GT(avg_move_steps, 8.0);
  EXPECT_LT(avg_move_steps, 10.0);
}

namespace {

struct ParsedGraph {
  std::map<std::string, std::vector<std::string>> edges;
  std::string who;
  std::vector<std::string> options;
};

ParsedGraph parse_graph(const std::string& q) {
  ParsedGraph g;
  std::stringstream ss(q);
  std::string sentence;
  while (std::getline(ss, sentence, '.')) {
    std::stringstream ws(sentence);
    std::vector<std::string> w;
    for (std::string t; ws >> t;) w.push_back(t);
    if (w.empty()) continue;
    if (w[0] == "Every") {
      g.edges[w[1]].push_back(w[4]);
    } else if (w.size() == 4 && w[1] == "is") {
      g.edges[w[0]].push_back(w[3]);
    }
  }
  const auto qpos = q.rfind("Is ");
  if (qpos != std::string::npos) {
    std::stringstream qs(q.substr(qpos));
    std::vector<std::string> w;
    for (std::string t; qs >> t;) w.push_back(t);
    // Is <who> a <x> or a <y>?
    g.who = w[1];
    g.options = {w[3], w[6].substr(0, w[6].size() - 1)};
  }
  return g;
}

std::set<std::string> reach(const ParsedGraph& g, const std::string& from) {
  std::set<std::string> seen{from};
  std::vector<std::string> stack{from};
  while (!stack.empty()) {
    auto u = stack.back();
    stack.pop_back();
    auto it = g.edges.find(u);
    if (it == g.edges.end()) continue;
    for (const auto& v : it->second)
      if (seen.insert(v).second) stack.push_back(v);
  }
  return seen;
}

}  // namespace

TEST(LogicGraph, OneHopWithoutDistractors) {
  const auto xs = gen_logic_graph({2, 1, 0}, 5, 1);
  for (const auto& ex : xs) {
    ASSERT_EQ(ex.steps.size(), 2u);
    EXPECT_EQ(ex.steps.back(), "### " + ex.answer);
  }
}

TEST(LogicGraph, GoldPathReachableAndAnswerUnique) {
  for (LogicGraphParams p : {LogicGraphParams{3, 2, 2}, LogicGraphParams{4, 2, 4}, LogicGraphParams{4, 3, 3}}) {
    const auto xs = gen_logic_graph(p, 100, 5);
    for (const auto& ex : xs) {
      ASSERT_NO_THROW(ex.validate());
      const auto g = parse_graph(ex.question);
      ASSERT_EQ(g.options.size(), 2u);
      const auto seen = reach(g, g.who);
      EXPECT_TRUE(seen.count(ex.answer)) << ex.question;
      const std::string other = g.options[0] == ex.answer ? g.options[1] : g.options[0];
      EXPECT_TRUE(g.options[0] == ex.answer || g.options[1] == ex.answer);
      EXPECT_FALSE(seen.count(other)) << ex.question;
      // Each hop step names a concept one edge further along the chain.
      std::string prev = g.who;
      ASSERT_EQ(ex.steps.size(), static_cast<std::size_t>(p.depth));
      for (std::size_t i = 0; i + 1 < ex.steps.size(); ++i) {
        std::stringstream ws(ex.steps[i]);
        std::string who, is, a, c;
        ws >> who >> is >> a >> c;
        c.pop_back();
        EXPECT_EQ(who, g.who);
        const auto& out = g.edges.at(prev);
        EXPECT_NE(std::find(out.begin(), out.end(), c), out.end()) << ex.steps[i];
        prev = c;
      }
      EXPECT_EQ(prev, ex.answer);
    }
  }
}

TEST(LogicGraph, InvalidParameters) {
  EXPECT_THROW(gen_logic_graph({1, 1, 0}, 1, 0), std::invalid_argument);
  EXPECT_THROW(gen_logic_graph({6, 2, 30}, 1, 0), std::invalid_argument);
}

TEST(LogicGraph, Deterministic) { EXPECT_EQ(gen_logic_graph({3, 2, 2}, 50, 4), gen_logic_graph({3, 2, 2}, 50, 4)); }

TEST(Split, DisjointOnKeyAndDeterministic) {
  auto xs = gen_blocksworld(4, 2000, 11);
  // Duplicate some records so equal keys exist.
  for (int i = 0; i < 100; ++i) xs.push_back(xs[static_cast<std::size_t>(i) * 7]);
  const auto s = split_dataset(xs, {0.8, 0.1, 0.1});
  std::set<std::string> train, valid, test;
  for (const auto& e : s.train) train.insert(e.question);
  for (const auto& e : s.valid) valid.insert(e.question);
  for (const auto& e : s.test) test.insert(e.question);
  for (const auto& k : valid) EXPECT_FALSE(train.count(k));
  for (const auto& k : test) {
    EXPECT_FALSE(train.count(k));
    EXPECT_FALSE(valid.count(k));
  }
  const auto again = split_dataset(xs, {0.8, 0.1, 0.1});
  EXPECT_EQ(split_fingerprint(s.test), split_fingerprint(again.test));
  EXPECT_EQ(s.train.size() + s.valid.size() + s.test.size(), xs.size());
}

TEST(Split, SizesNearTargets) {
  std::vector<ReasoningExample> xs;
  for (int i = 0; i < 1000; ++i) xs.push_back(make_example(i));
  const auto s = split_dataset(xs, {0.8, 0.1, 0.1});
  EXPECT_NEAR(static_cast<double>(s.train.size()) / 1000.0, 0.8, 0.02);
  EXPECT_NEAR(static_cast<double>(s.valid.size()) / 1000.0, 0.1, 0.02);
  EXPECT_NEAR(static_cast<double>(s.test.size()) / 1000.0, 0.1, 0.02);
}

TEST(Split, Errors) {
  std::vector<ReasoningExample> xs = {make_example(1)};
  EXPECT_THROW(split_dataset(xs, {0.5, 0.1, 0.1}), std::invalid_argument);
  EXPECT_THROW(split_dataset(xs, {0.4, 0.3, 0.3}), std::invalid_argument);  // two splits end up empty
}

TEST(Jsonl, RoundTripWithUnicode) {
  std::vector<ReasoningExample> xs;
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    auto ex = make_example(static_cast<int>(rng() % 1000));
    if (i % 10 == 0) ex.question += " caf\xc3\xa9 \xe2\x88\x80x \"quoted\"";
    xs.push_back(ex);
  }
  const auto path = std::filesystem::temp_directory_path() / "sentlat_roundtrip.jsonl";
  write_jsonl(path, xs);
  EXPECT_EQ(read_jsonl(path), xs);
  std::filesystem::remove(path);
}

TEST(Jsonl, MissingFieldNamedWithLine) {
  const auto path = std::filesystem::temp_directory_path() / "sentlat_bad.jsonl";
  {
    std::ofstream out(path);
    out << R"({"question":"q","steps":["### a"],"answer":"a"})" << "\n";
    out << R"({"question":"q","answer":"a"})" << "\n";
  }
  try {
    read_jsonl(path);
    FAIL() << "expected an error";
  } catch (const CorpusFormatError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("\"steps\""), std::string::npos);
  }
  {
    std::ofstream out(path);
    out << "{not json\n";
  }
  EXPECT_THROW(read_jsonl(path), CorpusFormatError);
  std::filesystem::remove(path);
}
