#include "sentlat/corpus/logic_graph.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace sentlat::corpus {

namespace {

const std::vector<std::string>& people() {
  static const std::vector<std::string> v = {"Tom", "Alex", "Sam", "Max", "Rex", "Wren", "Polly", "Sally", "Fae", "Jack"};
  return v;
}

const std::vector<std::string>& concepts() {
  static const std::vector<std::string> v = {
      "wumpus", "yumpus", "zumpus", "dumpus", "rompus", "numpus", "tumpus", "vumpus", "impus",  "jompus",
      "gorpus", "shumpus", "lempus", "sterpus", "grimpus", "lorpus", "brimpus", "felpus", "hilpus", "quimpus",
      "bompus", "chumpus", "dalpus", "fimpus", "glumpus", "harpus", "kelpus", "mimpus", "nolpus", "parpus",
      "rilpus", "sompus", "tilpus", "wampus", "yelpus", "zorpus", "bampus", "corpus", "delpus", "gempus"};
  return v;
}

std::vector<bool> reachable(const LogicGraphInstance& g, int from) {
  std::vector<bool> seen(g.names.size(), false);
  std::vector<int> stack{from};
  seen[from] = true;
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    for (const auto& [a, b] : g.edges) {
      if (a == u && !seen[b]) {
        seen[b] = true;
        stack.push_back(b);
      }
    }
  }
  return seen;
}

template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> d(0, i - 1);
    std::swap(v[i - 1], v[d(rng)]);
  }
}

}  // namespace

LogicGraphInstance sample_logic_graph(const LogicGraphParams& p, std::mt19937_64& rng) {
  if (p.depth < 2) throw std::invalid_argument("logic graph depth must be at least 2");
  if (p.branching < 1 || p.n_distractors < 0) throw std::invalid_argument("branching must be >= 1, distractors >= 0");
  const std::size_t hops = static_cast<std::size_t>(p.depth - 1);
  const std::size_t needed = hops + hops * static_cast<std::size_t>(p.branching - 1) +
                             static_cast<std::size_t>(p.n_distractors) * hops;
  if (needed > concepts().size()) {
    throw std::invalid_argument("cannot produce a unique gold answer: graph needs " + std::to_string(needed) +
                                " concept names, pool has " + std::to_string(concepts().size()));
  }

  std::vector<std::string> pool = concepts();
  shuffle(pool, rng);
  std::uniform_int_distribution<std::size_t> pick_person(0, people().size() - 1);

  LogicGraphInstance g;
  g.names.push_back(people()[pick_person(rng)]);
  g.root = 0;
  std::size_t next_name = 0;
  auto fresh = [&] {
    g.names.push_back(pool[next_name++]);
    return static_cast<int>(g.names.size() - 1);
  };

  g.gold_path.push_back(g.root);
  for (std::size_t k = 0; k < hops; ++k) {
    const int c = fresh();
    g.edges.emplace_back(g.gold_path.back(), c);
    g.gold_path.push_back(c);
  }
  g.target = g.gold_path.back();
  // Side branches hang off every non-final gold node and lead nowhere.
  for (std::size_t k = 0; k + 1 < g.gold_path.size(); ++k) {
    for (int b = 1; b < p.branching; ++b) g.edges.emplace_back(g.gold_path[k], fresh());
  }
  std::bernoulli_distribution cross(0.5);
  std::uniform_int_distribution<std::size_t> pick_gold(1, hops);
  for (int d = 0; d < p.n_distractors; ++d) {
    int prev = fresh();
    // Edges into the gold chain keep the distractors unreachable from the root.
    if (cross(rng)) g.edges.emplace_back(prev, g.gold_path[pick_gold(rng)]);
    for (std::size_t k = 1; k < hops; ++k) {
      const int c = fresh();
      g.edges.emplace_back(prev, c);
      prev = c;
    }
    g.distractor_leaves.push_back(prev);
  }
  if (!g.distractor_leaves.empty()) g.option = g.distractor_leaves.front();

  const auto seen = reachable(g, g.root);
  if (!seen[g.target]) throw std::logic_error("logic graph target unreachable (internal error)");
  for (int leaf : g.distractor_leaves) {
    if (seen[leaf]) throw std::invalid_argument("cannot produce a unique gold answer: distractor reachable");
  }
  return g;
}

ReasoningExample logic_graph_example(const LogicGraphInstance& g, std::mt19937_64& rng) {
  std::vector<std::string> facts;
  for (const auto& [a, b] : g.edges) {
    if (a == g.root) {
      facts.push_back(g.names[a] + " is a " + g.names[b] + ".");
    } else {
      facts.push_back("Every " + g.names[a] + " is a " + g.names[b] + ".");
    }
  }
  shuffle(facts, rng);
  ReasoningExample ex;
  for (const auto& f : facts) ex.question += f + " ";
  const std::string& who = g.names[g.root];
  if (g.option >= 0) {
    std::string x = g.names[g.target], y = g.names[g.option];
    if (std::bernoulli_distribution(0.5)(rng)) std::swap(x, y);
    ex.question += "Is " + who + " a " + x + " or a " + y + "?";
  } else {
    ex.question += "What is " + who + "?";
  }
  for (std::size_t k = 1; k < g.gold_path.size(); ++k) {
    ex.steps.push_back(who + " is a " + g.names[g.gold_path[k]] + ".");
  }
  ex.answer = g.names[g.target];
  ex.steps.push_back(std::string(kAnswerMarker) + " " + ex.answer);
  return ex;
}

std::vector<ReasoningExample> gen_logic_graph(const LogicGraphParams& params, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw std::invalid_argument("count must be at least 1");
  std::mt19937_64 rng(seed);
  std::vector<ReasoningExample> out;
  std::unordered_set<std::string> seen;
  std::size_t attempts = 0;
  while (out.size() < count) {
    if (++attempts > 20 * count + 1000) throw std::runtime_error("logic graph generator could not find enough distinct instances");
    auto g = sample_logic_graph(params, rng);
    auto ex = logic_graph_example(g, rng);
    if (seen.insert(ex.question).second) out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace sentlat::corpus
