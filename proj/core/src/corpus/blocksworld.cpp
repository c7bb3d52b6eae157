#include "sentlat/corpus/blocksworld.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace sentlat::corpus {

namespace {

constexpr int kMaxBlocks = 7;
constexpr int kTable = -1;
constexpr int kHeld = -2;

// on[i] is the block under i, kTable, or kHeld. Packed 4 bits per block.
struct Compact {
  int n = 0;
  std::array<int, kMaxBlocks> on{};

  std::uint32_t code() const {
    std::uint32_t c = 0;
    for (int i = 0; i < n; ++i) c |= static_cast<std::uint32_t>(on[i] + 2) << (4 * i);
    return c;
  }
  static Compact decode(std::uint32_t c, int n) {
    Compact s;
    s.n = n;
    for (int i = 0; i < n; ++i) s.on[i] = static_cast<int>((c >> (4 * i)) & 0xF) - 2;
    return s;
  }
  int held() const {
    for (int i = 0; i < n; ++i)
      if (on[i] == kHeld) return i;
    return -1;
  }
  bool clear(int x) const {
    if (on[x] == kHeld) return false;
    for (int z = 0; z < n; ++z)
      if (on[z] == x) return false;
    return true;
  }
};

struct CompactAction {
  BlocksAction::Kind kind;
  int block;
  int target;
};

template <typename F>
void for_each_successor(const Compact& s, F&& f) {
  const int h = s.held();
  if (h >= 0) {
    Compact t = s;
    t.on[h] = kTable;
    f(t, CompactAction{BlocksAction::Kind::putdown, h, -1});
    for (int y = 0; y < s.n; ++y) {
      if (y == h || !s.clear(y)) continue;
      Compact u = s;
      u.on[h] = y;
      f(u, CompactAction{BlocksAction::Kind::stack, h, y});
    }
    return;
  }
  for (int x = 0; x < s.n; ++x) {
    if (!s.clear(x)) continue;
    Compact t = s;
    t.on[x] = kHeld;
    if (s.on[x] == kTable) {
      f(t, CompactAction{BlocksAction::Kind::pickup, x, -1});
    } else {
      f(t, CompactAction{BlocksAction::Kind::unstack, x, s.on[x]});
    }
  }
}

Compact to_compact(const BlocksworldState& s, const std::vector<std::string>& names) {
  Compact c;
  c.n = static_cast<int>(names.size());
  auto idx = [&](const std::string& b) {
    return static_cast<int>(std::lower_bound(names.begin(), names.end(), b) - names.begin());
  };
  for (const auto& st : s.stacks) {
    for (std::size_t k = 0; k < st.size(); ++k) c.on[idx(st[k])] = k == 0 ? kTable : idx(st[k - 1]);
  }
  if (s.holding) c.on[idx(*s.holding)] = kHeld;
  return c;
}

BlocksworldState to_public(const Compact& c, const std::vector<std::string>& names) {
  BlocksworldState s;
  std::array<int, kMaxBlocks> above;
  above.fill(-1);
  for (int i = 0; i < c.n; ++i)
    if (c.on[i] >= 0) above[c.on[i]] = i;
  for (int i = 0; i < c.n; ++i) {
    if (c.on[i] == kHeld) s.holding = names[i];
    if (c.on[i] != kTable) continue;
    std::vector<std::string> st;
    for (int b = i; b >= 0; b = above[b]) st.push_back(names[b]);
    s.stacks.push_back(std::move(st));
  }
  return s;
}

BlocksAction to_action(const CompactAction& a, const std::vector<std::string>& names) {
  BlocksAction out;
  out.kind = a.kind;
  out.block = names[a.block];
  if (a.target >= 0) out.target = names[a.target];
  return out;
}

std::vector<CompactAction> bfs(const Compact& init, const Compact& goal) {
  const std::uint32_t start = init.code(), target = goal.code();
  if (start == target) return {};
  struct Prev {
    std::uint32_t from;
    CompactAction act;
  };
  std::unordered_map<std::uint32_t, Prev> prev;
  prev.reserve(1 << 12);
  prev.emplace(start, Prev{start, {}});
  std::deque<std::uint32_t> queue{start};
  while (!queue.empty()) {
    const std::uint32_t cur = queue.front();
    queue.pop_front();
    bool found = false;
    for_each_successor(Compact::decode(cur, init.n), [&](const Compact& next, const CompactAction& a) {
      if (found) return;
      const std::uint32_t code = next.code();
      if (!prev.emplace(code, Prev{cur, a}).second) return;
      if (code == target) found = true;
      queue.push_back(code);
    });
    if (found) {
      std::vector<CompactAction> plan;
      for (std::uint32_t c = target; c != start; c = prev.at(c).from) plan.push_back(prev.at(c).act);
      std::reverse(plan.begin(), plan.end());
      return plan;
    }
  }
  throw std::logic_error("blocksworld goal unreachable (internal error)");
}

// All reachable codes for n blocks, sorted.
std::vector<std::uint32_t> all_codes(int n, bool include_holding) {
  Compact start;
  start.n = n;
  for (int i = 0; i < n; ++i) start.on[i] = kTable;
  std::unordered_set<std::uint32_t> seen{start.code()};
  std::deque<std::uint32_t> queue{start.code()};
  while (!queue.empty()) {
    const std::uint32_t cur = queue.front();
    queue.pop_front();
    for_each_successor(Compact::decode(cur, n), [&](const Compact& next, const CompactAction&) {
      if (seen.insert(next.code()).second) queue.push_back(next.code());
    });
  }
  std::vector<std::uint32_t> out;
  for (std::uint32_t c : seen) {
    if (include_holding || Compact::decode(c, n).held() < 0) out.push_back(c);
  }
  std::sort(out.begin(), out.end());
  return out;
}

const std::vector<std::uint32_t>& hand_empty_codes(int n) {
  static std::map<int, std::vector<std::uint32_t>> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, all_codes(n, false)).first;
  return it->second;
}

std::uint64_t choose(int n, int k) {
  std::uint64_t r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
  return r;
}

void check_block_count(int n_blocks) {
  if (n_blocks < 2 || n_blocks > kMaxBlocks) {
    throw std::invalid_argument("n_blocks must be in [2, 7], got " + std::to_string(n_blocks));
  }
}

}  // namespace

void BlocksworldState::validate() const {
  std::set<std::string> seen;
  for (const auto& st : stacks) {
    if (st.empty()) throw std::invalid_argument("blocksworld state has an empty stack");
    for (const auto& b : st) {
      if (!seen.insert(b).second) throw std::invalid_argument("block '" + b + "' appears twice");
    }
  }
  if (holding && !seen.insert(*holding).second) {
    throw std::invalid_argument("block '" + *holding + "' appears twice");
  }
  if (seen.size() > static_cast<std::size_t>(kMaxBlocks)) throw std::invalid_argument("at most 7 blocks supported");
}

std::vector<std::string> BlocksworldState::blocks() const {
  std::vector<std::string> out;
  for (const auto& st : stacks) out.insert(out.end(), st.begin(), st.end());
  if (holding) out.push_back(*holding);
  std::sort(out.begin(), out.end());
  return out;
}

BlocksworldState BlocksworldState::canonical() const {
  BlocksworldState c = *this;
  std::sort(c.stacks.begin(), c.stacks.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return c;
}

bool BlocksworldState::operator==(const BlocksworldState& other) const {
  const auto a = canonical(), b = other.canonical();
  return a.stacks == b.stacks && a.holding == b.holding;
}

std::string BlocksworldState::describe() const {
  std::map<std::string, std::string> under;
  for (const auto& st : stacks) {
    for (std::size_t k = 0; k < st.size(); ++k) under[st[k]] = k == 0 ? "table" : st[k - 1];
  }
  std::string out;
  for (const auto& [b, u] : under) {
    if (!out.empty()) out += ", ";
    out += b + " on " + u;
  }
  if (holding) out += (out.empty() ? "" : ", ") + std::string("holding ") + *holding;
  return out;
}

std::string BlocksAction::sentence() const {
  switch (kind) {
    case Kind::pickup: return "pickup " + block + ".";
    case Kind::putdown: return "putdown " + block + ".";
    case Kind::unstack: return "unstack " + block + " from " + target + ".";
    case Kind::stack: return "stack " + block + " on " + target + ".";
  }
  return {};
}

BlocksworldState apply_action(const BlocksworldState& state, const BlocksAction& action) {
  state.validate();
  const auto names = state.blocks();
  if (!std::binary_search(names.begin(), names.end(), action.block)) {
    throw std::logic_error("unknown block '" + action.block + "'");
  }
  Compact c = to_compact(state, names);
  const int x = static_cast<int>(std::lower_bound(names.begin(), names.end(), action.block) - names.begin());
  int y = -1;
  if (action.kind == BlocksAction::Kind::unstack || action.kind == BlocksAction::Kind::stack) {
    if (!std::binary_search(names.begin(), names.end(), action.target) || action.target == action.block) {
      throw std::logic_error("bad target '" + action.target + "'");
    }
    y = static_cast<int>(std::lower_bound(names.begin(), names.end(), action.target) - names.begin());
  }
  const bool hand_empty = c.held() < 0;
  switch (action.kind) {
    case BlocksAction::Kind::pickup:
      if (!hand_empty || c.on[x] != kTable || !c.clear(x)) throw std::logic_error("illegal " + action.sentence());
      c.on[x] = kHeld;
      break;
    case BlocksAction::Kind::unstack:
      if (!hand_empty || c.on[x] != y || !c.clear(x)) throw std::logic_error("illegal " + action.sentence());
      c.on[x] = kHeld;
      break;
    case BlocksAction::Kind::putdown:
      if (c.on[x] != kHeld) throw std::logic_error("illegal " + action.sentence());
      c.on[x] = kTable;
      break;
    case BlocksAction::Kind::stack:
      if (c.on[x] != kHeld || !c.clear(y)) throw std::logic_error("illegal " + action.sentence());
      c.on[x] = y;
      break;
  }
  return to_public(c, names);
}

std::vector<BlocksAction> solve_blocksworld(const BlocksworldState& initial, const BlocksworldState& goal) {
  initial.validate();
  goal.validate();
  const auto names = initial.blocks();
  if (names != goal.blocks()) throw std::invalid_argument("initial and goal use different blocks");
  if (names.empty()) return {};
  const auto plan = bfs(to_compact(initial, names), to_compact(goal, names));
  std::vector<BlocksAction> out;
  out.reserve(plan.size());
  for (const auto& a : plan) out.push_back(to_action(a, names));
  return out;
}

std::vector<BlocksworldState> enumerate_states(std::span<const std::string> names_in, bool include_holding) {
  std::vector<std::string> names(names_in.begin(), names_in.end());
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end()) {
    throw std::invalid_argument("duplicate block names");
  }
  check_block_count(static_cast<int>(names.size()));
  std::vector<BlocksworldState> out;
  for (std::uint32_t c : all_codes(static_cast<int>(names.size()), include_holding)) {
    out.push_back(to_public(Compact::decode(c, static_cast<int>(names.size())), names));
  }
  return out;
}

std::uint64_t blocksworld_pair_budget(int n_blocks, BlocksworldOptions options) {
  check_block_count(n_blocks);
  const int pool = std::max(options.name_pool, n_blocks);
  const std::uint64_t s = hand_empty_codes(n_blocks).size();
  return choose(pool, n_blocks) * s * (s - 1);
}

std::string blocksworld_question(const BlocksworldState& initial, const BlocksworldState& goal) {
  return "init: " + initial.describe() + ". goal: " + goal.describe() + ".";
}

std::vector<ReasoningExample> gen_blocksworld(int n_blocks, std::size_t count, std::uint64_t seed,
                                              BlocksworldOptions options) {
  check_block_count(n_blocks);
  if (count == 0) throw std::invalid_argument("count must be at least 1");
  if (options.name_pool > 26) throw std::invalid_argument("name pool larger than the alphabet");
  const std::uint64_t budget = blocksworld_pair_budget(n_blocks, options);
  if (count > budget) {
    throw std::invalid_argument("requested " + std::to_string(count) + " examples but only " +
                                std::to_string(budget) + " distinct (initial, goal) pairs exist");
  }
  const int pool = std::max(options.name_pool, n_blocks);
  std::vector<std::string> letters;
  for (int i = 0; i < pool; ++i) letters.emplace_back(1, static_cast<char>('A' + i));

  const auto& codes = hand_empty_codes(n_blocks);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_state(0, codes.size() - 1);

  std::vector<ReasoningExample> out;
  out.reserve(count);
  std::unordered_set<std::string> seen;
  while (out.size() < count) {
    std::vector<std::string> names = letters;
    for (int i = 0; i < n_blocks; ++i) {
      std::uniform_int_distribution<int> d(i, pool - 1);
      std::swap(names[i], names[d(rng)]);
    }
    names.resize(n_blocks);
    std::sort(names.begin(), names.end());
    const std::size_t a = pick_state(rng), b = pick_state(rng);
    if (a == b) continue;
    const Compact init = Compact::decode(codes[a], n_blocks), goal = Compact::decode(codes[b], n_blocks);
    ReasoningExample ex;
    ex.question = blocksworld_question(to_public(init, names), to_public(goal, names));
    if (!seen.insert(ex.question).second) continue;
    for (const auto& act : bfs(init, goal)) ex.steps.push_back(to_action(act, names).sentence());
    ex.answer = std::to_string(ex.steps.size());
    ex.steps.push_back(std::string(kAnswerMarker) + " " + ex.answer);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace sentlat::corpus
