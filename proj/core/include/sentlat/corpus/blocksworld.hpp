#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sentlat/corpus/example.hpp"

namespace sentlat::corpus {

struct BlocksworldState {
  std::vector<std::vector<std::string>> stacks;  // bottom -> top
  std::optional<std::string> holding;

  /// Throws std::invalid_argument on empty stacks or repeated blocks.
  void validate() const;
  /// All blocks, sorted.
  std::vector<std::string> blocks() const;
  /// Stacks ordered by their bottom block. Two states are equal iff their
  /// canonical forms are.
  BlocksworldState canonical() const;
  /// "A on B, B on table, C on table" in block order, plus ", holding D".
  std::string describe() const;

  bool operator==(const BlocksworldState& other) const;
};

struct BlocksAction {
  enum class Kind { pickup, putdown, unstack, stack };
  Kind kind = Kind::pickup;
  std::string block;
  std::string target;  // unstack source / stack destination; empty otherwise

  /// "pickup A.", "putdown A.", "unstack A from B.", "stack A on B."
  std::string sentence() const;
  bool operator==(const BlocksAction&) const = default;
};

/// Applies one action; throws std::logic_error when its preconditions fail.
BlocksworldState apply_action(const BlocksworldState& state, const BlocksAction& action);

/// Breadth-first shortest plan. Successors are expanded in a fixed order
/// (putdown, then stack onto clear blocks in name order; or pickup/unstack of
/// clear blocks in name order), so ties between equally short plans resolve
/// deterministically.
std::vector<BlocksAction> solve_blocksworld(const BlocksworldState& initial, const BlocksworldState& goal);

/// Every state over `names` with an empty hand (or also holding one block),
/// in canonical order.
std::vector<BlocksworldState> enumerate_states(std::span<const std::string> names, bool include_holding = false);

struct BlocksworldOptions {
  // Block names are drawn from the first max(name_pool, n_blocks) capital letters.
  int name_pool = 6;
};

/// Number of distinct (initial, goal) questions the generator can emit.
std::uint64_t blocksworld_pair_budget(int n_blocks, BlocksworldOptions options = {});

std::string blocksworld_question(const BlocksworldState& initial, const BlocksworldState& goal);

/// Uniform (initial, goal) pairs of hand-empty states with initial != goal,
/// deduplicated on the question text. Steps are the optimal plan followed by
/// "### <plan length>".
std::vector<ReasoningExample> gen_blocksworld(int n_blocks, std::size_t count, std::uint64_t seed,
                                              BlocksworldOptions options = {});

}  // namespace sentlat::corpus
