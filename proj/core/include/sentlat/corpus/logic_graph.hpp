#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sentlat/corpus/example.hpp"

namespace sentlat::corpus {

struct LogicGraphParams {
  int depth = 3;          // nodes on the gold path, root included
  int branching = 2;      // out-degree of each non-final gold node (1 = bare chain)
  int n_distractors = 2;  // distractor chains unreachable from the root
};

/// Entity 0 is the root (a person); the others are concepts. An edge (a, b)
/// reads "a is a b".
struct LogicGraphInstance {
  std::vector<std::string> names;
  std::vector<std::pair<int, int>> edges;
  int root = 0;
  int target = 0;
  std::vector<int> distractor_leaves;
  std::vector<int> gold_path;  // root ... target

  /// Option offered against the target in the question (-1 when there are no distractors).
  int option = -1;
};

/// Throws std::invalid_argument for depth < 2, branching < 1, or when the
/// name pool cannot hold the requested graph.
LogicGraphInstance sample_logic_graph(const LogicGraphParams& params, std::mt19937_64& rng);

ReasoningExample logic_graph_example(const LogicGraphInstance& g, std::mt19937_64& rng);

/// Distinct questions; steps are "<root> is a <c_k>." for each hop, then "### <target>".
std::vector<ReasoningExample> gen_logic_graph(const LogicGraphParams& params, std::size_t count, std::uint64_t seed);

}  // namespace sentlat::corpus
