#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "prdk/search.hpp"
#include "prdk/supernet.hpp"

namespace prdk {

struct RetainedOp {
  std::size_t source = 0;
  std::size_t op = 0;  // index into the edge's op list
  std::string name;
  OpKind kind = OpKind::Zero;
  double score = 0.0;
  friend bool operator==(const RetainedOp&, const RetainedOp&) = default;
};

/// Discrete cell: for every intermediate node, the retained incoming ops in
/// rank order. `retained[i]` belongs to node `inputs + i`.
struct DiscreteCell {
  std::size_t nodes = 0;
  std::size_t inputs = 1;
  std::vector<std::vector<RetainedOp>> retained;
  friend bool operator==(const DiscreteCell&, const DiscreteCell&) = default;
};

/// Keeps the `keep` best-scored non-zero candidates per intermediate node.
/// Ties go to the lower source index, then the lower op index. Throws
/// ConfigError for a node without candidates.
DiscreteCell prune(const CellGraph& graph, const EdgeValues& scores, std::size_t keep = 2);

/// Retained Skip ops over all retained ops (0 for an empty cell).
double skip_fraction(const DiscreteCell& cell);

/// Graphviz digraph: nodes are numbered, edges carry "op score".
std::string export_dot(const DiscreteCell& cell, std::string_view name = "cell");

/// Pruned normal cell plus the reduction cell when the supernet has one.
struct PrunedArchitecture {
  SearchMode mode = SearchMode::PrDarts;
  DiscreteCell normal;
  std::optional<DiscreteCell> reduction;
  friend bool operator==(const PrunedArchitecture&, const PrunedArchitecture&) = default;
};

/// Prunes with softmax weights (DARTS) or activation probabilities at
/// `gates` (gate mode).
PrunedArchitecture prune_architecture(SearchMode mode, const CellGraph& graph, const ArchState& arch,
                                      const GateParams& gates, std::size_t keep = 2);

}  // namespace prdk
