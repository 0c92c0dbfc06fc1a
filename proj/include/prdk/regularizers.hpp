#pragma once

#include <cstddef>
#include <vector>

#include "prdk/autodiff.hpp"
#include "prdk/gates.hpp"
#include "prdk/supernet.hpp"

namespace prdk {

struct GateRef {
  std::size_t edge = 0;
  std::size_t op = 0;
  friend bool operator==(const GateRef&, const GateRef&) = default;
};

/// Skip gates versus every other gate of one cell, with the edge-count
/// normalizer 2 / (h (h - 1)).
struct GroupPartition {
  std::vector<GateRef> skip_group;
  std::vector<GateRef> non_skip_group;
  double zeta = 0.0;

  static GroupPartition from_graph(const CellGraph& graph);
};

/// Temperature and stretch shared by every gate of a cell.
struct GateParams {
  double tau = 1.0;
  double a = kDefaultStretchLow;
  double b = kDefaultStretchHigh;
};

double l_skip(const GroupPartition& partition, const EdgeValues& beta, const GateParams& gp);
/// Throws ConfigError when ops_per_edge < 2.
double l_non_skip(const GroupPartition& partition, const EdgeValues& beta, const GateParams& gp,
                  std::size_t ops_per_edge);

/// Edges (l, l+1) from the last input node to node h - 1.
std::vector<std::size_t> spine_edges(const CellGraph& graph);

/// Product over spine edges of the summed activation probability of the
/// edge's convolutions.
double l_path(const CellGraph& graph, const EdgeValues& beta, const GateParams& gp);

struct RegularizerWeights {
  double skip = 0.01;
  double non_skip = 0.005;
  double path = 0.005;
};

double pr_darts_objective(double f_val, double l_skip_value, double l_non_skip_value, double l_path_value,
                          const RegularizerWeights& lambda);

/// Tape versions. `beta` holds one scalar leaf per (edge, op) in edge-op order.
Var l_skip_var(const GroupPartition& partition, std::span<const Var> beta, const CellGraph& graph,
               const GateParams& gp);
Var l_non_skip_var(const GroupPartition& partition, std::span<const Var> beta, const CellGraph& graph,
                   const GateParams& gp, std::size_t ops_per_edge);
Var l_path_var(const CellGraph& graph, std::span<const Var> beta, const GateParams& gp);

}  // namespace prdk
