#include "prdk/regularizers.hpp"

#include "prdk/error.hpp"

namespace prdk {

namespace {

double probability(double beta, const GateParams& gp) { return activation_probability({beta, gp.tau, gp.a, gp.b}); }

Var probability(Var beta, const GateParams& gp) { return activation_probability_var(beta, gp.tau, gp.a, gp.b); }

std::vector<std::size_t> op_offsets(const CellGraph& graph) {
  std::vector<std::size_t> off(graph.num_edges() + 1, 0);
  for (std::size_t e = 0; e < graph.num_edges(); ++e) off[e + 1] = off[e] + graph.ops(e).size();
  return off;
}

void check_beta(std::span<const Var> beta, const CellGraph& graph) {
  if (beta.size() != graph.total_ops()) throw ShapeError("regularizer: one beta per (edge, op) expected");
}

void check_ops_per_edge(std::size_t r) {
  if (r < 2) throw ConfigError("l_non_skip needs at least two operations per edge");
}

Var zero(Tape& tape) { return tape.constant(Tensor::scalar(0.0)); }

}  // namespace

GroupPartition GroupPartition::from_graph(const CellGraph& graph) {
  GroupPartition p;
  const double h = static_cast<double>(graph.nodes());
  p.zeta = graph.nodes() > 1 ? 2.0 / (h * (h - 1.0)) : 0.0;
  for (std::size_t e = 0; e < graph.num_edges(); ++e)
    for (std::size_t t = 0; t < graph.ops(e).size(); ++t)
      (graph.ops(e)[t].kind == OpKind::Skip ? p.skip_group : p.non_skip_group).push_back({e, t});
  return p;
}

double l_skip(const GroupPartition& partition, const EdgeValues& beta, const GateParams& gp) {
  double sum = 0.0;
  for (const auto& g : partition.skip_group) sum += probability(beta.at(g.edge).at(g.op), gp);
  return partition.zeta * sum;
}

double l_non_skip(const GroupPartition& partition, const EdgeValues& beta, const GateParams& gp,
                  std::size_t ops_per_edge) {
  check_ops_per_edge(ops_per_edge);
  double sum = 0.0;
  for (const auto& g : partition.non_skip_group) sum += probability(beta.at(g.edge).at(g.op), gp);
  return partition.zeta / static_cast<double>(ops_per_edge - 1) * sum;
}

std::vector<std::size_t> spine_edges(const CellGraph& graph) {
  std::vector<std::size_t> edges;
  for (std::size_t l = graph.inputs(); l < graph.nodes(); ++l) edges.push_back(graph.edge_index(l - 1, l));
  return edges;
}

double l_path(const CellGraph& graph, const EdgeValues& beta, const GateParams& gp) {
  double prod = 1.0;
  for (std::size_t e : spine_edges(graph)) {
    double sum = 0.0;
    for (std::size_t t = 0; t < graph.ops(e).size(); ++t)
      if (graph.ops(e)[t].parameterized()) sum += probability(beta.at(e).at(t), gp);
    prod *= sum;
  }
  return prod;
}

double pr_darts_objective(double f_val, double l_skip_value, double l_non_skip_value, double l_path_value,
                          const RegularizerWeights& lambda) {
  return f_val + lambda.skip * l_skip_value + lambda.non_skip * l_non_skip_value - lambda.path * l_path_value;
}

Var l_skip_var(const GroupPartition& partition, std::span<const Var> beta, const CellGraph& graph,
               const GateParams& gp) {
  check_beta(beta, graph);
  const auto off = op_offsets(graph);
  Tape& tape = *beta.front().tape();
  if (partition.skip_group.empty()) return zero(tape);
  std::vector<Var> terms;
  for (const auto& g : partition.skip_group) terms.push_back(probability(beta[off[g.edge] + g.op], gp));
  return ad::scale(ad::add_n(terms), partition.zeta);
}

Var l_non_skip_var(const GroupPartition& partition, std::span<const Var> beta, const CellGraph& graph,
                   const GateParams& gp, std::size_t ops_per_edge) {
  check_ops_per_edge(ops_per_edge);
  check_beta(beta, graph);
  const auto off = op_offsets(graph);
  Tape& tape = *beta.front().tape();
  if (partition.non_skip_group.empty()) return zero(tape);
  std::vector<Var> terms;
  for (const auto& g : partition.non_skip_group) terms.push_back(probability(beta[off[g.edge] + g.op], gp));
  return ad::scale(ad::add_n(terms), partition.zeta / static_cast<double>(ops_per_edge - 1));
}

Var l_path_var(const CellGraph& graph, std::span<const Var> beta, const GateParams& gp) {
  check_beta(beta, graph);
  const auto off = op_offsets(graph);
  Tape& tape = *beta.front().tape();
  Var prod = tape.constant(Tensor::scalar(1.0));
  for (std::size_t e : spine_edges(graph)) {
    std::vector<Var> terms;
    for (std::size_t t = 0; t < graph.ops(e).size(); ++t)
      if (graph.ops(e)[t].parameterized()) terms.push_back(probability(beta[off[e] + t], gp));
    if (terms.empty()) return zero(tape);
    prod = ad::mul(prod, ad::add_n(terms));
  }
  return prod;
}

}  // namespace prdk
