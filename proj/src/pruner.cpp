#include "prdk/pruner.hpp"

#include <algorithm>
#include <cstdio>

#include "prdk/error.hpp"

namespace prdk {

DiscreteCell prune(const CellGraph& graph, const EdgeValues& scores, std::size_t keep) {
  if (scores.size() != graph.num_edges()) throw ShapeError("prune: scores do not match the cell graph");
  DiscreteCell cell;
  cell.nodes = graph.nodes();
  cell.inputs = graph.inputs();
  for (std::size_t l = graph.inputs(); l < graph.nodes(); ++l) {
    std::vector<RetainedOp> cands;
    for (std::size_t s = 0; s < l; ++s) {
      const std::size_t e = graph.edge_index(s, l);
      if (scores[e].size() != graph.ops(e).size()) throw ShapeError("prune: scores do not match the cell graph");
      for (std::size_t t = 0; t < graph.ops(e).size(); ++t) {
        const Operation& op = graph.ops(e)[t];
        if (op.kind == OpKind::Zero) continue;
        cands.push_back({s, t, op.name, op.kind, scores[e][t]});
      }
    }
    if (cands.empty()) throw ConfigError("prune: node " + std::to_string(l) + " has no non-zero candidates");
    std::stable_sort(cands.begin(), cands.end(), [](const RetainedOp& a, const RetainedOp& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.source != b.source) return a.source < b.source;
      return a.op < b.op;
    });
    cands.resize(std::min(keep, cands.size()));
    cell.retained.push_back(std::move(cands));
  }
  return cell;
}

double skip_fraction(const DiscreteCell& cell) {
  std::size_t total = 0, skips = 0;
  for (const auto& node : cell.retained)
    for (const auto& r : node) {
      ++total;
      skips += r.kind == OpKind::Skip;
    }
  return total ? static_cast<double>(skips) / static_cast<double>(total) : 0.0;
}

std::string export_dot(const DiscreteCell& cell, std::string_view name) {
  std::string out = "digraph " + std::string(name) + " {\n";
  if (!cell.retained.empty()) {
    out += "  rankdir=LR;\n";
    for (std::size_t n = 0; n < cell.nodes; ++n) {
      const char* shape = n < cell.inputs ? "box" : "ellipse";
      out += "  n" + std::to_string(n) + " [label=\"" + std::to_string(n) + "\", shape=" + shape + "];\n";
    }
    for (std::size_t i = 0; i < cell.retained.size(); ++i)
      for (const auto& r : cell.retained[i]) {
        char score[32];
        std::snprintf(score, sizeof score, "%.4f", r.score);
        out += "  n" + std::to_string(r.source) + " -> n" + std::to_string(cell.inputs + i) + " [label=\"" + r.name +
               " " + score + "\"];\n";
      }
  }
  out += "}\n";
  return out;
}

PrunedArchitecture prune_architecture(SearchMode mode, const CellGraph& graph, const ArchState& arch,
                                      const GateParams& gates, std::size_t keep) {
  PrunedArchitecture out;
  out.mode = mode;
  out.normal = prune(graph, arch_scores(mode, graph, arch.normal, gates), keep);
  if (!arch.reduction.empty()) out.reduction = prune(graph, arch_scores(mode, graph, arch.reduction, gates), keep);
  return out;
}

}  // namespace prdk
