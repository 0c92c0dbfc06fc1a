#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prdk/autodiff.hpp"
#include "prdk/dataio.hpp"
#include "prdk/gates.hpp"
#include "prdk/random.hpp"
#include "prdk/tensor.hpp"

namespace prdk {

enum class OpKind { Zero, Skip, Conv, AvgPool, MaxPool };

/// A candidate operation. `name` distinguishes ops of the same kind and
/// kernel (the practical set's separable and dilated stand-ins).
struct Operation {
  OpKind kind = OpKind::Zero;
  std::size_t kernel = 0;
  std::string name;

  bool has_weight() const noexcept { return kind == OpKind::Conv; }
  /// Convolutions count as parameterized ops for the path reward.
  bool parameterized() const noexcept { return kind == OpKind::Conv; }
  friend bool operator==(const Operation&, const Operation&) = default;
};

/// Parses "zero", "skip", "conv<k>", "avg_pool<k>", "max_pool<k>" and the
/// practical names "sep_conv_<k>", "dil_conv_<k>", "avg_pool_<k>", "max_pool_<k>".
Operation operation_from_name(std::string_view name);

/// {zero, skip, conv3}: the set the convergence analysis uses.
std::vector<Operation> theoretical_ops();
/// The eight-op search set, with plain convolutions standing in for the
/// separable/dilated variants.
std::vector<Operation> practical_ops();
std::vector<Operation> ops_from_names(std::span<const std::string> names);

struct EdgeRef {
  std::size_t source;
  std::size_t target;
};

/// Cell DAG: nodes 0..inputs-1 are input nodes, every later node l receives
/// an edge from each earlier node s < l. Edges are ordered by (target, source).
class CellGraph {
 public:
  CellGraph() = default;
  /// Every edge carries the same op list.
  CellGraph(std::size_t nodes, std::vector<Operation> ops, std::size_t inputs = 1);
  /// Per-edge op lists, in edge order.
  CellGraph(std::size_t nodes, std::vector<std::vector<Operation>> edge_ops, std::size_t inputs = 1);

  std::size_t nodes() const noexcept { return nodes_; }
  std::size_t inputs() const noexcept { return inputs_; }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  const std::vector<EdgeRef>& edges() const noexcept { return edges_; }
  const EdgeRef& edge(std::size_t e) const { return edges_.at(e); }
  std::size_t edge_index(std::size_t source, std::size_t target) const;
  const std::vector<Operation>& ops(std::size_t e) const { return edge_ops_.at(e); }
  /// Index of the first op of `kind` on edge e, if any.
  std::optional<std::size_t> find_op(std::size_t e, OpKind kind) const;
  std::size_t total_ops() const;

 private:
  void build_edges();

  std::size_t nodes_ = 0;
  std::size_t inputs_ = 1;
  std::vector<EdgeRef> edges_;
  std::vector<std::vector<Operation>> edge_ops_;
};

/// Per-edge, per-op architecture logits of one cell type.
using EdgeValues = std::vector<std::vector<double>>;

EdgeValues make_edge_values(const CellGraph& graph, double fill);

/// Numerically stabilized softmax.
std::vector<double> softmax_weights(std::span<const double> betas);

enum class CellType { Normal = 0, Reduction = 1 };
std::string_view cell_type_name(CellType t);

struct NetworkConfig {
  std::size_t in_channels = 4;  // channels of the raw input
  std::size_t length = 8;       // positions of the raw input
  std::size_t width = 8;        // channels m of every node
  std::size_t nodes = 4;        // h, including input nodes
  std::size_t cells = 1;        // k
  std::size_t stem_kernel = 3;
  Activation activation = Activation::Softplus;
  std::vector<Operation> ops = theoretical_ops();
  /// Place reduction cells (stride-2 ops on edges leaving input nodes).
  bool reduction = false;
  /// Explicit reduction cell indices; empty means {k/3, 2k/3} when enabled.
  std::vector<std::size_t> reduction_positions;
  /// Two input nodes fed by the previous two cells.
  bool two_input = false;
  /// Cell output is the channel concatenation of intermediate nodes instead
  /// of their sum.
  bool concat_output = false;
  double init_std = 1.0;
  double head_init_std = 1.0;
};

struct ParamInfo {
  enum class Kind { Stem, OpWeight, Head };
  Kind kind;
  std::size_t cell = 0;
  std::size_t node = 0;    // stem: input slot; op weight: target node; head: node
  std::size_t source = 0;  // op weight only
  std::size_t op = 0;      // op weight only
  std::string name;
  Tensor::Shape shape;
};

/// Learnable tensors in canonical order: stems first (cell, input slot), then
/// op weights sorted by (cell, target node, source node, op index), heads last.
/// This is also the gradient flattening order.
using SuperNetParams = std::vector<Tensor>;

/// One sampled/derived weight per (edge, op). An invalid Var marks an
/// inactive op (contributes nothing).
using EdgeWeightVars = std::vector<std::vector<Var>>;

/// Weights for both cell types; reduction entry unused without reduction cells.
struct BoundWeights {
  EdgeWeightVars normal;
  EdgeWeightVars reduction;
  const EdgeWeightVars& of(CellType t) const { return t == CellType::Normal ? normal : reduction; }
};

struct ForwardResult {
  /// Node values per cell.
  std::vector<std::vector<Var>> nodes;
  Var prediction;
};

/// Stacked supernet: k cells sharing one CellGraph, normal and reduction
/// cells each sharing their architecture weights.
class Network {
 public:
  /// Uniform op list on every edge (config.ops).
  explicit Network(NetworkConfig config);
  /// Explicit cell graph (e.g. one op per edge).
  Network(NetworkConfig config, CellGraph graph);

  const NetworkConfig& config() const noexcept { return config_; }
  const CellGraph& graph() const noexcept { return graph_; }
  std::size_t cells() const noexcept { return types_.size(); }
  CellType cell_type(std::size_t c) const { return types_.at(c); }
  bool has_reduction() const noexcept;

  const std::vector<ParamInfo>& layout() const noexcept { return layout_; }
  std::size_t stem_param(std::size_t cell, std::size_t slot) const;
  std::optional<std::size_t> op_param(std::size_t cell, std::size_t edge, std::size_t op) const;
  std::size_t head_param(std::size_t node) const;
  /// (rows, cols) of node `node` in cell `cell`.
  std::pair<std::size_t, std::size_t> node_shape(std::size_t cell, std::size_t node) const;
  std::size_t parameter_count() const;

  /// Gaussian initialization (std init_std for stems and op weights,
  /// head_init_std for heads).
  SuperNetParams init_params(Rng& rng) const;
  void check_params(const SuperNetParams& params) const;

  /// Puts parameters on the tape, as leaves or constants.
  std::vector<Var> bind(Tape& tape, const SuperNetParams& params, bool as_leaves) const;

  /// Forward pass for one input sample.
  ForwardResult forward(std::span<const Var> params, const BoundWeights& weights, Var input) const;

  /// (1/2n) * sum_i (u_i - y_i)^2 over the batch, sharing one set of weights.
  Var batch_loss(std::span<const Var> params, const BoundWeights& weights, std::span<const Sample> batch) const;

 private:
  void build();

  NetworkConfig config_;
  CellGraph graph_;
  std::vector<CellType> types_;
  std::vector<ParamInfo> layout_;
  std::vector<std::vector<std::size_t>> stem_index_;
  std::vector<std::vector<std::vector<std::optional<std::size_t>>>> op_index_;
  std::vector<std::size_t> head_index_;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> shapes_;
};

/// Softmax mixing weights of every edge as tape nodes. If `beta_leaves` is
/// given the logits become leaves (one scalar per op) and are appended to it.
/// `active` (optional) masks ops; the softmax renormalizes over active ops.
EdgeWeightVars softmax_weight_vars(Tape& tape, const CellGraph& graph, const EdgeValues& beta,
                                   const std::vector<std::vector<bool>>* active = nullptr,
                                   std::vector<Var>* beta_leaves = nullptr);

/// Fixed weights as constants, or as leaves when `leaves` is given.
EdgeWeightVars fixed_weight_vars(Tape& tape, const CellGraph& graph, const EdgeValues& weights,
                                 std::vector<Var>* leaves = nullptr);

struct GateSampling {
  double tau = 1.0;
  double a = kDefaultStretchLow;
  double b = kDefaultStretchHigh;
  /// Use the noise-free gate (delta = 1/2) instead of a random draw.
  bool deterministic = false;
};

/// Hard-concrete gate of every active (edge, op), one fresh draw per gate.
/// Draw order is (edge, op) and inactive ops consume no randomness. When
/// `sampled` is given it receives the clipped gate values (0 for inactive).
EdgeWeightVars gate_weight_vars(Tape& tape, const CellGraph& graph, const EdgeValues& beta,
                                const GateSampling& sampling, Rng* rng,
                                const std::vector<std::vector<bool>>* active = nullptr,
                                std::vector<Var>* beta_leaves = nullptr, EdgeValues* sampled = nullptr);

/// (1/2n) * sum_i (u_i - y_i)^2. Throws ConfigError on empty or mismatched input.
double train_loss(std::span<const double> predictions, std::span<const double> targets);

/// theta <- theta - eta * grad for every tensor.
void gd_step(SuperNetParams& params, std::span<const Tensor> grads, double eta);

/// {k/3, 2k/3} (zero-based, integer division); empty when k < 3.
std::vector<std::size_t> default_reduction_positions(std::size_t cells);

}  // namespace prdk
